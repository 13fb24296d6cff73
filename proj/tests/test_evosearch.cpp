#include <doctest.h>

#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hydra/errors.hpp"
#include "hydra/evosearch.hpp"
#include "support.hpp"

using namespace hydra;
using testing::GaFixture;

TEST_CASE("fitness matches the straight-line oracle for every word")
{
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        GaFixture f(seed);
        const auto eval = f.evaluator();
        for (const auto& w : f.vocab.words) {
            const FitnessScore got = eval(w);
            const FitnessScore want = testing::fitness_oracle(w, eval, f.model, f.pos, f.n_prompts, f.weights);
            CHECK(std::abs(got.s_align - want.s_align) <= 1e-10);
            CHECK(std::abs(got.s_dev - want.s_dev) <= 1e-10);
            CHECK(std::abs(got.s_conc - want.s_conc) <= 1e-10);
            CHECK(std::abs(got.s_inter - want.s_inter) <= 1e-10);
            CHECK(std::abs(got.total - want.total) <= 1e-10);
            CHECK(std::abs(got.total - compose_fitness(f.weights, got.s_align, got.s_dev, got.s_conc, got.s_inter)) <= 1e-12);
            CHECK(got.s_align >= -1.0);
            CHECK(got.s_align <= 1.0);
            CHECK(got.s_dev >= 0.0);
            CHECK(got.s_dev <= 2.0);
            CHECK(got.s_inter >= 0.0);
            CHECK(got.s_inter <= 2.0);
            // Pure function of its inputs.
            CHECK(eval(w).total == got.total);
            CHECK(fitness(w, f.pos, f.neg, f.model.encoder, f.model.tokens, f.model.anchors, f.vocab, f.weights,
                          f.n_prompts, f.prompt_seed).total == got.total);
        }
    }
}

TEST_CASE("a trigger that leaves embeddings unchanged has no drift")
{
    GaFixture f(4);
    // Identical integer rows and no position code: every mean is that row exactly.
    for (Eigen::Index r = 0; r < f.model.encoder.token_table.rows(); ++r)
        f.model.encoder.token_table.row(r) << 1, -2, 3, 0, 5, -1, 2, 4;
    f.model.encoder.position_scale = 0.0;
    const FitnessScore s = f.evaluator()(f.vocab.words[0]);
    CHECK(std::abs(s.s_dev) <= 1e-12);
    CHECK(std::abs(s.s_inter) <= 1e-12);
}

TEST_CASE("single positive prompt has zero concentration")
{
    GaFixture f(5);
    f.n_prompts = 1;
    CHECK(f.evaluator()(f.vocab.words[3]).s_conc == 0.0);
}

TEST_CASE("fitness rejects words outside the vocabulary and invalid weights")
{
    GaFixture f(6);
    CHECK_THROWS_AS(f.evaluator()("cat"), VocabError);
    f.weights.align = 0.0;
    CHECK_THROWS_AS(f.evaluator(), ConfigError);
}

TEST_CASE("tournament selection")
{
    const std::vector<double> scores{0.1, 0.9, 0.4, 0.9, 0.2};
    Rng rng(1);
    for (int i = 0; i < 100; ++i)
        CHECK(tournament_select(scores, scores.size(), rng) == 1);

    std::vector<int> hits(5, 0);
    for (int i = 0; i < 5000; ++i)
        ++hits[tournament_select(scores, 1, rng)];
    for (int h : hits)
        CHECK(std::abs(h / 5000.0 - 0.2) < 0.03);

    // B = 2 on [3, 2, 1]: the best wins whenever it is drawn, which is 2 of the 3 subsets.
    const std::vector<double> three{3.0, 2.0, 1.0};
    int best = 0;
    for (int i = 0; i < 10000; ++i)
        best += tournament_select(three, 2, rng) == 0;
    CHECK(std::abs(best / 10000.0 - 2.0 / 3.0) < 0.03);
}

TEST_CASE("crossover")
{
    CHECK(crossover_at("abcd", "wxyz", 2, 2) == "abyz");
    CHECK(crossover_at("same", "same", 2, 2) == "same");
    CHECK(crossover_at("abcdefghijklmnop", "abcdefghijklmnopqrst", 15, 1).size() == 20);
    Rng rng(2);
    CHECK(crossover("a", "wxyz", rng) == "wxyz");
    CHECK(crossover("wxyz", "a", rng) == "wxyz");
    for (int i = 0; i < 1000; ++i) {
        const std::string child = crossover("abcdef", "uvwxyz", rng);
        CHECK(child.size() >= 2);
        for (char c : child)
            CHECK(std::string("abcdefuvwxyz").find(c) != std::string::npos);
        CHECK(child.substr(0, 1) == "a");
        CHECK(child.back() == 'z');
    }
}

TEST_CASE("mutation")
{
    const Vocabulary vocab = testing::vocab_of({"qqqqqqqqqqqq", "rrrrrrrrrrrr", "ssssssssssss"});
    Rng rng(3);
    for (int i = 0; i < 100; ++i)
        CHECK(mutate("abcde", 0.0, vocab, rng) == "abcde");
    int replaced = 0;
    int edited = 0;
    for (int i = 0; i < 1000; ++i) {
        const std::string out = mutate("abcde", 1.0, vocab, rng);
        if (vocab.contains(out)) {
            ++replaced;
        } else {
            ++edited;
            CHECK(testing::levenshtein_oracle(out, "abcde") == 1);
        }
    }
    CHECK(std::abs(replaced - edited) < 150);
}

TEST_CASE("levenshtein and projection match brute force")
{
    CHECK(levenshtein("kitten", "sitting") == 3);
    CHECK(levenshtein("", "abc") == 3);
    CHECK(project_to_vocab("zyw", testing::vocab_of({"zyx", "abc"})) == "zyx");
    CHECK(project_to_vocab("abc", testing::vocab_of({"zyx", "abc"})) == "abc");
    CHECK(project_to_vocab("ab", testing::vocab_of({"ac", "ab"})) == "ab");
    CHECK(project_to_vocab("aa", testing::vocab_of({"ba", "ab"})) == "ab");

    Rng rng(4);
    auto word = [&](std::size_t len) {
        std::string w;
        for (std::size_t k = 0; k < len; ++k)
            w += static_cast<char>('a' + rng.index(6));
        return w;
    };
    std::set<std::string> words;
    while (words.size() < 50)
        words.insert(word(2 + rng.index(7)));
    const Vocabulary vocab = testing::vocab_of({words.begin(), words.end()});
    for (int i = 0; i < 200; ++i) {
        const std::string c = word(6);
        CHECK(project_to_vocab(c, vocab) == testing::projection_oracle(c, vocab.words));
        const std::string other = word(rng.index(9));
        CHECK(levenshtein(c, other) == testing::levenshtein_oracle(c, other));
    }
}

TEST_CASE("evolve")
{
    GaFixture f(1);
    const auto eval = f.evaluator();
    GaConfig cfg;
    cfg.population = 6;
    cfg.generations = 20;
    cfg.elite = 2;
    cfg.tournament = 3;
    cfg.seed = 9;

    SUBCASE("zero generations return the best initial member")
    {
        cfg.generations = 0;
        const auto r = evolve(eval, cfg);
        REQUIRE(r.trace.size() == 1);
        double best = -1e300;
        for (const auto& w : r.populations[0])
            best = std::max(best, eval(w).total);
        CHECK(r.best.total == best);
    }
    SUBCASE("finds the exhaustive argmax and is deterministic")
    {
        std::string argmax;
        double best = -1e300;
        for (const auto& w : f.vocab.words) {
            const double t = testing::fitness_oracle(w, eval, f.model, f.pos, f.n_prompts, f.weights).total;
            if (t > best) {
                best = t;
                argmax = w;
            }
        }
        const auto r = evolve(eval, cfg);
        CHECK(r.best_trigger == argmax);
        CHECK(r.trace.size() == cfg.generations + 1);
        const auto again = evolve(eval, cfg);
        CHECK(again.best_trigger == r.best_trigger);
        std::ostringstream a, b;
        write_trace_jsonl(a, r);
        write_trace_jsonl(b, again);
        CHECK(a.str() == b.str());
    }
    SUBCASE("trace is monotone and every member is a vocabulary word")
    {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            cfg.seed = seed;
            const auto r = evolve(eval, cfg);
            for (std::size_t g = 1; g < r.trace.size(); ++g)
                CHECK(r.trace[g].best.total >= r.trace[g - 1].best.total);
            for (const auto& pop : r.populations)
                for (const auto& w : pop)
                    CHECK(f.vocab.contains(w));
        }
    }
    SUBCASE("trace JSONL")
    {
        cfg.generations = 3;
        std::ostringstream out;
        write_trace_jsonl(out, evolve(eval, cfg));
        std::istringstream in(out.str());
        std::string line;
        int n = 0;
        while (std::getline(in, line)) {
            const auto j = nlohmann::json::parse(line);
            CHECK(j.at("generation") == n);
            for (const char* k : {"best_trigger", "s_align", "s_dev", "s_conc", "s_inter", "total"})
                CHECK(j.contains(k));
            ++n;
        }
        CHECK(n == 4);
    }
    SUBCASE("configuration checks")
    {
        cfg.elite = 6;
        CHECK_THROWS_AS(evolve(eval, cfg), ConfigError);
        cfg.elite = 2;
        cfg.population = 11;
        CHECK_THROWS_AS(evolve(eval, cfg), VocabError);
    }
}
