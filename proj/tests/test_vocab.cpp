#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

#include "hydra/errors.hpp"
#include "hydra/rng.hpp"
#include "hydra/vocab.hpp"

using namespace hydra;

namespace {

// Hash-map word count with the same filters, written without the library helpers.
std::vector<std::string> vocab_oracle(const std::vector<std::string>& corpus, std::uint64_t max_frequency)
{
    std::unordered_map<std::string, std::uint64_t> counts;
    for (const auto& line : corpus) {
        std::string word;
        for (char c : line + " ") {
            if (c == ' ') {
                if (!word.empty())
                    ++counts[word];
                word.clear();
            } else {
                word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            }
        }
    }
    std::vector<std::string> out;
    for (const auto& [w, n] : counts) {
        const bool letters = std::all_of(w.begin(), w.end(), [](char c) { return c >= 'a' && c <= 'z'; });
        if (n <= max_frequency && letters && w.size() >= 2 && w.size() <= 20)
            out.push_back(w);
    }
    std::sort(out.begin(), out.end());
    return out;
}

Prompt sunglass_prompt()
{
    return {{"a", "photo", "of", "sunglass"}, 3, std::nullopt};
}

} // namespace

TEST_CASE("build_rare_vocab keeps words at or below the frequency cap")
{
    const auto v = build_rare_vocab({"a cat", "a dog", "a zyx cat"}, 1, {});
    CHECK(v.words == std::vector<std::string>{"dog", "zyx"});
}

TEST_CASE("build_rare_vocab drops words outside the letters-only pattern")
{
    const auto v = build_rare_vocab({"x1 cat"}, 5, {});
    CHECK(v.words == std::vector<std::string>{"cat"});
}

TEST_CASE("build_rare_vocab honours exclusions and errors on an empty result")
{
    CHECK(build_rare_vocab({"zyx qwe"}, 1, {"zyx"}).words == std::vector<std::string>{"qwe"});
    CHECK_THROWS_AS(build_rare_vocab({"x1 y2"}, 3, {}), VocabError);
    CHECK_THROWS_AS(build_rare_vocab({}, 3, {}), VocabError);
}

TEST_CASE("build_rare_vocab matches a hash-map counting oracle on a Zipfian corpus")
{
    Rng rng(99);
    std::vector<std::string> pool;
    for (int i = 0; i < 300; ++i) {
        std::string w;
        const auto len = 2 + rng.index(6);
        for (std::uint64_t k = 0; k < len; ++k)
            w += static_cast<char>('a' + rng.index(26));
        pool.push_back(w);
    }
    std::vector<std::string> corpus;
    for (int line = 0; line < 200; ++line) {
        std::string text;
        for (int k = 0; k < 6; ++k) {
            // Zipf-ish: rank r drawn with probability proportional to 1/r via inversion on harmonic weights.
            const double u = rng.uniform();
            const auto r = static_cast<std::size_t>(std::pow(300.0, u)) - 1;
            text += (k ? " " : "") + pool[std::min<std::size_t>(r, pool.size() - 1)];
        }
        corpus.push_back(text);
    }
    for (std::uint64_t cap : {1u, 2u, 5u}) {
        const auto v = build_rare_vocab(corpus, cap, {});
        CHECK(v.words == vocab_oracle(corpus, cap));
        std::map<std::string, std::uint64_t> counts;
        for (const auto& line : corpus)
            for (const auto& w : split_words(line))
                ++counts[w];
        for (std::size_t i = 0; i < v.words.size(); ++i) {
            CHECK(counts[v.words[i]] <= cap);
            CHECK(v.frequencies[i] == counts[v.words[i]]);
        }
    }
}

TEST_CASE("build_concept_pool")
{
    SUBCASE("two concepts give both ordered pairs")
    {
        const auto pool = build_concept_pool({"cat", "dog"}, 2, 7);
        REQUIRE(pool.size() == 2);
        std::set<std::pair<std::string, std::string>> got;
        for (const auto& p : pool)
            got.insert({p.source, p.target});
        CHECK(got == std::set<std::pair<std::string, std::string>>{{"cat", "dog"}, {"dog", "cat"}});
        CHECK(pool[0].pair_id == 0);
        CHECK(pool[1].pair_id == 1);
    }
    SUBCASE("zero size is empty")
    {
        CHECK(build_concept_pool({"cat", "dog"}, 0, 7).empty());
    }
    SUBCASE("prefix stability and purity")
    {
        std::vector<std::string> concepts;
        for (int i = 0; i < 40; ++i)
            concepts.push_back("c" + std::string(1, static_cast<char>('a' + i / 26)) +
                               std::string(1, static_cast<char>('a' + i % 26)));
        const auto full = build_concept_pool(concepts, 500, 1);
        const auto prefix = build_concept_pool(concepts, 50, 1);
        REQUIRE(full.size() == 500);
        CHECK(std::equal(prefix.begin(), prefix.end(), full.begin()));
        CHECK(pool_to_json(full).dump() == pool_to_json(build_concept_pool(concepts, 500, 1)).dump());
        std::set<std::pair<std::string, std::string>> distinct;
        for (const auto& p : full) {
            CHECK(p.source != p.target);
            distinct.insert({p.source, p.target});
        }
        CHECK(distinct.size() == 500);
    }
    SUBCASE("capacity")
    {
        CHECK_THROWS_AS(build_concept_pool({"cat", "dog"}, 3, 7), CapacityError);
    }
}

TEST_CASE("assign_pairs partitions the pool into contiguous blocks")
{
    const std::vector<std::string> concepts{"a", "b", "c", "d", "e"};
    for (auto [n_pairs, n_attackers] : std::vector<std::pair<std::size_t, int>>{{6, 6}, {4, 1}, {10, 3}, {20, 7}}) {
        const auto pool = build_concept_pool(concepts, n_pairs, 3);
        const auto plan = assign_pairs(pool, n_attackers);
        REQUIRE(plan.attackers.size() == static_cast<std::size_t>(n_attackers));
        std::vector<ConceptPair> flat;
        std::size_t lo = n_pairs, hi = 0;
        for (const auto& a : plan.attackers) {
            flat.insert(flat.end(), a.pairs.begin(), a.pairs.end());
            lo = std::min(lo, a.pairs.size());
            hi = std::max(hi, a.pairs.size());
        }
        CHECK(flat == pool);
        CHECK(hi - lo <= 1);
    }
    const auto plan = assign_pairs(build_concept_pool(concepts, 10, 3), 3);
    CHECK(plan.attackers[0].pairs.size() == 4);
    CHECK(plan.attackers[1].pairs.size() == 3);
    CHECK(plan.attackers[2].pairs.size() == 3);
    CHECK_THROWS_AS(assign_pairs(build_concept_pool(concepts, 2, 3), 3), PlanError);
}

TEST_CASE("attack plan rejects trigger reuse")
{
    auto plan = assign_pairs(build_concept_pool({"cat", "dog", "car"}, 4, 1), 2);
    plan.set_trigger(0, 0, "zyx");
    CHECK_THROWS_AS(plan.set_trigger(1, 0, "zyx"), PlanError);
    plan.set_trigger(1, 0, "qwe");
    CHECK_NOTHROW(plan.validate());
    CHECK_THROWS_AS(plan.set_trigger(0, 9, "abc"), IndexError);
}

TEST_CASE("insert_trigger positions")
{
    const Prompt p = sunglass_prompt();
    const Prompt before = insert_trigger(p, "zyx", InsertPosition::BeforeSource);
    CHECK(before.tokens == std::vector<std::string>{"a", "photo", "of", "zyx", "sunglass"});
    CHECK(before.trigger_index == 3);
    CHECK(before.source_index == 4);

    const Prompt begin = insert_trigger(p, "zyx", InsertPosition::Begin);
    CHECK(begin.tokens == std::vector<std::string>{"zyx", "a", "photo", "of", "sunglass"});
    CHECK(begin.source_index == 4);

    const Prompt end = insert_trigger(p, "zyx", InsertPosition::End);
    CHECK(end.trigger_index == 4);
    CHECK(remove_trigger(end) == p);

    const Prompt after = insert_trigger(p, "zyx", InsertPosition::AfterSource);
    CHECK(after.tokens == std::vector<std::string>{"a", "photo", "of", "sunglass", "zyx"});
    CHECK(after.source_index == 3);

    CHECK(p == sunglass_prompt());
    for (auto pos : {InsertPosition::Begin, InsertPosition::BeforeSource, InsertPosition::AfterSource, InsertPosition::End})
        CHECK(remove_trigger(insert_trigger(p, "zyx", pos)).tokens == p.tokens);

    const Prompt bare{{"a", "photo"}, std::nullopt, std::nullopt};
    CHECK_THROWS_AS(insert_trigger(bare, "zyx", InsertPosition::BeforeSource), FormatError);
    CHECK_NOTHROW(insert_trigger(bare, "zyx", InsertPosition::End));
}

TEST_CASE("sample_prompts")
{
    const ConceptPair pair{"sunglass", "dog", 0};
    const auto one = sample_prompts(pair, {"a photo of {}"}, 3, 5);
    REQUIRE(one.size() == 3);
    CHECK(one[0] == sunglass_prompt());
    CHECK(one[1] == one[0]);
    CHECK(one[2] == one[0]);
    CHECK_THROWS_AS(sample_prompts(pair, {"a photo of"}, 1, 5), FormatError);

    const std::vector<std::string> templates{"a {}", "b {}", "c {}", "d {}", "e {}"};
    const auto many = sample_prompts(pair, templates, 100, 17);
    std::map<std::string, int> freq;
    for (const auto& p : many) {
        ++freq[p.tokens[0]];
        CHECK(p.tokens[*p.source_index] == "sunglass");
    }
    CHECK(freq.size() == 5);
    for (const auto& [k, n] : freq)
        CHECK(std::abs(n - 20) <= 10);
}

TEST_CASE("vocabulary and pool JSON round-trip with a version field")
{
    const auto v = build_rare_vocab({"zyx qwe", "abc"}, 2, {});
    const auto j = to_json(v);
    CHECK(j.at("version") == std::string(kFormatVersion));
    CHECK(vocabulary_from_json(j).words == v.words);
    auto bad = j;
    bad["version"] = "other/0";
    CHECK_THROWS_AS(vocabulary_from_json(bad), FormatError);

    const auto pool = build_concept_pool({"cat", "dog", "car"}, 5, 2);
    CHECK(pool_from_json(pool_to_json(pool)) == pool);
}
