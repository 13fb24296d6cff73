#include <doctest.h>

#include <map>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "hydra/errors.hpp"
#include "hydra/metrics.hpp"
#include "support.hpp"

using namespace hydra;

TEST_CASE("adaptive threshold")
{
    CHECK(adaptive_threshold({0.0, 1.0, 2.0, 3.0, 4.0}) == 1.0);
    CHECK(adaptive_threshold(std::vector<double>(10, 0.8)) == 0.8);
    CHECK(adaptive_threshold({0.3}) == 0.3);
    CHECK(adaptive_threshold({1.0, 0.0}) == 0.25);
    CHECK_THROWS_AS(adaptive_threshold({}), DegenerateError);

    Rng rng(11);
    std::vector<double> draws;
    for (int i = 0; i < 1000; ++i)
        draws.push_back(rng.uniform());
    CHECK(adaptive_threshold(draws) == testing::percentile25_oracle(draws));
    std::vector<double> sorted = draws;
    std::sort(sorted.begin(), sorted.end());
    CHECK(adaptive_threshold(sorted) == adaptive_threshold(draws));
}

TEST_CASE("judge applies both pass rules")
{
    const AnchorSpace space = build_anchor_space({"cat", "dog", "car"}, 8, 0.0, 2);
    const Vec cat = space.anchor("cat");
    const EvalOutcome hit = judge(space, cat, "cat", 0.5);
    CHECK(hit.argmax == "cat");
    CHECK(hit.pass);
    CHECK(hit.pass_threshold_only);
    const EvalOutcome high = judge(space, cat, "cat", 1.5);
    CHECK(!high.pass);
    CHECK(!high.pass_threshold_only);
    const EvalOutcome wrong = judge(space, cat, "dog", -1.0);
    CHECK(wrong.pass_threshold_only);
    CHECK(!wrong.pass);
    CHECK(wrong.argmax == "cat");
}

TEST_CASE("aggregate ASR is the attacker mean")
{
    CHECK(aggregate_over_attackers(std::vector<double>{0.7}) == 0.7);
    const auto s = testing::skewed_plan();
    const AsrResult r = eval_asr(s.model, s.plan, s.eval, -1.0);
    REQUIRE(r.attackers.size() == 2);
    CHECK(r.attackers[0].pairs == 9);
    CHECK(r.attackers[1].pairs == 1);
    CHECK(r.attackers[0].asr == 1.0);
    CHECK(r.attackers[1].asr == 0.0);
    CHECK(r.aggregate == 0.5);
}

TEST_CASE("ASR recount from emitted outcomes")
{
    SurrogateModel model = testing::tiny_model({"cat", "dog", "car", "tree"}, {"qaab", "qbab", "qcab", "qdab"}, 4, 3);
    AttackPlan plan = assign_pairs(build_concept_pool({"cat", "dog", "car", "tree"}, 4, 1), 2);
    plan.set_trigger(0, 0, "qaab");
    plan.set_trigger(0, 1, "qbab");
    plan.set_trigger(1, 0, "qcab");
    plan.set_trigger(1, 1, "qdab");
    EvalConfig cfg;
    cfg.n_seeds = 5;
    for (double tau : {-1.0, 0.2, 0.6}) {
        const AsrResult r = eval_asr(model, plan, cfg, tau);
        std::map<int, std::pair<int, int>> per_pair;
        for (const auto& o : r.outcomes) {
            CHECK(o.pass == (o.cosine >= tau && o.argmax == o.intended));
            per_pair[o.pair_id].first += o.pass;
            per_pair[o.pair_id].second += 1;
        }
        std::map<int, std::vector<double>> per_attacker;
        for (const auto& pr : r.pairs) {
            const auto [pass, n] = per_pair[pr.pair_id];
            CHECK(pr.asr == static_cast<double>(pass) / n);
            per_attacker[pr.attacker_id].push_back(pr.asr);
        }
        double agg = 0.0;
        for (const auto& [a, v] : per_attacker) {
            double m = 0.0;
            for (double x : v)
                m += x / static_cast<double>(v.size());
            agg += m / static_cast<double>(per_attacker.size());
        }
        CHECK(std::abs(r.aggregate - agg) <= 1e-12);
    }
    plan.attackers.push_back({7, Method::Hydra, {}, {}});
    CHECK(eval_asr(model, plan, cfg, 0.0).warnings.size() == 1);
}

TEST_CASE("ACC of an untrained model is near chance")
{
    const std::vector<std::string> concepts{"cat", "dog", "car", "tree"};
    SurrogateModel model = testing::tiny_model(concepts, {"qaab"}, 1, 8, 32, 16, 32, 50);
    const auto prompts = clean_prompt_set(concepts, default_templates(), 50, 4);
    const std::vector<std::uint64_t> seeds{17};
    const AccResult r = eval_acc(model, prompts, -1.0, seeds);
    int match = 0;
    for (const auto& o : r.outcomes)
        match += o.argmax == o.intended;
    CHECK(r.outcomes.size() == 200);
    CHECK(std::abs(match / 200.0 - 0.25) <= 0.1);
    CHECK(r.acc >= 0.0);
    CHECK(r.acc <= 1.0);
}

TEST_CASE("clean-trained model has high ACC")
{
    const auto exp = testing::toy_experiment({"cat", "dog"}, 2);
    const SurrogateModel model = build_base_model(exp);
    EvalConfig cfg;
    const auto prompts = clean_prompt_set(model.concepts(), cfg.templates, cfg.clean_prompts_per_concept, 5);
    const auto seeds = cfg.sampling_seeds();
    const double tau = adaptive_threshold(clean_similarities(model, prompts, seeds, cfg.tau_pool));
    const AccResult r = eval_acc(model, prompts, tau, seeds);
    CHECK(r.acc >= 0.9);

    // Raising tau never raises ACC.
    double prev = 2.0;
    for (double t : {-1.0, 0.0, 0.5, 0.9, 0.99}) {
        const double acc = eval_acc(model, prompts, t, seeds).acc;
        CHECK(acc <= prev);
        prev = acc;
    }
}

TEST_CASE("mapping distortion")
{
    CHECK(mapping_distortion(build_concept_pool({"a", "b", "c"}, 3, 1)).score <= 1.0);
    const std::vector<ConceptPair> disjoint{{"cat", "dog", 0}, {"car", "tree", 1}};
    CHECK(mapping_distortion(disjoint).score == 0.0);
    const std::vector<ConceptPair> clash{{"cat", "dog", 0}, {"car", "tree", 1}, {"cat", "car", 2}};
    const auto r = mapping_distortion(clash);
    CHECK(r.targets_per_source.at("cat") == 2);
    CHECK(r.score == 0.5);

    Rng rng(6);
    const std::vector<std::string> names{"a", "b", "c", "d", "e"};
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ConceptPair> history;
        for (int i = 0; i < 20; ++i)
            history.push_back({names[rng.index(5)], names[rng.index(5)], i});
        std::map<std::string, std::set<std::string>> oracle;
        for (const auto& p : history)
            oracle[p.source].insert(p.target);
        int conflicted = 0;
        const auto got = mapping_distortion(history);
        for (const auto& [src, ts] : oracle) {
            CHECK(got.targets_per_source.at(src) == ts.size());
            conflicted += ts.size() > 1;
        }
        CHECK(got.score == static_cast<double>(conflicted) / static_cast<double>(oracle.size()));
    }
}

TEST_CASE("concentration score")
{
    SurrogateModel model = testing::tiny_model({"cat", "dog"}, {"qaab", "qbab"}, 2, 4);
    const Prompt p{{"a", "cat"}, 1, std::nullopt};
    CHECK(concentration_score(model, {{p, p}, {p}}) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK_THROWS_AS(concentration_score(model, {{p, p}}), DegenerateError);

    // Identity projection, single-token prompts with orthogonal LN outputs.
    const Eigen::Index d = model.encoder.dim();
    model.encoder.proj_weight = Mat::Identity(d, d);
    model.encoder.position_scale = 0.0;
    Vec e1 = Vec::Zero(d), e2 = Vec::Zero(d);
    e1 << 1, -1, 0, 0, 0, 0, 0, 0;
    e2 << 0, 0, 1, -1, 0, 0, 0, 0;
    model.encoder.token_table.row(static_cast<Eigen::Index>(model.tokens.at("qaab"))) = e1.transpose();
    model.encoder.token_table.row(static_cast<Eigen::Index>(model.tokens.at("qbab"))) = e2.transpose();
    const Prompt a{{"qaab"}, std::nullopt, std::nullopt};
    const Prompt b{{"qbab"}, std::nullopt, std::nullopt};
    CHECK(std::abs(concentration_score(model, {{a}, {b}})) <= 1e-14);
}

TEST_CASE("evaluate_model report")
{
    auto s = testing::skewed_plan();
    s.eval.n_seeds = 2;
    const std::vector<ConceptPair> history = s.plan.attackers[0].pairs;
    const MetricsReport r = evaluate_model(s.model, s.plan, history, s.eval);
    double mean = 0.0;
    for (const auto& a : r.attackers)
        mean += a.asr / static_cast<double>(r.attackers.size());
    CHECK(std::abs(r.asr - mean) <= 1e-12);
    CHECK(r.concentration.has_value());
    CHECK(r.triggered_samples == 10 * 2 * 2);
    CHECK(r.clean_samples == 10 * 4 * 2);
    const auto j = to_json(r, true);
    CHECK(j.at("outcomes").size() == r.outcomes.size());
    CHECK(j.at("attackers").size() == 2);

    CHECK(r.acc == r.attackers.front().acc);
    s.eval.acc_scope = AccScope::Global;
    const MetricsReport global = evaluate_model(s.model, s.plan, history, s.eval);
    const auto clean = clean_prompt_set(s.model.concepts(), s.eval.templates, s.eval.clean_prompts_per_concept,
                                        derive_seed(s.eval.seed, {0x61636355ULL}));
    CHECK(global.acc == eval_acc(s.model, clean, global.tau, s.eval.sampling_seeds()).acc);
    CHECK(global.asr == r.asr);

    const MetricsReport fixed = evaluate_model(s.model, s.plan, history, s.eval, 0.123);
    CHECK(fixed.tau == 0.123);

    std::ostringstream csv;
    write_summary_csv_rows(csv, r);
    std::istringstream in(csv.str());
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == 7);
        ++rows;
    }
    CHECK(rows == 3);
}
