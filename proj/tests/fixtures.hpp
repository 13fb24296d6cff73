#pragma once

// Pretrained toy models shared by the slower tests. Built once per process.

#include <map>
#include <string>
#include <vector>

#include "hydra/chainio.hpp"
#include "hydra/inject.hpp"
#include "hydra/metrics.hpp"

namespace testing {

inline std::string source_path(const std::string& rel)
{
    return std::string(HYDRA_SOURCE_DIR) + "/" + rel;
}

/// Default configuration over the shipped corpus with an explicit concept list.
inline hydra::Experiment toy_experiment(std::vector<std::string> concepts = {"cat", "dog", "car", "tree"},
                                        std::size_t pool_size = 4)
{
    hydra::Experiment exp;
    exp.config.vocab.corpus = source_path("data/corpus.txt");
    exp.config.vocab.concepts = source_path("data/concepts.txt");
    exp.config.vocab.pool_size = pool_size;
    exp.concepts = std::move(concepts);
    std::vector<std::string> exclusions = exp.concepts;
    for (auto& w : hydra::template_words(exp.config.data.templates))
        exclusions.push_back(std::move(w));
    exp.vocab = hydra::build_rare_vocab(hydra::read_lines(exp.config.vocab.corpus), exp.config.vocab.max_frequency,
                                        exclusions);
    exp.pool = hydra::build_concept_pool(exp.concepts, pool_size, exp.config.vocab.seed);
    return exp;
}

/// The pretrained base for toy_experiment() with the given model seed.
inline const hydra::SurrogateModel& toy_base(std::uint64_t model_seed = 1)
{
    static std::map<std::uint64_t, hydra::SurrogateModel> cache;
    auto it = cache.find(model_seed);
    if (it == cache.end()) {
        hydra::Experiment exp = toy_experiment();
        exp.config.model.seed = model_seed;
        it = cache.emplace(model_seed, hydra::build_base_model(exp)).first;
    }
    return it->second;
}

/// Ten concepts and a denoiser that predicts zero noise, so every prompt decodes to the same
/// seed-determined direction. Attacker 0 gets 9 pairs aimed at that direction's argmax concept,
/// attacker 1 one pair aimed elsewhere; with tau = -1 their ASRs are exactly 1 and 0.
struct SkewedPlan {
    hydra::SurrogateModel model;
    hydra::AttackPlan plan;
    hydra::EvalConfig eval;
    std::string winner;
};

inline SkewedPlan skewed_plan()
{
    std::vector<std::string> concepts;
    for (char c = 'a'; c <= 'j'; ++c)
        concepts.push_back(std::string("concept") + c);
    std::vector<std::string> triggers;
    for (int i = 0; i < 10; ++i)
        triggers.push_back(std::string("trig") + static_cast<char>('a' + i));
    hydra::ModelConfig mc;
    SkewedPlan s{hydra::init_model(concepts, triggers, hydra::default_templates(), 10, mc), {}, {}, {}};
    s.model.denoiser.w2.setZero();
    s.model.denoiser.b2.setZero();
    s.eval.n_seeds = 1;
    s.eval.prompts_per_pair = 2;

    const auto seed = s.eval.sampling_seeds().front();
    const hydra::Vec z = hydra::sample_from_condition(s.model.denoiser, hydra::Vec::Zero(s.model.encoder.dim()), s.model.schedule, seed).decoded;
    s.winner = hydra::judge(s.model.anchors, z, concepts[0], -1.0).argmax;
    const std::string loser = s.winner == concepts[0] ? concepts[1] : concepts[0];

    hydra::AttackerAssignment a0, a1;
    a0.attacker_id = 0;
    a1.attacker_id = 1;
    int id = 0;
    for (const auto& c : concepts)
        if (c != s.winner) {
            a0.pairs.push_back({c, s.winner, id});
            a0.triggers.push_back(triggers[static_cast<std::size_t>(id)]);
            ++id;
        }
    a1.pairs.push_back({s.winner, loser, id});
    a1.triggers.push_back(triggers[static_cast<std::size_t>(id)]);
    s.plan.attackers = {a0, a1};
    return s;
}

} // namespace testing
