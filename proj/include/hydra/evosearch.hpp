#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hydra/embed.hpp"
#include "hydra/rng.hpp"
#include "hydra/vocab.hpp"

namespace hydra {

struct FitnessWeights {
    double align = 1.0;
    double dev = 0.5;
    double conc = 0.25;
    double inter = 0.5;

    void validate() const;
};

struct FitnessScore {
    double s_align = 0.0;
    double s_dev = 0.0;
    double s_conc = 0.0;
    double s_inter = 0.0;
    double total = 0.0;
};

double compose_fitness(const FitnessWeights& w, double s_align, double s_dev, double s_conc, double s_inter);

struct GaConfig {
    std::size_t population = 32;
    std::size_t generations = 25;
    std::size_t elite = 4;
    std::size_t tournament = 4;
    double mutation_rate = 0.3;
    std::size_t n_prompts = 8;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Scores trigger candidates against a fixed, pre-sampled set of positive and negative prompts.
///
/// The prompt sets are drawn once at construction, so the objective stays a fixed
/// deterministic function for the lifetime of the evaluator.
class FitnessEvaluator {
public:
    FitnessEvaluator(const EncoderParams& encoder, const TokenIndex& tokens, const AnchorSpace& anchors,
                     const Vocabulary& vocab, std::vector<ConceptPair> pos_pairs, std::vector<ConceptPair> neg_pairs,
                     const FitnessWeights& weights, std::size_t n_prompts, std::uint64_t seed,
                     const std::vector<std::string>& templates = default_templates(),
                     InsertPosition position = InsertPosition::BeforeSource);

    FitnessScore operator()(const std::string& trigger) const;

    const std::vector<Prompt>& positive_prompts() const { return positives_; }
    const std::vector<Prompt>& negative_prompts() const { return negatives_; }
    const Vocabulary& vocabulary() const { return vocab_; }

private:
    const EncoderParams& encoder_;
    const TokenIndex& tokens_;
    const Vocabulary& vocab_;
    FitnessWeights weights_;
    InsertPosition position_;
    std::vector<Prompt> positives_;
    std::vector<Vec> positive_targets_;
    std::vector<Vec> positive_clean_;
    std::vector<Prompt> negatives_;
    std::vector<Vec> negative_clean_;
};

FitnessScore fitness(const std::string& trigger, const std::vector<ConceptPair>& pos_pairs,
                     const std::vector<ConceptPair>& neg_pairs, const EncoderParams& encoder, const TokenIndex& tokens,
                     const AnchorSpace& anchors, const Vocabulary& vocab, const FitnessWeights& weights,
                     std::size_t n_prompts, std::uint64_t seed,
                     const std::vector<std::string>& templates = default_templates());

/// Index of the best member of a uniformly drawn size-B subset (ties: lower index).
std::size_t tournament_select(std::span<const double> scores, std::size_t tournament, Rng& rng);

std::string crossover_at(const std::string& t1, const std::string& t2, std::size_t cut1, std::size_t cut2);
std::string crossover(const std::string& t1, const std::string& t2, Rng& rng);

std::string mutate(const std::string& candidate, double mutation_rate, const Vocabulary& vocab, Rng& rng);

std::size_t levenshtein(std::string_view a, std::string_view b);
/// Nearest vocabulary word by edit distance; ties go to the lexicographically smaller word.
std::string project_to_vocab(std::string_view candidate, const Vocabulary& vocab);

struct GenerationRecord {
    std::size_t generation = 0;
    std::string best_trigger;
    FitnessScore best;
};

struct EvolveResult {
    std::string best_trigger;
    FitnessScore best;
    /// One record per population P_0 .. P_G.
    std::vector<GenerationRecord> trace;
    std::vector<std::vector<std::string>> populations;
};

EvolveResult evolve(const FitnessEvaluator& evaluator, const GaConfig& config);

/// Vocabulary minus the given words (used to keep triggers unique across pairs).
Vocabulary without_words(const Vocabulary& vocab, const std::set<std::string>& words);

void write_trace_jsonl(std::ostream& out, const EvolveResult& result);

} // namespace hydra
