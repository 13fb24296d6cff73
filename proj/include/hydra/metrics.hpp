#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hydra/model.hpp"
#include "hydra/vocab.hpp"

namespace hydra {

enum class Condition { Clean, Triggered };

/// Which clean similarities feed the adaptive threshold.
///   AllAnchors: every clean generation against every concept anchor.
///   Matched:    every clean generation against its own concept anchor only.
enum class TauPool { AllAnchors, Matched };
/// PerModel recomputes tau for every evaluated model; FixedBase reuses the base model's tau.
enum class TauMode { PerModel, FixedBase };
enum class AccScope { Global, FirstAttacker };

std::string_view to_string(Condition c);
std::string_view to_string(TauPool p);
std::string_view to_string(TauMode m);
std::string_view to_string(AccScope s);
TauPool parse_tau_pool(std::string_view s);
TauMode parse_tau_mode(std::string_view s);
AccScope parse_acc_scope(std::string_view s);

struct EvalConfig {
    std::size_t prompts_per_pair = 4;
    std::size_t clean_prompts_per_concept = 4;
    std::size_t n_seeds = 20;
    std::uint64_t seed = 20240;
    InsertPosition position = InsertPosition::BeforeSource;
    TauPool tau_pool = TauPool::AllAnchors;
    TauMode tau_mode = TauMode::PerModel;
    AccScope acc_scope = AccScope::FirstAttacker;
    std::vector<std::string> templates = default_templates();

    std::vector<std::uint64_t> sampling_seeds() const;
};

struct EvalOutcome {
    std::string prompt_id;
    Condition condition = Condition::Clean;
    std::string intended;
    double cosine = 0.0;
    std::string argmax;
    bool pass = false;
    bool pass_threshold_only = false;
    int attacker_id = -1;
    int pair_id = -1;
    std::uint64_t seed = 0;
};

/// Type-7 25th percentile: sorted value at 0.25 (n - 1), linearly interpolated.
double adaptive_threshold(std::vector<double> clean_similarities);

/// Scores one generation against every anchor and applies both pass rules.
EvalOutcome judge(const AnchorSpace& anchors, const Vec& decoded, const std::string& intended, double tau);

std::vector<double> clean_similarities(const SurrogateModel& model, const std::vector<Prompt>& clean_prompts,
                                       std::span<const std::uint64_t> seeds, TauPool pool);

struct PairResult {
    int pair_id = 0;
    int attacker_id = 0;
    double asr = 0.0;
    double asr_threshold_only = 0.0;
    std::size_t samples = 0;
};

struct AttackerMetrics {
    int attacker_id = 0;
    std::string method;
    std::size_t pairs = 0;
    double asr = 0.0;
    double asr_threshold_only = 0.0;
    double acc = 0.0;
};

struct AsrResult {
    std::vector<PairResult> pairs;
    std::vector<AttackerMetrics> attackers;
    double aggregate = 0.0;
    double aggregate_threshold_only = 0.0;
    std::vector<EvalOutcome> outcomes;
    std::vector<std::string> warnings;
};

/// Unweighted mean over attackers (each attacker's ASR is already a mean over its pairs).
double aggregate_over_attackers(std::span<const double> per_attacker);

AsrResult eval_asr(const SurrogateModel& model, const AttackPlan& plan, const EvalConfig& config, double tau);

struct AccResult {
    double acc = 0.0;
    double acc_threshold_only = 0.0;
    std::map<std::string, double> per_concept;
    std::vector<EvalOutcome> outcomes;
};

/// Per-concept pass rates averaged over concepts.
AccResult eval_acc(const SurrogateModel& model, const std::vector<Prompt>& clean_prompts, double tau,
                   std::span<const std::uint64_t> seeds);

struct DistortionReport {
    std::map<std::string, std::size_t> targets_per_source;
    double score = 0.0;
};

DistortionReport mapping_distortion(const std::vector<ConceptPair>& history);

/// Mean pairwise cosine of pooled embeddings across prompts belonging to different pairs.
double concentration_score(const SurrogateModel& model, const std::vector<std::vector<Prompt>>& triggered_by_pair);

struct MetricsReport {
    int stage = 0;
    std::string method;
    double tau = 0.0;
    std::vector<AttackerMetrics> attackers;
    double asr = 0.0;
    double asr_threshold_only = 0.0;
    double acc = 0.0;
    double acc_threshold_only = 0.0;
    std::optional<double> concentration;
    DistortionReport distortion;
    std::size_t triggered_samples = 0;
    std::size_t clean_samples = 0;
    std::vector<std::string> warnings;
    std::vector<EvalOutcome> outcomes;
};

/// Full evaluation of a model against every attacker in `plan` that has triggers assigned.
MetricsReport evaluate_model(const SurrogateModel& model, const AttackPlan& plan,
                             const std::vector<ConceptPair>& mapping_history, const EvalConfig& config,
                             std::optional<double> fixed_tau = std::nullopt);

/// The triggered prompts used for ASR, grouped per pair; shared with the concentration score.
std::vector<std::vector<Prompt>> triggered_prompts(const AttackPlan& plan, const EvalConfig& config);

nlohmann::json to_json(const EvalOutcome& o);
nlohmann::json to_json(const MetricsReport& r, bool include_outcomes = false);

inline constexpr std::string_view kSummaryCsvHeader = "stage,attacker,pairs,ASR,ACC,tau,concentration,distortion";
void write_summary_csv_rows(std::ostream& out, const MetricsReport& r);

} // namespace hydra
