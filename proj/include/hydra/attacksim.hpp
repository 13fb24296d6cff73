#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hydra/evosearch.hpp"
#include "hydra/inject.hpp"
#include "hydra/metrics.hpp"
#include "hydra/model.hpp"
#include "hydra/vocab.hpp"

namespace hydra {

/// Baselines of the reference chains that have no faithful surrogate; each runs as NaivePoison.
const std::map<std::string, std::string>& method_substitutions();

/// Everything one attacker's injection needs besides the model and its plan slice.
struct AttackConfig {
    DataConfig data;
    TrainConfig train;
    GaConfig ga;
    FitnessWeights weights;
    FinetuneConfig finetune;
    std::uint64_t seed = 0;
};

struct InjectionOutcome {
    LossTrace stage_a;
    LossTrace stage_b;
    std::vector<EvolveResult> searches;
    std::vector<EditConstraint> edits;
};

/// Runs one attacker's method against `model`, choosing triggers into `slice`.
/// `reserved` holds trigger words already bound in earlier stages; chosen words are added to it.
InjectionOutcome inject_attacker(SurrogateModel& model, AttackerAssignment& slice, const Vocabulary& vocab,
                                 std::set<std::string>& reserved, const AttackConfig& config);

/// Per-pair genetic trigger search against the current encoder; fills slice.triggers and reserves them.
std::vector<EvolveResult> search_triggers(const SurrogateModel& model, AttackerAssignment& slice,
                                         const Vocabulary& vocab, std::set<std::string>& reserved,
                                         const AttackConfig& config);

/// Hydra: per-pair trigger search, Stage A, Stage B with trigger-clean items.
InjectionOutcome hydra_inject(SurrogateModel& model, AttackerAssignment& slice, const Vocabulary& vocab,
                              std::set<std::string>& reserved, const AttackConfig& config);

struct StageSpec {
    int attacker_id = 0;
    Method method = Method::Hydra;
    std::vector<ConceptPair> pairs;
    /// TrainConfig keys (epochs, batch_size, lr_encoder, lr_classifier, lr_denoiser,
    /// lambda_cls, lambda_clip, clip_scale, token_lr_scale, tcr_fraction) overridden for this stage only.
    std::map<std::string, double> train_overrides;
};

struct ChainSpec {
    std::vector<StageSpec> stages;

    void validate() const;
};

/// Attack settings for stage `index` (1-based): overrides applied and seeds keyed by the stage.
AttackConfig stage_config(const AttackConfig& base, const StageSpec& stage, std::size_t index);

struct StageRecord {
    std::size_t stage = 0;
    int attacker_id = 0;
    Method method = Method::Hydra;
    std::vector<std::string> triggers;
    InjectionOutcome injection;
    MetricsReport metrics;
};

/// State carried between stages; enough to resume a chain after stage `completed`.
struct ChainState {
    std::size_t completed = 0;
    AttackPlan plan;
    std::vector<ConceptPair> mapping_history;
    std::set<std::string> reserved;
    std::optional<double> base_tau;
};

struct ChainResult {
    std::vector<StageRecord> stages;
    /// retention[s][a]: ASR of the a-th injecting attacker after stage s+1; empty before injection.
    std::vector<std::vector<std::optional<double>>> retention;
    std::vector<int> retention_attackers;
    ChainState final_state;
    bool aborted = false;
    std::string abort_reason;
};

/// Called after each completed stage with the post-stage model.
using StageCallback = std::function<void(const StageRecord&, const SurrogateModel&, const ChainState&)>;

/// Runs stages strictly in order from `state.completed + 1`, starting from `model`.
/// Training divergence stops the chain and returns a partial result marked aborted.
ChainResult run_chain(SurrogateModel model, const Vocabulary& vocab, const ChainSpec& spec,
                      const AttackConfig& attack, const EvalConfig& eval, ChainState state = {},
                      const StageCallback& on_stage = {});

/// Retention matrix rebuilt from stage records (shared by fresh and resumed chains).
void fill_retention(ChainResult& result, const ChainSpec& spec);

/// One ChainSpec over `methods`, pairs split across the injecting stages in contiguous blocks.
ChainSpec make_chain_spec(const std::vector<Method>& methods, const std::vector<ConceptPair>& pool);

struct PositionRow {
    InsertPosition position = InsertPosition::BeforeSource;
    std::vector<std::string> triggers;
    double asr = 0.0;
    double acc = 0.0;
};

/// Four independent injections from the same base, differing only in insertion position.
std::vector<PositionRow> position_ablation(const SurrogateModel& base, const Vocabulary& vocab, Method method,
                                           const AttackPlan& plan, const AttackConfig& attack,
                                           const EvalConfig& eval);

struct RetentionPoint {
    std::size_t stage = 0;
    double asr = 0.0;
    double acc = 0.0;
};

/// Homogeneous chain of `n_stages` attackers with `pairs_per_stage` pairs each; attacker 0's curve.
std::vector<RetentionPoint> retention_sweep(const SurrogateModel& base, const Vocabulary& vocab, Method method,
                                            std::size_t n_stages, std::size_t pairs_per_stage,
                                            const std::vector<ConceptPair>& pool, const AttackConfig& attack,
                                            const EvalConfig& eval);

struct RobustnessRow {
    FinetuneMode mode = FinetuneMode::Full;
    std::size_t steps = 0;
    double asr = 0.0;
    double acc = 0.0;
};

/// For every mode and step count, fine-tunes a fresh copy of `injected` on clean prompts and evaluates it.
std::vector<RobustnessRow> robustness_sweep(const SurrogateModel& injected, const AttackPlan& plan,
                                            const std::vector<Prompt>& clean_prompts,
                                            const std::vector<FinetuneMode>& modes,
                                            const std::vector<std::size_t>& step_grid, const FinetuneConfig& finetune,
                                            const EvalConfig& eval);

} // namespace hydra
