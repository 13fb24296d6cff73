#pragma once

#include <cstdint>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hydra/model.hpp"
#include "hydra/vocab.hpp"

namespace hydra {

/// How training prompts are drawn for one attacker.
struct DataConfig {
    std::size_t prompts_per_pair = 8;
    std::size_t clean_prompts_per_concept = 8;
    std::size_t steps_per_epoch = 200;
    InsertPosition position = InsertPosition::BeforeSource;
    std::vector<std::string> templates = default_templates();
    /// Ordinary words inserted into copies of the clean prompts (clean targets kept).
    std::vector<std::string> filler_words;
    std::uint64_t seed = 0;
};

/// Plain SGD. The reference setup used AdamW at 2e-5 (encoder) / 5e-4 (classifier);
/// these rates are rescaled for SGD on the surrogate.
struct TrainConfig {
    int epochs = 5;
    std::size_t batch_size = 64;
    double lr_encoder = 1e-3;
    double lr_classifier = 5e-3;
    double lr_denoiser = 1e-3;
    double lambda_cls = 1.0;
    double lambda_clip = 1.0;
    /// Multiplies the cosine logits of L_clip.
    double clip_scale = 10.0;
    /// Token-table step = lr_encoder * token_lr_scale.
    double token_lr_scale = 300.0;
    double tcr_fraction = 0.125;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class ItemKind { Clean, Poisoned, TriggerClean };

std::string_view to_string(ItemKind kind);

struct TrainItem {
    ItemKind kind = ItemKind::Clean;
    int pair_id = -1;
    Prompt prompt;
    /// Concept whose image/latent the item is trained towards.
    std::string target_concept;
    int label = 0;
};

struct TrainPools {
    std::vector<TrainItem> poisoned;
    std::vector<TrainItem> clean;
    std::vector<TrainItem> trigger_clean;
};

/// Clean prompts over every model concept, poisoned prompts for the attacker's pairs and,
/// when requested, trigger-clean prompts (other concepts carrying the trigger, clean targets).
TrainPools build_train_pools(const SurrogateModel& model, const AttackerAssignment& slice, const DataConfig& data,
                             bool include_trigger_clean);

struct BatchComposition {
    std::size_t poisoned = 0;
    std::size_t clean = 0;
    std::size_t trigger_clean = 0;
};

/// TriggerClean slots = round(tcr_fraction * B); the rest split Poisoned:Clean = 4:3.
BatchComposition batch_composition(std::size_t batch_size, double tcr_fraction);

std::vector<TrainItem> draw_batch(const TrainPools& pools, BatchComposition composition, Rng& rng);

struct EpochLoss {
    int epoch = 0;
    double cls = 0.0;
    double clip = 0.0;
    double diffusion = 0.0;
    double align = 0.0;
    double total = 0.0;
};

using LossTrace = std::vector<EpochLoss>;

void write_loss_jsonl(std::ostream& out, const std::string& stage, const LossTrace& trace);

/// Stage A: lambda_cls * L_cls + lambda_clip * L_clip on the encoder and classifier head.
LossTrace train_stage_a(SurrogateModel& model, const AttackerAssignment& slice, const DataConfig& data,
                        const TrainConfig& config);

/// Stage B: diffusion loss on Clean / Poisoned / TriggerClean batches; encoder and denoiser both train.
LossTrace train_stage_b(SurrogateModel& model, const AttackerAssignment& slice, const DataConfig& data,
                        const TrainConfig& config);

/// Mean ||decode(p) - decode(p + t)||^2 over benign prompts, triggers and shared sampling seeds.
double tcr_divergence(const SurrogateModel& model, const std::vector<Prompt>& benign,
                      const std::vector<std::string>& triggers, std::span<const std::uint64_t> seeds,
                      InsertPosition position = InsertPosition::BeforeSource);

struct RickrollLoss {
    double loss = 0.0;
    EncoderGrad grad;
};

/// mean_p ||pooled(p+t) - teacher(target prompt)||^2 + mean_q ||pooled(q) - teacher(q)||^2
RickrollLoss rickroll_loss(const EncoderParams& student, const TokenIndex& tokens,
                           std::span<const Prompt> poisoned, std::span<const Vec> poisoned_targets,
                           std::span<const Prompt> clean, std::span<const Vec> clean_targets);

LossTrace rickroll_inject(SurrogateModel& model, const AttackerAssignment& slice, const DataConfig& data,
                          const TrainConfig& config);

struct EditConstraint {
    Vec u; // LN output of the triggered prompt
    Vec v; // desired pre-bias projection output (target prompt)
};

/// Closed-form rank-1 edits of the encoder projection so that W u_k = v_k, applied pair by pair.
std::vector<EditConstraint> eviledit_inject(SurrogateModel& model, const AttackerAssignment& slice,
                                            const DataConfig& data);

enum class FinetuneMode { Full, LowRank };

std::string_view to_string(FinetuneMode mode);

struct FinetuneConfig {
    FinetuneMode mode = FinetuneMode::Full;
    int rank = 4;
    std::size_t steps = 100;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

/// Additive factors for one matrix: W = base + A * B with A (rows x r), B (r x cols).
struct LowRankFactor {
    Mat a;
    Mat b;
    Mat merged(const Mat& base) const { return base + a * b; }
};

/// Clean fine-tuning on the diffusion loss. Full updates encoder and denoiser; LowRank trains
/// adapters on the projection and both MLP weights and merges them into the model at the end.
LossTrace downstream_finetune(SurrogateModel& model, const std::vector<Prompt>& clean_prompts,
                              const FinetuneConfig& config);

/// Seeded uniform draws from the vocabulary minus `reserved`, distinct within the slice.
void assign_uniform_triggers(AttackerAssignment& slice, const Vocabulary& vocab, const std::set<std::string>& reserved,
                             std::uint64_t seed);

/// Generic poisoning baseline: uniformly drawn vocabulary triggers, Stage B only, no trigger-clean items.
/// Chosen triggers are written into the slice.
LossTrace naive_poison_inject(SurrogateModel& model, AttackerAssignment& slice, const Vocabulary& vocab,
                              const std::set<std::string>& reserved, const DataConfig& data,
                              const TrainConfig& config);

struct PretrainConfig {
    std::size_t steps = 10000;
    std::size_t batch_size = 32;
    double lr_encoder = 5e-3;
    double lr_denoiser = 1e-1;
    double lambda_clip = 1.0;
    double clip_scale = 1.0;
    /// Probability that a training prompt gets one random filler word inserted (clean target kept).
    double filler_rate = 0.0;
    std::uint64_t seed = 0;
};

/// Clean base training: contrastive text-anchor alignment plus the diffusion loss over every concept.
/// With `filler_words`, prompts are augmented so that unfamiliar words do not move generations.
LossTrace pretrain_base(SurrogateModel& model, const std::vector<std::string>& templates,
                        const PretrainConfig& config, const std::vector<std::string>& filler_words = {});

/// Clean prompts: `per_concept` seeded template fills for every concept.
std::vector<Prompt> clean_prompt_set(const std::vector<std::string>& concepts,
                                     const std::vector<std::string>& templates, std::size_t per_concept,
                                     std::uint64_t seed);

} // namespace hydra
