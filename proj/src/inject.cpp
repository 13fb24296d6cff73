#include "hydra/inject.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "hydra/errors.hpp"
#include "hydra/evosearch.hpp"

namespace hydra {

namespace {

constexpr std::uint64_t kStageA = 0x41;
constexpr std::uint64_t kStageB = 0x42;
constexpr std::uint64_t kRickroll = 0x52;
constexpr std::uint64_t kFinetune = 0x46;
constexpr std::uint64_t kPretrain = 0x50;
constexpr std::uint64_t kNaive = 0x4e;
constexpr InsertPosition kFillerPositions[] = {InsertPosition::Begin, InsertPosition::BeforeSource,
                                               InsertPosition::AfterSource, InsertPosition::End};

void sgd(EncoderParams& p, const EncoderGrad& g, double lr, double token_scale = 1.0)
{
    p.token_table -= lr * token_scale * g.token_table;
    p.proj_weight -= lr * g.proj_weight;
    p.proj_bias -= lr * g.proj_bias;
    p.ln_gain -= lr * g.ln_gain;
    p.ln_bias -= lr * g.ln_bias;
}

void sgd(DenoiserParams& p, const DenoiserGrad& g, double lr)
{
    p.w1 -= lr * g.w1;
    p.b1 -= lr * g.b1;
    p.w2 -= lr * g.w2;
    p.b2 -= lr * g.b2;
}

void sgd(ClassifierHead& h, const ClassifierGrad& g, double lr)
{
    h.W -= lr * g.W;
    h.b -= lr * g.b;
    h.ln_gain -= lr * g.ln_gain;
    h.ln_bias -= lr * g.ln_bias;
}

void require_triggers(const AttackerAssignment& slice)
{
    for (std::size_t i = 0; i < slice.pairs.size(); ++i)
        if (slice.triggers[i].empty())
            throw PlanError("pair " + std::to_string(slice.pairs[i].pair_id) + " of attacker " +
                            std::to_string(slice.attacker_id) + " has no trigger selected");
}

std::uint64_t item_seed(std::uint64_t seed, std::uint64_t stage, std::size_t epoch, std::size_t step,
                        std::size_t slot)
{
    return derive_seed(seed, {stage, epoch, step, slot});
}

void check_finite(double loss, std::string_view stage, int epoch, std::size_t step)
{
    if (!std::isfinite(loss))
        throw DivergenceError(std::string(stage) + " diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(step));
}

std::string concept_of(const Prompt& p)
{
    if (!p.source_index)
        throw FormatError("prompt '" + p.text() + "' has no concept slot");
    return p.tokens[*p.source_index];
}

} // namespace

void TrainConfig::validate() const
{
    if (!(lr_encoder > 0.0) || !(lr_classifier > 0.0) || !(lr_denoiser > 0.0))
        throw ConfigError("learning rates must be positive");
    if (tcr_fraction < 0.0 || tcr_fraction > 1.0)
        throw ConfigError("tcr_fraction must lie in [0, 1]");
    if (batch_size < 2)
        throw ConfigError("batch size must be at least 2");
    if (epochs < 0)
        throw ConfigError("epochs must be non-negative");
    if (!(clip_scale > 0.0))
        throw ConfigError("clip_scale must be positive");
}

std::string_view to_string(ItemKind kind)
{
    switch (kind) {
    case ItemKind::Clean:
        return "clean";
    case ItemKind::Poisoned:
        return "poisoned";
    case ItemKind::TriggerClean:
        return "trigger-clean";
    }
    return "?";
}

std::string_view to_string(FinetuneMode mode)
{
    return mode == FinetuneMode::Full ? "full" : "lowrank";
}

std::vector<Prompt> clean_prompt_set(const std::vector<std::string>& concepts,
                                     const std::vector<std::string>& templates, std::size_t per_concept,
                                     std::uint64_t seed)
{
    std::vector<Prompt> out;
    for (std::size_t c = 0; c < concepts.size(); ++c)
        for (auto& p : sample_concept_prompts(concepts[c], templates, per_concept, derive_seed(seed, {0x636c6eULL, c})))
            out.push_back(std::move(p));
    return out;
}

TrainPools build_train_pools(const SurrogateModel& model, const AttackerAssignment& slice, const DataConfig& data,
                             bool include_trigger_clean)
{
    require_triggers(slice);
    TrainPools pools;
    Rng filler_rng(derive_seed(data.seed, {0x66696cULL}));
    for (auto& p : clean_prompt_set(model.concepts(), data.templates, data.clean_prompts_per_concept, data.seed)) {
        std::string c = concept_of(p);
        if (!data.filler_words.empty()) {
            const auto& w = data.filler_words[filler_rng.index(data.filler_words.size())];
            pools.clean.push_back({ItemKind::Clean, -1, insert_trigger(p, w, kFillerPositions[filler_rng.index(4)]), c, 0});
        }
        pools.clean.push_back({ItemKind::Clean, -1, std::move(p), std::move(c), 0});
    }

    for (std::size_t k = 0; k < slice.pairs.size(); ++k) {
        const auto& pair = slice.pairs[k];
        const auto& trigger = slice.triggers[k];
        const auto pid = static_cast<std::uint64_t>(pair.pair_id);
        for (const auto& p : sample_prompts(pair, data.templates, data.prompts_per_pair, derive_seed(data.seed, {0x707273ULL, pid})))
            pools.poisoned.push_back({ItemKind::Poisoned, pair.pair_id, insert_trigger(p, trigger, data.position),
                                      pair.target, pair.class_index()});

        if (!include_trigger_clean)
            continue;
        const std::size_t per_other = std::max<std::size_t>(1, data.prompts_per_pair / 2);
        for (std::size_t c = 0; c < model.concepts().size(); ++c) {
            const auto& other = model.concepts()[c];
            if (other == pair.source)
                continue;
            for (const auto& p : sample_concept_prompts(other, data.templates, per_other, derive_seed(data.seed, {0x746372ULL, pid, c})))
                pools.trigger_clean.push_back(
                    {ItemKind::TriggerClean, pair.pair_id, insert_trigger(p, trigger, data.position), other, 0});
        }
    }
    return pools;
}

BatchComposition batch_composition(std::size_t batch_size, double tcr_fraction)
{
    BatchComposition c;
    c.trigger_clean = static_cast<std::size_t>(std::llround(tcr_fraction * static_cast<double>(batch_size)));
    const std::size_t rest = batch_size - c.trigger_clean;
    c.poisoned = static_cast<std::size_t>(std::llround(static_cast<double>(rest) * 4.0 / 7.0));
    c.clean = rest - c.poisoned;
    return c;
}

std::vector<TrainItem> draw_batch(const TrainPools& pools, BatchComposition composition, Rng& rng)
{
    // Slots for an empty pool fall back to clean items.
    if (pools.poisoned.empty()) {
        composition.clean += composition.poisoned;
        composition.poisoned = 0;
    }
    if (pools.trigger_clean.empty()) {
        composition.clean += composition.trigger_clean;
        composition.trigger_clean = 0;
    }
    if (pools.clean.empty() && composition.clean > 0)
        throw FormatError("no clean prompts available for the batch");

    std::vector<TrainItem> batch;
    batch.reserve(composition.poisoned + composition.clean + composition.trigger_clean);
    auto take = [&](const std::vector<TrainItem>& pool, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i)
            batch.push_back(pool[rng.index(pool.size())]);
    };
    take(pools.poisoned, composition.poisoned);
    take(pools.clean, composition.clean);
    take(pools.trigger_clean, composition.trigger_clean);
    return batch;
}

void write_loss_jsonl(std::ostream& out, const std::string& stage, const LossTrace& trace)
{
    for (const auto& e : trace) {
        nlohmann::json j = {{"stage", stage},   {"epoch", e.epoch},         {"cls", e.cls},     {"clip", e.clip},
                            {"diffusion", e.diffusion}, {"align", e.align}, {"total", e.total}};
        out << j.dump() << '\n';
    }
}

LossTrace train_stage_a(SurrogateModel& model, const AttackerAssignment& slice, const DataConfig& data,
                        const TrainConfig& config)
{
    config.validate();
    const TrainPools pools = build_train_pools(model, slice, data, false);
    const BatchComposition composition = batch_composition(config.batch_size, 0.0);

    LossTrace trace;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        EpochLoss acc{epoch};
        for (std::size_t step = 0; step < data.steps_per_epoch; ++step) {
            Rng rng(item_seed(config.seed, kStageA, static_cast<std::size_t>(epoch), step, 0xffff));
            const auto batch = draw_batch(pools, composition, rng);

            std::vector<EncodeTrace> traces(batch.size());
            std::vector<Vec> pooled, images;
            std::vector<int> labels;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                pooled.push_back(encode_pooled(model.encoder, model.tokens, batch[i].prompt, &traces[i]));
                images.push_back(encode_image(model.anchors, batch[i].target_concept,
                                              item_seed(config.seed, kStageA, static_cast<std::size_t>(epoch), step, i)));
                labels.push_back(batch[i].label);
            }
            const ClsLoss cls = loss_cls(model.head, pooled, labels);
            const ClipLoss clip = loss_clip(pooled, images, config.clip_scale);
            const double total = config.lambda_cls * cls.loss + config.lambda_clip * clip.loss;
            check_finite(total, "stage A", epoch, step);

            EncoderGrad grad = EncoderGrad::zeros_like(model.encoder);
            for (std::size_t i = 0; i < batch.size(); ++i)
                encoder_backward(model.encoder, traces[i], config.lambda_cls * cls.dz[i] + config.lambda_clip * clip.dtext[i],
                                 grad);
            ClassifierGrad head_grad = cls.head;
            head_grad.W *= config.lambda_cls;
            head_grad.b *= config.lambda_cls;
            head_grad.ln_gain *= config.lambda_cls;
            head_grad.ln_bias *= config.lambda_cls;

            sgd(model.encoder, grad, config.lr_encoder, config.token_lr_scale);
            sgd(model.head, head_grad, config.lr_classifier);

            acc.cls += cls.loss;
            acc.clip += clip.loss;
            acc.total += total;
        }
        const double n = static_cast<double>(std::max<std::size_t>(1, data.steps_per_epoch));
        acc.cls /= n;
        acc.clip /= n;
        acc.total /= n;
        trace.push_back(acc);
    }
    return trace;
}

namespace {

LossTrace run_diffusion_training(SurrogateModel& model, const TrainPools& pools, const DataConfig& data,
                                 const TrainConfig& config, std::uint64_t stage_tag, std::string_view stage_name)
{
    const BatchComposition composition = batch_composition(config.batch_size, config.tcr_fraction);
    LossTrace trace;
    std::vector<DiffusionItem> items;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        EpochLoss acc{epoch};
        for (std::size_t step = 0; step < data.steps_per_epoch; ++step) {
            Rng rng(item_seed(config.seed, stage_tag, static_cast<std::size_t>(epoch), step, 0xffff));
            const auto batch = draw_batch(pools, composition, rng);
            items.clear();
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const auto s = item_seed(config.seed, stage_tag, static_cast<std::size_t>(epoch), step, i);
                items.push_back({batch[i].prompt, model.target_latent(batch[i].target_concept, s), s});
            }
            const DiffusionLoss loss = diffusion_loss(model.denoiser, model.encoder, model.tokens, model.schedule, items);
            check_finite(loss.loss, stage_name, epoch, step);
            sgd(model.encoder, loss.encoder, config.lr_encoder, config.token_lr_scale);
            sgd(model.denoiser, loss.denoiser, config.lr_denoiser);
            acc.diffusion += loss.loss;
        }
        acc.diffusion /= static_cast<double>(std::max<std::size_t>(1, data.steps_per_epoch));
        acc.total = acc.diffusion;
        trace.push_back(acc);
    }
    return trace;
}

} // namespace

LossTrace train_stage_b(SurrogateModel& model, const AttackerAssignment& slice, const DataConfig& data,
                        const TrainConfig& config)
{
    config.validate();
    const TrainPools pools = build_train_pools(model, slice, data, config.tcr_fraction > 0.0);
    return run_diffusion_training(model, pools, data, config, kStageB, "stage B");
}

double tcr_divergence(const SurrogateModel& model, const std::vector<Prompt>& benign,
                      const std::vector<std::string>& triggers, std::span<const std::uint64_t> seeds,
                      InsertPosition position)
{
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& p : benign) {
        const Vec clean_cond = model.pooled(p);
        std::vector<Vec> clean_out;
        for (auto s : seeds)
            clean_out.push_back(sample_from_condition(model.denoiser, clean_cond, model.schedule, s).decoded);
        for (const auto& t : triggers) {
            const Vec cond = model.pooled(insert_trigger(p, t, position));
            for (std::size_t k = 0; k < seeds.size(); ++k) {
                total += (sample_from_condition(model.denoiser, cond, model.schedule, seeds[k]).decoded - clean_out[k])
                             .squaredNorm();
                ++count;
            }
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

RickrollLoss rickroll_loss(const EncoderParams& student, const TokenIndex& tokens, std::span<const Prompt> poisoned,
                           std::span<const Vec> poisoned_targets, std::span<const Prompt> clean,
                           std::span<const Vec> clean_targets)
{
    if (poisoned.size() != poisoned_targets.size() || clean.size() != clean_targets.size())
        throw FormatError("rickroll loss needs one teacher target per prompt");
    RickrollLoss out{0.0, EncoderGrad::zeros_like(student)};
    EncodeTrace trace;
    auto term = [&](std::span<const Prompt> prompts, std::span<const Vec> targets) {
        if (prompts.empty())
            return;
        const double n = static_cast<double>(prompts.size());
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            const Vec diff = encode_pooled(student, tokens, prompts[i], &trace) - targets[i];
            out.loss += diff.squaredNorm() / n;
            encoder_backward(student, trace, (2.0 / n) * diff, out.grad);
        }
    };
    term(poisoned, poisoned_targets);
    term(clean, clean_targets);
    return out;
}

LossTrace rickroll_inject(SurrogateModel& model, const AttackerAssignment& slice, const DataConfig& data,
                          const TrainConfig& config)
{
    config.validate();
    const TrainPools pools = build_train_pools(model, slice, data, false);
    const EncoderParams teacher = model.encoder;
    const BatchComposition composition = batch_composition(config.batch_size, 0.0);

    LossTrace trace;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        EpochLoss acc{epoch};
        for (std::size_t step = 0; step < data.steps_per_epoch; ++step) {
            Rng rng(item_seed(config.seed, kRickroll, static_cast<std::size_t>(epoch), step, 0xffff));
            const auto batch = draw_batch(pools, composition, rng);
            std::vector<Prompt> poisoned, clean;
            std::vector<Vec> poisoned_targets, clean_targets;
            for (const auto& item : batch) {
                if (item.kind == ItemKind::Poisoned) {
                    poisoned_targets.push_back(
                        encode_pooled(teacher, model.tokens, with_concept(remove_trigger(item.prompt), item.target_concept)));
                    poisoned.push_back(item.prompt);
                } else {
                    clean_targets.push_back(encode_pooled(teacher, model.tokens, item.prompt));
                    clean.push_back(item.prompt);
                }
            }
            const RickrollLoss loss =
                rickroll_loss(model.encoder, model.tokens, poisoned, poisoned_targets, clean, clean_targets);
            check_finite(loss.loss, "rickroll", epoch, step);
            sgd(model.encoder, loss.grad, config.lr_encoder);
            acc.align += loss.loss;
        }
        acc.align /= static_cast<double>(std::max<std::size_t>(1, data.steps_per_epoch));
        acc.total = acc.align;
        trace.push_back(acc);
    }
    return trace;
}

std::vector<EditConstraint> eviledit_inject(SurrogateModel& model, const AttackerAssignment& slice,
                                            const DataConfig& data)
{
    require_triggers(slice);
    if (data.templates.empty())
        throw FormatError("eviledit needs at least one template");

    std::vector<EditConstraint> edits;
    EncodeTrace trace;
    for (std::size_t k = 0; k < slice.pairs.size(); ++k) {
        const auto& pair = slice.pairs[k];
        const Prompt base = fill_template(data.templates.front(), pair.source);
        encode_pooled(model.encoder, model.tokens, insert_trigger(base, slice.triggers[k], data.position), &trace);
        EditConstraint e;
        e.u = trace.ln_out;
        e.v = model.pooled(with_concept(base, pair.target)) - model.encoder.proj_bias;
        if (e.u.norm() < 1e-8)
            throw DegenerateError("trigger direction for pair " + std::to_string(pair.pair_id) + " is degenerate");
        edits.push_back(std::move(e));
    }
    Mat& w = model.encoder.proj_weight;
    for (const auto& e : edits)
        w += (e.v - w * e.u) * e.u.transpose() / e.u.squaredNorm();
    return edits;
}

namespace {

std::vector<DiffusionItem> clean_batch(const SurrogateModel& model, const std::vector<Prompt>& prompts,
                                       std::size_t batch_size, std::uint64_t seed, std::uint64_t tag,
                                       std::size_t step)
{
    Rng rng(item_seed(seed, tag, 0, step, 0xffff));
    std::vector<DiffusionItem> items;
    items.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const auto& p = prompts[rng.index(prompts.size())];
        const auto s = item_seed(seed, tag, 0, step, i);
        items.push_back({p, model.target_latent(concept_of(p), s), s});
    }
    return items;
}

LowRankFactor make_factor(const Mat& base, int rank, Rng& rng)
{
    LowRankFactor f;
    f.a = Mat::Zero(base.rows(), rank);
    f.b = gaussian_mat(rank, base.cols(), 1.0 / std::sqrt(static_cast<double>(base.cols())), rng);
    return f;
}

void step_factor(LowRankFactor& f, const Mat& dw, double lr)
{
    const Mat da = dw * f.b.transpose();
    const Mat db = f.a.transpose() * dw;
    f.a -= lr * da;
    f.b -= lr * db;
}

} // namespace

LossTrace downstream_finetune(SurrogateModel& model, const std::vector<Prompt>& clean_prompts,
                              const FinetuneConfig& config)
{
    if (config.mode == FinetuneMode::LowRank && config.rank < 1)
        throw ConfigError("low-rank fine-tuning needs rank >= 1");
    if (config.steps == 0)
        return {};
    if (clean_prompts.empty())
        throw FormatError("fine-tuning needs clean prompts");

    LossTrace trace;
    EpochLoss acc{0};
    if (config.mode == FinetuneMode::Full) {
        for (std::size_t step = 0; step < config.steps; ++step) {
            const auto items = clean_batch(model, clean_prompts, config.batch_size, config.seed, kFinetune, step);
            const auto loss = diffusion_loss(model.denoiser, model.encoder, model.tokens, model.schedule, items);
            check_finite(loss.loss, "fine-tune", 0, step);
            sgd(model.encoder, loss.encoder, config.lr);
            sgd(model.denoiser, loss.denoiser, config.lr);
            acc.diffusion += loss.loss;
        }
    } else {
        Rng rng(derive_seed(config.seed, {kFinetune, 0x6c6f7261ULL}));
        const Mat base_proj = model.encoder.proj_weight;
        const Mat base_w1 = model.denoiser.w1;
        const Mat base_w2 = model.denoiser.w2;
        LowRankFactor proj = make_factor(base_proj, config.rank, rng);
        LowRankFactor w1 = make_factor(base_w1, config.rank, rng);
        LowRankFactor w2 = make_factor(base_w2, config.rank, rng);
        for (std::size_t step = 0; step < config.steps; ++step) {
            model.encoder.proj_weight = proj.merged(base_proj);
            model.denoiser.w1 = w1.merged(base_w1);
            model.denoiser.w2 = w2.merged(base_w2);
            const auto items = clean_batch(model, clean_prompts, config.batch_size, config.seed, kFinetune, step);
            const auto loss = diffusion_loss(model.denoiser, model.encoder, model.tokens, model.schedule, items);
            check_finite(loss.loss, "low-rank fine-tune", 0, step);
            step_factor(proj, loss.encoder.proj_weight, config.lr);
            step_factor(w1, loss.denoiser.w1, config.lr);
            step_factor(w2, loss.denoiser.w2, config.lr);
            acc.diffusion += loss.loss;
        }
        model.encoder.proj_weight = proj.merged(base_proj);
        model.denoiser.w1 = w1.merged(base_w1);
        model.denoiser.w2 = w2.merged(base_w2);
    }
    acc.diffusion /= static_cast<double>(config.steps);
    acc.total = acc.diffusion;
    trace.push_back(acc);
    return trace;
}

void assign_uniform_triggers(AttackerAssignment& slice, const Vocabulary& vocab, const std::set<std::string>& reserved,
                             std::uint64_t seed)
{
    const Vocabulary pool = without_words(vocab, reserved);
    if (pool.size() < slice.pairs.size())
        throw VocabError("not enough unused vocabulary words for " + std::to_string(slice.pairs.size()) +
                         " triggers (" + std::to_string(pool.size()) + " left)");
    Rng rng(derive_seed(seed, {kNaive, static_cast<std::uint64_t>(slice.attacker_id)}));
    std::set<std::string> taken;
    slice.triggers.assign(slice.pairs.size(), "");
    for (auto& t : slice.triggers) {
        std::string w;
        do {
            w = pool.words[rng.index(pool.size())];
        } while (taken.contains(w));
        taken.insert(w);
        t = w;
    }
}

LossTrace naive_poison_inject(SurrogateModel& model, AttackerAssignment& slice, const Vocabulary& vocab,
                              const std::set<std::string>& reserved, const DataConfig& data,
                              const TrainConfig& config)
{
    assign_uniform_triggers(slice, vocab, reserved, config.seed);
    TrainConfig stage_b = config;
    stage_b.tcr_fraction = 0.0;
    return train_stage_b(model, slice, data, stage_b);
}

LossTrace pretrain_base(SurrogateModel& model, const std::vector<std::string>& templates, const PretrainConfig& config,
                        const std::vector<std::string>& filler_words)
{
    std::vector<Prompt> prompts;
    for (const auto& c : model.concepts())
        for (const auto& t : templates)
            prompts.push_back(fill_template(t, c));

    constexpr std::size_t kChunk = 100;
    LossTrace trace;
    EpochLoss acc{0};
    std::size_t in_chunk = 0;
    for (std::size_t step = 0; step < config.steps; ++step) {
        auto items = clean_batch(model, prompts, config.batch_size, config.seed, kPretrain, step);
        if (!filler_words.empty() && config.filler_rate > 0.0) {
            Rng rng(item_seed(config.seed, kPretrain, 1, step, 0xffff));
            for (auto& item : items)
                if (rng.bernoulli(config.filler_rate)) {
                    const auto& w = filler_words[rng.index(filler_words.size())];
                    item.prompt = insert_trigger(item.prompt, w, kFillerPositions[rng.index(4)]);
                }
        }
        DiffusionLoss loss = diffusion_loss(model.denoiser, model.encoder, model.tokens, model.schedule, items);
        double clip_value = 0.0;
        if (config.lambda_clip > 0.0) {
            std::vector<EncodeTrace> traces(items.size());
            std::vector<Vec> pooled, images;
            for (std::size_t i = 0; i < items.size(); ++i) {
                pooled.push_back(encode_pooled(model.encoder, model.tokens, items[i].prompt, &traces[i]));
                images.push_back(encode_image(model.anchors, concept_of(items[i].prompt), items[i].seed));
            }
            const ClipLoss clip = loss_clip(pooled, images, config.clip_scale);
            clip_value = clip.loss;
            for (std::size_t i = 0; i < items.size(); ++i)
                encoder_backward(model.encoder, traces[i], config.lambda_clip * clip.dtext[i], loss.encoder);
        }
        check_finite(loss.loss + clip_value, "pretrain", static_cast<int>(step / kChunk), step);
        sgd(model.encoder, loss.encoder, config.lr_encoder);
        sgd(model.denoiser, loss.denoiser, config.lr_denoiser);

        acc.diffusion += loss.loss;
        acc.clip += clip_value;
        if (++in_chunk == kChunk || step + 1 == config.steps) {
            acc.diffusion /= static_cast<double>(in_chunk);
            acc.clip /= static_cast<double>(in_chunk);
            acc.total = acc.diffusion + config.lambda_clip * acc.clip;
            trace.push_back(acc);
            acc = EpochLoss{static_cast<int>(trace.size())};
            in_chunk = 0;
        }
    }
    return trace;
}

} // namespace hydra
