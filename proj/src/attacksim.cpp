#include "hydra/attacksim.hpp"

#include <algorithm>

#include "hydra/errors.hpp"

namespace hydra {

namespace {

constexpr std::uint64_t kStageSeed = 0x535447ULL;
constexpr std::uint64_t kSearchSeed = 0x4741ULL;

bool is_clean_method(Method m)
{
    return m == Method::CleanFinetuneFull || m == Method::CleanFinetuneLowRank;
}

void apply_override(TrainConfig& c, const std::string& key, double value)
{
    if (key == "epochs")
        c.epochs = static_cast<int>(value);
    else if (key == "batch_size")
        c.batch_size = static_cast<std::size_t>(value);
    else if (key == "lr_encoder")
        c.lr_encoder = value;
    else if (key == "lr_classifier")
        c.lr_classifier = value;
    else if (key == "lr_denoiser")
        c.lr_denoiser = value;
    else if (key == "lambda_cls")
        c.lambda_cls = value;
    else if (key == "lambda_clip")
        c.lambda_clip = value;
    else if (key == "clip_scale")
        c.clip_scale = value;
    else if (key == "token_lr_scale")
        c.token_lr_scale = value;
    else if (key == "tcr_fraction")
        c.tcr_fraction = value;
    else
        throw ConfigError("unknown stage override '" + key + "'");
}

} // namespace

const std::map<std::string, std::string>& method_substitutions()
{
    static const std::map<std::string, std::string> subs = {
        {"bagm", "naive-poison"}, {"nightshade", "naive-poison"}, {"villan", "naive-poison"}};
    return subs;
}

std::vector<EvolveResult> search_triggers(const SurrogateModel& model, AttackerAssignment& slice,
                                         const Vocabulary& vocab, std::set<std::string>& reserved,
                                         const AttackConfig& config)
{
    std::vector<EvolveResult> searches;
    slice.triggers.assign(slice.pairs.size(), "");
    for (std::size_t k = 0; k < slice.pairs.size(); ++k) {
        std::vector<ConceptPair> negatives;
        for (std::size_t j = 0; j < slice.pairs.size(); ++j)
            if (j != k)
                negatives.push_back(slice.pairs[j]);
        const Vocabulary candidates = without_words(vocab, reserved);
        if (candidates.size() == 0)
            throw VocabError("no unused vocabulary words left for pair " + std::to_string(slice.pairs[k].pair_id));
        const auto search_seed = derive_seed(config.ga.seed, {kSearchSeed, static_cast<std::uint64_t>(slice.pairs[k].pair_id)});
        const FitnessEvaluator evaluator(model.encoder, model.tokens, model.anchors, candidates, {slice.pairs[k]},
                                         negatives, config.weights, config.ga.n_prompts, search_seed,
                                         config.data.templates, config.data.position);
        GaConfig ga = config.ga;
        ga.seed = search_seed;
        searches.push_back(evolve(evaluator, ga));
        slice.triggers[k] = searches.back().best_trigger;
        reserved.insert(slice.triggers[k]);
    }
    return searches;
}

InjectionOutcome hydra_inject(SurrogateModel& model, AttackerAssignment& slice, const Vocabulary& vocab,
                              std::set<std::string>& reserved, const AttackConfig& config)
{
    InjectionOutcome out;
    out.searches = search_triggers(model, slice, vocab, reserved, config);
    out.stage_a = train_stage_a(model, slice, config.data, config.train);
    out.stage_b = train_stage_b(model, slice, config.data, config.train);
    return out;
}

InjectionOutcome inject_attacker(SurrogateModel& model, AttackerAssignment& slice, const Vocabulary& vocab,
                                 std::set<std::string>& reserved, const AttackConfig& config)
{
    InjectionOutcome out;
    switch (slice.method) {
    case Method::Hydra:
        return hydra_inject(model, slice, vocab, reserved, config);
    case Method::Rickroll:
        assign_uniform_triggers(slice, vocab, reserved, config.seed);
        out.stage_a = rickroll_inject(model, slice, config.data, config.train);
        break;
    case Method::EvilEdit:
        assign_uniform_triggers(slice, vocab, reserved, config.seed);
        out.edits = eviledit_inject(model, slice, config.data);
        break;
    case Method::NaivePoison:
        out.stage_b = naive_poison_inject(model, slice, vocab, reserved, config.data, config.train);
        break;
    case Method::CleanFinetuneFull:
    case Method::CleanFinetuneLowRank: {
        FinetuneConfig ft = config.finetune;
        ft.mode = slice.method == Method::CleanFinetuneFull ? FinetuneMode::Full : FinetuneMode::LowRank;
        const auto clean = clean_prompt_set(model.concepts(), config.data.templates,
                                            config.data.clean_prompts_per_concept, config.data.seed);
        out.stage_b = downstream_finetune(model, clean, ft);
        break;
    }
    }
    for (const auto& t : slice.triggers)
        reserved.insert(t);
    return out;
}

void ChainSpec::validate() const
{
    std::set<int> ids;
    std::set<int> pair_ids;
    for (const auto& s : stages) {
        if (!ids.insert(s.attacker_id).second)
            throw PlanError("attacker id " + std::to_string(s.attacker_id) + " appears in more than one stage");
        if (is_clean_method(s.method) && !s.pairs.empty())
            throw PlanError("clean fine-tuning stage " + std::to_string(s.attacker_id) + " must not carry pairs");
        if (!is_clean_method(s.method) && s.pairs.empty())
            throw PlanError("attack stage " + std::to_string(s.attacker_id) + " has no concept pairs");
        for (const auto& p : s.pairs)
            if (!pair_ids.insert(p.pair_id).second)
                throw PlanError("pair " + std::to_string(p.pair_id) + " is assigned to more than one stage");
        for (const auto& [k, v] : s.train_overrides) {
            TrainConfig probe;
            apply_override(probe, k, v);
        }
    }
}

AttackConfig stage_config(const AttackConfig& base, const StageSpec& stage, std::size_t index)
{
    AttackConfig c = base;
    for (const auto& [k, v] : stage.train_overrides)
        apply_override(c.train, k, v);
    const auto root = derive_seed(base.seed, {kStageSeed, index});
    c.seed = root;
    c.data.seed = derive_seed(root, {1});
    c.train.seed = derive_seed(root, {2});
    c.ga.seed = derive_seed(root, {3});
    c.finetune.seed = derive_seed(root, {4});
    return c;
}

void fill_retention(ChainResult& result, const ChainSpec& spec)
{
    result.retention_attackers.clear();
    for (const auto& s : spec.stages)
        if (!is_clean_method(s.method))
            result.retention_attackers.push_back(s.attacker_id);
    result.retention.clear();
    for (const auto& rec : result.stages) {
        std::vector<std::optional<double>> row(result.retention_attackers.size());
        for (std::size_t a = 0; a < result.retention_attackers.size(); ++a)
            for (const auto& m : rec.metrics.attackers)
                if (m.attacker_id == result.retention_attackers[a])
                    row[a] = m.asr;
        result.retention.push_back(std::move(row));
    }
}

ChainResult run_chain(SurrogateModel model, const Vocabulary& vocab, const ChainSpec& spec,
                      const AttackConfig& attack, const EvalConfig& eval, ChainState state,
                      const StageCallback& on_stage)
{
    spec.validate();
    if (state.completed > spec.stages.size())
        throw PlanError("resume point " + std::to_string(state.completed) + " is past the chain end");

    ChainResult result;
    if (eval.tau_mode == TauMode::FixedBase && !state.base_tau) {
        const auto clean = clean_prompt_set(model.concepts(), eval.templates, eval.clean_prompts_per_concept,
                                            derive_seed(eval.seed, {0x61636355ULL}));
        const auto seeds = eval.sampling_seeds();
        state.base_tau = adaptive_threshold(clean_similarities(model, clean, seeds, eval.tau_pool));
    }

    for (std::size_t i = state.completed; i < spec.stages.size(); ++i) {
        const StageSpec& stage = spec.stages[i];
        const std::size_t index = i + 1;
        const AttackConfig config = stage_config(attack, stage, index);

        AttackerAssignment slice{stage.attacker_id, stage.method, stage.pairs,
                                 std::vector<std::string>(stage.pairs.size())};
        StageRecord rec;
        rec.stage = index;
        rec.attacker_id = stage.attacker_id;
        rec.method = stage.method;
        std::set<std::string> reserved = state.reserved;
        try {
            rec.injection = inject_attacker(model, slice, vocab, reserved, config);
        } catch (const DivergenceError& e) {
            result.aborted = true;
            result.abort_reason = "stage " + std::to_string(index) + " (" + std::string(to_string(stage.method)) +
                                  "): " + e.what();
            break;
        }
        rec.triggers = slice.triggers;
        state.reserved = std::move(reserved);
        if (!slice.pairs.empty()) {
            state.plan.attackers.push_back(slice);
            state.mapping_history.insert(state.mapping_history.end(), slice.pairs.begin(), slice.pairs.end());
        }
        state.completed = index;

        rec.metrics = evaluate_model(model, state.plan, state.mapping_history, eval,
                                     eval.tau_mode == TauMode::FixedBase ? state.base_tau : std::nullopt);
        rec.metrics.stage = static_cast<int>(index);
        rec.metrics.method = std::string(to_string(stage.method));
        if (on_stage)
            on_stage(rec, model, state);
        result.stages.push_back(std::move(rec));
    }
    result.final_state = std::move(state);
    fill_retention(result, spec);
    return result;
}

ChainSpec make_chain_spec(const std::vector<Method>& methods, const std::vector<ConceptPair>& pool)
{
    std::size_t injecting = 0;
    for (auto m : methods)
        injecting += !is_clean_method(m);
    ChainSpec spec;
    std::vector<AttackerAssignment> blocks;
    if (injecting > 0)
        blocks = assign_pairs(pool, static_cast<int>(injecting)).attackers;
    std::size_t next = 0;
    for (std::size_t i = 0; i < methods.size(); ++i) {
        StageSpec s;
        s.attacker_id = static_cast<int>(i);
        s.method = methods[i];
        if (!is_clean_method(methods[i]))
            s.pairs = blocks[next++].pairs;
        spec.stages.push_back(std::move(s));
    }
    return spec;
}

std::vector<PositionRow> position_ablation(const SurrogateModel& base, const Vocabulary& vocab, Method method,
                                           const AttackPlan& plan, const AttackConfig& attack,
                                           const EvalConfig& eval)
{
    constexpr InsertPosition kPositions[] = {InsertPosition::Begin, InsertPosition::BeforeSource,
                                             InsertPosition::AfterSource, InsertPosition::End};
    std::vector<PositionRow> rows;
    for (auto pos : kPositions) {
        SurrogateModel model = base;
        AttackPlan injected;
        std::set<std::string> reserved;
        for (std::size_t i = 0; i < plan.attackers.size(); ++i) {
            StageSpec stage{plan.attackers[i].attacker_id, method, plan.attackers[i].pairs, {}};
            AttackConfig config = stage_config(attack, stage, i + 1);
            config.data.position = pos;
            AttackerAssignment slice{stage.attacker_id, method, stage.pairs, {}};
            inject_attacker(model, slice, vocab, reserved, config);
            injected.attackers.push_back(std::move(slice));
        }
        EvalConfig ev = eval;
        ev.position = pos;
        const MetricsReport report = evaluate_model(model, injected, {}, ev);
        PositionRow row{pos, {}, report.asr, report.acc};
        for (const auto& a : injected.attackers)
            row.triggers.insert(row.triggers.end(), a.triggers.begin(), a.triggers.end());
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<RetentionPoint> retention_sweep(const SurrogateModel& base, const Vocabulary& vocab, Method method,
                                            std::size_t n_stages, std::size_t pairs_per_stage,
                                            const std::vector<ConceptPair>& pool, const AttackConfig& attack,
                                            const EvalConfig& eval)
{
    if (n_stages == 0 || pairs_per_stage == 0)
        throw ConfigError("retention sweep needs at least one stage and one pair per stage");
    if (pool.size() < n_stages * pairs_per_stage)
        throw CapacityError("retention sweep needs " + std::to_string(n_stages * pairs_per_stage) +
                            " pairs but the pool holds " + std::to_string(pool.size()));
    ChainSpec spec;
    for (std::size_t s = 0; s < n_stages; ++s) {
        StageSpec st;
        st.attacker_id = static_cast<int>(s);
        st.method = method;
        st.pairs.assign(pool.begin() + static_cast<std::ptrdiff_t>(s * pairs_per_stage),
                        pool.begin() + static_cast<std::ptrdiff_t>((s + 1) * pairs_per_stage));
        spec.stages.push_back(std::move(st));
    }
    const ChainResult result = run_chain(base, vocab, spec, attack, eval);
    if (result.aborted)
        throw DivergenceError(result.abort_reason);
    std::vector<RetentionPoint> curve;
    for (const auto& rec : result.stages)
        for (const auto& m : rec.metrics.attackers)
            if (m.attacker_id == 0)
                curve.push_back({rec.stage, m.asr, m.acc});
    return curve;
}

std::vector<RobustnessRow> robustness_sweep(const SurrogateModel& injected, const AttackPlan& plan,
                                            const std::vector<Prompt>& clean_prompts,
                                            const std::vector<FinetuneMode>& modes,
                                            const std::vector<std::size_t>& step_grid, const FinetuneConfig& finetune,
                                            const EvalConfig& eval)
{
    std::vector<RobustnessRow> rows;
    for (auto mode : modes)
        for (auto steps : step_grid) {
            SurrogateModel model = injected;
            FinetuneConfig ft = finetune;
            ft.mode = mode;
            ft.steps = steps;
            downstream_finetune(model, clean_prompts, ft);
            const MetricsReport report = evaluate_model(model, plan, {}, eval);
            rows.push_back({mode, steps, report.asr, report.acc});
        }
    return rows;
}

} // namespace hydra
