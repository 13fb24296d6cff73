#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hydra/chainio.hpp"
#include "hydra/errors.hpp"

namespace hydra {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config;
    std::string out;
    std::string checkpoint;
    std::string method;
    std::string resume;
    std::size_t from_stage = 0;
};

ExperimentConfig read_config(const Options& o)
{
    if (o.config.empty())
        return parse_config("", fs::current_path());
    return load_config(o.config);
}

fs::path open_run(const Options& o, std::string_view command, const ExperimentConfig& config)
{
    const fs::path dir = make_run_dir(o.out.empty() ? std::nullopt : std::optional<fs::path>(o.out), command);
    std::ofstream(dir / "config.ini", std::ios::binary) << echo_config(config);
    return dir;
}

void write_json(const fs::path& path, const json& j)
{
    std::ofstream(path, std::ios::binary) << j.dump(2) << '\n';
}

std::string fmt(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", x);
    return buf;
}

Checkpoint base_checkpoint(const Options& o, const Experiment& exp)
{
    if (!o.checkpoint.empty()) {
        Checkpoint c = load_checkpoint(o.checkpoint);
        if (c.provenance.stage != 0)
            throw ConfigError("'" + o.checkpoint + "' is a stage " + std::to_string(c.provenance.stage) +
                              " checkpoint; a base checkpoint is required here");
        return c;
    }
    Checkpoint c;
    c.model = build_base_model(exp);
    c.seeds = seed_ledger(exp.config);
    c.state = to_json(ChainState{});
    checkpoint_json(c);
    return c;
}

StageSpec first_attack_stage(const Experiment& exp, const std::string& method)
{
    const ChainSpec spec = chain_spec(exp);
    for (const auto& s : spec.stages)
        if (!s.pairs.empty()) {
            StageSpec stage = s;
            if (!method.empty())
                stage.method = resolve_method(method);
            return stage;
        }
    throw ConfigError("[chain] methods has no injecting stage");
}

/// Injects the first attack stage into `base`; writes checkpoints and metrics into `dir`.
std::pair<Checkpoint, StageRecord> inject_one(const Experiment& exp, Checkpoint base, const StageSpec& stage,
                                              const fs::path& dir)
{
    fs::create_directories(dir / "checkpoints");
    save_checkpoint(base, dir / "checkpoints" / "stage-0.json");
    ChainSpec spec{{stage}};
    Checkpoint injected;
    StageRecord record;
    const ChainResult result =
        run_chain(base.model, exp.vocab, spec, attack_config(exp.config), exp.config.eval, {},
                  [&](const StageRecord& rec, const SurrogateModel& model, const ChainState& st) {
                      injected.model = model;
                      injected.seeds = seed_ledger(exp.config);
                      injected.state = to_json(st);
                      injected.provenance = child_provenance(base, 1, std::string(to_string(rec.method)));
                      save_checkpoint(injected, dir / "checkpoints" / "stage-1.json");
                      record = rec;
                  });
    if (result.aborted)
        throw DivergenceError(result.abort_reason);
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
    write_metrics_jsonl(metrics, record.metrics);
    return {std::move(injected), std::move(record)};
}

int cmd_build_vocab(const Options& o)
{
    const Experiment exp = prepare_experiment(read_config(o));
    const fs::path dir = open_run(o, "build-vocab", exp.config);
    write_json(dir / "vocab.json", to_json(exp.vocab));
    std::cout << "build-vocab: " << exp.vocab.size() << " rare words (max_frequency "
              << exp.config.vocab.max_frequency << ") -> " << dir.string() << '\n';
    return 0;
}

int cmd_build_pool(const Options& o)
{
    const Experiment exp = prepare_experiment(read_config(o));
    const fs::path dir = open_run(o, "build-pool", exp.config);
    write_json(dir / "pool.json", pool_to_json(exp.pool));
    std::cout << "build-pool: " << exp.pool.size() << " concept pairs over " << exp.concepts.size()
              << " concepts -> " << dir.string() << '\n';
    return 0;
}

int cmd_search_triggers(const Options& o)
{
    const Experiment exp = prepare_experiment(read_config(o));
    const fs::path dir = open_run(o, "search-triggers", exp.config);
    const Checkpoint base = base_checkpoint(o, exp);
    const ChainSpec spec = chain_spec(exp);
    AttackPlan plan;
    std::set<std::string> reserved;
    std::ofstream trace(dir / "ga_trace.jsonl", std::ios::binary);
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const StageSpec& stage = spec.stages[i];
        if (stage.pairs.empty())
            continue;
        AttackerAssignment slice{stage.attacker_id, stage.method, stage.pairs, {}};
        const auto searches =
            search_triggers(base.model, slice, exp.vocab, reserved, stage_config(attack_config(exp.config), stage, i + 1));
        for (std::size_t k = 0; k < searches.size(); ++k) {
            trace << json({{"attacker_id", stage.attacker_id}, {"pair_id", stage.pairs[k].pair_id}}).dump() << '\n';
            write_trace_jsonl(trace, searches[k]);
            total += searches[k].best.total;
            ++n;
        }
        plan.attackers.push_back(std::move(slice));
    }
    write_json(dir / "triggers.json", to_json(plan));
    std::cout << "search-triggers: " << n << " pairs, mean best fitness " << fmt(n ? total / n : 0.0) << " -> "
              << dir.string() << '\n';
    return 0;
}

int cmd_inject(const Options& o)
{
    const Experiment exp = prepare_experiment(read_config(o));
    const fs::path dir = open_run(o, "inject", exp.config);
    const StageSpec stage = first_attack_stage(exp, o.method);
    const auto [ckpt, rec] = inject_one(exp, base_checkpoint(o, exp), stage, dir);
    std::ofstream traces(dir / "traces.jsonl", std::ios::binary);
    for (const auto& s : rec.injection.searches)
        write_trace_jsonl(traces, s);
    write_loss_jsonl(traces, "stage_a", rec.injection.stage_a);
    write_loss_jsonl(traces, "stage_b", rec.injection.stage_b);
    std::cout << "inject: " << to_string(stage.method) << " on " << stage.pairs.size() << " pairs, ASR "
              << fmt(rec.metrics.asr) << " ACC " << fmt(rec.metrics.acc) << " -> " << dir.string() << '\n';
    return 0;
}

int cmd_chain(const Options& o)
{
    ChainRun run;
    if (!o.resume.empty()) {
        if (!o.config.empty())
            throw UsageError("--resume reads the config echo of the source run; drop --config");
        const fs::path dir =
            make_run_dir(o.out.empty() ? std::nullopt : std::optional<fs::path>(o.out), "chain");
        run = resume_chain_to_dir(o.resume, o.from_stage, dir);
    } else {
        const Experiment exp = prepare_experiment(read_config(o));
        const fs::path dir =
            make_run_dir(o.out.empty() ? std::nullopt : std::optional<fs::path>(o.out), "chain");
        run = run_chain_to_dir(exp, dir);
    }
    if (run.result.aborted) {
        std::cerr << "error: chain aborted at " << run.result.abort_reason << "; partial results in "
                  << run.dir.string() << '\n';
        return 2;
    }
    const auto& last = run.result.stages.empty() ? MetricsReport{} : run.result.stages.back().metrics;
    std::cout << "chain: " << run.result.final_state.completed << " stages, final ASR " << fmt(last.asr) << " ACC "
              << fmt(last.acc) << " -> " << run.dir.string() << '\n';
    return 0;
}

int cmd_ablate_position(const Options& o)
{
    const Experiment exp = prepare_experiment(read_config(o));
    const fs::path dir = open_run(o, "ablate-position", exp.config);
    const Checkpoint base = base_checkpoint(o, exp);
    AttackPlan plan;
    for (const auto& s : chain_spec(exp).stages)
        if (!s.pairs.empty() && plan.attackers.size() < exp.config.ablation.attackers)
            plan.attackers.push_back({s.attacker_id, exp.config.ablation.method, s.pairs, {}});
    const auto rows = position_ablation(base.model, exp.vocab, exp.config.ablation.method, plan,
                                        attack_config(exp.config), exp.config.eval);
    std::ofstream csv(dir / "position.csv", std::ios::binary);
    csv << "position,asr,acc,triggers\n";
    std::string best;
    double best_asr = -1.0;
    for (const auto& r : rows) {
        std::string triggers;
        for (const auto& t : r.triggers)
            triggers += (triggers.empty() ? "" : " ") + t;
        csv << to_string(r.position) << ',' << r.asr << ',' << r.acc << ',' << triggers << '\n';
        if (r.asr > best_asr) {
            best_asr = r.asr;
            best = std::string(to_string(r.position));
        }
    }
    std::cout << "ablate-position: best " << best << " (ASR " << fmt(best_asr) << ") -> " << dir.string() << '\n';
    return 0;
}

int cmd_robustness(const Options& o)
{
    const Experiment exp = prepare_experiment(read_config(o));
    const fs::path dir = open_run(o, "robustness", exp.config);
    SurrogateModel injected;
    AttackPlan plan;
    std::optional<Checkpoint> loaded;
    if (!o.checkpoint.empty()) {
        loaded = load_checkpoint(o.checkpoint);
        if (loaded->state.is_null() || chain_state_from_json(loaded->state).plan.attackers.empty())
            loaded.reset();
    }
    if (loaded) {
        injected = loaded->model;
        plan = chain_state_from_json(loaded->state).plan;
    } else {
        auto [ckpt, rec] = inject_one(exp, base_checkpoint(o, exp), first_attack_stage(exp, "hydra"), dir);
        injected = ckpt.model;
        plan = chain_state_from_json(ckpt.state).plan;
    }
    const auto clean = clean_prompt_set(injected.concepts(), exp.config.data.templates,
                                        exp.config.data.clean_prompts_per_concept,
                                        derive_seed(exp.config.finetune.seed, {0x726f62ULL}));
    const auto rows = robustness_sweep(injected, plan, clean, exp.config.robustness.modes,
                                       exp.config.robustness.steps, exp.config.finetune, exp.config.eval);
    std::ofstream csv(dir / "robustness.csv", std::ios::binary);
    csv << "mode,steps,asr,acc\n";
    for (const auto& r : rows)
        csv << to_string(r.mode) << ',' << r.steps << ',' << r.asr << ',' << r.acc << '\n';
    std::cout << "robustness: " << rows.size() << " fine-tuning runs";
    if (!rows.empty())
        std::cout << ", last " << to_string(rows.back().mode) << " ASR " << fmt(rows.back().asr);
    std::cout << " -> " << dir.string() << '\n';
    return 0;
}

int cmd_eval(const Options& o)
{
    if (o.checkpoint.empty())
        throw ConfigError("eval needs --checkpoint");
    const ExperimentConfig config = read_config(o);
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const ChainState state = ckpt.state.is_null() ? ChainState{} : chain_state_from_json(ckpt.state);
    const fs::path dir = open_run(o, "eval", config);
    const auto fixed = config.eval.tau_mode == TauMode::FixedBase ? state.base_tau : std::nullopt;
    MetricsReport report = evaluate_model(ckpt.model, state.plan, state.mapping_history, config.eval, fixed);
    report.stage = static_cast<int>(ckpt.provenance.stage);
    report.method = ckpt.provenance.method;
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
    write_metrics_jsonl(metrics, report);
    std::ofstream outcomes(dir / "outcomes.jsonl", std::ios::binary);
    for (const auto& e : report.outcomes)
        outcomes << to_json(e).dump() << '\n';
    std::cout << "eval: " << state.plan.attackers.size() << " attackers, ASR " << fmt(report.asr) << " ACC "
              << fmt(report.acc) << " tau " << fmt(report.tau) << " -> " << dir.string() << '\n';
    return 0;
}

int cmd_export_embeddings(const Options& o)
{
    if (o.checkpoint.empty())
        throw ConfigError("export-embeddings needs --checkpoint");
    const ExperimentConfig config = read_config(o);
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const ChainState state = ckpt.state.is_null() ? ChainState{} : chain_state_from_json(ckpt.state);
    const fs::path dir = open_run(o, "export-embeddings", config);
    const SurrogateModel& model = ckpt.model;

    std::ofstream csv(dir / "embeddings.csv", std::ios::binary);
    csv << "kind,concept,pair_id,attacker_id,trigger,prompt";
    for (Eigen::Index i = 0; i < model.encoder.dim(); ++i)
        csv << ",e" << i;
    csv << '\n';
    std::size_t rows = 0;
    auto emit = [&](std::string_view kind, const std::string& concept_name, int pair, int attacker,
                    const std::string& trigger, const Prompt& p) {
        const Vec z = model.pooled(p);
        csv << kind << ',' << concept_name << ',' << pair << ',' << attacker << ',' << trigger << ',' << p.text();
        for (Eigen::Index i = 0; i < z.size(); ++i)
            csv << ',' << hex_double(z[i]);
        csv << '\n';
        ++rows;
    };
    const auto clean = clean_prompt_set(model.concepts(), config.data.templates, config.eval.clean_prompts_per_concept,
                                        derive_seed(config.eval.seed, {0x61636355ULL}));
    for (const auto& p : clean)
        emit("clean", p.tokens.at(*p.source_index), -1, -1, "", p);
    const auto triggered = triggered_prompts(state.plan, config.eval);
    std::size_t g = 0;
    for (const auto& a : state.plan.attackers)
        for (std::size_t k = 0; k < a.pairs.size(); ++k, ++g)
            for (const auto& p : triggered.at(g))
                emit("triggered", a.pairs[k].source, a.pairs[k].pair_id, a.attacker_id, a.triggers[k], p);
    std::cout << "export-embeddings: " << rows << " rows of dimension " << model.encoder.dim() << " -> "
              << dir.string() << '\n';
    return 0;
}

} // namespace

int cli_main(int argc, char** argv)
{
    CLI::App app{"Sequential multi-attacker backdoor chains on a toy text-to-image diffusion surrogate",
                 "hydra-forge"};
    app.require_subcommand(1);
    Options o;

    auto add = [&](const std::string& name, const std::string& help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.config, "experiment config (INI)");
        sub->add_option("--out", o.out, "run directory to create (default: $HYDRA_FORGE_RUN_ROOT/<command>-NNN)");
        return sub;
    };
    auto* build_vocab = add("build-vocab", "extract the rare-word trigger vocabulary from the corpus");
    auto* build_pool = add("build-pool", "sample the concept-pair pool");
    auto* search = add("search-triggers", "genetic trigger search for every attacker's pairs");
    search->add_option("--checkpoint", o.checkpoint, "base checkpoint (default: pretrain one)");
    auto* inject = add("inject", "inject the first attacker into a base model");
    inject->add_option("--checkpoint", o.checkpoint, "base checkpoint (default: pretrain one)");
    inject->add_option("--method", o.method, "attack method (default: first [chain] method)");
    auto* chain = add("chain", "run the configured sequential attack chain");
    chain->add_option("--resume", o.resume, "earlier chain run directory to continue");
    chain->add_option("--from-stage", o.from_stage, "last stage kept from the resumed run");
    auto* ablate = add("ablate-position", "compare the four trigger insertion positions");
    ablate->add_option("--checkpoint", o.checkpoint, "base checkpoint (default: pretrain one)");
    auto* robust = add("robustness", "clean downstream fine-tuning sweep");
    robust->add_option("--checkpoint", o.checkpoint, "injected checkpoint (default: inject one)");
    auto* eval = add("eval", "evaluate a checkpoint against its recorded attack plan");
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required();
    auto* exportc = add("export-embeddings", "write pooled text embeddings for clean and triggered prompts");
    exportc->add_option("--checkpoint", o.checkpoint, "checkpoint to read")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        if (argc > 1 && argv[1][0] != '-' && !app.get_subcommand_no_throw(argv[1]))
            std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
        else
            std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (*build_vocab)
            return cmd_build_vocab(o);
        if (*build_pool)
            return cmd_build_pool(o);
        if (*search)
            return cmd_search_triggers(o);
        if (*inject)
            return cmd_inject(o);
        if (*chain) {
            if (chain->count("--from-stage") && o.resume.empty())
                throw UsageError("--from-stage needs --resume");
            return cmd_chain(o);
        }
        if (*ablate)
            return cmd_ablate_position(o);
        if (*robust)
            return cmd_robustness(o);
        if (*eval)
            return cmd_eval(o);
        if (*exportc)
            return cmd_export_embeddings(o);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

} // namespace hydra
