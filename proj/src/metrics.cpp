#include "hydra/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hydra/errors.hpp"
#include "hydra/inject.hpp"

namespace hydra {

std::string_view to_string(Condition c)
{
    return c == Condition::Clean ? "clean" : "triggered";
}

std::string_view to_string(TauPool p)
{
    return p == TauPool::AllAnchors ? "all-anchors" : "matched";
}

std::string_view to_string(TauMode m)
{
    return m == TauMode::PerModel ? "per-model" : "fixed-base";
}

std::string_view to_string(AccScope s)
{
    return s == AccScope::Global ? "global" : "first-attacker";
}

TauPool parse_tau_pool(std::string_view s)
{
    if (s == "all-anchors")
        return TauPool::AllAnchors;
    if (s == "matched")
        return TauPool::Matched;
    throw ConfigError("unknown tau pool '" + std::string(s) + "' (expected all-anchors or matched)");
}

TauMode parse_tau_mode(std::string_view s)
{
    if (s == "per-model")
        return TauMode::PerModel;
    if (s == "fixed-base")
        return TauMode::FixedBase;
    throw ConfigError("unknown tau mode '" + std::string(s) + "' (expected per-model or fixed-base)");
}

AccScope parse_acc_scope(std::string_view s)
{
    if (s == "global")
        return AccScope::Global;
    if (s == "first-attacker")
        return AccScope::FirstAttacker;
    throw ConfigError("unknown ACC scope '" + std::string(s) + "' (expected global or first-attacker)");
}

std::vector<std::uint64_t> EvalConfig::sampling_seeds() const
{
    std::vector<std::uint64_t> seeds;
    seeds.reserve(n_seeds);
    for (std::size_t i = 0; i < n_seeds; ++i)
        seeds.push_back(derive_seed(seed, {0x6576616cULL, i}));
    return seeds;
}

double adaptive_threshold(std::vector<double> sims)
{
    if (sims.empty())
        throw DegenerateError("adaptive threshold needs at least one clean similarity");
    std::sort(sims.begin(), sims.end());
    const double pos = 0.25 * static_cast<double>(sims.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sims.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sims[lo] + frac * (sims[hi] - sims[lo]);
}

EvalOutcome judge(const AnchorSpace& anchors, const Vec& decoded, const std::string& intended, double tau)
{
    EvalOutcome o;
    o.intended = intended;
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t c = 0; c < anchors.concepts.size(); ++c) {
        const double cs = cosine(decoded, anchors.anchors.row(static_cast<Eigen::Index>(c)).transpose());
        if (cs > best_cos) {
            best_cos = cs;
            best = c;
        }
        if (anchors.concepts[c] == intended)
            o.cosine = cs;
    }
    o.argmax = anchors.concepts[best];
    o.pass_threshold_only = o.cosine >= tau;
    o.pass = o.pass_threshold_only && o.argmax == intended;
    return o;
}

namespace {

std::string concept_of(const Prompt& p)
{
    if (!p.source_index)
        throw FormatError("clean prompt '" + p.text() + "' has no concept slot");
    return p.tokens[*p.source_index];
}

} // namespace

std::vector<double> clean_similarities(const SurrogateModel& model, const std::vector<Prompt>& clean_prompts,
                                       std::span<const std::uint64_t> seeds, TauPool pool)
{
    std::vector<double> sims;
    for (const auto& p : clean_prompts) {
        const Vec cond = model.pooled(p);
        const auto own = concept_of(p);
        for (auto s : seeds) {
            const Vec decoded = sample_from_condition(model.denoiser, cond, model.schedule, s).decoded;
            if (pool == TauPool::Matched) {
                sims.push_back(cosine(decoded, model.anchors.anchor(own)));
            } else {
                for (Eigen::Index c = 0; c < model.anchors.anchors.rows(); ++c)
                    sims.push_back(cosine(decoded, model.anchors.anchors.row(c).transpose()));
            }
        }
    }
    return sims;
}

double aggregate_over_attackers(std::span<const double> per_attacker)
{
    if (per_attacker.empty())
        return 0.0;
    double sum = 0.0;
    for (double v : per_attacker)
        sum += v;
    return sum / static_cast<double>(per_attacker.size());
}

std::vector<std::vector<Prompt>> triggered_prompts(const AttackPlan& plan, const EvalConfig& config)
{
    std::vector<std::vector<Prompt>> groups;
    for (const auto& a : plan.attackers)
        for (std::size_t k = 0; k < a.pairs.size(); ++k) {
            if (a.triggers[k].empty())
                continue;
            std::vector<Prompt> group;
            const auto seed = derive_seed(config.seed, {0x747267ULL, static_cast<std::uint64_t>(a.pairs[k].pair_id)});
            for (const auto& p : sample_prompts(a.pairs[k], config.templates, config.prompts_per_pair, seed))
                group.push_back(insert_trigger(p, a.triggers[k], config.position));
            groups.push_back(std::move(group));
        }
    return groups;
}

AsrResult eval_asr(const SurrogateModel& model, const AttackPlan& plan, const EvalConfig& config, double tau)
{
    AsrResult result;
    const auto seeds = config.sampling_seeds();
    std::vector<double> attacker_asr, attacker_asr_thr;
    for (const auto& a : plan.attackers) {
        std::size_t evaluated_pairs = 0;
        double sum = 0.0, sum_thr = 0.0;
        for (std::size_t k = 0; k < a.pairs.size(); ++k) {
            const auto& pair = a.pairs[k];
            if (a.triggers[k].empty())
                continue;
            PairResult pr{pair.pair_id, a.attacker_id};
            std::size_t pass = 0, pass_thr = 0;
            const auto seed = derive_seed(config.seed, {0x747267ULL, static_cast<std::uint64_t>(pair.pair_id)});
            const auto prompts = sample_prompts(pair, config.templates, config.prompts_per_pair, seed);
            for (std::size_t i = 0; i < prompts.size(); ++i) {
                const Prompt trig = insert_trigger(prompts[i], a.triggers[k], config.position);
                const Vec cond = model.pooled(trig);
                for (auto s : seeds) {
                    EvalOutcome o = judge(model.anchors, sample_from_condition(model.denoiser, cond, model.schedule, s).decoded,
                                          pair.target, tau);
                    o.prompt_id = "pair" + std::to_string(pair.pair_id) + "/p" + std::to_string(i);
                    o.condition = Condition::Triggered;
                    o.attacker_id = a.attacker_id;
                    o.pair_id = pair.pair_id;
                    o.seed = s;
                    pass += o.pass;
                    pass_thr += o.pass_threshold_only;
                    ++pr.samples;
                    result.outcomes.push_back(std::move(o));
                }
            }
            pr.asr = pr.samples ? static_cast<double>(pass) / static_cast<double>(pr.samples) : 0.0;
            pr.asr_threshold_only = pr.samples ? static_cast<double>(pass_thr) / static_cast<double>(pr.samples) : 0.0;
            sum += pr.asr;
            sum_thr += pr.asr_threshold_only;
            ++evaluated_pairs;
            result.pairs.push_back(pr);
        }
        if (evaluated_pairs == 0) {
            result.warnings.push_back("attacker " + std::to_string(a.attacker_id) +
                                      " has no evaluable pairs; excluded from ASR");
            continue;
        }
        AttackerMetrics m;
        m.attacker_id = a.attacker_id;
        m.method = std::string(to_string(a.method));
        m.pairs = evaluated_pairs;
        m.asr = sum / static_cast<double>(evaluated_pairs);
        m.asr_threshold_only = sum_thr / static_cast<double>(evaluated_pairs);
        attacker_asr.push_back(m.asr);
        attacker_asr_thr.push_back(m.asr_threshold_only);
        result.attackers.push_back(std::move(m));
    }
    result.aggregate = aggregate_over_attackers(attacker_asr);
    result.aggregate_threshold_only = aggregate_over_attackers(attacker_asr_thr);
    return result;
}

AccResult eval_acc(const SurrogateModel& model, const std::vector<Prompt>& clean_prompts, double tau,
                   std::span<const std::uint64_t> seeds)
{
    AccResult result;
    std::map<std::string, std::pair<std::size_t, std::size_t>> counts; // concept -> (pass, total)
    std::map<std::string, std::size_t> counts_thr;
    for (std::size_t i = 0; i < clean_prompts.size(); ++i) {
        const auto& p = clean_prompts[i];
        const auto own = concept_of(p);
        const Vec cond = model.pooled(p);
        for (auto s : seeds) {
            EvalOutcome o = judge(model.anchors, sample_from_condition(model.denoiser, cond, model.schedule, s).decoded,
                                  own, tau);
            o.prompt_id = "clean/" + own + "/p" + std::to_string(i);
            o.condition = Condition::Clean;
            o.seed = s;
            auto& c = counts[own];
            c.first += o.pass;
            c.second += 1;
            counts_thr[own] += o.pass_threshold_only;
            result.outcomes.push_back(std::move(o));
        }
    }
    if (counts.empty())
        return result;
    for (const auto& [concept_name, c] : counts) {
        const double rate = static_cast<double>(c.first) / static_cast<double>(c.second);
        result.per_concept[concept_name] = rate;
        result.acc += rate;
        result.acc_threshold_only += static_cast<double>(counts_thr[concept_name]) / static_cast<double>(c.second);
    }
    result.acc /= static_cast<double>(counts.size());
    result.acc_threshold_only /= static_cast<double>(counts.size());
    return result;
}

DistortionReport mapping_distortion(const std::vector<ConceptPair>& history)
{
    std::map<std::string, std::set<std::string>> targets;
    for (const auto& p : history)
        targets[p.source].insert(p.target);
    DistortionReport r;
    std::size_t conflicted = 0;
    for (const auto& [src, ts] : targets) {
        r.targets_per_source[src] = ts.size();
        conflicted += ts.size() > 1;
    }
    r.score = targets.empty() ? 0.0 : static_cast<double>(conflicted) / static_cast<double>(targets.size());
    return r;
}

double concentration_score(const SurrogateModel& model, const std::vector<std::vector<Prompt>>& triggered_by_pair)
{
    std::vector<std::pair<std::size_t, Vec>> embeddings;
    std::size_t groups = 0;
    for (std::size_t g = 0; g < triggered_by_pair.size(); ++g) {
        if (triggered_by_pair[g].empty())
            continue;
        ++groups;
        for (const auto& p : triggered_by_pair[g])
            embeddings.emplace_back(g, model.pooled(p));
    }
    if (groups < 2)
        throw DegenerateError("concentration score needs triggered prompts from at least 2 pairs");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < embeddings.size(); ++i)
        for (std::size_t j = i + 1; j < embeddings.size(); ++j)
            if (embeddings[i].first != embeddings[j].first) {
                sum += cosine(embeddings[i].second, embeddings[j].second);
                ++count;
            }
    return sum / static_cast<double>(count);
}

MetricsReport evaluate_model(const SurrogateModel& model, const AttackPlan& plan,
                             const std::vector<ConceptPair>& mapping_history, const EvalConfig& config,
                             std::optional<double> fixed_tau)
{
    MetricsReport report;
    const auto seeds = config.sampling_seeds();
    const auto clean = clean_prompt_set(model.concepts(), config.templates, config.clean_prompts_per_concept,
                                        derive_seed(config.seed, {0x61636355ULL}));

    report.tau = fixed_tau ? *fixed_tau : adaptive_threshold(clean_similarities(model, clean, seeds, config.tau_pool));

    AsrResult asr = eval_asr(model, plan, config, report.tau);
    report.asr = asr.aggregate;
    report.asr_threshold_only = asr.aggregate_threshold_only;
    report.warnings = std::move(asr.warnings);
    report.triggered_samples = asr.outcomes.size();

    // Per-attacker ACC over clean prompts of that attacker's source concepts.
    const AccResult global_acc = eval_acc(model, clean, report.tau, seeds);
    std::map<std::string, std::pair<std::size_t, std::size_t>> threshold_only; // concept -> (passes, samples)
    for (const auto& o : global_acc.outcomes) {
        threshold_only[o.intended].first += o.pass_threshold_only;
        threshold_only[o.intended].second += 1;
    }
    auto sources_of = [&](int attacker_id) {
        std::set<std::string> sources;
        for (const auto& p : plan.attacker(attacker_id).pairs)
            sources.insert(p.source);
        return sources;
    };
    for (auto& m : asr.attackers) {
        const auto sources = sources_of(m.attacker_id);
        double sum = 0.0;
        for (const auto& s : sources)
            sum += global_acc.per_concept.count(s) ? global_acc.per_concept.at(s) : 0.0;
        m.acc = sources.empty() ? 0.0 : sum / static_cast<double>(sources.size());
    }
    report.attackers = std::move(asr.attackers);

    if (config.acc_scope == AccScope::FirstAttacker && !report.attackers.empty()) {
        report.acc = report.attackers.front().acc;
        const auto sources = sources_of(report.attackers.front().attacker_id);
        double sum = 0.0;
        for (const auto& s : sources) {
            const auto it = threshold_only.find(s);
            if (it != threshold_only.end() && it->second.second > 0)
                sum += static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
        }
        report.acc_threshold_only = sources.empty() ? 0.0 : sum / static_cast<double>(sources.size());
    } else {
        report.acc = global_acc.acc;
        report.acc_threshold_only = global_acc.acc_threshold_only;
    }
    report.clean_samples = global_acc.outcomes.size();

    const auto groups = triggered_prompts(plan, config);
    std::size_t non_empty = 0;
    for (const auto& g : groups)
        non_empty += !g.empty();
    if (non_empty >= 2)
        report.concentration = concentration_score(model, groups);
    report.distortion = mapping_distortion(mapping_history);

    report.outcomes = std::move(asr.outcomes);
    report.outcomes.insert(report.outcomes.end(), global_acc.outcomes.begin(), global_acc.outcomes.end());
    return report;
}

nlohmann::json to_json(const EvalOutcome& o)
{
    return {{"prompt_id", o.prompt_id},
            {"condition", to_string(o.condition)},
            {"intended", o.intended},
            {"cosine", o.cosine},
            {"argmax", o.argmax},
            {"pass", o.pass},
            {"pass_threshold_only", o.pass_threshold_only},
            {"attacker_id", o.attacker_id},
            {"pair_id", o.pair_id},
            {"seed", o.seed}};
}

nlohmann::json to_json(const MetricsReport& r, bool include_outcomes)
{
    nlohmann::json attackers = nlohmann::json::array();
    for (const auto& a : r.attackers)
        attackers.push_back({{"attacker_id", a.attacker_id},
                             {"method", a.method},
                             {"pairs", a.pairs},
                             {"asr", a.asr},
                             {"asr_threshold_only", a.asr_threshold_only},
                             {"acc", a.acc}});
    nlohmann::json j = {{"stage", r.stage},
                        {"method", r.method},
                        {"tau", r.tau},
                        {"asr", r.asr},
                        {"asr_threshold_only", r.asr_threshold_only},
                        {"acc", r.acc},
                        {"acc_threshold_only", r.acc_threshold_only},
                        {"concentration", r.concentration ? nlohmann::json(*r.concentration) : nlohmann::json()},
                        {"distortion", {{"score", r.distortion.score}, {"targets_per_source", r.distortion.targets_per_source}}},
                        {"triggered_samples", r.triggered_samples},
                        {"clean_samples", r.clean_samples},
                        {"attackers", attackers},
                        {"warnings", r.warnings}};
    if (include_outcomes) {
        nlohmann::json outs = nlohmann::json::array();
        for (const auto& o : r.outcomes)
            outs.push_back(to_json(o));
        j["outcomes"] = std::move(outs);
    }
    return j;
}

void write_summary_csv_rows(std::ostream& out, const MetricsReport& r)
{
    const std::string conc = r.concentration ? nlohmann::json(*r.concentration).dump() : "";
    const std::string tau = nlohmann::json(r.tau).dump();
    const std::string dist = nlohmann::json(r.distortion.score).dump();
    for (const auto& a : r.attackers)
        out << r.stage << ',' << a.attacker_id << ',' << a.pairs << ',' << nlohmann::json(a.asr).dump() << ','
            << nlohmann::json(a.acc).dump() << ',' << tau << ',' << conc << ',' << dist << '\n';
    std::size_t total_pairs = 0;
    for (const auto& a : r.attackers)
        total_pairs += a.pairs;
    out << r.stage << ",all," << total_pairs << ',' << nlohmann::json(r.asr).dump() << ','
        << nlohmann::json(r.acc).dump() << ',' << tau << ',' << conc << ',' << dist << '\n';
}

} // namespace hydra
