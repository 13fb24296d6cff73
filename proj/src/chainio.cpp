#include "hydra/chainio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include "hydra/errors.hpp"

namespace hydra {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kHexDigits = "0123456789abcdef";

json tensor(const double* data, std::vector<Eigen::Index> shape)
{
    Eigen::Index n = 1;
    for (auto s : shape)
        n *= s;
    json values = json::array();
    for (Eigen::Index i = 0; i < n; ++i)
        values.push_back(hex_double(data[i]));
    return {{"shape", shape}, {"data", std::move(values)}};
}

json tensor(const Mat& m) { return tensor(m.data(), {m.rows(), m.cols()}); }
json tensor(const Vec& v) { return tensor(v.data(), {v.size()}); }
json tensor(const std::vector<double>& v) { return tensor(v.data(), {static_cast<Eigen::Index>(v.size())}); }

/// Shape and length checks, then the flat values.
std::vector<double> read_tensor(const json& tensors, const std::string& name, std::vector<Eigen::Index> expected)
{
    if (!tensors.contains(name))
        throw CheckpointShapeError("checkpoint is missing tensor '" + name + "'");
    const json& t = tensors.at(name);
    const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
    const json& data = t.at("data");
    Eigen::Index n = 1;
    for (auto s : shape)
        n *= s;
    if (static_cast<Eigen::Index>(data.size()) != n)
        throw CheckpointShapeError("tensor '" + name + "' holds " + std::to_string(data.size()) +
                                   " values but its shape declares " + std::to_string(n));
    if (shape != expected) {
        std::string want, got;
        for (auto s : expected)
            want += (want.empty() ? "" : "x") + std::to_string(s);
        for (auto s : shape)
            got += (got.empty() ? "" : "x") + std::to_string(s);
        throw CheckpointShapeError("tensor '" + name + "' has shape " + got + ", dimensions require " + want);
    }
    std::vector<double> out;
    out.reserve(data.size());
    for (const auto& v : data)
        out.push_back(parse_hex_double(v.get<std::string>()));
    return out;
}

Mat read_mat(const json& tensors, const std::string& name, Eigen::Index rows, Eigen::Index cols)
{
    const auto v = read_tensor(tensors, name, {rows, cols});
    Mat m(rows, cols);
    std::copy(v.begin(), v.end(), m.data());
    return m;
}

Vec read_vec(const json& tensors, const std::string& name, Eigen::Index n)
{
    const auto v = read_tensor(tensors, name, {n});
    Vec out(n);
    std::copy(v.begin(), v.end(), out.data());
    return out;
}

json lineage_json(const LineageEntry& e)
{
    return {{"stage", e.stage}, {"method", e.method}, {"parent", e.parent}, {"hash", e.hash}};
}

LineageEntry lineage_from_json(const json& j)
{
    return {j.at("stage").get<std::size_t>(), j.at("method").get<std::string>(), j.at("parent").get<std::string>(),
            j.at("hash").get<std::string>()};
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError("cannot write '" + path.string() + "'");
    out << text;
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- config binding ----

std::string format_double(double x)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return {buf, r.ptr};
}

std::string trim(std::string_view s)
{
    const auto a = s.find_first_not_of(" \t");
    if (a == std::string_view::npos)
        return {};
    const auto b = s.find_last_not_of(" \t");
    return std::string(s.substr(a, b - a + 1));
}

std::vector<std::string> split_list(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        item = trim(item);
        if (!item.empty())
            out.push_back(item);
    }
    return out;
}

std::string join(const std::vector<std::string>& items, std::string_view sep)
{
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i)
        out += (i ? std::string(sep) : "") + items[i];
    return out;
}

template <typename T>
T parse_number(const std::string& s)
{
    T v{};
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
        throw ConfigError("'" + s + "' is not a valid number");
    return v;
}

FinetuneMode parse_finetune_mode(std::string_view s)
{
    for (auto m : {FinetuneMode::Full, FinetuneMode::LowRank})
        if (to_string(m) == s)
            return m;
    throw ConfigError("unknown fine-tune mode '" + std::string(s) + "' (expected full or lowrank)");
}

struct Binding {
    std::string section;
    std::string key;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

template <typename T>
Binding number(std::string section, std::string key, T& ref)
{
    return {std::move(section), std::move(key), [&ref](const std::string& s) { ref = parse_number<T>(s); },
            [&ref] {
                if constexpr (std::is_floating_point_v<T>)
                    return format_double(ref);
                else
                    return std::to_string(ref);
            }};
}

template <typename E, typename Parse>
Binding enumeration(std::string section, std::string key, E& ref, Parse parse)
{
    return {std::move(section), std::move(key), [&ref, parse](const std::string& s) { ref = parse(s); },
            [&ref] { return std::string(to_string(ref)); }};
}

Binding text(std::string section, std::string key, std::string& ref)
{
    return {std::move(section), std::move(key), [&ref](const std::string& s) { ref = s; }, [&ref] { return ref; }};
}

std::vector<Binding> bindings(ExperimentConfig& c)
{
    std::vector<Binding> b;
    b.push_back(number("model", "embed_dim", c.model.embed_dim));
    b.push_back(number("model", "latent_dim", c.model.latent_dim));
    b.push_back(number("model", "hidden_dim", c.model.hidden_dim));
    b.push_back(number("model", "steps", c.model.steps));
    b.push_back(number("model", "beta_start", c.model.beta_start));
    b.push_back(number("model", "beta_end", c.model.beta_end));
    b.push_back(number("model", "position_scale", c.model.position_scale));
    b.push_back(number("model", "anchor_jitter", c.model.anchor_jitter));
    b.push_back(number("model", "latent_noise", c.model.latent_noise));
    b.push_back(number("model", "seed", c.model.seed));

    b.push_back(text("vocab", "corpus", c.vocab.corpus));
    b.push_back(text("vocab", "concepts", c.vocab.concepts));
    b.push_back(number("vocab", "max_frequency", c.vocab.max_frequency));
    b.push_back(number("vocab", "pool_size", c.vocab.pool_size));
    b.push_back(number("vocab", "seed", c.vocab.seed));

    b.push_back(number("ga", "population", c.ga.population));
    b.push_back(number("ga", "generations", c.ga.generations));
    b.push_back(number("ga", "elite", c.ga.elite));
    b.push_back(number("ga", "tournament", c.ga.tournament));
    b.push_back(number("ga", "mutation_rate", c.ga.mutation_rate));
    b.push_back(number("ga", "n_prompts", c.ga.n_prompts));
    b.push_back(number("ga", "seed", c.ga.seed));

    b.push_back(number("fitness", "align", c.fitness.align));
    b.push_back(number("fitness", "dev", c.fitness.dev));
    b.push_back(number("fitness", "conc", c.fitness.conc));
    b.push_back(number("fitness", "inter", c.fitness.inter));

    b.push_back(number("data", "prompts_per_pair", c.data.prompts_per_pair));
    b.push_back(number("data", "clean_prompts_per_concept", c.data.clean_prompts_per_concept));
    b.push_back(number("data", "steps_per_epoch", c.data.steps_per_epoch));
    b.push_back(enumeration("data", "position", c.data.position, parse_insert_position));
    b.push_back({"data", "templates", [&c](const std::string& s) { c.data.templates = split_list(s, '|'); },
                 [&c] { return join(c.data.templates, " | "); }});
    b.push_back(number("data", "seed", c.data.seed));

    b.push_back(number("train", "epochs", c.train.epochs));
    b.push_back(number("train", "batch_size", c.train.batch_size));
    b.push_back(number("train", "lr_encoder", c.train.lr_encoder));
    b.push_back(number("train", "lr_classifier", c.train.lr_classifier));
    b.push_back(number("train", "lr_denoiser", c.train.lr_denoiser));
    b.push_back(number("train", "lambda_cls", c.train.lambda_cls));
    b.push_back(number("train", "lambda_clip", c.train.lambda_clip));
    b.push_back(number("train", "clip_scale", c.train.clip_scale));
    b.push_back(number("train", "token_lr_scale", c.train.token_lr_scale));
    b.push_back(number("train", "tcr_fraction", c.train.tcr_fraction));
    b.push_back(number("train", "seed", c.train.seed));

    b.push_back(number("pretrain", "steps", c.pretrain.steps));
    b.push_back(number("pretrain", "batch_size", c.pretrain.batch_size));
    b.push_back(number("pretrain", "lr_encoder", c.pretrain.lr_encoder));
    b.push_back(number("pretrain", "lr_denoiser", c.pretrain.lr_denoiser));
    b.push_back(number("pretrain", "lambda_clip", c.pretrain.lambda_clip));
    b.push_back(number("pretrain", "clip_scale", c.pretrain.clip_scale));
    b.push_back(number("pretrain", "filler_rate", c.pretrain.filler_rate));
    b.push_back(number("pretrain", "seed", c.pretrain.seed));

    b.push_back(enumeration("finetune", "mode", c.finetune.mode, parse_finetune_mode));
    b.push_back(number("finetune", "rank", c.finetune.rank));
    b.push_back(number("finetune", "steps", c.finetune.steps));
    b.push_back(number("finetune", "batch_size", c.finetune.batch_size));
    b.push_back(number("finetune", "lr", c.finetune.lr));
    b.push_back(number("finetune", "seed", c.finetune.seed));

    b.push_back(number("eval", "prompts_per_pair", c.eval.prompts_per_pair));
    b.push_back(number("eval", "clean_prompts_per_concept", c.eval.clean_prompts_per_concept));
    b.push_back(number("eval", "n_seeds", c.eval.n_seeds));
    b.push_back(number("eval", "seed", c.eval.seed));
    b.push_back(enumeration("eval", "position", c.eval.position, parse_insert_position));
    b.push_back(enumeration("eval", "tau_pool", c.eval.tau_pool, parse_tau_pool));
    b.push_back(enumeration("eval", "tau_mode", c.eval.tau_mode, parse_tau_mode));
    b.push_back(enumeration("eval", "acc_scope", c.eval.acc_scope, parse_acc_scope));

    b.push_back({"chain", "methods", [&c](const std::string& s) { c.chain.methods = split_list(s, ','); },
                 [&c] { return join(c.chain.methods, ", "); }});
    b.push_back(number("chain", "seed", c.chain.seed));

    b.push_back({"robustness", "modes",
                 [&c](const std::string& s) {
                     c.robustness.modes.clear();
                     for (const auto& m : split_list(s, ','))
                         c.robustness.modes.push_back(parse_finetune_mode(m));
                 },
                 [&c] {
                     std::vector<std::string> names;
                     for (auto m : c.robustness.modes)
                         names.emplace_back(to_string(m));
                     return join(names, ", ");
                 }});
    b.push_back({"robustness", "steps",
                 [&c](const std::string& s) {
                     c.robustness.steps.clear();
                     for (const auto& v : split_list(s, ','))
                         c.robustness.steps.push_back(parse_number<std::size_t>(v));
                 },
                 [&c] {
                     std::vector<std::string> v;
                     for (auto s : c.robustness.steps)
                         v.push_back(std::to_string(s));
                     return join(v, ", ");
                 }});

    b.push_back(enumeration("ablation", "method", c.ablation.method, resolve_method));
    b.push_back(number("ablation", "attackers", c.ablation.attackers));
    return b;
}

fs::path resolve_path(const std::string& p, const fs::path& base_dir)
{
    fs::path path(p);
    if (path.is_relative() && !base_dir.empty())
        path = base_dir / path;
    return path.lexically_normal();
}

} // namespace

std::string hex_double(double x)
{
    char buf[64];
    const bool neg = std::signbit(x);
    const auto r = std::to_chars(buf, buf + sizeof buf, std::fabs(x), std::chars_format::hex);
    std::string body(buf, r.ptr);
    if (std::isfinite(x))
        body = "0x" + body;
    return (neg ? "-" : "") + body;
}

double parse_hex_double(std::string_view s)
{
    bool neg = false;
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
        neg = s.front() == '-';
        s.remove_prefix(1);
    }
    if (s.starts_with("0x") || s.starts_with("0X"))
        s.remove_prefix(2);
    else if (s != "inf" && s != "nan")
        throw FormatError("'" + std::string(s) + "' is not a hexadecimal float");
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
        throw FormatError("'" + std::string(s) + "' is not a hexadecimal float");
    return neg ? -v : v;
}

std::string sha256_hex(std::string_view bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += kHexDigits[md[i] >> 4];
        out += kHexDigits[md[i] & 0xf];
    }
    return out;
}

std::string content_hash(const json& doc)
{
    json body = doc;
    body.erase("provenance");
    return sha256_hex(body.dump());
}

json checkpoint_json(Checkpoint& ckpt)
{
    const SurrogateModel& m = ckpt.model;
    json tensors;
    tensors["encoder.token_table"] = tensor(m.encoder.token_table);
    tensors["encoder.proj_weight"] = tensor(m.encoder.proj_weight);
    tensors["encoder.proj_bias"] = tensor(m.encoder.proj_bias);
    tensors["encoder.ln_gain"] = tensor(m.encoder.ln_gain);
    tensors["encoder.ln_bias"] = tensor(m.encoder.ln_bias);
    tensors["head.W"] = tensor(m.head.W);
    tensors["head.b"] = tensor(m.head.b);
    tensors["head.ln_gain"] = tensor(m.head.ln_gain);
    tensors["head.ln_bias"] = tensor(m.head.ln_bias);
    tensors["denoiser.w1"] = tensor(m.denoiser.w1);
    tensors["denoiser.b1"] = tensor(m.denoiser.b1);
    tensors["denoiser.w2"] = tensor(m.denoiser.w2);
    tensors["denoiser.b2"] = tensor(m.denoiser.b2);
    tensors["denoiser.decoder"] = tensor(m.denoiser.decoder);
    tensors["anchors"] = tensor(m.anchors.anchors);
    tensors["schedule.betas"] = tensor(m.schedule.betas);
    tensors["schedule.alphas_cumprod"] = tensor(m.schedule.alphas_cumprod);

    json doc;
    doc["format_version"] = kFormatVersion;
    doc["dimensions"] = {{"d", m.encoder.dim()},
                         {"m", m.denoiser.latent_dim()},
                         {"T", m.schedule.steps()},
                         {"K", m.head.num_classes() - 1},
                         {"hidden", m.denoiser.hidden_dim()},
                         {"tokens", m.tokens.size()},
                         {"concepts", m.anchors.concepts.size()}};
    doc["tokens"] = m.tokens.tokens();
    doc["concepts"] = m.anchors.concepts;
    doc["scalars"] = {{"position_scale", hex_double(m.encoder.position_scale)},
                      {"anchor_jitter", hex_double(m.anchors.jitter_sigma)},
                      {"latent_noise", hex_double(m.latent_noise)}};
    doc["tensors"] = std::move(tensors);
    doc["seeds"] = ckpt.seeds;
    doc["state"] = ckpt.state;

    ckpt.hash = content_hash(doc);
    const Provenance& p = ckpt.provenance;
    json lineage = json::array();
    for (const auto& e : p.ancestors)
        lineage.push_back(lineage_json(e));
    if (p.stage > 0)
        lineage.push_back(lineage_json({p.stage, p.method, p.parent, ckpt.hash}));
    doc["provenance"] = {{"stage", p.stage},
                         {"method", p.method},
                         {"parent", p.parent},
                         {"base", p.stage == 0 ? ckpt.hash : p.base},
                         {"hash", ckpt.hash},
                         {"lineage", std::move(lineage)}};
    return doc;
}

Checkpoint checkpoint_from_json(const json& doc)
{
    if (!doc.is_object() || !doc.contains("format_version") || !doc["format_version"].is_string())
        throw CheckpointVersionError("checkpoint has no format_version");
    const auto version = doc["format_version"].get<std::string>();
    if (version != kFormatVersion)
        throw CheckpointVersionError("checkpoint format '" + version + "' is not supported (expected '" +
                                     std::string(kFormatVersion) + "')");

    Checkpoint ckpt;
    try {
        const json& dims = doc.at("dimensions");
        const auto d = dims.at("d").get<Eigen::Index>();
        const auto m = dims.at("m").get<Eigen::Index>();
        const auto T = dims.at("T").get<Eigen::Index>();
        const auto K = dims.at("K").get<Eigen::Index>();
        const auto hidden = dims.at("hidden").get<Eigen::Index>();
        const auto tokens = doc.at("tokens").get<std::vector<std::string>>();
        const auto concepts = doc.at("concepts").get<std::vector<std::string>>();
        if (dims.at("tokens").get<std::size_t>() != tokens.size() ||
            dims.at("concepts").get<std::size_t>() != concepts.size())
            throw CheckpointShapeError("token or concept list length disagrees with the declared dimensions");
        const auto n_tok = static_cast<Eigen::Index>(tokens.size());
        const auto n_con = static_cast<Eigen::Index>(concepts.size());
        const json& t = doc.at("tensors");
        const json& s = doc.at("scalars");

        SurrogateModel& model = ckpt.model;
        model.tokens = TokenIndex(tokens);
        model.encoder.token_table = read_mat(t, "encoder.token_table", n_tok, d);
        model.encoder.proj_weight = read_mat(t, "encoder.proj_weight", d, d);
        model.encoder.proj_bias = read_vec(t, "encoder.proj_bias", d);
        model.encoder.ln_gain = read_vec(t, "encoder.ln_gain", d);
        model.encoder.ln_bias = read_vec(t, "encoder.ln_bias", d);
        model.encoder.position_scale = parse_hex_double(s.at("position_scale").get<std::string>());
        model.head.W = read_mat(t, "head.W", K + 1, d);
        model.head.b = read_vec(t, "head.b", K + 1);
        model.head.ln_gain = read_vec(t, "head.ln_gain", d);
        model.head.ln_bias = read_vec(t, "head.ln_bias", d);
        model.denoiser.w1 = read_mat(t, "denoiser.w1", hidden, m + kTimeEmbedDim + d);
        model.denoiser.b1 = read_vec(t, "denoiser.b1", hidden);
        model.denoiser.w2 = read_mat(t, "denoiser.w2", m, hidden);
        model.denoiser.b2 = read_vec(t, "denoiser.b2", m);
        model.denoiser.decoder = read_mat(t, "denoiser.decoder", d, m);
        model.anchors.concepts = concepts;
        model.anchors.anchors = read_mat(t, "anchors", n_con, d);
        model.anchors.jitter_sigma = parse_hex_double(s.at("anchor_jitter").get<std::string>());
        model.schedule.betas = read_tensor(t, "schedule.betas", {T});
        model.schedule.alphas_cumprod = read_tensor(t, "schedule.alphas_cumprod", {T});
        model.latent_noise = parse_hex_double(s.at("latent_noise").get<std::string>());
        ckpt.seeds = doc.at("seeds").get<std::map<std::string, std::uint64_t>>();
        ckpt.state = doc.at("state");
    } catch (const json::exception& e) {
        throw CheckpointShapeError(std::string("malformed checkpoint: ") + e.what());
    }

    ckpt.hash = content_hash(doc);
    try {
        const json& p = doc.at("provenance");
        Provenance& prov = ckpt.provenance;
        prov.stage = p.at("stage").get<std::size_t>();
        prov.method = p.at("method").get<std::string>();
        prov.parent = p.at("parent").get<std::string>();
        prov.base = p.at("base").get<std::string>();
        std::vector<LineageEntry> lineage;
        for (const auto& e : p.at("lineage"))
            lineage.push_back(lineage_from_json(e));

        if (p.at("hash").get<std::string>() != ckpt.hash)
            throw HashChainError("checkpoint content does not match its recorded hash");
        if (prov.stage == 0) {
            if (!lineage.empty() || !prov.parent.empty() || prov.base != ckpt.hash)
                throw HashChainError("base checkpoint carries a lineage");
        } else {
            if (lineage.size() != prov.stage)
                throw HashChainError("lineage has " + std::to_string(lineage.size()) + " entries for stage " +
                                     std::to_string(prov.stage));
            for (std::size_t i = 0; i < lineage.size(); ++i) {
                const std::string& expected_parent = i == 0 ? prov.base : lineage[i - 1].hash;
                if (lineage[i].stage != i + 1 || lineage[i].parent != expected_parent)
                    throw HashChainError("lineage breaks at stage " + std::to_string(i + 1));
            }
            const LineageEntry self{prov.stage, prov.method, prov.parent, ckpt.hash};
            if (!(lineage.back() == self))
                throw HashChainError("last lineage entry does not describe this checkpoint");
            lineage.pop_back();
            prov.ancestors = std::move(lineage);
        }
    } catch (const json::exception& e) {
        throw HashChainError(std::string("malformed provenance: ") + e.what());
    }
    return ckpt;
}

void save_checkpoint(Checkpoint& ckpt, const fs::path& path)
{
    write_text(path, checkpoint_json(ckpt).dump() + "\n");
}

Checkpoint load_checkpoint(const fs::path& path)
{
    json doc;
    try {
        doc = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return checkpoint_from_json(doc);
}

Provenance child_provenance(const Checkpoint& parent, std::size_t stage, std::string method)
{
    if (parent.hash.empty())
        throw HashChainError("parent checkpoint has not been hashed");
    const Provenance& pp = parent.provenance;
    if (stage != pp.stage + 1)
        throw HashChainError("stage " + std::to_string(stage) + " cannot follow stage " + std::to_string(pp.stage));
    Provenance p;
    p.stage = stage;
    p.method = std::move(method);
    p.parent = parent.hash;
    p.base = pp.stage == 0 ? parent.hash : pp.base;
    p.ancestors = pp.ancestors;
    if (pp.stage > 0)
        p.ancestors.push_back({pp.stage, pp.method, pp.parent, parent.hash});
    return p;
}

void verify_lineage(const std::vector<fs::path>& files)
{
    if (files.empty())
        throw HashChainError("no checkpoints to verify");
    std::vector<Checkpoint> ckpts;
    for (const auto& f : files)
        ckpts.push_back(load_checkpoint(f));
    const Provenance& last = ckpts.back().provenance;
    if (ckpts.front().provenance.stage != 0 || ckpts.front().hash != last.base)
        throw HashChainError("'" + files.front().string() + "' is not the base of this chain");
    if (ckpts.size() != last.stage + 1)
        throw HashChainError("expected " + std::to_string(last.stage + 1) + " checkpoints, got " +
                             std::to_string(ckpts.size()));
    for (std::size_t i = 1; i + 1 < ckpts.size(); ++i)
        if (last.ancestors[i - 1].hash != ckpts[i].hash)
            throw HashChainError("'" + files[i].string() + "' does not match lineage stage " + std::to_string(i));
}

json to_json(const ChainState& state)
{
    return {{"completed", state.completed},
            {"plan", to_json(state.plan)},
            {"mapping_history", pool_to_json(state.mapping_history)},
            {"reserved", state.reserved},
            {"base_tau", state.base_tau ? json(hex_double(*state.base_tau)) : json(nullptr)}};
}

ChainState chain_state_from_json(const json& j)
{
    ChainState s;
    s.completed = j.at("completed").get<std::size_t>();
    s.plan = plan_from_json(j.at("plan"));
    s.mapping_history = pool_from_json(j.at("mapping_history"));
    s.reserved = j.at("reserved").get<std::set<std::string>>();
    if (!j.at("base_tau").is_null())
        s.base_tau = parse_hex_double(j.at("base_tau").get<std::string>());
    return s;
}

Method resolve_method(std::string_view name)
{
    const auto& subs = method_substitutions();
    const auto it = subs.find(std::string(name));
    return parse_method(it == subs.end() ? name : std::string_view(it->second));
}

void ExperimentConfig::validate() const
{
    ga.validate();
    fitness.validate();
    train.validate();
    if (model.embed_dim < 1 || model.latent_dim < 1 || model.hidden_dim < 1 || model.steps < 1)
        throw ConfigError("[model] dimensions and steps must be positive");
    if (chain.methods.empty())
        throw ConfigError("[chain] methods is empty");
    for (const auto& m : chain.methods) {
        try {
            resolve_method(m);
        } catch (const Error& e) {
            throw ConfigError(std::string("[chain] methods: ") + e.what());
        }
    }
    if (eval.n_seeds == 0 || eval.prompts_per_pair == 0 || eval.clean_prompts_per_concept == 0)
        throw ConfigError("[eval] counts must be positive");
    if (data.templates.empty())
        throw ConfigError("[data] templates is empty");
    for (const auto& [stage, overrides] : stage_overrides) {
        if (stage == 0 || stage > chain.methods.size())
            throw ConfigError("[stage." + std::to_string(stage) + "] is outside the " +
                              std::to_string(chain.methods.size()) + "-stage chain");
        StageSpec probe;
        probe.train_overrides = overrides;
        try {
            stage_config(AttackConfig{}, probe, stage).train.validate();
        } catch (const Error& e) {
            throw ConfigError("[stage." + std::to_string(stage) + "] " + e.what());
        }
    }
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }

    ExperimentConfig c;
    auto table = bindings(c);
    for (const auto& [section, body] : tree) {
        if (body.empty())
            throw ConfigError("key '" + section + "' must belong to a [section]");
        if (section.starts_with("stage.")) {
            std::size_t idx = 0;
            try {
                idx = parse_number<std::size_t>(section.substr(6));
            } catch (const ConfigError&) {
                throw ConfigError("[" + section + "]: stage sections are named stage.N with N >= 1");
            }
            auto& overrides = c.stage_overrides[idx];
            for (const auto& [key, value] : body) {
                try {
                    overrides[key] = parse_number<double>(trim(value.data()));
                } catch (const ConfigError& e) {
                    throw ConfigError("[" + section + "] " + key + ": " + e.what());
                }
            }
            continue;
        }
        const bool known_section = std::any_of(table.begin(), table.end(),
                                               [&](const Binding& b) { return b.section == section; });
        if (!known_section)
            throw ConfigError("unknown section [" + section + "]");
        for (const auto& [key, value] : body) {
            const auto it = std::find_if(table.begin(), table.end(),
                                         [&](const Binding& b) { return b.section == section && b.key == key; });
            if (it == table.end())
                throw ConfigError("unknown key '" + key + "' in [" + section + "]");
            try {
                it->set(trim(value.data()));
            } catch (const Error& e) {
                throw ConfigError("[" + section + "] " + key + ": " + e.what());
            }
        }
    }
    c.vocab.corpus = resolve_path(c.vocab.corpus, base_dir).string();
    c.vocab.concepts = resolve_path(c.vocab.concepts, base_dir).string();
    c.eval.templates = c.data.templates;
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path)
{
    return parse_config(read_text(path), fs::absolute(path).parent_path());
}

std::string echo_config(const ExperimentConfig& config)
{
    ExperimentConfig c = config;
    std::ostringstream out;
    std::string section;
    for (const auto& b : bindings(c)) {
        if (b.section != section) {
            out << (section.empty() ? "" : "\n") << '[' << b.section << "]\n";
            section = b.section;
        }
        out << b.key << " = " << b.get() << '\n';
    }
    for (const auto& [stage, overrides] : c.stage_overrides) {
        out << "\n[stage." << stage << "]\n";
        for (const auto& [k, v] : overrides)
            out << k << " = " << format_double(v) << '\n';
    }
    return out.str();
}

std::vector<ConfigKey> config_keys()
{
    ExperimentConfig c;
    std::vector<ConfigKey> keys;
    for (const auto& b : bindings(c))
        keys.push_back({b.section, b.key, b.get()});
    return keys;
}

fs::path make_run_dir(const std::optional<fs::path>& out, std::string_view command)
{
    if (out) {
        if (fs::exists(*out))
            throw Error("run directory '" + out->string() + "' already exists; runs are never overwritten");
        fs::create_directories(*out);
        return *out;
    }
    const char* env = std::getenv("HYDRA_FORGE_RUN_ROOT");
    const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
    fs::create_directories(root);
    for (int n = 1; n < 100000; ++n) {
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "-%03d", n);
        const fs::path dir = root / (std::string(command) + suffix);
        // create_directory reports false when the name is taken, which keeps concurrent runs apart.
        if (fs::create_directory(dir))
            return dir;
    }
    throw Error("no free run directory under '" + root.string() + "'");
}

Experiment prepare_experiment(const ExperimentConfig& config)
{
    Experiment exp;
    exp.config = config;
    exp.concepts = read_lines(config.vocab.concepts);
    std::vector<std::string> exclusions = exp.concepts;
    for (auto& w : template_words(config.data.templates))
        exclusions.push_back(std::move(w));
    exp.vocab = build_rare_vocab(read_lines(config.vocab.corpus), config.vocab.max_frequency, exclusions);
    exp.pool = build_concept_pool(exp.concepts, config.vocab.pool_size, config.vocab.seed);
    return exp;
}

SurrogateModel build_base_model(const Experiment& exp)
{
    const ExperimentConfig& c = exp.config;
    SurrogateModel model = init_model(exp.concepts, exp.vocab.words, c.data.templates,
                                      static_cast<int>(exp.pool.size()), c.model);
    pretrain_base(model, c.data.templates, c.pretrain);
    return model;
}

std::map<std::string, std::uint64_t> seed_ledger(const ExperimentConfig& c)
{
    return {{"model", c.model.seed}, {"pool", c.vocab.seed},   {"ga", c.ga.seed},
            {"data", c.data.seed},   {"train", c.train.seed},  {"pretrain", c.pretrain.seed},
            {"finetune", c.finetune.seed}, {"eval", c.eval.seed}, {"chain", c.chain.seed}};
}

AttackConfig attack_config(const ExperimentConfig& c)
{
    return {c.data, c.train, c.ga, c.fitness, c.finetune, c.chain.seed};
}

ChainSpec chain_spec(const Experiment& exp)
{
    std::vector<Method> methods;
    for (const auto& m : exp.config.chain.methods)
        methods.push_back(resolve_method(m));
    ChainSpec spec = make_chain_spec(methods, exp.pool);
    for (const auto& [stage, overrides] : exp.config.stage_overrides)
        spec.stages.at(stage - 1).train_overrides = overrides;
    spec.validate();
    return spec;
}

void write_metrics_jsonl(std::ostream& out, const MetricsReport& report)
{
    out << to_json(report).dump() << '\n';
}

namespace {

void write_retention_rows(std::ostream& out, const std::vector<json>& metrics)
{
    out << "stage,attacker,method,asr,acc\n";
    for (const auto& m : metrics)
        for (const auto& a : m.at("attackers"))
            out << m.at("stage").get<int>() << ',' << a.at("attacker_id").get<int>() << ','
                << a.at("method").get<std::string>() << ',' << format_double(a.at("asr").get<double>()) << ','
                << format_double(a.at("acc").get<double>()) << '\n';
}

std::vector<std::string> read_jsonl_lines(const fs::path& path)
{
    std::vector<std::string> lines;
    std::istringstream in(read_text(path));
    std::string line;
    while (std::getline(in, line))
        if (!line.empty())
            lines.push_back(line);
    return lines;
}

json header_json(const Experiment& exp, const ChainSpec& spec, const std::string& base_hash)
{
    json subs = json::array();
    for (std::size_t i = 0; i < exp.config.chain.methods.size(); ++i) {
        const auto& requested = exp.config.chain.methods[i];
        const auto runs_as = std::string(to_string(resolve_method(requested)));
        if (requested != runs_as)
            subs.push_back({{"stage", i + 1}, {"requested", requested}, {"runs_as", runs_as}});
    }
    json stages = json::array();
    for (std::size_t i = 0; i < spec.stages.size(); ++i)
        stages.push_back({{"stage", i + 1},
                          {"attacker_id", spec.stages[i].attacker_id},
                          {"method", to_string(spec.stages[i].method)},
                          {"pairs", pool_to_json(spec.stages[i].pairs)}});
    return {{"format_version", kFormatVersion},
            {"kind", "chain-run"},
            {"method_substitutions", subs},
            {"substitution_table", method_substitutions()},
            {"stages", stages},
            {"seeds", seed_ledger(exp.config)},
            {"base_checkpoint", base_hash},
            {"config", echo_config(exp.config)},
            {"status", "running"}};
}

fs::path stage_checkpoint(const fs::path& dir, std::size_t stage)
{
    return dir / "checkpoints" / ("stage-" + std::to_string(stage) + ".json");
}

/// Shared by fresh and resumed runs: executes stages after `state.completed` from `parent`.
ChainRun continue_chain(const Experiment& exp, const ChainSpec& spec, const fs::path& dir, Checkpoint parent,
                        ChainState state, std::vector<std::string> metric_lines, json header)
{
    const ExperimentConfig& c = exp.config;
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
    for (const auto& l : metric_lines)
        metrics << l << '\n';
    metrics.flush();

    auto on_stage = [&](const StageRecord& rec, const SurrogateModel& model, const ChainState& st) {
        Checkpoint ckpt;
        ckpt.model = model;
        ckpt.seeds = seed_ledger(c);
        ckpt.seeds["stage"] = derive_seed(c.chain.seed, {0x535447ULL, rec.stage});
        ckpt.state = to_json(st);
        ckpt.provenance = child_provenance(parent, rec.stage, std::string(to_string(rec.method)));
        save_checkpoint(ckpt, stage_checkpoint(dir, rec.stage));
        parent = std::move(ckpt);

        const std::string line = to_json(rec.metrics).dump();
        metrics << line << '\n';
        metrics.flush();
        metric_lines.push_back(line);

        std::ofstream traces(dir / "traces" / ("stage-" + std::to_string(rec.stage) + ".jsonl"), std::ios::binary);
        for (std::size_t k = 0; k < rec.injection.searches.size(); ++k) {
            traces << json({{"kind", "search"}, {"pair_slot", k}}).dump() << '\n';
            write_trace_jsonl(traces, rec.injection.searches[k]);
        }
        write_loss_jsonl(traces, "stage_a", rec.injection.stage_a);
        write_loss_jsonl(traces, "stage_b", rec.injection.stage_b);
    };

    ChainRun run;
    run.dir = dir;
    run.result = run_chain(parent.model, exp.vocab, spec, attack_config(c), c.eval, std::move(state), on_stage);

    std::vector<json> parsed;
    for (const auto& l : metric_lines)
        parsed.push_back(json::parse(l));
    std::ofstream retention(dir / "retention.csv", std::ios::binary);
    write_retention_rows(retention, parsed);

    header["status"] = run.result.aborted ? "aborted" : "complete";
    if (run.result.aborted)
        header["abort_reason"] = run.result.abort_reason;
    write_text(dir / "header.json", header.dump(2) + "\n");
    return run;
}

} // namespace

void write_retention_csv(std::ostream& out, const ChainResult& result)
{
    std::vector<json> metrics;
    for (const auto& rec : result.stages)
        metrics.push_back(to_json(rec.metrics));
    write_retention_rows(out, metrics);
}

ChainRun run_chain_to_dir(const Experiment& exp, const fs::path& dir)
{
    const ChainSpec spec = chain_spec(exp);
    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "traces");
    write_text(dir / "config.ini", echo_config(exp.config));

    Checkpoint base;
    base.model = build_base_model(exp);
    base.seeds = seed_ledger(exp.config);
    base.state = to_json(ChainState{});
    save_checkpoint(base, stage_checkpoint(dir, 0));

    json header = header_json(exp, spec, base.hash);
    write_text(dir / "header.json", header.dump(2) + "\n");
    return continue_chain(exp, spec, dir, std::move(base), ChainState{}, {}, std::move(header));
}

ChainRun resume_chain_to_dir(const fs::path& source, std::size_t from_stage, const fs::path& dir)
{
    const Experiment exp = prepare_experiment(load_config(source / "config.ini"));
    const ChainSpec spec = chain_spec(exp);
    if (from_stage > spec.stages.size())
        throw ConfigError("--from-stage " + std::to_string(from_stage) + " is past the " +
                          std::to_string(spec.stages.size()) + "-stage chain");
    Checkpoint parent = load_checkpoint(stage_checkpoint(source, from_stage));
    const ChainState state = chain_state_from_json(parent.state);
    if (state.completed != from_stage)
        throw HashChainError("checkpoint for stage " + std::to_string(from_stage) + " records " +
                             std::to_string(state.completed) + " completed stages");
    const auto source_metrics = read_jsonl_lines(source / "metrics.jsonl");
    if (source_metrics.size() < from_stage)
        throw FormatError("'" + (source / "metrics.jsonl").string() + "' has fewer than " +
                          std::to_string(from_stage) + " records");
    std::vector<std::string> kept(source_metrics.begin(), source_metrics.begin() + from_stage);

    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "traces");
    write_text(dir / "config.ini", echo_config(exp.config));
    for (std::size_t s = 0; s <= from_stage; ++s) {
        fs::copy_file(stage_checkpoint(source, s), stage_checkpoint(dir, s));
        const fs::path trace = source / "traces" / ("stage-" + std::to_string(s) + ".jsonl");
        if (fs::exists(trace))
            fs::copy_file(trace, dir / "traces" / trace.filename());
    }
    verify_lineage([&] {
        std::vector<fs::path> files;
        for (std::size_t s = 0; s <= from_stage; ++s)
            files.push_back(stage_checkpoint(dir, s));
        return files;
    }());

    const Checkpoint base = load_checkpoint(stage_checkpoint(dir, 0));
    json header = header_json(exp, spec, base.hash);
    header["resumed_from"] = {{"run", fs::absolute(source).lexically_normal().string()}, {"stage", from_stage}};
    write_text(dir / "header.json", header.dump(2) + "\n");
    return continue_chain(exp, spec, dir, std::move(parent), state, std::move(kept), std::move(header));
}

} // namespace hydra
