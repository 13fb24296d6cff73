#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hydra/attacksim.hpp"
#include "hydra/evosearch.hpp"
#include "hydra/inject.hpp"
#include "hydra/metrics.hpp"
#include "hydra/model.hpp"

namespace hydra {

/// Lossless hexadecimal float literal, e.g. "0x1.8p+1"; parse_hex_double is its exact inverse.
std::string hex_double(double x);
double parse_hex_double(std::string_view s);

std::string sha256_hex(std::string_view bytes);

struct LineageEntry {
    std::size_t stage = 0;
    std::string method;
    std::string parent;
    std::string hash;

    friend bool operator==(const LineageEntry&, const LineageEntry&) = default;
};

/// Where a checkpoint sits in a chain. Stage 0 is the clean base model.
struct Provenance {
    std::size_t stage = 0;
    std::string method = "base";
    /// Empty for the base checkpoint.
    std::string parent;
    /// Content hash of the base checkpoint the chain started from.
    std::string base;
    /// Entries for stages 1 .. stage-1; the entry for this checkpoint is appended on save.
    std::vector<LineageEntry> ancestors;
};

struct Checkpoint {
    SurrogateModel model;
    std::map<std::string, std::uint64_t> seeds;
    /// Resumable chain state (null for models that are not part of a chain).
    nlohmann::json state;
    Provenance provenance;
    /// Content hash; filled by checkpoint_json and load.
    std::string hash;
};

/// Canonical document. Tensors are flat row-major arrays of hex floats with their shapes.
nlohmann::json checkpoint_json(Checkpoint& ckpt);
/// Throws CheckpointVersionError, CheckpointShapeError or HashChainError.
Checkpoint checkpoint_from_json(const nlohmann::json& doc);

/// sha256 over the canonical dump of everything except the provenance block.
std::string content_hash(const nlohmann::json& doc);

void save_checkpoint(Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Provenance for a checkpoint produced from `parent` by one more stage.
Provenance child_provenance(const Checkpoint& parent, std::size_t stage, std::string method);

/// Checks that every file's own hash matches its slot in the newest file's lineage.
/// `files` lists the base checkpoint first, then stage checkpoints in order.
void verify_lineage(const std::vector<std::filesystem::path>& files);

nlohmann::json to_json(const ChainState& state);
ChainState chain_state_from_json(const nlohmann::json& j);

struct VocabSettings {
    std::string corpus = "data/corpus.txt";
    std::string concepts = "data/concepts.txt";
    std::uint64_t max_frequency = 2;
    std::size_t pool_size = 16;
    std::uint64_t seed = 7;
};

struct ChainSettings {
    /// Method per stage; bagm, nightshade and villan are accepted and run as naive-poison.
    std::vector<std::string> methods = std::vector<std::string>(8, "hydra");
    std::uint64_t seed = 11;
};

struct RobustnessSettings {
    std::vector<FinetuneMode> modes = {FinetuneMode::Full, FinetuneMode::LowRank};
    std::vector<std::size_t> steps = {0, 100, 300};
};

struct AblationSettings {
    Method method = Method::Hydra;
    std::size_t attackers = 2;
};

struct ExperimentConfig {
    ModelConfig model;
    VocabSettings vocab;
    GaConfig ga;
    FitnessWeights fitness;
    DataConfig data;
    TrainConfig train;
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    EvalConfig eval;
    ChainSettings chain;
    RobustnessSettings robustness;
    AblationSettings ablation;
    /// [stage.N] sections: 1-based stage index to TrainConfig overrides.
    std::map<std::size_t, std::map<std::string, double>> stage_overrides;

    void validate() const;
};

/// INI text with [section] headers. Unknown sections or keys throw ConfigError.
/// Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every key with its resolved value; parse_config(echo_config(c)) == c.
std::string echo_config(const ExperimentConfig& config);

struct ConfigKey {
    std::string section;
    std::string key;
    std::string default_value;
};
std::vector<ConfigKey> config_keys();

/// A method name from a config, mapped through method_substitutions().
Method resolve_method(std::string_view name);

/// --out when given (must not exist yet), else <run root>/<command>-NNN with the first free NNN.
/// The run root is $HYDRA_FORGE_RUN_ROOT, defaulting to ./runs.
std::filesystem::path make_run_dir(const std::optional<std::filesystem::path>& out, std::string_view command);

struct Experiment {
    ExperimentConfig config;
    std::vector<std::string> concepts;
    Vocabulary vocab;
    std::vector<ConceptPair> pool;
};

/// Reads the corpus and concept list and builds the rare vocabulary and the concept-pair pool.
Experiment prepare_experiment(const ExperimentConfig& config);

/// Fresh model over the experiment's concepts and vocabulary, pretrained on clean prompts.
SurrogateModel build_base_model(const Experiment& exp);

std::map<std::string, std::uint64_t> seed_ledger(const ExperimentConfig& config);

AttackConfig attack_config(const ExperimentConfig& config);
ChainSpec chain_spec(const Experiment& exp);

void write_metrics_jsonl(std::ostream& out, const MetricsReport& report);
/// Long form: stage,attacker,method,asr,acc; one row per evaluated (stage, attacker).
void write_retention_csv(std::ostream& out, const ChainResult& result);

struct ChainRun {
    ChainResult result;
    std::filesystem::path dir;
};

/// Runs the configured chain into `dir`: checkpoints/, metrics.jsonl, retention.csv, traces.jsonl,
/// header.json and config.ini. Metrics are flushed after every stage.
ChainRun run_chain_to_dir(const Experiment& exp, const std::filesystem::path& dir);

/// Restarts the chain recorded in `source` after stage `from_stage`, writing a complete new run into `dir`.
ChainRun resume_chain_to_dir(const std::filesystem::path& source, std::size_t from_stage,
                             const std::filesystem::path& dir);

} // namespace hydra
