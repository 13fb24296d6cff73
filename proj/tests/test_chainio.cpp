#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <unistd.h>

#include "fixtures.hpp"
#include "hydra/chainio.hpp"
#include "hydra/errors.hpp"
#include "hydra/rng.hpp"
#include "support.hpp"

using namespace hydra;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("hydra-unit-" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Checkpoint small_checkpoint(std::uint64_t seed = 2)
{
    Checkpoint c;
    c.model = testing::tiny_model({"cat", "dog", "car"}, {"qaab", "qbab"}, 2, seed);
    c.seeds = {{"model", seed}};
    return c;
}

} // namespace

TEST_CASE("hex floats round-trip exactly")
{
    CHECK(hex_double(3.0) == "0x1.8p+1");
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double x = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<int>(rng.index(40)) - 20);
        CHECK(parse_hex_double(hex_double(x)) == x);
    }
    for (double x : {0.0, -0.0, std::numeric_limits<double>::min(), std::numeric_limits<double>::max(),
                     std::numeric_limits<double>::denorm_min()})
        CHECK(parse_hex_double(hex_double(x)) == x);
    CHECK(std::signbit(parse_hex_double(hex_double(-0.0))));
    CHECK_THROWS_AS(parse_hex_double("1.5"), FormatError);
}

TEST_CASE("sha256 of known inputs")
{
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("save, load, save is byte identical")
{
    const fs::path dir = scratch("roundtrip");
    Checkpoint c;
    c.model = testing::toy_base();
    c.seeds = {{"model", 1}, {"eval", 20240}};
    save_checkpoint(c, dir / "a.json");
    Checkpoint back = load_checkpoint(dir / "a.json");
    save_checkpoint(back, dir / "b.json");
    CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
    CHECK(back.hash == c.hash);
    CHECK(back.model.encoder.token_table == c.model.encoder.token_table);
    CHECK(back.model.denoiser.decoder == c.model.denoiser.decoder);
    CHECK(back.model.anchors.anchors == c.model.anchors.anchors);
    CHECK(back.seeds == c.seeds);
}

TEST_CASE("tampered checkpoints are rejected")
{
    Checkpoint c = small_checkpoint();
    const nlohmann::json doc = checkpoint_json(c);
    CHECK_NOTHROW(checkpoint_from_json(doc));

    SUBCASE("tensor length")
    {
        nlohmann::json bad = doc;
        bad["tensors"]["encoder.token_table"]["data"].erase(0);
        CHECK_THROWS_AS(checkpoint_from_json(bad), CheckpointShapeError);
    }
    SUBCASE("shape")
    {
        nlohmann::json bad = doc;
        auto& t = bad["tensors"]["denoiser.decoder"]["shape"];
        std::swap(t[0], t[1]);
        CHECK_THROWS_AS(checkpoint_from_json(bad), CheckpointShapeError);
    }
    SUBCASE("version")
    {
        nlohmann::json bad = doc;
        bad["format_version"] = "0";
        CHECK_THROWS_AS(checkpoint_from_json(bad), CheckpointVersionError);
        bad.erase("format_version");
        CHECK_THROWS_AS(checkpoint_from_json(bad), CheckpointVersionError);
    }
    SUBCASE("content")
    {
        nlohmann::json bad = doc;
        auto& v = bad["tensors"]["encoder.proj_bias"]["data"][0];
        v = hex_double(parse_hex_double(v.get<std::string>()) + 1.0);
        CHECK_THROWS_AS(checkpoint_from_json(bad), HashChainError);
    }
}

TEST_CASE("three-stage lineage")
{
    const fs::path dir = scratch("lineage");
    Checkpoint base = small_checkpoint();
    save_checkpoint(base, dir / "s0.json");
    std::vector<fs::path> files{dir / "s0.json"};
    Checkpoint prev = base;
    for (std::size_t s = 1; s <= 3; ++s) {
        Checkpoint next = small_checkpoint(2 + s);
        next.provenance = child_provenance(prev, s, "hydra");
        files.push_back(dir / ("s" + std::to_string(s) + ".json"));
        save_checkpoint(next, files.back());
        prev = load_checkpoint(files.back());
        CHECK(prev.provenance.parent == (s == 1 ? base.hash : load_checkpoint(files[s - 1]).hash));
        CHECK(prev.provenance.base == base.hash);
    }
    CHECK(prev.provenance.ancestors.size() == 2);
    CHECK_NOTHROW(verify_lineage(files));

    std::vector<fs::path> swapped = files;
    std::swap(swapped[1], swapped[2]);
    CHECK_THROWS_AS(verify_lineage(swapped), HashChainError);
    CHECK_THROWS_AS(verify_lineage({files[0], files[1], files[3]}), HashChainError);
    CHECK_THROWS_AS(child_provenance(prev, 2, "hydra"), HashChainError);

    // A stage file whose parent field names a different model.
    nlohmann::json doc = nlohmann::json::parse(slurp(files[2]));
    doc["provenance"]["lineage"][0]["hash"] = std::string(64, '0');
    CHECK_THROWS_AS(checkpoint_from_json(doc), HashChainError);
}

TEST_CASE("config parsing")
{
    CHECK_THROWS_AS(parse_config("[model]\nbogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[nowhere]\nseed = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[model]\nembed_dim = many\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[chain]\nmethods = hydra, bogus\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[stage.9]\nepochs = 2\n"), ConfigError);

    const ExperimentConfig c = parse_config("[model]\nembed_dim = 16\n[chain]\nmethods = hydra, villan\n"
                                            "[stage.2]\nepochs = 3\n[eval]\ntau_mode = fixed-base\n",
                                            "/base");
    CHECK(c.model.embed_dim == 16);
    CHECK(c.chain.methods.size() == 2);
    CHECK(c.stage_overrides.at(2).at("epochs") == 3.0);
    CHECK(c.eval.tau_mode == TauMode::FixedBase);
    CHECK(fs::path(c.vocab.corpus) == fs::path("/base/data/corpus.txt"));
    CHECK(resolve_method("villan") == Method::NaivePoison);

    const std::string echo = echo_config(c);
    CHECK(echo_config(parse_config(echo)) == echo);
    CHECK(echo_config(parse_config(echo_config(ExperimentConfig{}))) == echo_config(ExperimentConfig{}));
    CHECK(config_keys().size() >= 60);
}

TEST_CASE("run directories are never reused")
{
    const fs::path root = scratch("runs");
    CHECK(make_run_dir(root / "fixed", "chain") == root / "fixed");
    CHECK_THROWS_AS(make_run_dir(root / "fixed", "chain"), Error);

    const char* old = std::getenv("HYDRA_FORGE_RUN_ROOT");
    const std::string keep = old ? old : "";
    ::setenv("HYDRA_FORGE_RUN_ROOT", root.c_str(), 1);
    CHECK(make_run_dir(std::nullopt, "eval") == root / "eval-001");
    CHECK(make_run_dir(std::nullopt, "eval") == root / "eval-002");
    if (old)
        ::setenv("HYDRA_FORGE_RUN_ROOT", keep.c_str(), 1);
    else
        ::unsetenv("HYDRA_FORGE_RUN_ROOT");
}

TEST_CASE("chain state JSON round-trip")
{
    ChainState s;
    s.completed = 2;
    s.plan = assign_pairs(build_concept_pool({"cat", "dog", "car"}, 4, 1), 2);
    s.plan.set_trigger(0, 0, "qaab");
    s.mapping_history = s.plan.attackers[0].pairs;
    s.reserved = {"qaab", "qzzz"};
    s.base_tau = 0.1234567891234;
    const ChainState back = chain_state_from_json(to_json(s));
    CHECK(back.completed == 2);
    CHECK(back.reserved == s.reserved);
    CHECK(back.base_tau == s.base_tau);
    CHECK(back.mapping_history == s.mapping_history);
    CHECK(to_json(back) == to_json(s));
}
