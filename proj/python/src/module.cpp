#include <algorithm>
#include <filesystem>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hydra/chainio.hpp"
#include "hydra/errors.hpp"
#include "hydra/evosearch.hpp"
#include "hydra/metrics.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace hydra;

namespace {

Prompt parse_prompt(const std::string& text)
{
    return Prompt{split_words(text), std::nullopt, std::nullopt};
}

// Structured results cross the boundary as JSON text; the Python package decodes them.
std::string chain_metrics(const ChainRun& run)
{
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : run.result.stages)
        out.push_back(to_json(s.metrics));
    return out.dump();
}

ExperimentConfig config_or_default(const std::optional<fs::path>& path)
{
    return path ? load_config(*path) : parse_config("", fs::current_path());
}

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "hydra-forge core bindings";

    // Translators run newest first, so the catch-all for Error goes in before the specific types.
    static py::exception<Error> base(m, "HydraError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p)
                std::rethrow_exception(p);
        } catch (const Error& e) {
            PyErr_SetString(base.ptr(), e.what());
        }
    });
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<LookupError>(m, "HydraLookupError", base.ptr());
    py::register_exception<DegenerateError>(m, "DegenerateError", base.ptr());
    py::register_exception<CheckpointVersionError>(m, "CheckpointVersionError", base.ptr());
    py::register_exception<CheckpointShapeError>(m, "CheckpointShapeError", base.ptr());
    py::register_exception<HashChainError>(m, "HashChainError", base.ptr());

    m.def("levenshtein", [](const std::string& a, const std::string& b) { return levenshtein(a, b); });
    m.def(
        "project_to_vocab",
        [](const std::string& candidate, std::vector<std::string> words) {
            std::sort(words.begin(), words.end());
            Vocabulary v;
            v.words = std::move(words);
            v.frequencies.assign(v.words.size(), 1);
            return project_to_vocab(candidate, v);
        },
        py::arg("candidate"), py::arg("words"));
    m.def("adaptive_threshold", &adaptive_threshold, py::arg("similarities"));
    m.def("aggregate_over_attackers", [](const std::vector<double>& asr) { return aggregate_over_attackers(asr); });
    m.def("hex_double", &hex_double);
    m.def("parse_hex_double", [](const std::string& s) { return parse_hex_double(s); });
    m.def("sha256_hex", [](const std::string& s) { return sha256_hex(s); });
    m.def("default_templates", &default_templates);

    m.def(
        "echo_config", [](const std::optional<fs::path>& path) { return echo_config(config_or_default(path)); },
        py::arg("path") = py::none());
    m.def("config_keys", [] {
        std::vector<std::tuple<std::string, std::string, std::string>> out;
        for (const auto& k : config_keys())
            out.emplace_back(k.section, k.key, k.default_value);
        return out;
    });

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_static("load", &load_checkpoint, py::arg("path"))
        .def_readonly("hash", &Checkpoint::hash)
        .def_property_readonly("stage", [](const Checkpoint& c) { return c.provenance.stage; })
        .def_property_readonly("method", [](const Checkpoint& c) { return c.provenance.method; })
        .def_property_readonly("parent", [](const Checkpoint& c) { return c.provenance.parent; })
        .def_property_readonly("concepts", [](const Checkpoint& c) { return c.model.concepts(); })
        .def_property_readonly("tokens", [](const Checkpoint& c) { return c.model.tokens.tokens(); })
        .def_property_readonly("embed_dim", [](const Checkpoint& c) { return c.model.encoder.dim(); })
        .def_property_readonly("latent_dim", [](const Checkpoint& c) { return c.model.denoiser.latent_dim(); })
        .def_property_readonly("anchors", [](const Checkpoint& c) { return c.model.anchors.anchors; })
        .def_property_readonly("state_json", [](const Checkpoint& c) { return c.state.dump(); })
        .def("pooled", [](const Checkpoint& c, const std::string& prompt) { return c.model.pooled(parse_prompt(prompt)); },
             py::arg("prompt"))
        .def(
            "generate",
            [](const Checkpoint& c, const std::string& prompt, std::uint64_t seed) {
                return c.model.generate(parse_prompt(prompt), seed).decoded;
            },
            py::arg("prompt"), py::arg("seed"))
        .def(
            "evaluate_json",
            [](const Checkpoint& c, const std::optional<fs::path>& config) {
                const ExperimentConfig cfg = config_or_default(config);
                const ChainState state = c.state.is_null() ? ChainState{} : chain_state_from_json(c.state);
                const auto fixed = cfg.eval.tau_mode == TauMode::FixedBase ? state.base_tau : std::nullopt;
                MetricsReport r = evaluate_model(c.model, state.plan, state.mapping_history, cfg.eval, fixed);
                r.stage = static_cast<int>(c.provenance.stage);
                r.method = c.provenance.method;
                return to_json(r).dump();
            },
            py::arg("config") = py::none());

    m.def("verify_lineage", &verify_lineage, py::arg("files"));
    m.def(
        "run_chain_json",
        [](const fs::path& config, const fs::path& out) {
            const Experiment exp = prepare_experiment(load_config(config));
            py::gil_scoped_release release;
            return chain_metrics(run_chain_to_dir(exp, out));
        },
        py::arg("config"), py::arg("out"));
    m.def(
        "resume_chain_json",
        [](const fs::path& source, std::size_t from_stage, const fs::path& out) {
            py::gil_scoped_release release;
            return chain_metrics(resume_chain_to_dir(source, from_stage, out));
        },
        py::arg("source"), py::arg("from_stage"), py::arg("out"));
}
