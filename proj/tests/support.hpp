#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hydra/evosearch.hpp"
#include "hydra/model.hpp"
#include "hydra/tensor.hpp"

namespace testing {

using hydra::Mat;
using hydra::Vec;

// ---- oracles: written independently of the library code paths ----

/// Plain recursive edit distance with memoization.
inline std::size_t levenshtein_oracle(const std::string& a, const std::string& b)
{
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
    std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
        if (i == 0)
            return j;
        if (j == 0)
            return i;
        auto it = memo.find({i, j});
        if (it != memo.end())
            return it->second;
        std::size_t best = std::min(go(i - 1, j) + 1, go(i, j - 1) + 1);
        best = std::min(best, go(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1));
        memo[{i, j}] = best;
        return best;
    };
    return go(a.size(), b.size());
}

/// Nearest word by scanning every word; ties go to the smaller word.
inline std::string projection_oracle(const std::string& candidate, const std::vector<std::string>& words)
{
    std::string best;
    std::size_t best_d = static_cast<std::size_t>(-1);
    for (const auto& w : words) {
        const auto d = levenshtein_oracle(candidate, w);
        if (d < best_d || (d == best_d && w < best)) {
            best_d = d;
            best = w;
        }
    }
    return best;
}

/// Type-7 percentile via insertion sort.
inline double percentile25_oracle(std::vector<double> x)
{
    for (std::size_t i = 1; i < x.size(); ++i)
        for (std::size_t j = i; j > 0 && x[j - 1] > x[j]; --j)
            std::swap(x[j - 1], x[j]);
    const std::size_t n = x.size();
    const std::size_t lo = (n - 1) / 4;
    const double h = static_cast<double>(n - 1) / 4.0;
    if (lo + 1 >= n)
        return x[lo];
    return x[lo] + (h - static_cast<double>(lo)) * (x[lo + 1] - x[lo]);
}

/// mean -> LN -> affine with the multiplicative sinusoidal position code.
inline Vec pooled_oracle(const hydra::EncoderParams& p, const std::vector<std::size_t>& rows)
{
    const auto d = p.token_table.cols();
    Vec mean = Vec::Zero(d);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (Eigen::Index k = 0; k < d; ++k) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(d));
            const double code = k % 2 == 0 ? std::sin(static_cast<double>(i) * freq) : std::cos(static_cast<double>(i) * freq);
            mean[k] += p.token_table(static_cast<Eigen::Index>(rows[i]), k) * (1.0 + p.position_scale * code);
        }
    mean /= static_cast<double>(rows.size());
    double mu = 0.0;
    for (Eigen::Index k = 0; k < d; ++k)
        mu += mean[k];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (Eigen::Index k = 0; k < d; ++k)
        var += (mean[k] - mu) * (mean[k] - mu);
    var /= static_cast<double>(d);
    Vec ln(d);
    for (Eigen::Index k = 0; k < d; ++k)
        ln[k] = p.ln_gain[k] * (mean[k] - mu) / std::sqrt(var + 1e-5) + p.ln_bias[k];
    Vec out(d);
    for (Eigen::Index r = 0; r < d; ++r) {
        double s = p.proj_bias[r];
        for (Eigen::Index c = 0; c < d; ++c)
            s += p.proj_weight(r, c) * ln[c];
        out[r] = s;
    }
    return out;
}

inline double cosine_oracle(const Vec& a, const Vec& b)
{
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

/// Four-term trigger fitness recomputed from the evaluator's prompt sets with the oracle encoder.
inline hydra::FitnessScore fitness_oracle(const std::string& trigger, const hydra::FitnessEvaluator& evaluator,
                                          const hydra::SurrogateModel& model,
                                          const std::vector<hydra::ConceptPair>& pos_pairs, std::size_t n_prompts,
                                          const hydra::FitnessWeights& w)
{
    auto rows_of = [&](const hydra::Prompt& p, bool with_trigger) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < p.tokens.size(); ++i) {
            if (with_trigger && i == *p.source_index)
                rows.push_back(model.tokens.at(trigger));
            rows.push_back(model.tokens.at(p.tokens[i]));
        }
        return rows;
    };
    hydra::FitnessScore s;
    std::vector<Vec> triggered;
    const auto& pos = evaluator.positive_prompts();
    for (std::size_t i = 0; i < pos.size(); ++i) {
        const Vec t = pooled_oracle(model.encoder, rows_of(pos[i], true));
        const Vec c = pooled_oracle(model.encoder, rows_of(pos[i], false));
        s.s_align += cosine_oracle(t, model.anchors.anchor(pos_pairs[i / n_prompts].target)) / static_cast<double>(pos.size());
        s.s_dev += (1.0 - cosine_oracle(t, c)) / static_cast<double>(pos.size());
        triggered.push_back(t);
    }
    double pairs = 0.0;
    for (std::size_t i = 0; i < triggered.size(); ++i)
        for (std::size_t j = i + 1; j < triggered.size(); ++j) {
            s.s_conc += cosine_oracle(triggered[i], triggered[j]);
            pairs += 1.0;
        }
    if (pairs > 0.0)
        s.s_conc /= pairs;
    const auto& neg = evaluator.negative_prompts();
    for (const auto& q : neg)
        s.s_inter += (1.0 - cosine_oracle(pooled_oracle(model.encoder, rows_of(q, true)),
                                          pooled_oracle(model.encoder, rows_of(q, false)))) /
                     static_cast<double>(neg.size());
    s.total = w.align * s.s_align - w.dev * s.s_dev - w.conc * s.s_conc - w.inter * s.s_inter;
    return s;
}

// ---- finite differences ----

inline constexpr double kFdStep = 1e-4;

/// Central differences of `loss` with respect to every entry of `param` (modified in place, then restored).
template <typename Tensor>
Tensor numeric_grad(Tensor& param, const std::function<double()>& loss)
{
    Tensor g = Tensor::Zero(param.rows(), param.cols());
    for (Eigen::Index i = 0; i < param.size(); ++i) {
        const double keep = param.data()[i];
        param.data()[i] = keep + kFdStep;
        const double up = loss();
        param.data()[i] = keep - kFdStep;
        const double down = loss();
        param.data()[i] = keep;
        g.data()[i] = (up - down) / (2.0 * kFdStep);
    }
    return g;
}

/// ||analytic - numeric|| / max(||analytic||, ||numeric||), per tensor.
template <typename A, typename B>
double relative_error(const A& analytic, const B& numeric)
{
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
    return (analytic - numeric).norm() / scale;
}

inline constexpr double kGradTolerance = 1e-4;

// ---- small fixtures ----

inline hydra::SurrogateModel tiny_model(const std::vector<std::string>& concepts, const std::vector<std::string>& words,
                                        int pairs, std::uint64_t seed, int d = 8, int m = 4, int hidden = 6,
                                        int steps = 10)
{
    hydra::ModelConfig c;
    c.embed_dim = d;
    c.latent_dim = m;
    c.hidden_dim = hidden;
    c.steps = steps;
    c.seed = seed;
    return hydra::init_model(concepts, words, hydra::default_templates(), pairs, c);
}

inline std::vector<std::string> letter_words(std::size_t n, char prefix = 'q')
{
    std::vector<std::string> out;
    for (std::size_t i = 0; out.size() < n; ++i) {
        std::string w(1, prefix);
        for (std::size_t v = i + 26 * 26; v > 0; v /= 26)
            w += static_cast<char>('a' + v % 26);
        out.push_back(w);
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline hydra::Vocabulary vocab_of(std::vector<std::string> words)
{
    std::sort(words.begin(), words.end());
    hydra::Vocabulary v;
    v.words = words;
    v.frequencies.assign(words.size(), 1);
    return v;
}

/// Ten-word vocabulary over four concepts with two pairs; positives use pair 0, negatives pair 1.
struct GaFixture {
    hydra::Vocabulary vocab;
    hydra::SurrogateModel model;
    std::vector<hydra::ConceptPair> pos{{"cat", "dog", 0}};
    std::vector<hydra::ConceptPair> neg{{"car", "tree", 1}};
    hydra::FitnessWeights weights;
    std::size_t n_prompts = 4;
    std::uint64_t prompt_seed;

    explicit GaFixture(std::uint64_t seed)
        : vocab(vocab_of(letter_words(10))),
          model(tiny_model({"cat", "dog", "car", "tree"}, vocab.words, 2, seed, 8, 4, 6, 10)),
          prompt_seed(seed * 7 + 1)
    {
    }

    hydra::FitnessEvaluator evaluator() const
    {
        return hydra::FitnessEvaluator(model.encoder, model.tokens, model.anchors, vocab, pos, neg, weights, n_prompts,
                                       prompt_seed);
    }
};

} // namespace testing
