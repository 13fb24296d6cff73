#include "hydra/embed.hpp"

#include <algorithm>
#include <cmath>

#include "hydra/errors.hpp"

namespace hydra {

TokenIndex::TokenIndex(std::vector<std::string> tokens) : tokens_(std::move(tokens))
{
    for (std::size_t i = 0; i < tokens_.size(); ++i)
        if (!index_.emplace(tokens_[i], i).second)
            throw FormatError("duplicate token '" + tokens_[i] + "' in token index");
}

std::size_t TokenIndex::at(const std::string& token) const
{
    const auto it = index_.find(token);
    if (it == index_.end())
        throw LookupError("unknown token '" + token + "'");
    return it->second;
}

bool EncoderParams::finite() const
{
    return token_table.allFinite() && proj_weight.allFinite() && proj_bias.allFinite() && ln_gain.allFinite() &&
           ln_bias.allFinite();
}

EncoderGrad EncoderGrad::zeros_like(const EncoderParams& p)
{
    EncoderGrad g;
    g.token_table = Mat::Zero(p.token_table.rows(), p.token_table.cols());
    g.proj_weight = Mat::Zero(p.proj_weight.rows(), p.proj_weight.cols());
    g.proj_bias = Vec::Zero(p.proj_bias.size());
    g.ln_gain = Vec::Zero(p.ln_gain.size());
    g.ln_bias = Vec::Zero(p.ln_bias.size());
    return g;
}

void EncoderGrad::set_zero()
{
    token_table.setZero();
    proj_weight.setZero();
    proj_bias.setZero();
    ln_gain.setZero();
    ln_bias.setZero();
}

EncoderGrad& EncoderGrad::operator+=(const EncoderGrad& other)
{
    token_table += other.token_table;
    proj_weight += other.proj_weight;
    proj_bias += other.proj_bias;
    ln_gain += other.ln_gain;
    ln_bias += other.ln_bias;
    return *this;
}

Vec layer_norm(const Vec& x, const Vec& gain, const Vec& bias, LayerNormCache* cache)
{
    const double n = static_cast<double>(x.size());
    const double mean = x.sum() / n;
    const Vec centered = x.array() - mean;
    const double var = centered.squaredNorm() / n;
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    Vec normalized = centered * inv_std;
    Vec out = gain.cwiseProduct(normalized) + bias;
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = inv_std;
    }
    return out;
}

Vec layer_norm_backward(const LayerNormCache& cache, const Vec& gain, const Vec& dout, Vec* dgain, Vec* dbias)
{
    if (dgain)
        *dgain += dout.cwiseProduct(cache.normalized);
    if (dbias)
        *dbias += dout;
    const Vec dnorm = dout.cwiseProduct(gain);
    const double n = static_cast<double>(dnorm.size());
    const double mean_d = dnorm.sum() / n;
    const double mean_dx = dnorm.dot(cache.normalized) / n;
    return cache.inv_std * (dnorm.array() - mean_d - cache.normalized.array() * mean_dx).matrix();
}

Vec position_code(std::size_t position, Eigen::Index dim)
{
    Vec code(dim);
    const double pos = static_cast<double>(position);
    for (Eigen::Index k = 0; k < dim; ++k) {
        const double pair = static_cast<double>(k / 2) * 2.0;
        const double freq = std::pow(10000.0, -pair / static_cast<double>(dim));
        code[k] = (k % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
    return code;
}

namespace {

Vec modulation(const EncoderParams& params, std::size_t position)
{
    return Vec::Ones(params.dim()) + params.position_scale * position_code(position, params.dim());
}

} // namespace

TextEncoding encode_text(const EncoderParams& params, const TokenIndex& index, const Prompt& prompt)
{
    TextEncoding enc;
    enc.hidden_states.reserve(prompt.tokens.size());
    for (std::size_t i = 0; i < prompt.tokens.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(index.at(prompt.tokens[i]));
        enc.hidden_states.push_back(params.token_table.row(row).transpose().cwiseProduct(modulation(params, i)));
    }
    enc.pooled = encode_pooled(params, index, prompt);
    return enc;
}

Vec encode_pooled(const EncoderParams& params, const TokenIndex& index, const Prompt& prompt, EncodeTrace* trace)
{
    if (prompt.tokens.empty())
        throw FormatError("cannot encode an empty prompt");
    const Eigen::Index d = params.dim();
    Vec mean = Vec::Zero(d);
    std::vector<std::size_t> rows;
    rows.reserve(prompt.tokens.size());
    for (std::size_t i = 0; i < prompt.tokens.size(); ++i) {
        const auto row = index.at(prompt.tokens[i]);
        rows.push_back(row);
        mean += params.token_table.row(static_cast<Eigen::Index>(row)).transpose().cwiseProduct(modulation(params, i));
    }
    mean /= static_cast<double>(prompt.tokens.size());

    LayerNormCache ln;
    Vec ln_out = layer_norm(mean, params.ln_gain, params.ln_bias, &ln);
    Vec pooled = params.proj_weight * ln_out + params.proj_bias;
    if (trace) {
        trace->rows = std::move(rows);
        trace->mean_state = std::move(mean);
        trace->ln = std::move(ln);
        trace->ln_out = std::move(ln_out);
        trace->pooled = pooled;
    }
    return pooled;
}

void encoder_backward(const EncoderParams& params, const EncodeTrace& trace, const Vec& dpooled, EncoderGrad& grad)
{
    grad.proj_weight.noalias() += dpooled * trace.ln_out.transpose();
    grad.proj_bias += dpooled;
    const Vec dln_out = params.proj_weight.transpose() * dpooled;
    const Vec dmean = layer_norm_backward(trace.ln, params.ln_gain, dln_out, &grad.ln_gain, &grad.ln_bias);
    const double inv_n = 1.0 / static_cast<double>(trace.rows.size());
    for (std::size_t i = 0; i < trace.rows.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(trace.rows[i]);
        grad.token_table.row(row) += (inv_n * dmean.cwiseProduct(modulation(params, i))).transpose();
    }
}

EncoderParams init_encoder(std::size_t n_tokens, Eigen::Index dim, double position_scale, std::uint64_t seed)
{
    Rng rng(derive_seed(seed, {0x656e63ULL}));
    EncoderParams p;
    p.token_table = gaussian_mat(static_cast<Eigen::Index>(n_tokens), dim, 1.0, rng);
    p.proj_weight = Mat::Identity(dim, dim) + gaussian_mat(dim, dim, 0.1 / std::sqrt(static_cast<double>(dim)), rng);
    p.proj_bias = Vec::Zero(dim);
    p.ln_gain = Vec::Ones(dim);
    p.ln_bias = Vec::Zero(dim);
    p.position_scale = position_scale;
    return p;
}

std::size_t AnchorSpace::index_of(const std::string& concept_name) const
{
    const auto it = std::find(concepts.begin(), concepts.end(), concept_name);
    if (it == concepts.end())
        throw LookupError("unknown concept '" + concept_name + "' in anchor space");
    return static_cast<std::size_t>(it - concepts.begin());
}

bool AnchorSpace::contains(const std::string& concept_name) const
{
    return std::find(concepts.begin(), concepts.end(), concept_name) != concepts.end();
}

double max_pairwise_cosine(const Mat& rows)
{
    double worst = -1.0;
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        for (Eigen::Index j = i + 1; j < rows.rows(); ++j)
            worst = std::max(worst, rows.row(i).dot(rows.row(j)) / (rows.row(i).norm() * rows.row(j).norm()));
    return worst;
}

AnchorSpace build_anchor_space(const std::vector<std::string>& concepts, Eigen::Index dim, double jitter_sigma,
                               std::uint64_t seed, double max_pairwise_cos)
{
    if (jitter_sigma < 0.0)
        throw ConfigError("jitter_sigma must be non-negative");
    AnchorSpace space;
    space.concepts = concepts;
    space.jitter_sigma = jitter_sigma;
    space.anchors = Mat(static_cast<Eigen::Index>(concepts.size()), dim);

    Rng rng(derive_seed(seed, {0x616e63ULL}));
    constexpr int kMaxAttempts = 10000;
    for (Eigen::Index i = 0; i < space.anchors.rows(); ++i) {
        for (int attempt = 0;; ++attempt) {
            if (attempt == kMaxAttempts)
                throw CapacityError("cannot place " + std::to_string(concepts.size()) + " anchors in dimension " +
                                    std::to_string(dim) + " under the pairwise cosine bound");
            Vec v = gaussian_vec(dim, 1.0, rng);
            v.normalize();
            bool ok = true;
            for (Eigen::Index j = 0; j < i && ok; ++j)
                ok = space.anchors.row(j).dot(v) < max_pairwise_cos;
            if (ok) {
                space.anchors.row(i) = v.transpose();
                break;
            }
        }
    }
    return space;
}

Vec encode_image(const AnchorSpace& anchors, const std::string& concept_name, std::uint64_t seed)
{
    Vec v = anchors.anchor(concept_name);
    if (anchors.jitter_sigma == 0.0)
        return v;
    Rng rng(derive_seed(seed, {0x696d67ULL}));
    v += gaussian_vec(v.size(), anchors.jitter_sigma, rng);
    return v.normalized();
}

double cosine(const Vec& u, const Vec& v)
{
    const double nu = u.norm();
    const double nv = v.norm();
    if (!(nu > 0.0) || !(nv > 0.0))
        throw DegenerateError("cosine of a zero-norm vector");
    return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

} // namespace hydra
