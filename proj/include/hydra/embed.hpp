#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hydra/tensor.hpp"
#include "hydra/vocab.hpp"

namespace hydra {

inline constexpr double kLayerNormEps = 1e-5;

/// Maps every known token (vocabulary, concept names, template words) to a row of the token table.
class TokenIndex {
public:
    TokenIndex() = default;
    explicit TokenIndex(std::vector<std::string> tokens);

    std::size_t at(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.contains(token); }
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Text-encoder surrogate parameters.
///
/// Token states are modulated by a fixed sinusoidal position code, mean-pooled,
/// layer-normalized and projected: pooled = W * LN(mean_i h_i) + b, with
/// h_i = e(tok_i) * (1 + position_scale * pos_i). A zero position_scale gives the
/// plain order-invariant mean.
struct EncoderParams {
    Mat token_table;
    Mat proj_weight;
    Vec proj_bias;
    Vec ln_gain;
    Vec ln_bias;
    double position_scale = 0.0;

    Eigen::Index dim() const { return proj_weight.rows(); }
    bool finite() const;
};

struct EncoderGrad {
    Mat token_table;
    Mat proj_weight;
    Vec proj_bias;
    Vec ln_gain;
    Vec ln_bias;

    static EncoderGrad zeros_like(const EncoderParams& p);
    void set_zero();
    EncoderGrad& operator+=(const EncoderGrad& other);
};

struct TextEncoding {
    std::vector<Vec> hidden_states;
    Vec pooled;
};

struct LayerNormCache {
    Vec normalized; // (x - mean) / sqrt(var + eps)
    double inv_std = 0.0;
};

Vec layer_norm(const Vec& x, const Vec& gain, const Vec& bias, LayerNormCache* cache = nullptr);
/// Returns dL/dx; accumulates gain/bias gradients when the pointers are non-null.
Vec layer_norm_backward(const LayerNormCache& cache, const Vec& gain, const Vec& dout, Vec* dgain, Vec* dbias);

/// Everything the backward pass needs from one forward encode.
struct EncodeTrace {
    std::vector<std::size_t> rows;
    Vec mean_state;
    LayerNormCache ln;
    Vec ln_out;
    Vec pooled;
};

Vec position_code(std::size_t position, Eigen::Index dim);

TextEncoding encode_text(const EncoderParams& params, const TokenIndex& index, const Prompt& prompt);
/// Pooled embedding only, recording a trace for encoder_backward.
Vec encode_pooled(const EncoderParams& params, const TokenIndex& index, const Prompt& prompt,
                  EncodeTrace* trace = nullptr);
void encoder_backward(const EncoderParams& params, const EncodeTrace& trace, const Vec& dpooled, EncoderGrad& grad);

EncoderParams init_encoder(std::size_t n_tokens, Eigen::Index dim, double position_scale, std::uint64_t seed);

/// Fixed unit-norm "image embeddings", one per concept.
struct AnchorSpace {
    std::vector<std::string> concepts;
    Mat anchors; // one unit row per concept
    double jitter_sigma = 0.0;

    std::size_t index_of(const std::string& concept_name) const;
    Vec anchor(const std::string& concept_name) const { return anchors.row(static_cast<Eigen::Index>(index_of(concept_name))).transpose(); }
    bool contains(const std::string& concept_name) const;
};

AnchorSpace build_anchor_space(const std::vector<std::string>& concepts, Eigen::Index dim, double jitter_sigma,
                               std::uint64_t seed, double max_pairwise_cosine = 0.95);

Vec encode_image(const AnchorSpace& anchors, const std::string& concept_name, std::uint64_t seed);

double cosine(const Vec& u, const Vec& v);
double max_pairwise_cosine(const Mat& rows);

} // namespace hydra
