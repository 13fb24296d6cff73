#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hydra/embed.hpp"
#include "hydra/tensor.hpp"
#include "hydra/vocab.hpp"

namespace hydra {

inline constexpr Eigen::Index kTimeEmbedDim = 8;

/// Timesteps are 1-based: t in [1, T]. alpha_bar(0) is defined as 1.
struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alphas_cumprod;

    int steps() const { return static_cast<int>(betas.size()); }
    double alpha_bar(int t) const;
};

NoiseSchedule linear_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02);

Vec forward_noise(const Vec& z0, int t, const Vec& eps, const NoiseSchedule& schedule);

Vec time_embedding(int t, int steps);

/// 2-layer tanh MLP predicting noise from [z_t ; time embedding ; pooled text],
/// plus a fixed d x m decoder from latent space to anchor space.
struct DenoiserParams {
    Mat w1;
    Vec b1;
    Mat w2;
    Vec b2;
    Mat decoder;

    Eigen::Index latent_dim() const { return w2.rows(); }
    Eigen::Index hidden_dim() const { return w1.rows(); }
    Eigen::Index cond_dim() const { return w1.cols() - w2.rows() - kTimeEmbedDim; }
    bool finite() const;
};

struct DenoiserGrad {
    Mat w1;
    Vec b1;
    Mat w2;
    Vec b2;

    static DenoiserGrad zeros_like(const DenoiserParams& p);
    void set_zero();
};

struct DenoiserTrace {
    Vec input;
    Vec activation;
};

/// `anchor_rows` (C x d, optional): the decoder's column space is built to contain the first min(C, m) rows.
DenoiserParams init_denoiser(Eigen::Index latent_dim, Eigen::Index cond_dim, Eigen::Index hidden_dim,
                             std::uint64_t seed, const Mat& anchor_rows = Mat());

Vec denoiser_forward(const DenoiserParams& params, const Vec& z_t, int t, int steps, const Vec& cond,
                     DenoiserTrace* trace = nullptr);
/// Accumulates parameter gradients; returns dL/dcond.
Vec denoiser_backward(const DenoiserParams& params, const DenoiserTrace& trace, const Vec& dout, DenoiserGrad& grad);

/// The latent "image" of a concept: decoder^T * anchor (decoder columns are orthonormal).
Vec concept_latent(const DenoiserParams& params, const Vec& anchor);
Vec decode_latent(const DenoiserParams& params, const Vec& latent);

/// Noise drawn for one training item: a uniform timestep and a standard normal vector.
struct NoiseDraw {
    int t = 1;
    Vec eps;
};

NoiseDraw draw_noise(std::uint64_t seed, int steps, Eigen::Index latent_dim);

struct DiffusionItem {
    Prompt prompt;
    Vec z0;
    std::uint64_t seed = 0;
};

struct DiffusionLoss {
    double loss = 0.0;
    DenoiserGrad denoiser;
    EncoderGrad encoder;
};

/// Mean over the batch of ||eps - eps_hat(z_t, t, pooled(prompt))||^2 / m, with gradients
/// for the denoiser and the text encoder.
DiffusionLoss diffusion_loss(const DenoiserParams& denoiser, const EncoderParams& encoder, const TokenIndex& index,
                             const NoiseSchedule& schedule, std::span<const DiffusionItem> batch);

using NoisePredictor = std::function<Vec(const Vec& z_t, int t, const DiffusionItem& item)>;

/// Loss value under an arbitrary predictor, using the same noise draws as diffusion_loss.
double diffusion_loss_value(const NoiseSchedule& schedule, std::span<const DiffusionItem> batch,
                            const NoisePredictor& predictor);

struct SampleResult {
    Vec latent;
    Vec decoded;
    /// Decoded x0 estimate after each reverse step (T entries), filled on request.
    std::vector<Vec> trajectory;
};

/// Deterministic DDIM reverse pass from a seeded Gaussian z_T.
SampleResult sample(const DenoiserParams& denoiser, const EncoderParams& encoder, const TokenIndex& index,
                    const Prompt& prompt, const NoiseSchedule& schedule, std::uint64_t seed,
                    bool keep_trajectory = false);

SampleResult sample_from_condition(const DenoiserParams& denoiser, const Vec& cond, const NoiseSchedule& schedule,
                                   std::uint64_t seed, bool keep_trajectory = false);

} // namespace hydra
