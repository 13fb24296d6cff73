#include "hydra/diffusion.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/QR>

#include "hydra/errors.hpp"

namespace hydra {

double NoiseSchedule::alpha_bar(int t) const
{
    if (t == 0)
        return 1.0;
    if (t < 1 || t > steps())
        throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    return alphas_cumprod[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end)
{
    if (steps < 1)
        throw ConfigError("schedule needs at least one step");
    if (!(beta_start >= 1e-6) || !(beta_end <= 0.5) || (steps > 1 && !(beta_start < beta_end)))
        throw ConfigError("betas must increase strictly within [1e-6, 0.5]");
    NoiseSchedule s;
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double beta =
            steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
        prod *= 1.0 - beta;
        s.betas.push_back(beta);
        s.alphas_cumprod.push_back(prod);
    }
    return s;
}

Vec forward_noise(const Vec& z0, int t, const Vec& eps, const NoiseSchedule& schedule)
{
    if (t < 1 || t > schedule.steps())
        throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(schedule.steps()) + "]");
    const double ab = schedule.alpha_bar(t);
    return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

Vec time_embedding(int t, int steps)
{
    Vec e(kTimeEmbedDim);
    const double x = static_cast<double>(t) / static_cast<double>(steps);
    for (Eigen::Index k = 0; k < kTimeEmbedDim / 2; ++k) {
        const double freq = std::numbers::pi * std::pow(2.0, static_cast<double>(k));
        e[2 * k] = std::sin(freq * x);
        e[2 * k + 1] = std::cos(freq * x);
    }
    return e;
}

bool DenoiserParams::finite() const
{
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() && decoder.allFinite();
}

DenoiserGrad DenoiserGrad::zeros_like(const DenoiserParams& p)
{
    return {Mat::Zero(p.w1.rows(), p.w1.cols()), Vec::Zero(p.b1.size()), Mat::Zero(p.w2.rows(), p.w2.cols()),
            Vec::Zero(p.b2.size())};
}

void DenoiserGrad::set_zero()
{
    w1.setZero();
    b1.setZero();
    w2.setZero();
    b2.setZero();
}

DenoiserParams init_denoiser(Eigen::Index latent_dim, Eigen::Index cond_dim, Eigen::Index hidden_dim,
                             std::uint64_t seed, const Mat& anchor_rows)
{
    if (cond_dim < latent_dim)
        throw ConfigError("embedding dimension must be at least the latent dimension");
    Rng rng(derive_seed(seed, {0x646e73ULL}));
    const Eigen::Index in = latent_dim + kTimeEmbedDim + cond_dim;
    DenoiserParams p;
    p.w1 = gaussian_mat(hidden_dim, in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    p.b1 = Vec::Zero(hidden_dim);
    p.w2 = gaussian_mat(latent_dim, hidden_dim, 1.0 / std::sqrt(static_cast<double>(hidden_dim)), rng);
    p.b2 = Vec::Zero(latent_dim);

    // Leading decoder columns span the first min(C, m) anchors so those decode losslessly.
    Mat g = gaussian_mat(cond_dim, latent_dim, 1.0, rng);
    if (anchor_rows.size() > 0) {
        if (anchor_rows.cols() != cond_dim)
            throw ConfigError("anchor dimension does not match the embedding dimension");
        const Eigen::Index k = std::min(anchor_rows.rows(), latent_dim);
        g.leftCols(k) = anchor_rows.topRows(k).transpose();
    }
    Eigen::HouseholderQR<Mat> qr(g);
    p.decoder = qr.householderQ() * Mat::Identity(cond_dim, latent_dim);
    return p;
}

Vec denoiser_forward(const DenoiserParams& params, const Vec& z_t, int t, int steps, const Vec& cond,
                     DenoiserTrace* trace)
{
    Vec input(params.w1.cols());
    input << z_t, time_embedding(t, steps), cond;
    Vec act = (params.w1 * input + params.b1).array().tanh().matrix();
    Vec out = params.w2 * act + params.b2;
    if (trace) {
        trace->input = std::move(input);
        trace->activation = std::move(act);
    }
    return out;
}

Vec denoiser_backward(const DenoiserParams& params, const DenoiserTrace& trace, const Vec& dout, DenoiserGrad& grad)
{
    grad.w2.noalias() += dout * trace.activation.transpose();
    grad.b2 += dout;
    const Vec dact = params.w2.transpose() * dout;
    const Vec dpre = dact.cwiseProduct((1.0 - trace.activation.array().square()).matrix());
    grad.w1.noalias() += dpre * trace.input.transpose();
    grad.b1 += dpre;
    const Vec dinput = params.w1.transpose() * dpre;
    return dinput.tail(params.cond_dim());
}

Vec concept_latent(const DenoiserParams& params, const Vec& anchor)
{
    return params.decoder.transpose() * anchor;
}

Vec decode_latent(const DenoiserParams& params, const Vec& latent)
{
    Vec out = params.decoder * latent;
    const double n = out.norm();
    if (!(n > 0.0))
        throw DegenerateError("decoded latent has zero norm");
    return out / n;
}

NoiseDraw draw_noise(std::uint64_t seed, int steps, Eigen::Index latent_dim)
{
    Rng rng(derive_seed(seed, {0x6e6f6973ULL}));
    NoiseDraw d;
    d.t = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(steps)));
    d.eps = gaussian_vec(latent_dim, 1.0, rng);
    return d;
}

DiffusionLoss diffusion_loss(const DenoiserParams& denoiser, const EncoderParams& encoder, const TokenIndex& index,
                             const NoiseSchedule& schedule, std::span<const DiffusionItem> batch)
{
    if (batch.empty())
        throw FormatError("diffusion loss needs a non-empty batch");
    DiffusionLoss out{0.0, DenoiserGrad::zeros_like(denoiser), EncoderGrad::zeros_like(encoder)};
    const double m = static_cast<double>(denoiser.latent_dim());
    const double n = static_cast<double>(batch.size());

    EncodeTrace etrace;
    DenoiserTrace dtrace;
    for (const auto& item : batch) {
        const NoiseDraw noise = draw_noise(item.seed, schedule.steps(), denoiser.latent_dim());
        const Vec cond = encode_pooled(encoder, index, item.prompt, &etrace);
        const Vec z_t = forward_noise(item.z0, noise.t, noise.eps, schedule);
        const Vec pred = denoiser_forward(denoiser, z_t, noise.t, schedule.steps(), cond, &dtrace);
        const Vec resid = pred - noise.eps;
        out.loss += resid.squaredNorm() / (m * n);

        const Vec dpred = (2.0 / (m * n)) * resid;
        const Vec dcond = denoiser_backward(denoiser, dtrace, dpred, out.denoiser);
        encoder_backward(encoder, etrace, dcond, out.encoder);
    }
    if (!std::isfinite(out.loss))
        throw DivergenceError("non-finite diffusion loss");
    return out;
}

double diffusion_loss_value(const NoiseSchedule& schedule, std::span<const DiffusionItem> batch,
                            const NoisePredictor& predictor)
{
    if (batch.empty())
        throw FormatError("diffusion loss needs a non-empty batch");
    double loss = 0.0;
    for (const auto& item : batch) {
        const NoiseDraw noise = draw_noise(item.seed, schedule.steps(), item.z0.size());
        const Vec z_t = forward_noise(item.z0, noise.t, noise.eps, schedule);
        loss += (predictor(z_t, noise.t, item) - noise.eps).squaredNorm() / static_cast<double>(item.z0.size());
    }
    loss /= static_cast<double>(batch.size());
    if (!std::isfinite(loss))
        throw DivergenceError("non-finite diffusion loss");
    return loss;
}

SampleResult sample_from_condition(const DenoiserParams& denoiser, const Vec& cond, const NoiseSchedule& schedule,
                                   std::uint64_t seed, bool keep_trajectory)
{
    Rng rng(derive_seed(seed, {0x73616d70ULL}));
    const int steps = schedule.steps();
    Vec z = gaussian_vec(denoiser.latent_dim(), 1.0, rng);
    SampleResult result;
    for (int t = steps; t >= 1; --t) {
        const double ab = schedule.alpha_bar(t);
        const double ab_prev = schedule.alpha_bar(t - 1);
        const Vec eps_hat = denoiser_forward(denoiser, z, t, steps, cond);
        const Vec z0_hat = (z - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
        z = std::sqrt(ab_prev) * z0_hat + std::sqrt(1.0 - ab_prev) * eps_hat;
        if (!z.allFinite())
            throw DivergenceError("non-finite latent at reverse step t=" + std::to_string(t));
        if (keep_trajectory)
            result.trajectory.push_back(decode_latent(denoiser, z0_hat));
    }
    result.decoded = decode_latent(denoiser, z);
    result.latent = std::move(z);
    return result;
}

SampleResult sample(const DenoiserParams& denoiser, const EncoderParams& encoder, const TokenIndex& index,
                    const Prompt& prompt, const NoiseSchedule& schedule, std::uint64_t seed, bool keep_trajectory)
{
    return sample_from_condition(denoiser, encode_pooled(encoder, index, prompt), schedule, seed, keep_trajectory);
}

} // namespace hydra
