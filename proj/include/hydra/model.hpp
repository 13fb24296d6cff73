#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hydra/diffusion.hpp"
#include "hydra/embed.hpp"
#include "hydra/losses.hpp"
#include "hydra/vocab.hpp"

namespace hydra {

struct ModelConfig {
    int embed_dim = 32;
    int latent_dim = 16;
    int hidden_dim = 128;
    int steps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double position_scale = 0.5;
    double anchor_jitter = 0.05;
    double latent_noise = 0.05;
    std::uint64_t seed = 1;
};

/// Every trainable parameter of the text-image surrogate plus the fixed pieces it runs against.
struct SurrogateModel {
    TokenIndex tokens;
    EncoderParams encoder;
    ClassifierHead head;
    DenoiserParams denoiser;
    AnchorSpace anchors;
    NoiseSchedule schedule;
    double latent_noise = 0.0;

    const std::vector<std::string>& concepts() const { return anchors.concepts; }
    Vec pooled(const Prompt& prompt) const { return encode_pooled(encoder, tokens, prompt); }
    SampleResult generate(const Prompt& prompt, std::uint64_t seed, bool keep_trajectory = false) const
    {
        return sample(denoiser, encoder, tokens, prompt, schedule, seed, keep_trajectory);
    }
    /// Training target latent for a concept: decoder^T anchor plus seeded noise.
    Vec target_latent(const std::string& concept_name, std::uint64_t seed) const;
    bool finite() const { return encoder.finite() && denoiser.finite(); }
};

/// Sorted union of vocabulary words, concept names and template words.
std::vector<std::string> build_token_list(const std::vector<std::string>& vocab_words,
                                          const std::vector<std::string>& concepts,
                                          const std::vector<std::string>& templates);

SurrogateModel init_model(const std::vector<std::string>& concepts, const std::vector<std::string>& vocab_words,
                          const std::vector<std::string>& templates, int num_pairs, const ModelConfig& config);

} // namespace hydra
