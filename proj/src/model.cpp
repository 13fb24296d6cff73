#include "hydra/model.hpp"

#include <set>

namespace hydra {

Vec SurrogateModel::target_latent(const std::string& concept_name, std::uint64_t seed) const
{
    Vec z = concept_latent(denoiser, anchors.anchor(concept_name));
    if (latent_noise > 0.0) {
        Rng rng(derive_seed(seed, {0x6c6174ULL}));
        z += gaussian_vec(z.size(), latent_noise, rng);
    }
    return z;
}

std::vector<std::string> build_token_list(const std::vector<std::string>& vocab_words,
                                          const std::vector<std::string>& concepts,
                                          const std::vector<std::string>& templates)
{
    std::set<std::string> all(vocab_words.begin(), vocab_words.end());
    all.insert(concepts.begin(), concepts.end());
    for (auto& w : template_words(templates))
        all.insert(std::move(w));
    return {all.begin(), all.end()};
}

SurrogateModel init_model(const std::vector<std::string>& concepts, const std::vector<std::string>& vocab_words,
                          const std::vector<std::string>& templates, int num_pairs, const ModelConfig& config)
{
    SurrogateModel m;
    m.tokens = TokenIndex(build_token_list(vocab_words, concepts, templates));
    m.encoder = init_encoder(m.tokens.size(), config.embed_dim, config.position_scale, config.seed);
    m.head = init_classifier(num_pairs + 1, config.embed_dim, config.seed);
    m.anchors = build_anchor_space(concepts, config.embed_dim, config.anchor_jitter, config.seed);
    m.denoiser = init_denoiser(config.latent_dim, config.embed_dim, config.hidden_dim, config.seed, m.anchors.anchors);
    m.schedule = linear_schedule(config.steps, config.beta_start, config.beta_end);
    m.latent_noise = config.latent_noise;
    return m;
}

} // namespace hydra
