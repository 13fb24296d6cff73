#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hydra/embed.hpp"
#include "hydra/tensor.hpp"

namespace hydra {

/// Auxiliary prompt classifier: Softmax(W LN(z) + b) over K+1 classes, class 0 = clean.
struct ClassifierHead {
    Mat W;
    Vec b;
    Vec ln_gain;
    Vec ln_bias;

    int num_classes() const { return static_cast<int>(W.rows()); }
};

struct ClassifierGrad {
    Mat W;
    Vec b;
    Vec ln_gain;
    Vec ln_bias;

    static ClassifierGrad zeros_like(const ClassifierHead& head);
};

ClassifierHead init_classifier(int num_classes, Eigen::Index dim, std::uint64_t seed);

Vec softmax(const Vec& logits);
Vec classifier_forward(const ClassifierHead& head, const Vec& z);

struct ClsLoss {
    double loss = 0.0;
    ClassifierGrad head;
    std::vector<Vec> dz;
};

/// -(1/N) sum log p(y_i | z_i)
ClsLoss loss_cls(const ClassifierHead& head, std::span<const Vec> z, std::span<const int> labels);

struct ClipLoss {
    double loss = 0.0;
    std::vector<Vec> dtext;
    std::vector<Vec> dimage;
};

/// Symmetric cross-entropy over the N x N cosine-similarity matrix against the identity matching.
ClipLoss loss_clip(std::span<const Vec> text, std::span<const Vec> image, double logit_scale = 1.0);

} // namespace hydra
