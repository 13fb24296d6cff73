#include "hydra/losses.hpp"

#include <cmath>

#include "hydra/errors.hpp"

namespace hydra {

ClassifierGrad ClassifierGrad::zeros_like(const ClassifierHead& head)
{
    return {Mat::Zero(head.W.rows(), head.W.cols()), Vec::Zero(head.b.size()), Vec::Zero(head.ln_gain.size()),
            Vec::Zero(head.ln_bias.size())};
}

ClassifierHead init_classifier(int num_classes, Eigen::Index dim, std::uint64_t seed)
{
    Rng rng(derive_seed(seed, {0x636c73ULL}));
    return {gaussian_mat(num_classes, dim, 0.01, rng), Vec::Zero(num_classes), Vec::Ones(dim), Vec::Zero(dim)};
}

Vec softmax(const Vec& logits)
{
    const Vec shifted = logits.array() - logits.maxCoeff();
    Vec e = shifted.array().exp();
    return e / e.sum();
}

Vec classifier_forward(const ClassifierHead& head, const Vec& z)
{
    return softmax(head.W * layer_norm(z, head.ln_gain, head.ln_bias) + head.b);
}

namespace {

/// -log softmax(logits)[label], computed as logsumexp - logit.
double neg_log_softmax(const Vec& logits, Eigen::Index label)
{
    const double mx = logits.maxCoeff();
    return std::log((logits.array() - mx).exp().sum()) + mx - logits[label];
}

} // namespace

ClsLoss loss_cls(const ClassifierHead& head, std::span<const Vec> z, std::span<const int> labels)
{
    if (z.size() != labels.size() || z.empty())
        throw FormatError("loss_cls needs equally sized, non-empty embedding and label lists");
    ClsLoss out{0.0, ClassifierGrad::zeros_like(head), {}};
    out.dz.reserve(z.size());
    const double n = static_cast<double>(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || y >= head.num_classes())
            throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(head.num_classes() - 1) +
                             "]");
        LayerNormCache ln;
        const Vec normed = layer_norm(z[i], head.ln_gain, head.ln_bias, &ln);
        const Vec logits = head.W * normed + head.b;
        out.loss += neg_log_softmax(logits, y) / n;

        Vec dlogits = softmax(logits);
        dlogits[y] -= 1.0;
        dlogits /= n;
        out.head.W.noalias() += dlogits * normed.transpose();
        out.head.b += dlogits;
        const Vec dnormed = head.W.transpose() * dlogits;
        out.dz.push_back(layer_norm_backward(ln, head.ln_gain, dnormed, &out.head.ln_gain, &out.head.ln_bias));
    }
    return out;
}

ClipLoss loss_clip(std::span<const Vec> text, std::span<const Vec> image, double logit_scale)
{
    if (text.size() != image.size())
        throw FormatError("loss_clip needs equally sized text and image batches");
    if (text.size() < 2)
        throw DegenerateError("contrastive loss needs a batch of at least 2 pairs");
    const auto n = static_cast<Eigen::Index>(text.size());
    const Eigen::Index d = text[0].size();

    Mat ht(n, d), hi(n, d);
    Vec nt(n), ni(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        nt[k] = text[static_cast<std::size_t>(k)].norm();
        ni[k] = image[static_cast<std::size_t>(k)].norm();
        if (!(nt[k] > 0.0) || !(ni[k] > 0.0))
            throw DegenerateError("contrastive loss on a zero-norm embedding");
        ht.row(k) = text[static_cast<std::size_t>(k)].transpose() / nt[k];
        hi.row(k) = image[static_cast<std::size_t>(k)].transpose() / ni[k];
    }
    const Mat logits = logit_scale * (ht * hi.transpose());

    ClipLoss out;
    Mat dlogits = Mat::Zero(n, n);
    const double half_over_n = 0.5 / static_cast<double>(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const Vec row = logits.row(k).transpose();
        const Vec col = logits.col(k);
        out.loss += half_over_n * (neg_log_softmax(row, k) + neg_log_softmax(col, k));
        Vec prow = softmax(row);
        prow[k] -= 1.0;
        Vec pcol = softmax(col);
        pcol[k] -= 1.0;
        dlogits.row(k) += half_over_n * prow.transpose();
        dlogits.col(k) += half_over_n * pcol;
    }

    const Mat dht = logit_scale * (dlogits * hi);
    const Mat dhi = logit_scale * (dlogits.transpose() * ht);
    auto unnormalize = [](const Vec& h, const Vec& dh, double norm) -> Vec { return (dh - h * h.dot(dh)) / norm; };
    for (Eigen::Index k = 0; k < n; ++k) {
        out.dtext.push_back(unnormalize(ht.row(k).transpose(), dht.row(k).transpose(), nt[k]));
        out.dimage.push_back(unnormalize(hi.row(k).transpose(), dhi.row(k).transpose(), ni[k]));
    }
    return out;
}

} // namespace hydra
