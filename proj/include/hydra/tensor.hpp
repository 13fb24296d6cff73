#pragma once

#include <Eigen/Core>

#include "hydra/rng.hpp"

namespace hydra {

using Vec = Eigen::VectorXd;
/// Row-major so that checkpoint export is a straight copy of the storage.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Vec gaussian_vec(Eigen::Index n, double sigma, Rng& rng)
{
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i)
        v[i] = sigma * rng.normal();
    return v;
}

inline Mat gaussian_mat(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng)
{
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = sigma * rng.normal();
    return m;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x)
{
    return x.allFinite();
}

} // namespace hydra
