#pragma once

#include "zsoc/embedding_store.hpp"
#include "zsoc/error.hpp"

#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <vector>

namespace zsoc {

/// Cosine similarity, accumulated in double regardless of storage type.
template <std::floating_point A, std::floating_point B>
double cosine(std::span<const A> u, std::span<const B> v) {
    if (u.size() != v.size())
        throw Error(Errc::dimension_mismatch, std::to_string(u.size()) + " vs " + std::to_string(v.size()));
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double a = u[i];
        const double b = v[i];
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if (!(nu > 0.0) || !(nv > 0.0)) throw Error(Errc::zero_norm_vector, "cosine of a zero-norm vector");
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

template <std::floating_point A, std::floating_point B>
double cosine(const std::vector<A>& u, const std::vector<B>& v) {
    return cosine(std::span<const A>(u), std::span<const B>(v));
}

/// Row-major images.count() x prototypes.count() matrix of cosines.
struct ScoreMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

inline ScoreMatrix score_matrix(const EmbeddingSet& images, const EmbeddingSet& prototypes) {
    if (images.dim != prototypes.dim)
        throw Error(Errc::dimension_mismatch, "image dim " + std::to_string(images.dim) + " vs prototype dim " +
                                                  std::to_string(prototypes.dim));
    ScoreMatrix m{images.count(), prototypes.count(), {}};
    m.values.resize(m.rows * m.cols);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) m.values[i * m.cols + j] = cosine(images.row(i), prototypes.row(j));
    return m;
}

} // namespace zsoc
