#pragma once

// Reference implementations written directly from the metric and loss definitions,
// deliberately naive so they share no code paths with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "df2am/array.hpp"
#include "df2am/rng.hpp"

namespace oracle {

using df2am::Array;

inline double euclid(const Array& x, std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.dim(1); ++k) {
        const double d = x.at(i, k) - x.at(j, k);
        s += d * d;
    }
    return std::sqrt(s);
}

// Scans every (anchor, positive, negative) triple and keeps, per anchor, the largest
// hinge(m + d(a,p) - d(a,n)); hinge is monotone so this is the hardest-mined loss.
inline double exhaustive_triplet(const Array& emb, const std::vector<std::size_t>& labels, double margin) {
    const std::size_t n = labels.size();
    double total = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        double worst = 0.0;
        bool seen = false;
        for (std::size_t p = 0; p < n; ++p) {
            if (p == a || labels[p] != labels[a]) continue;
            for (std::size_t q = 0; q < n; ++q) {
                if (labels[q] == labels[a]) continue;
                const double v = std::max(0.0, margin + euclid(emb, a, p) - euclid(emb, a, q));
                if (!seen || v > worst) worst = v;
                seen = true;
            }
        }
        total += worst;
    }
    return total;
}

inline Array normalized_concat(const Array& rgb, const Array& ir) {
    const std::size_t k = rgb.dim(0), c = rgb.dim(1);
    Array out({2 * k, c});
    for (std::size_t i = 0; i < 2 * k; ++i) {
        const Array& src = i < k ? rgb : ir;
        const std::size_t r = i < k ? i : i - k;
        double norm = 0.0;
        for (std::size_t j = 0; j < c; ++j) norm += src.at(r, j) * src.at(r, j);
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = src.at(r, j) / norm;
    }
    return out;
}

inline Array distance_matrix(const Array& x) {
    const std::size_t n = x.dim(0);
    Array d({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) d.at(i, j) = euclid(x, i, j);
    return d;
}

// Eq.-style elementwise hinge of D*G - (D - m)(1 - G), summed.
inline double margin_affinity(const Array& d, const Array& g, double m) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) s += std::max(0.0, d[i] * g[i] - (d[i] - m) * (1.0 - g[i]));
    return s;
}

inline double l1_affinity(const Array& d, const Array& g, double delta) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) s += std::abs(d[i] - (1.0 - g[i]) * delta);
    return s / static_cast<double>(d.size());
}

// Position of gallery item j for query q: items strictly closer, plus equally distant items
// with a smaller index, come first.
inline std::size_t position(const Array& dist, std::size_t q, std::size_t j) {
    std::size_t pos = 0;
    for (std::size_t g = 0; g < dist.dim(1); ++g) {
        if (dist.at(q, g) < dist.at(q, j) || (dist.at(q, g) == dist.at(q, j) && g < j)) ++pos;
    }
    return pos;
}

// Checks every top-k prefix explicitly.
inline double cmc(const Array& dist, const std::vector<std::size_t>& ql, const std::vector<std::size_t>& gl,
                  std::size_t k) {
    double hits = 0.0;
    for (std::size_t q = 0; q < ql.size(); ++q) {
        bool hit = false;
        for (std::size_t j = 0; j < gl.size(); ++j)
            if (gl[j] == ql[q] && position(dist, q, j) < k) hit = true;
        hits += hit ? 1.0 : 0.0;
    }
    return hits / static_cast<double>(ql.size());
}

inline double mean_ap(const Array& dist, const std::vector<std::size_t>& ql, const std::vector<std::size_t>& gl) {
    double total = 0.0;
    for (std::size_t q = 0; q < ql.size(); ++q) {
        double ap = 0.0;
        std::size_t relevant = 0;
        for (std::size_t j = 0; j < gl.size(); ++j) {
            if (gl[j] != ql[q]) continue;
            ++relevant;
            const std::size_t pj = position(dist, q, j);
            std::size_t better = 0;
            for (std::size_t i = 0; i < gl.size(); ++i)
                if (gl[i] == ql[q] && position(dist, q, i) <= pj) ++better;
            ap += static_cast<double>(better) / static_cast<double>(pj + 1);
        }
        total += ap / static_cast<double>(relevant);
    }
    return total / static_cast<double>(ql.size());
}

// Random ranking problem whose every query label occurs in the gallery.
struct Problem {
    Array dist;
    std::vector<std::size_t> query_labels;
    std::vector<std::size_t> gallery_labels;
};

inline Problem random_problem(df2am::Rng& rng, std::size_t max_q, std::size_t max_g, bool ties) {
    Problem p;
    const std::size_t g = 1 + rng.below(max_g);
    const std::size_t q = 1 + rng.below(max_q);
    const std::size_t labels = 1 + rng.below(std::min<std::size_t>(g, 4));
    for (std::size_t j = 0; j < g; ++j) p.gallery_labels.push_back(j < labels ? j : rng.below(labels));
    for (std::size_t i = 0; i < q; ++i) p.query_labels.push_back(p.gallery_labels[rng.below(g)]);
    p.dist = Array({q, g});
    for (std::size_t i = 0; i < p.dist.size(); ++i)
        p.dist[i] = ties ? static_cast<double>(rng.below(3)) : rng.uniform(0.0, 2.0);
    return p;
}

}  // namespace oracle
