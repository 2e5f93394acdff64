#pragma once

#include "umg/ops.hpp"

#include <algorithm>

namespace umg {

// Normalized [0,1] box; image_index selects the batch item it belongs to.
struct RegionBox {
    double x0, y0, x1, y1;
    int64_t image_index = 0;
};

struct RegionBoxSet {
    std::vector<RegionBox> boxes;

    void validate(int64_t batch) const {
        for (const auto& b : boxes) {
            if (!(0.0 <= b.x0 && b.x0 < b.x1 && b.x1 <= 1.0 &&
                  0.0 <= b.y0 && b.y0 < b.y1 && b.y1 <= 1.0))
                throw ContractError("region box has invalid ordering or range");
            if (b.image_index < 0 || b.image_index >= batch)
                throw ContractError("region box image_index out of range");
        }
    }
};

// k representative positions plus an assignment of all n positions to them.
struct ClusterMap {
    std::vector<int64_t> representative_ids; // grid positions, in selection order
    std::vector<int> assignment;             // n entries in [0,k)
};

// Quadrant-center sample points of a box, in continuous grid coordinates
// (normalized coordinate u maps to u*S - 0.5).
inline std::array<std::array<double, 2>, 4> roi_sample_points(const RegionBox& b, int64_t side) {
    const double s = static_cast<double>(side);
    std::array<std::array<double, 2>, 4> pts;
    int k = 0;
    for (int iy = 0; iy < 2; ++iy)
        for (int ix = 0; ix < 2; ++ix) {
            double u = b.x0 + (ix + 0.5) * (b.x1 - b.x0) / 2.0;
            double v = b.y0 + (iy + 0.5) * (b.y1 - b.y0) / 2.0;
            pts[static_cast<size_t>(k++)] = {u * s - 0.5, v * s - 0.5};
        }
    return pts;
}

// Pools one embed vector per box: average of 2x2 bilinear samples placed at
// the centers of the box quadrants.
template <typename T>
Tensor<T> roi_align(const Tensor<T>& grid, const RegionBoxSet& boxes) {
    if (grid.ndim() != 3) throw ShapeError("roi_align: grid must be [b,n,d], got " + shape_str(grid.shape()));
    const int64_t b = grid.dim(0), n = grid.dim(1), d = grid.dim(2);
    const int64_t side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (side * side != n) throw ShapeError("roi_align: token count " + std::to_string(n) + " is not square");
    boxes.validate(b);
    const int64_t nb = static_cast<int64_t>(boxes.boxes.size());
    if (nb == 0) return Tensor<T>::zeros({0, d});

    // One bilinear_sample per referenced image, then a constant averaging map
    // back to box order.
    std::vector<std::vector<int64_t>> per_image(static_cast<size_t>(b));
    for (int64_t i = 0; i < nb; ++i)
        per_image[static_cast<size_t>(boxes.boxes[static_cast<size_t>(i)].image_index)].push_back(i);

    std::vector<Tensor<T>> pooled_parts;
    std::vector<int64_t> order; // box ids in pooled_parts row order
    for (int64_t img = 0; img < b; ++img) {
        const auto& ids = per_image[static_cast<size_t>(img)];
        if (ids.empty()) continue;
        auto fm = reshape(slice(grid, 0, img, 1), {side, side, d});
        std::vector<std::array<double, 2>> pts;
        for (int64_t id : ids)
            for (const auto& p : roi_sample_points(boxes.boxes[static_cast<size_t>(id)], side))
                pts.push_back(p);
        auto samples = bilinear_sample(fm, pts); // [4*ids, d]
        // averaging matrix [ids, 4*ids]
        const int64_t m = static_cast<int64_t>(ids.size());
        std::vector<T> avg(static_cast<size_t>(m * 4 * m), T(0));
        for (int64_t r = 0; r < m; ++r)
            for (int64_t s = 0; s < 4; ++s)
                avg[static_cast<size_t>(r * 4 * m + r * 4 + s)] = static_cast<T>(0.25);
        pooled_parts.push_back(matmul(Tensor<T>({m, 4 * m}, std::move(avg)), samples));
        order.insert(order.end(), ids.begin(), ids.end());
    }
    auto pooled = pooled_parts.size() == 1 ? pooled_parts[0] : concat(pooled_parts, 0);
    // restore original box order
    std::vector<int64_t> inv(static_cast<size_t>(nb));
    for (int64_t r = 0; r < nb; ++r) inv[static_cast<size_t>(order[static_cast<size_t>(r)])] = r;
    return gather_rows(pooled, inv);
}

namespace detail {

// Density-peaks selection on cosine similarity. Density of a token is the mean
// of its 5 largest similarities to other tokens; separation is one minus the
// max similarity to any denser token (1 for the global density peak). Tokens
// with the k highest density*separation scores become representatives.
template <typename T>
ClusterMap density_peaks(const T* x, int64_t n, int64_t d, int64_t k) {
    std::vector<double> norm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double s = 0;
        for (int64_t j = 0; j < d; ++j)
            s += static_cast<double>(x[i * d + j]) * static_cast<double>(x[i * d + j]);
        norm[static_cast<size_t>(i)] = std::sqrt(s);
    }
    auto cosine = [&](int64_t a, int64_t b) {
        double dot = 0;
        for (int64_t j = 0; j < d; ++j)
            dot += static_cast<double>(x[a * d + j]) * static_cast<double>(x[b * d + j]);
        double den = norm[static_cast<size_t>(a)] * norm[static_cast<size_t>(b)];
        return den == 0.0 ? 0.0 : dot / den;
    };
    std::vector<std::vector<double>> sim(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 1.0));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j)
            sim[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                sim[static_cast<size_t>(j)][static_cast<size_t>(i)] = cosine(i, j);

    std::vector<double> rho(static_cast<size_t>(n));
    const int64_t top = std::min<int64_t>(5, n - 1);
    for (int64_t i = 0; i < n; ++i) {
        std::vector<double> s;
        s.reserve(static_cast<size_t>(n - 1));
        for (int64_t j = 0; j < n; ++j)
            if (j != i) s.push_back(sim[static_cast<size_t>(i)][static_cast<size_t>(j)]);
        std::partial_sort(s.begin(), s.begin() + top, s.end(), std::greater<double>());
        double acc = 0;
        for (int64_t t = 0; t < top; ++t) acc += s[static_cast<size_t>(t)];
        rho[static_cast<size_t>(i)] = top > 0 ? acc / static_cast<double>(top) : 1.0;
    }
    // "denser" ordering with deterministic tie-break by lower index
    auto denser = [&](int64_t j, int64_t i) {
        return rho[static_cast<size_t>(j)] > rho[static_cast<size_t>(i)] ||
               (rho[static_cast<size_t>(j)] == rho[static_cast<size_t>(i)] && j < i);
    };
    std::vector<double> delta(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double best = -2.0;
        for (int64_t j = 0; j < n; ++j)
            if (j != i && denser(j, i))
                best = std::max(best, sim[static_cast<size_t>(i)][static_cast<size_t>(j)]);
        delta[static_cast<size_t>(i)] = best < -1.0 ? 1.0 : 1.0 - best;
    }
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        double sa = rho[static_cast<size_t>(a)] * delta[static_cast<size_t>(a)];
        double sb = rho[static_cast<size_t>(b)] * delta[static_cast<size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });
    ClusterMap map;
    map.representative_ids.assign(idx.begin(), idx.begin() + k);
    map.assignment.assign(static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < n; ++i) {
        int best = 0;
        double best_sim = -2.0;
        for (int64_t r = 0; r < k; ++r) {
            double s = i == map.representative_ids[static_cast<size_t>(r)]
                           ? 2.0 // a representative always belongs to itself
                           : sim[static_cast<size_t>(i)][static_cast<size_t>(map.representative_ids[static_cast<size_t>(r)])];
            if (s > best_sim) {
                best_sim = s;
                best = static_cast<int>(r);
            }
        }
        map.assignment[static_cast<size_t>(i)] = best;
    }
    return map;
}

} // namespace detail

// Reduces n grid tokens to k = ceil(keep_ratio * n) representatives per batch
// item. Representative features are member means; selection is computed from
// values and carries no gradient of its own.
template <typename T>
std::pair<Tensor<T>, std::vector<ClusterMap>> cluster_tokens(const Tensor<T>& grid,
                                                             double keep_ratio) {
    if (grid.ndim() != 3) throw ShapeError("cluster_tokens: grid must be [b,n,d]");
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
        throw ContractError("cluster_tokens: keep_ratio must be in (0,1]");
    const int64_t b = grid.dim(0), n = grid.dim(1), d = grid.dim(2);
    const int64_t k = static_cast<int64_t>(std::ceil(keep_ratio * static_cast<double>(n)));
    std::vector<ClusterMap> maps;
    std::vector<Tensor<T>> reps;
    for (int64_t i = 0; i < b; ++i) {
        auto item = reshape(slice(grid, 0, i, 1), {n, d});
        ClusterMap m = detail::density_peaks(item.data().data(), n, d, k);
        reps.push_back(reshape(segment_mean(item, m.assignment, k), {1, k, d}));
        maps.push_back(std::move(m));
    }
    auto out = reps.size() == 1 ? reps[0] : concat(reps, 0);
    return {out, maps};
}

// Broadcasts representative values back to all member positions.
template <typename T>
Tensor<T> unfold_tokens(const Tensor<T>& representatives, const std::vector<ClusterMap>& maps) {
    if (representatives.ndim() != 3) throw ShapeError("unfold_tokens: input must be [b,k,d]");
    const int64_t b = representatives.dim(0), k = representatives.dim(1), d = representatives.dim(2);
    if (static_cast<int64_t>(maps.size()) != b)
        throw ContractError("unfold_tokens: map count does not match batch");
    const int64_t n = static_cast<int64_t>(maps[0].assignment.size());
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(b * n * d));
    for (int64_t i = 0; i < b; ++i) {
        const auto& m = maps[static_cast<size_t>(i)];
        if (static_cast<int64_t>(m.assignment.size()) != n)
            throw ContractError("unfold_tokens: inconsistent assignment lengths");
        for (int64_t j = 0; j < n; ++j) {
            int a = m.assignment[static_cast<size_t>(j)];
            if (a < 0 || a >= k)
                throw ContractError("unfold_tokens: assignment index " + std::to_string(a) +
                                    " out of range for k=" + std::to_string(k));
            for (int64_t c = 0; c < d; ++c) idx.push_back((i * k + a) * d + c);
        }
    }
    return take(representatives, idx, {b, n, d});
}

} // namespace umg
