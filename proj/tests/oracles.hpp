// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations used only by tests.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

inline std::vector<float> random_vector(std::mt19937& gen, std::size_t n, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    std::vector<float> v(n);
    for (auto& x : v) x = dist(gen);
    return v;
}

// Keep the ceil(k% n) largest |v|; equal magnitudes prefer the lower index.
// Selection by repeated scan, no sorting.
inline std::vector<float> trim(const std::vector<float>& v, double k_percent) {
    const std::size_t n = v.size();
    std::size_t keep = static_cast<std::size_t>(std::ceil(k_percent * static_cast<double>(n) / 100.0 - 1e-9));
    std::vector<bool> taken(n, false);
    for (std::size_t round = 0; round < keep; ++round) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            if (best == n || std::fabs(v[i]) > std::fabs(v[best])) best = i;
        }
        taken[best] = true;
    }
    std::vector<float> out(n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) out[i] = v[i];
    }
    return out;
}

inline int sgn(float x) { return (x > 0.0f) - (x < 0.0f); }

// Per-element TIES with ties to `va`. Mirrors the float expression order
// documented for merge_ties: base + lambda * (s * (sum of agreeing |v|) / 2).
inline std::vector<float> ties(const std::vector<float>& base, const std::vector<float>& a,
                               const std::vector<float>& b, double k, float lambda) {
    const std::size_t n = base.size();
    std::vector<float> da(n), db(n);
    for (std::size_t i = 0; i < n; ++i) {
        da[i] = a[i] - base[i];
        db[i] = b[i] - base[i];
    }
    const auto va = trim(da, k), vb = trim(db, k);
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int s = std::fabs(va[i]) >= std::fabs(vb[i]) ? sgn(va[i]) : sgn(vb[i]);
        float sum = 0.0f;
        if (s != 0 && sgn(va[i]) == s) sum += std::fabs(va[i]);
        if (s != 0 && sgn(vb[i]) == s) sum += std::fabs(vb[i]);
        const float m = static_cast<float>(s) * sum / 2.0f;
        out[i] = base[i] + lambda * m;
    }
    return out;
}

} // namespace oracle
