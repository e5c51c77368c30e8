#pragma once

// Slow, independent reference implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "lanse/common.hpp"

namespace oracle {

using lanse::Mat;
using lanse::Vec;
using BitMatrix = std::vector<std::vector<int>>;

inline std::vector<double> matvec_relu(const Mat& w, const Vec& b, const Vec& x) {
    std::vector<double> out(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
        double s = b[r];
        for (Eigen::Index c = 0; c < w.cols(); ++c) s += w(r, c) * x[c];
        out[static_cast<std::size_t>(r)] = s > 0 ? s : 0.0;
    }
    return out;
}

/// Keeps the k largest values (by magnitude), lowest index first among ties.
inline std::vector<double> keep_top_k(std::vector<double> v, int k) {
    std::vector<bool> keep(v.size(), false);
    for (int round = 0; round < k; ++round) {
        int best = -1;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (keep[i]) continue;
            if (best < 0 || std::abs(v[i]) > std::abs(v[static_cast<std::size_t>(best)])) best = static_cast<int>(i);
        }
        if (best >= 0) keep[static_cast<std::size_t>(best)] = true;
    }
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!keep[i]) v[i] = 0.0;
    return v;
}

/// Central finite differences of f at x.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-4) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double up = f(x);
        x[i] = orig - h;
        const double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

/// Largest per-component relative error, with a small floor for near-zero components.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-7) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

inline int popcount(const std::vector<int>& b) { return std::accumulate(b.begin(), b.end(), 0); }

inline int hamming(const std::vector<int>& a, const std::vector<int>& b) {
    int n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
    return n;
}

inline double prompt_match(const BitMatrix& v, const BitMatrix& t) {
    long total = 0;
    for (std::size_t i = 0; i < v.size(); ++i) total += hamming(v[i], t[i]);
    return static_cast<double>(total) / static_cast<double>(v.size());
}

inline double mean_popcount(const BitMatrix& m) {
    long total = 0;
    for (const auto& row : m) total += popcount(row);
    return static_cast<double>(total) / static_cast<double>(m.size());
}

/// Double loop over all unordered pairs of rows with any active bit. NaN if fewer than two.
inline double content_diversity(const BitMatrix& m) {
    std::vector<const std::vector<int>*> rows;
    for (const auto& r : m)
        if (popcount(r) > 0) rows.push_back(&r);
    if (rows.size() < 2) return std::nan("");
    double total = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            total += static_cast<double>(hamming(*rows[i], *rows[j])) /
                     (static_cast<double>(popcount(*rows[i])) * static_cast<double>(popcount(*rows[j])));
            ++pairs;
        }
    return total / static_cast<double>(pairs);
}

/// Textbook Pearson from sums.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        syy += y[i] * y[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

/// Percentile by the rank statistic: position p/100 * (n-1) in sorted order, linear between neighbours.
inline double rank_percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Greedy one-to-one matching of planted rows to candidate rows by |cosine|,
/// scanning every (planted, candidate) pair. Returns the number matched at >= threshold.
inline int greedy_match(const Mat& planted, const Mat& candidates, double threshold) {
    struct Edge {
        double cos;
        Eigen::Index p, c;
    };
    std::vector<Edge> edges;
    for (Eigen::Index p = 0; p < planted.rows(); ++p)
        for (Eigen::Index c = 0; c < candidates.rows(); ++c) {
            double dot = 0, np = 0, nc = 0;
            for (Eigen::Index k = 0; k < planted.cols(); ++k) {
                dot += planted(p, k) * candidates(c, k);
                np += planted(p, k) * planted(p, k);
                nc += candidates(c, k) * candidates(c, k);
            }
            if (np > 0 && nc > 0) edges.push_back({std::abs(dot) / std::sqrt(np * nc), p, c});
        }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.cos > b.cos; });
    std::vector<bool> used_p(static_cast<std::size_t>(planted.rows())), used_c(static_cast<std::size_t>(candidates.rows()));
    int matched = 0;
    for (const auto& e : edges) {
        if (e.cos < threshold) break;
        if (used_p[static_cast<std::size_t>(e.p)] || used_c[static_cast<std::size_t>(e.c)]) continue;
        used_p[static_cast<std::size_t>(e.p)] = used_c[static_cast<std::size_t>(e.c)] = true;
        ++matched;
    }
    return matched;
}

inline Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

inline Vec random_vec(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
    return v;
}

inline BitMatrix random_bits(std::size_t rows, std::size_t cols, double density, std::mt19937_64& rng) {
    std::bernoulli_distribution b(density);
    BitMatrix m(rows, std::vector<int>(cols));
    for (auto& r : m)
        for (auto& x : r) x = b(rng) ? 1 : 0;
    return m;
}

/// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("lanse-test-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace oracle
