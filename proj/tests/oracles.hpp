// Independent reference implementations used to pin expected values in tests.
// Everything here recomputes results from first principles and must stay
// decoupled from the library's own code paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <vector>

namespace oracle {

// Plain six-nested-loop convolution, NCHW input, CoCiKhKw weight.
inline std::vector<double> conv2d_naive(const std::vector<double>& in, int n, int ci, int h, int w,
                                        const std::vector<double>& wt, int co, int kh, int kw,
                                        const std::vector<double>& bias, int stride, int pad,
                                        int& oh_out, int& ow_out) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    oh_out = oh;
    ow_out = ow;
    std::vector<double> out(static_cast<size_t>(n) * co * oh * ow, 0.0);
    for (int b = 0; b < n; ++b)
        for (int oc = 0; oc < co; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias[oc];
                    for (int ic = 0; ic < ci; ++ic)
                        for (int fy = 0; fy < kh; ++fy)
                            for (int fx = 0; fx < kw; ++fx) {
                                const int iy = oy * stride - pad + fy;
                                const int ix = ox * stride - pad + fx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += wt[((static_cast<size_t>(oc) * ci + ic) * kh + fy) * kw + fx] *
                                       in[((static_cast<size_t>(b) * ci + ic) * h + iy) * w + ix];
                            }
                    out[((static_cast<size_t>(b) * co + oc) * oh + oy) * ow + ox] = acc;
                }
    return out;
}

// Hand matrix multiply with bias: (N x D) * (D x M) + b.
inline std::vector<double> matmul_naive(const std::vector<double>& a, int n, int d,
                                        const std::vector<double>& b, int m,
                                        const std::vector<double>& bias) {
    std::vector<double> out(static_cast<size_t>(n) * m, 0.0);
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < m; ++j) {
            double acc = bias[j];
            for (int k = 0; k < d; ++k) acc += a[static_cast<size_t>(r) * d + k] * b[static_cast<size_t>(k) * m + j];
            out[static_cast<size_t>(r) * m + j] = acc;
        }
    return out;
}

struct Moments {
    double mean = 0.0;
    double stddev = 0.0;  // population
};

inline Moments moments(const double* p, int n) {
    Moments mo;
    for (int i = 0; i < n; ++i) mo.mean += p[i];
    mo.mean /= n;
    for (int i = 0; i < n; ++i) mo.stddev += (p[i] - mo.mean) * (p[i] - mo.mean);
    mo.stddev = std::sqrt(mo.stddev / n);
    return mo;
}

// Max pooling by direct enumeration, square window, stride = window.
inline std::vector<double> max_pool_naive(const std::vector<double>& in, int n, int c, int h, int w,
                                          int window) {
    const int oh = h / window, ow = w / window;
    std::vector<double> out(static_cast<size_t>(n) * c * oh * ow);
    for (int b = 0; b < n * c; ++b)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double best = -1e300;
                for (int fy = 0; fy < window; ++fy)
                    for (int fx = 0; fx < window; ++fx)
                        best = std::max(best, in[static_cast<size_t>(b) * h * w +
                                                 (oy * window + fy) * w + ox * window + fx]);
                out[static_cast<size_t>(b) * oh * ow + oy * ow + ox] = best;
            }
    return out;
}

// Central finite differences of a scalar function w.r.t. a parameter vector.
inline std::vector<double> finite_diff_grad(std::vector<double>& params,
                                            const std::function<double()>& eval,
                                            double step = 1e-5) {
    std::vector<double> grad(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + step;
        const double fp = eval();
        params[i] = saved - step;
        const double fm = eval();
        params[i] = saved;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

// Largest relative error between analytic and numeric gradients, with an
// absolute floor so near-zero entries do not blow up the ratio.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                            double floor_val = 1e-6) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor_val});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

// Plain softmax cross-entropy, mean over rows.
inline double cross_entropy_naive(const std::vector<double>& logits, int n, int k,
                                  const std::vector<int>& labels) {
    double total = 0.0;
    for (int r = 0; r < n; ++r) {
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(logits[static_cast<size_t>(r) * k + j]);
        total += -std::log(std::exp(logits[static_cast<size_t>(r) * k + labels[static_cast<size_t>(r)]]) / z);
    }
    return total / n;
}

// --- k-reciprocal re-ranking by literal set enumeration ---
// Shares only the documented definitions with the implementation; all
// machinery here is std::set / std::map based and recomputed from scratch.
inline std::vector<double> k_reciprocal_naive(const std::vector<std::vector<double>>& emb, int k1,
                                              int k2, double lambda) {
    const int n = static_cast<int>(emb.size());
    const int e = static_cast<int>(emb[0].size());
    std::vector<std::vector<double>> unit(emb);
    for (auto& row : unit) {
        double norm = 0.0;
        for (double v : row) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > 1e-12)
            for (double& v : row) v /= norm;
    }
    auto dist = [&](int i, int j) {
        double s = 0.0;
        for (int k = 0; k < e; ++k) {
            const double d = unit[static_cast<size_t>(i)][static_cast<size_t>(k)] -
                             unit[static_cast<size_t>(j)][static_cast<size_t>(k)];
            s += d * d;
        }
        return std::sqrt(s);
    };

    auto neighbors = [&](int p, int k) {
        std::vector<std::pair<double, int>> all;
        for (int j = 0; j < n; ++j) all.emplace_back(dist(p, j), j);
        std::sort(all.begin(), all.end());
        std::set<int> out;
        for (int i = 0; i < std::min(n, k + 1); ++i) out.insert(all[static_cast<size_t>(i)].second);
        return out;
    };
    auto reciprocal = [&](int p, int k) {
        std::set<int> out;
        for (int q : neighbors(p, k))
            if (neighbors(q, k).count(p)) out.insert(q);
        return out;
    };

    const int half = (k1 + 1) / 2;
    std::vector<std::map<int, double>> V(static_cast<size_t>(n));
    for (int p = 0; p < n; ++p) {
        std::set<int> base = reciprocal(p, k1);
        std::set<int> expanded = base;
        for (int q : base) {
            std::set<int> cand = reciprocal(q, half);
            std::set<int> inter;
            for (int x : cand)
                if (base.count(x)) inter.insert(x);
            if (3 * static_cast<int>(inter.size()) > 2 * static_cast<int>(cand.size()))
                expanded.insert(cand.begin(), cand.end());
        }
        double sum = 0.0;
        for (int q : expanded) sum += std::exp(-dist(p, q));
        for (int q : expanded) V[static_cast<size_t>(p)][q] = std::exp(-dist(p, q)) / sum;
    }

    // local query expansion over the k2 nearest ranked entries (self included)
    std::vector<std::map<int, double>> Vq(static_cast<size_t>(n));
    for (int p = 0; p < n; ++p) {
        std::vector<std::pair<double, int>> all;
        for (int j = 0; j < n; ++j) all.emplace_back(dist(p, j), j);
        std::sort(all.begin(), all.end());
        for (int i = 0; i < std::min(n, k2); ++i) {
            for (const auto& [m, w] : V[static_cast<size_t>(all[static_cast<size_t>(i)].second)])
                Vq[static_cast<size_t>(p)][m] += w / k2;
        }
    }

    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            std::set<int> keys;
            for (const auto& [m, w] : Vq[static_cast<size_t>(i)]) keys.insert(m);
            for (const auto& [m, w] : Vq[static_cast<size_t>(j)]) keys.insert(m);
            double mins = 0.0, maxs = 0.0;
            for (int m : keys) {
                const auto ai = Vq[static_cast<size_t>(i)].find(m);
                const auto bj = Vq[static_cast<size_t>(j)].find(m);
                const double a = ai == Vq[static_cast<size_t>(i)].end() ? 0.0 : ai->second;
                const double b = bj == Vq[static_cast<size_t>(j)].end() ? 0.0 : bj->second;
                mins += std::min(a, b);
                maxs += std::max(a, b);
            }
            const double jac = maxs > 0 ? 1.0 - mins / maxs : 1.0;
            out[static_cast<size_t>(i) * n + j] = lambda * dist(i, j) + (1.0 - lambda) * jac;
        }
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double s = 0.5 * (out[static_cast<size_t>(i) * n + j] + out[static_cast<size_t>(j) * n + i]);
            out[static_cast<size_t>(i) * n + j] = s;
            out[static_cast<size_t>(j) * n + i] = s;
        }
    return out;
}

// --- DBSCAN by transitive closure of the core adjacency relation ---
// Border points join the cluster of their lowest-indexed core neighbor, the
// same documented rule the implementation uses.
inline std::vector<int> dbscan_naive(const std::vector<double>& dist, int n, double eps,
                                     int min_pts) {
    std::vector<char> core(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        int cnt = 0;
        for (int j = 0; j < n; ++j)
            if (dist[static_cast<size_t>(i) * n + j] <= eps) ++cnt;  // self included
        core[static_cast<size_t>(i)] = cnt >= min_pts;
    }
    // boolean closure over cores
    std::vector<char> reach(static_cast<size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            reach[static_cast<size_t>(i) * n + j] =
                core[static_cast<size_t>(i)] && core[static_cast<size_t>(j)] &&
                dist[static_cast<size_t>(i) * n + j] <= eps;
    for (int k = 0; k < n; ++k) {
        if (!core[static_cast<size_t>(k)]) continue;
        for (int i = 0; i < n; ++i) {
            if (!reach[static_cast<size_t>(i) * n + k]) continue;
            for (int j = 0; j < n; ++j)
                if (reach[static_cast<size_t>(k) * n + j]) reach[static_cast<size_t>(i) * n + j] = 1;
        }
    }
    std::vector<int> labels(static_cast<size_t>(n), -1);
    int next = 0;
    for (int i = 0; i < n; ++i) {
        if (!core[static_cast<size_t>(i)] || labels[static_cast<size_t>(i)] != -1) continue;
        const int c = next++;
        labels[static_cast<size_t>(i)] = c;
        for (int j = 0; j < n; ++j)
            if (core[static_cast<size_t>(j)] && reach[static_cast<size_t>(i) * n + j])
                labels[static_cast<size_t>(j)] = c;
    }
    for (int i = 0; i < n; ++i) {
        if (core[static_cast<size_t>(i)]) continue;
        for (int j = 0; j < n; ++j)
            if (core[static_cast<size_t>(j)] && dist[static_cast<size_t>(i) * n + j] <= eps) {
                labels[static_cast<size_t>(i)] = labels[static_cast<size_t>(j)];
                break;
            }
    }
    return labels;
}

// Relabels clusters by first appearance so two labelings can be compared up
// to permutation; noise stays -1.
inline std::vector<int> canonical_labels(const std::vector<int>& labels) {
    std::map<int, int> remap;
    std::vector<int> out(labels.size(), -1);
    int next = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) continue;
        auto it = remap.find(labels[i]);
        if (it == remap.end()) it = remap.emplace(labels[i], next++).first;
        out[i] = it->second;
    }
    return out;
}

// --- retrieval metrics recomputed position by position ---
struct ApOracleItem {
    double distance;
    bool relevant;
    bool excluded;
};

// AP by rescanning the full ranked list at each relevant position.
inline std::optional<double> average_precision_naive(std::vector<ApOracleItem> items) {
    std::vector<ApOracleItem> kept;
    for (const auto& it : items)
        if (!it.excluded) kept.push_back(it);
    std::stable_sort(kept.begin(), kept.end(),
                     [](const ApOracleItem& a, const ApOracleItem& b) { return a.distance < b.distance; });
    int total_rel = 0;
    for (const auto& it : kept) total_rel += it.relevant ? 1 : 0;
    if (total_rel == 0) return std::nullopt;
    double ap = 0.0;
    for (size_t pos = 0; pos < kept.size(); ++pos) {
        if (!kept[pos].relevant) continue;
        int rel_above = 0;
        for (size_t q = 0; q <= pos; ++q) rel_above += kept[q].relevant ? 1 : 0;
        ap += static_cast<double>(rel_above) / static_cast<double>(pos + 1);
    }
    return ap / total_rel;
}

// Purity by direct counting.
inline std::optional<double> purity_naive(const std::vector<int>& labels,
                                          const std::vector<int>& ids) {
    std::map<int, std::map<int, int>> tally;
    int total = 0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= 0) {
            ++tally[labels[i]][ids[i]];
            ++total;
        }
    if (total == 0) return std::nullopt;
    int correct = 0;
    for (const auto& [c, by_id] : tally) {
        int best = 0;
        for (const auto& [id, cnt] : by_id) best = std::max(best, cnt);
        correct += best;
    }
    return static_cast<double>(correct) / total;
}

}  // namespace oracle
