#include "xdreid/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace xdreid {

void DistanceMatrix::validate() const {
    if (n <= 0 || d.size() != static_cast<size_t>(n) * n)
        throw DimensionError("DistanceMatrix: bad size");
    for (int i = 0; i < n; ++i) {
        if (at(i, i) != 0.0) throw ArgumentError("DistanceMatrix: non-zero diagonal");
        for (int j = i + 1; j < n; ++j) {
            if (at(i, j) < 0.0) throw ArgumentError("DistanceMatrix: negative entry");
            if (std::fabs(at(i, j) - at(j, i)) > 1e-9)
                throw ArgumentError("DistanceMatrix: asymmetric beyond tolerance");
        }
    }
}

void PseudoLabelState::validate() const {
    std::vector<int> counts(static_cast<size_t>(std::max(0, num_clusters)), 0);
    for (int lab : labels) {
        if (lab < -1 || lab >= num_clusters)
            throw ArgumentError("PseudoLabelState: label out of range");
        if (lab >= 0) ++counts[static_cast<size_t>(lab)];
    }
    for (int c : counts)
        if (c == 0) throw ArgumentError("PseudoLabelState: empty cluster");
}

Tensor adv_domain_loss_D(const Tensor& nu_s, const Tensor& nu_t, const Networks& nets) {
    auto p_s = mean_log_score({nets.discriminate_domain(nu_s)});
    auto p_t = mean_log_one_minus_score({nets.discriminate_domain(nu_t)});
    return scale(add(p_s, p_t), -1.0);
}

Tensor adv_domain_loss_E(const Tensor& nu_s, const Tensor& nu_t, const Networks& nets) {
    auto p_t = mean_log_score({nets.discriminate_domain(nu_t)});
    auto p_s = mean_log_one_minus_score({nets.discriminate_domain(nu_s)});
    return scale(add(p_t, p_s), -1.0);
}

Matrix extract_embeddings(const Dataset& dataset, const Networks& nets) {
    if (dataset.samples.empty()) throw ArgumentError("extract_embeddings: empty dataset");
    NoGradGuard ng;
    const int n = static_cast<int>(dataset.samples.size());
    const int e = nets.config().embed_dim;
    Matrix out(n, e);
    constexpr int kBatch = 32;
    for (int start = 0; start < n; start += kBatch) {
        const int cnt = std::min(kBatch, n - start);
        std::vector<int> idx(static_cast<size_t>(cnt));
        std::iota(idx.begin(), idx.end(), start);
        auto emb = nets.encode_appearance(batch_tensor(dataset, idx)).embedding;
        for (int r = 0; r < cnt; ++r)
            std::copy(emb.data().begin() + static_cast<size_t>(r) * e,
                      emb.data().begin() + static_cast<size_t>(r + 1) * e,
                      out.v.begin() + static_cast<size_t>(start + r) * e);
    }
    return out;
}

namespace {

// Euclidean distances between L2-normalized rows.
Matrix normalized_euclidean(const Matrix& emb) {
    const int n = emb.rows, e = emb.cols;
    Matrix unit(n, e);
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        for (int j = 0; j < e; ++j) norm += emb.at(i, j) * emb.at(i, j);
        norm = std::sqrt(norm);
        const double inv = norm > 1e-12 ? 1.0 / norm : 0.0;
        for (int j = 0; j < e; ++j) unit.at(i, j) = emb.at(i, j) * inv;
    }
    Matrix d(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (int k = 0; k < e; ++k) {
                const double diff = unit.at(i, k) - unit.at(j, k);
                s += diff * diff;
            }
            const double dist = std::sqrt(std::max(0.0, s));
            d.at(i, j) = dist;
            d.at(j, i) = dist;
        }
    return d;
}

// First k+1 entries (self included) of the stable argsort by (distance, index).
std::vector<int> rank_prefix(const Matrix& d, int row, int k) {
    const int n = d.rows;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double da = d.at(row, a), db = d.at(row, b);
        return da < db || (da == db && a < b);
    });
    order.resize(static_cast<size_t>(std::min(n, k + 1)));
    return order;
}

}  // namespace

DistanceMatrix k_reciprocal_distances(const Matrix& embeddings, int k1, int k2,
                                      double lambda_orig) {
    const int n = embeddings.rows;
    if (n < 2) throw ArgumentError("k_reciprocal_distances: need at least 2 embeddings");
    if (k1 < 1 || k1 >= n) throw ArgumentError("k_reciprocal_distances: require 1 <= k1 < n");
    if (k2 < 1 || k2 > k1) throw ArgumentError("k_reciprocal_distances: require 1 <= k2 <= k1");
    if (lambda_orig < 0.0 || lambda_orig > 1.0)
        throw ArgumentError("k_reciprocal_distances: lambda_orig must be in [0,1]");

    Matrix d_orig = normalized_euclidean(embeddings);

    // ranked neighbor lists, and membership prefix sets for the backward test
    std::vector<std::vector<int>> prefix_k1(static_cast<size_t>(n));
    const int half_k = (k1 + 1) / 2;
    std::vector<std::vector<int>> prefix_half(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto full = rank_prefix(d_orig, i, k1);
        prefix_half[static_cast<size_t>(i)] =
            std::vector<int>(full.begin(), full.begin() + std::min<size_t>(full.size(), static_cast<size_t>(half_k) + 1));
        prefix_k1[static_cast<size_t>(i)] = std::move(full);
    }
    auto in_prefix = [](const std::vector<int>& pref, int x) {
        return std::find(pref.begin(), pref.end(), x) != pref.end();
    };
    auto reciprocal = [&](int i, const std::vector<std::vector<int>>& pref) {
        std::vector<int> r;
        for (int q : pref[static_cast<size_t>(i)])
            if (in_prefix(pref[static_cast<size_t>(q)], i)) r.push_back(q);
        return r;
    };

    std::vector<std::vector<int>> recip_k1(static_cast<size_t>(n)), recip_half(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        recip_k1[static_cast<size_t>(i)] = reciprocal(i, prefix_k1);
        recip_half[static_cast<size_t>(i)] = reciprocal(i, prefix_half);
    }

    // expanded reciprocal sets and the normalized weight rows V (sparse)
    std::vector<std::vector<std::pair<int, double>>> V(static_cast<size_t>(n));
    std::vector<char> in_base(static_cast<size_t>(n), 0), in_exp(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const auto& base = recip_k1[static_cast<size_t>(i)];
        for (int q : base) in_base[static_cast<size_t>(q)] = in_exp[static_cast<size_t>(q)] = 1;
        std::vector<int> expanded = base;
        for (int q : base) {
            const auto& cand = recip_half[static_cast<size_t>(q)];
            int overlap = 0;  // against the base set only
            for (int x : cand) overlap += in_base[static_cast<size_t>(x)];
            if (3 * overlap > 2 * static_cast<int>(cand.size()))
                for (int x : cand)
                    if (!in_exp[static_cast<size_t>(x)]) {
                        in_exp[static_cast<size_t>(x)] = 1;
                        expanded.push_back(x);
                    }
        }
        std::sort(expanded.begin(), expanded.end());
        double sum = 0.0;
        auto& row = V[static_cast<size_t>(i)];
        row.reserve(expanded.size());
        for (int q : expanded) {
            const double wgt = std::exp(-d_orig.at(i, q));
            row.emplace_back(q, wgt);
            sum += wgt;
        }
        for (auto& [q, wgt] : row) wgt /= sum;
        for (int q : base) in_base[static_cast<size_t>(q)] = 0;
        for (int q : expanded) in_exp[static_cast<size_t>(q)] = 0;
    }

    // local query expansion over the first k2 ranked neighbors
    std::vector<std::vector<std::pair<int, double>>> Vq(static_cast<size_t>(n));
    {
        std::vector<double> dense(static_cast<size_t>(n), 0.0);
        for (int i = 0; i < n; ++i) {
            auto neigh = rank_prefix(d_orig, i, k2 - 1);  // exactly k2 entries
            std::vector<int> touched;
            for (int q : neigh)
                for (const auto& [m, wgt] : V[static_cast<size_t>(q)]) {
                    if (dense[static_cast<size_t>(m)] == 0.0) touched.push_back(m);
                    dense[static_cast<size_t>(m)] += wgt;
                }
            std::sort(touched.begin(), touched.end());
            auto& row = Vq[static_cast<size_t>(i)];
            row.reserve(touched.size());
            const double inv = 1.0 / static_cast<double>(neigh.size());
            for (int m : touched) {
                row.emplace_back(m, dense[static_cast<size_t>(m)] * inv);
                dense[static_cast<size_t>(m)] = 0.0;
            }
        }
    }

    // Jaccard distance between sparse, sorted weight rows
    DistanceMatrix out;
    out.n = n;
    out.reranked = true;
    out.d.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const auto& a = Vq[static_cast<size_t>(i)];
            const auto& b = Vq[static_cast<size_t>(j)];
            double mins = 0.0, maxs = 0.0;
            size_t ia = 0, ib = 0;
            while (ia < a.size() || ib < b.size()) {
                if (ib == b.size() || (ia < a.size() && a[ia].first < b[ib].first)) {
                    maxs += a[ia].second;
                    ++ia;
                } else if (ia == a.size() || b[ib].first < a[ia].first) {
                    maxs += b[ib].second;
                    ++ib;
                } else {
                    mins += std::min(a[ia].second, b[ib].second);
                    maxs += std::max(a[ia].second, b[ib].second);
                    ++ia;
                    ++ib;
                }
            }
            const double jac = maxs > 0.0 ? 1.0 - mins / maxs : 1.0;
            const double blended_ij = lambda_orig * d_orig.at(i, j) + (1.0 - lambda_orig) * jac;
            out.at(i, j) = blended_ij;
            out.at(j, i) = blended_ij;
        }
    }
    // The Jaccard side is already symmetric by construction here, but the
    // contract is (D + D^T)/2 over whatever the blend produced.
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double s = 0.5 * (out.at(i, j) + out.at(j, i));
            out.at(i, j) = s;
            out.at(j, i) = s;
        }
    return out;
}

PseudoLabelState dbscan(const DistanceMatrix& dist, double eps, int min_pts) {
    dist.validate();
    if (eps < 0.0) throw ArgumentError("dbscan: eps must be non-negative");
    if (min_pts < 1) throw ArgumentError("dbscan: min_pts must be positive");
    const int n = dist.n;

    std::vector<std::vector<int>> neigh(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (dist.at(i, j) <= eps) neigh[static_cast<size_t>(i)].push_back(j);  // self included

    std::vector<char> core(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i)
        core[static_cast<size_t>(i)] = static_cast<int>(neigh[static_cast<size_t>(i)].size()) >= min_pts;

    PseudoLabelState st;
    st.labels.assign(static_cast<size_t>(n), -1);
    int next = 0;
    std::vector<int> queue;
    for (int i = 0; i < n; ++i) {
        if (!core[static_cast<size_t>(i)] || st.labels[static_cast<size_t>(i)] != -1) continue;
        const int cluster = next++;
        st.labels[static_cast<size_t>(i)] = cluster;
        queue.assign(1, i);
        while (!queue.empty()) {
            const int p = queue.back();
            queue.pop_back();
            for (int q : neigh[static_cast<size_t>(p)]) {
                if (!core[static_cast<size_t>(q)] || st.labels[static_cast<size_t>(q)] != -1) continue;
                st.labels[static_cast<size_t>(q)] = cluster;
                queue.push_back(q);
            }
        }
    }
    // border points: lowest-indexed core neighbor decides the cluster
    for (int i = 0; i < n; ++i) {
        if (core[static_cast<size_t>(i)]) continue;
        for (int q : neigh[static_cast<size_t>(i)])
            if (core[static_cast<size_t>(q)]) {
                st.labels[static_cast<size_t>(i)] = st.labels[static_cast<size_t>(q)];
                break;
            }
    }
    st.num_clusters = next;
    return st;
}

PseudoLabeled assign_pseudo_labels(const PseudoLabelState& state, const Dataset& target,
                                   Networks* nets) {
    if (state.labels.size() != target.samples.size())
        throw ArgumentError("assign_pseudo_labels: state does not match the dataset");
    state.validate();
    PseudoLabeled out;
    out.num_clusters = state.num_clusters;
    for (size_t i = 0; i < state.labels.size(); ++i)
        if (state.labels[i] >= 0) {
            out.sample_indices.push_back(static_cast<int>(i));
            out.labels.push_back(state.labels[i]);
        }
    if (nets && state.num_clusters > 0 && nets->config().num_target_classes != state.num_clusters)
        nets->rebuild_target_head(state.num_clusters);
    return out;
}

namespace {

void check_pseudo_labels(const std::vector<int>& labels, const Networks& nets) {
    if (!nets.has_target_head())
        throw StateError("id_loss_target: no pseudo-labels exist yet");
    for (int lab : labels) {
        if (lab < 0) throw ArgumentError("id_loss_target: negative pseudo-label");
        if (lab >= nets.config().num_target_classes)
            throw StateError("id_loss_target: stale pseudo-label " + std::to_string(lab) +
                             " >= current cluster count " +
                             std::to_string(nets.config().num_target_classes));
    }
}

}  // namespace

Tensor id_loss_target(const Tensor& x_t, const std::vector<int>& pseudo_labels,
                      const Networks& nets) {
    check_pseudo_labels(pseudo_labels, nets);
    return id_loss_on_embedding(nets.encode_appearance(x_t).embedding, pseudo_labels, nets,
                                Domain::Target);
}

Tensor id_loss_target_synth(const Tensor& x_synth, const std::vector<int>& pseudo_labels,
                            const Networks& nets) {
    check_pseudo_labels(pseudo_labels, nets);
    return id_loss_on_embedding(nets.encode_appearance(x_synth).embedding, pseudo_labels, nets,
                                Domain::Target);
}

}  // namespace xdreid
