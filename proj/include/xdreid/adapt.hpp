#pragma once

#include <vector>

#include "xdreid/common.hpp"
#include "xdreid/gen_losses.hpp"
#include "xdreid/nets.hpp"
#include "xdreid/synthdata.hpp"
#include "xdreid/tensor.hpp"

namespace xdreid {

/// Square symmetric dissimilarity matrix over target embeddings.
struct DistanceMatrix {
    int n = 0;
    std::vector<double> d;  // n*n row-major
    bool reranked = false;

    double at(int i, int j) const { return d[static_cast<size_t>(i) * n + j]; }
    double& at(int i, int j) { return d[static_cast<size_t>(i) * n + j]; }
    /// Zero diagonal, symmetry within 1e-9, non-negative entries.
    void validate() const;
};

/// Cluster assignment of target samples: -1 marks noise, clusters are
/// 0..num_clusters-1 and each is non-empty.
struct PseudoLabelState {
    std::vector<int> labels;
    int num_clusters = 0;
    long long epoch = 0;

    void validate() const;
};

/// Trains D_dom toward 1 on source codes and 0 on target codes.
Tensor adv_domain_loss_D(const Tensor& nu_s, const Tensor& nu_t, const Networks& nets);
/// Encoder side with flipped targets (non-saturating); together with the
/// D-side this realizes the symmetric two-term alignment objective under
/// alternating updates.
Tensor adv_domain_loss_E(const Tensor& nu_s, const Tensor& nu_t, const Networks& nets);

/// Row i = raw re-id embedding of sample i (batched, no graph).
Matrix extract_embeddings(const Dataset& dataset, const Networks& nets);

/// K-reciprocal re-ranking over Euclidean distances of L2-normalized rows.
///
/// Definitions shared with the test oracle:
///  - N(p,k) = first k+1 entries (self included) of the stable argsort of
///    row p by (distance, index);
///  - R(p,k) = {q in N(p,k) : p in N(q,k)}; the expansion adds R(q,ceil(k1/2))
///    for q in R(p,k1) when 3 * |intersect(R(q,.), R(p,k1))| > 2 * |R(q,.)|;
///  - V[p][q] = exp(-d(p,q)) on R*(p,k1), row L1-normalized, then averaged
///    over the first k2 ranked neighbors (local query expansion);
///  - d_J = 1 - sum(min(V_p,V_g)) / sum(max(V_p,V_g));
///  - final = lambda_orig * d_orig + (1-lambda_orig) * d_J, symmetrized as
///    (D + D^T)/2.
DistanceMatrix k_reciprocal_distances(const Matrix& embeddings, int k1, int k2, double lambda_orig);

/// Density clustering on a precomputed distance matrix. Neighborhoods use
/// d <= eps and count the point itself; border points join the cluster of
/// their lowest-indexed core neighbor; unreachable points get -1.
PseudoLabelState dbscan(const DistanceMatrix& dist, double eps, int min_pts);

/// Non-noise samples with their cluster ids. Rebuilds the target classifier
/// head when the cluster count changed (pass nets = nullptr to skip).
struct PseudoLabeled {
    std::vector<int> sample_indices;
    std::vector<int> labels;
    int num_clusters = 0;

    bool empty() const { return sample_indices.empty(); }
};
PseudoLabeled assign_pseudo_labels(const PseudoLabelState& state, const Dataset& target,
                                   Networks* nets);

/// Mean negative log probability of the pseudo-label under the target head.
Tensor id_loss_target(const Tensor& x_t, const std::vector<int>& pseudo_labels,
                      const Networks& nets);
/// Same on a synthesized image that carries the target appearance code.
Tensor id_loss_target_synth(const Tensor& x_synth, const std::vector<int>& pseudo_labels,
                            const Networks& nets);

}  // namespace xdreid
