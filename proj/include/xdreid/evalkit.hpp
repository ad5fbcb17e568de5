#pragma once

#include <optional>
#include <vector>

#include "xdreid/adapt.hpp"
#include "xdreid/common.hpp"

namespace xdreid {

struct SampleMeta {
    int id = -1;
    int camera = -1;
};

struct RetrievalResult {
    // aligned with the queries; no value = query skipped (no valid match)
    std::vector<std::optional<double>> per_query_ap;
    std::vector<int> per_query_first_rank;  // 1-based, 0 when skipped
    double mAP = 0.0;                       // fractions in [0,1]
    double rank1 = 0.0, rank5 = 0.0, rank10 = 0.0;
    int counted_queries = 0;

    double rank_at(int k) const;
};

/// Standard re-id retrieval protocol: gallery entries with the query's id AND
/// camera are excluded, ranking is by ascending Euclidean distance between
/// L2-normalized embeddings (ties keep gallery order), AP is the mean of
/// precision at each relevant position. Queries without any cross-camera
/// match are skipped.
RetrievalResult evaluate(const Matrix& query_embeddings, const std::vector<SampleMeta>& query_meta,
                         const Matrix& gallery_embeddings,
                         const std::vector<SampleMeta>& gallery_meta);

/// Majority-identity purity over clustered (non-noise) samples. No clustered
/// samples -> no value.
std::optional<double> purity(const PseudoLabelState& clusters,
                             const std::vector<int>& ground_truth_ids);

}  // namespace xdreid
