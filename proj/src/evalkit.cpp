#include "xdreid/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace xdreid {

double RetrievalResult::rank_at(int k) const {
    if (counted_queries == 0) return 0.0;
    int hits = 0;
    for (int r : per_query_first_rank)
        if (r > 0 && r <= k) ++hits;
    return static_cast<double>(hits) / counted_queries;
}

namespace {

std::vector<std::vector<double>> unit_rows(const Matrix& m) {
    std::vector<std::vector<double>> rows(static_cast<size_t>(m.rows));
    for (int i = 0; i < m.rows; ++i) {
        rows[static_cast<size_t>(i)].assign(m.row(i), m.row(i) + m.cols);
        double norm = 0.0;
        for (double v : rows[static_cast<size_t>(i)]) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > 1e-12)
            for (double& v : rows[static_cast<size_t>(i)]) v /= norm;
    }
    return rows;
}

}  // namespace

RetrievalResult evaluate(const Matrix& query_embeddings, const std::vector<SampleMeta>& query_meta,
                         const Matrix& gallery_embeddings,
                         const std::vector<SampleMeta>& gallery_meta) {
    if (gallery_embeddings.rows == 0) throw ArgumentError("evaluate: empty gallery");
    if (query_embeddings.rows == 0) throw ArgumentError("evaluate: empty query set");
    if (static_cast<size_t>(query_embeddings.rows) != query_meta.size() ||
        static_cast<size_t>(gallery_embeddings.rows) != gallery_meta.size())
        throw DimensionError("evaluate: embeddings and metadata disagree");
    if (query_embeddings.cols != gallery_embeddings.cols)
        throw DimensionError("evaluate: embedding dims disagree");

    const auto q = unit_rows(query_embeddings);
    const auto g = unit_rows(gallery_embeddings);
    const int nq = query_embeddings.rows, ng = gallery_embeddings.rows;
    const int e = query_embeddings.cols;

    RetrievalResult res;
    res.per_query_ap.resize(static_cast<size_t>(nq));
    res.per_query_first_rank.assign(static_cast<size_t>(nq), 0);
    double ap_sum = 0.0;

    std::vector<std::pair<double, int>> ranked;
    for (int qi = 0; qi < nq; ++qi) {
        ranked.clear();
        for (int gi = 0; gi < ng; ++gi) {
            if (gallery_meta[static_cast<size_t>(gi)].id == query_meta[static_cast<size_t>(qi)].id &&
                gallery_meta[static_cast<size_t>(gi)].camera == query_meta[static_cast<size_t>(qi)].camera)
                continue;  // same id + same camera: excluded
            double d = 0.0;
            for (int k = 0; k < e; ++k) {
                const double diff = q[static_cast<size_t>(qi)][static_cast<size_t>(k)] -
                                    g[static_cast<size_t>(gi)][static_cast<size_t>(k)];
                d += diff * diff;
            }
            ranked.emplace_back(d, gi);
        }
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });

        int relevant_total = 0;
        for (const auto& [d, gi] : ranked)
            if (gallery_meta[static_cast<size_t>(gi)].id == query_meta[static_cast<size_t>(qi)].id)
                ++relevant_total;
        if (relevant_total == 0) continue;  // skipped query

        int hits = 0, first = 0;
        double ap = 0.0;
        for (size_t pos = 0; pos < ranked.size(); ++pos) {
            const int gi = ranked[pos].second;
            if (gallery_meta[static_cast<size_t>(gi)].id == query_meta[static_cast<size_t>(qi)].id) {
                ++hits;
                if (first == 0) first = static_cast<int>(pos) + 1;
                ap += static_cast<double>(hits) / static_cast<double>(pos + 1);
            }
        }
        ap /= relevant_total;
        res.per_query_ap[static_cast<size_t>(qi)] = ap;
        res.per_query_first_rank[static_cast<size_t>(qi)] = first;
        ap_sum += ap;
        ++res.counted_queries;
    }
    if (res.counted_queries > 0) {
        res.mAP = ap_sum / res.counted_queries;
        res.rank1 = res.rank_at(1);
        res.rank5 = res.rank_at(5);
        res.rank10 = res.rank_at(10);
    }
    return res;
}

std::optional<double> purity(const PseudoLabelState& clusters,
                             const std::vector<int>& ground_truth_ids) {
    if (clusters.labels.size() != ground_truth_ids.size())
        throw DimensionError("purity: labels and ground truth disagree in length");
    std::map<int, std::map<int, int>> counts;  // cluster -> id -> count
    int total = 0;
    for (size_t i = 0; i < clusters.labels.size(); ++i) {
        if (clusters.labels[i] < 0) continue;  // noise excluded
        ++counts[clusters.labels[i]][ground_truth_ids[i]];
        ++total;
    }
    if (total == 0) return std::nullopt;
    int correct = 0;
    for (const auto& [cluster, by_id] : counts) {
        int best = 0;
        for (const auto& [id, c] : by_id) best = std::max(best, c);
        correct += best;
    }
    return static_cast<double>(correct) / total;
}

}  // namespace xdreid
