#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "xdreid/adapt.hpp"
#include "xdreid/evalkit.hpp"

using namespace xdreid;

namespace {

NetConfig tiny_config(int k_s = 3) {
    NetConfig cfg;
    cfg.image_h = 8;
    cfg.image_w = 8;
    cfg.base_width = 4;
    cfg.app_channels = 8;
    cfg.app_pool_w = 1;
    cfg.structure_channels = 4;
    cfg.n_res_blocks = 1;
    cfg.embed_dim = 8;
    cfg.num_source_classes = k_s;
    cfg.dom_hidden1 = 8;
    cfg.dom_hidden2 = 6;
    cfg.dom_hidden3 = 4;
    cfg.seed = 5;
    return cfg;
}

Matrix random_embeddings(int n, int e, std::mt19937_64& rng) {
    Matrix m(n, e);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : m.v) v = u(rng);
    return m;
}

DistanceMatrix dist_from(const std::vector<double>& d, int n) {
    DistanceMatrix m;
    m.n = n;
    m.d = d;
    return m;
}

}  // namespace

TEST_CASE("domain adversarial losses") {
    auto cfg = tiny_config();
    Networks nets(cfg);
    std::mt19937_64 rng(3);
    auto nu_s = Tensor::uniform({2, 8, 1, 1}, -1.0, 1.0, rng);
    auto nu_t = Tensor::uniform({2, 8, 1, 1}, -1.0, 1.0, rng);

    SUBCASE("uniform discriminator gives 2 ln 2 per pair") {
        for (auto& [name, p] : nets.domain_disc_params())
            if (name.rfind("d_dom.fc4", 0) == 0)
                for (auto& v : p.data()) v = 0.0;
        CHECK(adv_domain_loss_D(nu_s, nu_t, nets).item() ==
              doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
        CHECK(adv_domain_loss_E(nu_s, nu_t, nets).item() ==
              doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
    }

    SUBCASE("a confident discriminator pins D-loss at the clamp floor and E-loss high") {
        // bias the last layer hard toward "source" on everything
        for (auto& [name, p] : nets.domain_disc_params()) {
            if (name == "d_dom.fc4.w")
                for (auto& v : p.data()) v = 0.0;
            if (name == "d_dom.fc4.b") p.data()[0] = 50.0;
        }
        // D(nu)=1 for both: D-loss = -(log 1 + log(1-1)) hits the clamp on the fake side
        const double d_loss = adv_domain_loss_D(nu_s, nu_t, nets).item();
        CHECK(d_loss == doctest::Approx(-std::log(1.0 - 1e-6) - std::log(1e-6)).epsilon(1e-6));
        const double e_loss = adv_domain_loss_E(nu_s, nu_t, nets).item();
        CHECK(e_loss == doctest::Approx(d_loss).epsilon(1e-6));  // symmetric at this extreme
    }

    SUBCASE("random codes match a binary cross-entropy oracle") {
        const double got = adv_domain_loss_D(nu_s, nu_t, nets).item();
        auto p_s = nets.discriminate_domain(nu_s);
        auto p_t = nets.discriminate_domain(nu_t);
        double want = 0.0;
        for (double v : p_s.data()) want -= std::log(std::clamp(v, 1e-6, 1.0 - 1e-6)) / 2.0;
        for (double v : p_t.data()) want -= std::log(std::clamp(1.0 - v, 1e-6, 1.0 - 1e-6)) / 2.0;
        CHECK(got == doctest::Approx(want).epsilon(1e-6));

        const double got_e = adv_domain_loss_E(nu_s, nu_t, nets).item();
        double want_e = 0.0;
        for (double v : p_t.data()) want_e -= std::log(std::clamp(v, 1e-6, 1.0 - 1e-6)) / 2.0;
        for (double v : p_s.data()) want_e -= std::log(std::clamp(1.0 - v, 1e-6, 1.0 - 1e-6)) / 2.0;
        CHECK(got_e == doctest::Approx(want_e).epsilon(1e-6));
    }
}

TEST_CASE("extract_embeddings matches per-sample encoding") {
    auto cfg = tiny_config();
    Networks nets(cfg);
    auto ds = sample_dataset(Domain::Target, 3, 5, 2, 11, cfg.image_h, cfg.image_w);
    auto m = extract_embeddings(ds, nets);
    CHECK(m.rows == 15);
    CHECK(m.cols == cfg.embed_dim);

    auto m2 = extract_embeddings(ds, nets);
    CHECK(m.v == m2.v);

    for (int i : {0, 7, 14}) {
        auto single = nets.encode_appearance(batch_tensor(ds, {i})).embedding;
        for (int j = 0; j < cfg.embed_dim; ++j)
            CHECK(m.at(i, j) == doctest::Approx(single.data()[static_cast<size_t>(j)]).epsilon(1e-12));
    }

    Dataset empty;
    empty.image_h = cfg.image_h;
    empty.image_w = cfg.image_w;
    CHECK_THROWS_AS(extract_embeddings(empty, nets), ArgumentError);
}

TEST_CASE("k-reciprocal distances: degenerate weighting equals the base metric") {
    std::mt19937_64 rng(13);
    auto emb = random_embeddings(12, 6, rng);
    auto out = k_reciprocal_distances(emb, 4, 2, 1.0);
    out.validate();
    CHECK(out.reranked);

    // independent normalized-Euclidean recomputation
    std::vector<std::vector<double>> rows(12);
    for (int i = 0; i < 12; ++i) rows[static_cast<size_t>(i)].assign(emb.row(i), emb.row(i) + 6);
    for (auto& r : rows) {
        double n = 0.0;
        for (double v : r) n += v * v;
        n = std::sqrt(n);
        for (double& v : r) v /= n;
    }
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) {
            double s = 0.0;
            for (int k = 0; k < 6; ++k) {
                const double d = rows[static_cast<size_t>(i)][static_cast<size_t>(k)] -
                                 rows[static_cast<size_t>(j)][static_cast<size_t>(k)];
                s += d * d;
            }
            CHECK(out.at(i, j) == doctest::Approx(std::sqrt(s)).epsilon(1e-12));
        }
}

TEST_CASE("k-reciprocal distances: coincident embeddings stay at zero distance") {
    std::mt19937_64 rng(17);
    auto emb = random_embeddings(10, 4, rng);
    for (int j = 0; j < 4; ++j) emb.at(1, j) = emb.at(0, j);
    auto out = k_reciprocal_distances(emb, 3, 2, 0.3);
    CHECK(out.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
    out.validate();
}

TEST_CASE("k-reciprocal distances match the set-enumeration oracle") {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 30;
        auto emb = random_embeddings(n, 8, rng);
        auto got = k_reciprocal_distances(emb, 10, 3, 0.3);
        got.validate();

        std::vector<std::vector<double>> rows(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) rows[static_cast<size_t>(i)].assign(emb.row(i), emb.row(i) + 8);
        auto want = oracle::k_reciprocal_naive(rows, 10, 3, 0.3);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                CHECK(got.at(i, j) == doctest::Approx(want[static_cast<size_t>(i) * n + j]).epsilon(1e-5));
    }
}

TEST_CASE("k-reciprocal argument validation") {
    std::mt19937_64 rng(23);
    auto emb = random_embeddings(10, 4, rng);
    CHECK_THROWS_AS(k_reciprocal_distances(emb, 10, 3, 0.3), ArgumentError);  // k1 >= n
    CHECK_THROWS_AS(k_reciprocal_distances(emb, 4, 5, 0.3), ArgumentError);   // k2 > k1
    CHECK_THROWS_AS(k_reciprocal_distances(emb, 4, 2, 1.5), ArgumentError);
    Matrix one(1, 4);
    CHECK_THROWS_AS(k_reciprocal_distances(one, 1, 1, 0.3), ArgumentError);
}

TEST_CASE("dbscan closed-form cases") {
    SUBCASE("single dense blob") {
        const int n = 6;
        std::vector<double> d(static_cast<size_t>(n) * n, 0.0);
        auto st = dbscan(dist_from(d, n), 0.45, 6);
        CHECK(st.num_clusters == 1);
        for (int lab : st.labels) CHECK(lab == 0);
        st.validate();
    }

    SUBCASE("two separated groups plus an isolated point") {
        // points 0..3 coincide, 4..7 coincide, 8 is far from everything
        const int n = 9;
        std::vector<double> d(static_cast<size_t>(n) * n, 0.0);
        auto set = [&](int i, int j, double v) {
            d[static_cast<size_t>(i) * n + j] = v;
            d[static_cast<size_t>(j) * n + i] = v;
        };
        for (int i = 0; i < 4; ++i)
            for (int j = 4; j < 8; ++j) set(i, j, 10.0);
        for (int i = 0; i < 8; ++i) set(i, 8, 10.0);
        auto st = dbscan(dist_from(d, n), 0.45, 4);
        CHECK(st.num_clusters == 2);
        for (int i = 0; i < 4; ++i) CHECK(st.labels[static_cast<size_t>(i)] == 0);
        for (int i = 4; i < 8; ++i) CHECK(st.labels[static_cast<size_t>(i)] == 1);
        CHECK(st.labels[8] == -1);
        st.validate();
    }

    SUBCASE("all distances above eps yields all-noise") {
        const int n = 5;
        std::vector<double> d(static_cast<size_t>(n) * n, 3.0);
        for (int i = 0; i < n; ++i) d[static_cast<size_t>(i) * n + i] = 0.0;
        auto st = dbscan(dist_from(d, n), 0.45, 2);
        CHECK(st.num_clusters == 0);
        for (int lab : st.labels) CHECK(lab == -1);
    }
}

TEST_CASE("dbscan equals the transitive-closure oracle on random instances") {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int seed_trial = 0; seed_trial < 10; ++seed_trial) {
        const int n = 60;
        std::vector<std::pair<double, double>> pts(static_cast<size_t>(n));
        for (auto& p : pts) p = {u(rng), u(rng)};
        std::vector<double> d(static_cast<size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double dx = pts[static_cast<size_t>(i)].first - pts[static_cast<size_t>(j)].first;
                const double dy = pts[static_cast<size_t>(i)].second - pts[static_cast<size_t>(j)].second;
                d[static_cast<size_t>(i) * n + j] = std::sqrt(dx * dx + dy * dy);
            }
        auto got = dbscan(dist_from(d, n), 0.12, 4);
        auto want = oracle::dbscan_naive(d, n, 0.12, 4);
        CHECK(oracle::canonical_labels(got.labels) == oracle::canonical_labels(want));
    }
}

TEST_CASE("dbscan is invariant to input permutation up to relabeling") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 40;
    std::vector<std::pair<double, double>> pts(static_cast<size_t>(n));
    for (auto& p : pts) p = {u(rng), u(rng)};
    auto dist_of = [&](const std::vector<int>& order) {
        std::vector<double> d(static_cast<size_t>(n) * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const auto& a = pts[static_cast<size_t>(order[static_cast<size_t>(i)])];
                const auto& b = pts[static_cast<size_t>(order[static_cast<size_t>(j)])];
                d[static_cast<size_t>(i) * n + j] = std::hypot(a.first - b.first, a.second - b.second);
            }
        return d;
    };
    std::vector<int> identity(n), shuffled(n);
    std::iota(identity.begin(), identity.end(), 0);
    shuffled = identity;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    auto base = dbscan(dist_from(dist_of(identity), n), 0.15, 3);
    auto perm = dbscan(dist_from(dist_of(shuffled), n), 0.15, 3);
    // undo the permutation, then compare up to label names
    std::vector<int> unshuffled(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        unshuffled[static_cast<size_t>(shuffled[static_cast<size_t>(i)])] = perm.labels[static_cast<size_t>(i)];
    // noise must agree exactly; clusters agree as a partition
    for (int i = 0; i < n; ++i)
        CHECK((base.labels[static_cast<size_t>(i)] < 0) == (unshuffled[static_cast<size_t>(i)] < 0));
    std::map<int, int> fwd;
    for (int i = 0; i < n; ++i) {
        if (base.labels[static_cast<size_t>(i)] < 0) continue;
        auto it = fwd.find(base.labels[static_cast<size_t>(i)]);
        if (it == fwd.end())
            fwd[base.labels[static_cast<size_t>(i)]] = unshuffled[static_cast<size_t>(i)];
        else
            CHECK(it->second == unshuffled[static_cast<size_t>(i)]);
    }
}

TEST_CASE("assign_pseudo_labels bookkeeping") {
    auto cfg = tiny_config();
    auto ds = sample_dataset(Domain::Target, 2, 11, 2, 3, cfg.image_h, cfg.image_w);

    SUBCASE("all noise: empty subset") {
        PseudoLabelState st;
        st.labels.assign(22, -1);
        st.num_clusters = 0;
        auto out = assign_pseudo_labels(st, ds, nullptr);
        CHECK(out.empty());
    }

    SUBCASE("three clusters of 8/7/7") {
        PseudoLabelState st;
        st.num_clusters = 3;
        for (int i = 0; i < 22; ++i) st.labels.push_back(i < 8 ? 0 : (i < 15 ? 1 : 2));
        Networks nets(cfg);
        auto out = assign_pseudo_labels(st, ds, &nets);
        CHECK(out.sample_indices.size() == 22);
        CHECK(*std::max_element(out.labels.begin(), out.labels.end()) == 2);
        CHECK(*std::min_element(out.labels.begin(), out.labels.end()) == 0);
        CHECK(nets.config().num_target_classes == 3);  // head rebuilt

        // same K again: no rebuild
        const int gen_before = nets.target_head_generation();
        assign_pseudo_labels(st, ds, &nets);
        CHECK(nets.target_head_generation() == gen_before);
    }

    SUBCASE("state size mismatch is rejected") {
        PseudoLabelState st;
        st.labels.assign(5, 0);
        st.num_clusters = 1;
        CHECK_THROWS_AS(assign_pseudo_labels(st, ds, nullptr), ArgumentError);
    }
}

TEST_CASE("target identification loss guards") {
    auto cfg = tiny_config();
    Networks nets(cfg);
    std::mt19937_64 rng(37);
    auto x = Tensor::uniform({1, 3, cfg.image_h, cfg.image_w}, -1.0, 1.0, rng);

    CHECK_THROWS_AS(id_loss_target(x, {0}, nets), StateError);
    nets.rebuild_target_head(3);
    CHECK_THROWS_AS(id_loss_target(x, {3}, nets), StateError);  // stale label

    // uniform prediction over K=3: ln 3
    auto uniform = id_loss_on_embedding(Tensor::zeros({1, cfg.embed_dim}), {1}, nets, Domain::Target);
    CHECK(uniform.item() == doctest::Approx(std::log(3.0)).epsilon(1e-9));

    auto emb = nets.encode_appearance(x).embedding;
    auto lg = nets.identity_logits(emb, Domain::Target);
    CHECK(id_loss_target(x, {2}, nets).item() ==
          doctest::Approx(oracle::cross_entropy_naive(lg.data(), 1, 3, {2})).epsilon(1e-6));
}

TEST_CASE("distance matrix validation catches broken inputs") {
    DistanceMatrix bad;
    bad.n = 2;
    bad.d = {0.0, 1.0, 1.0 + 1e-6, 0.0};
    CHECK_THROWS_AS(bad.validate(), ArgumentError);
    bad.d = {0.0, -0.5, -0.5, 0.0};
    CHECK_THROWS_AS(bad.validate(), ArgumentError);
    bad.d = {0.1, 0.5, 0.5, 0.0};
    CHECK_THROWS_AS(bad.validate(), ArgumentError);
}
