#include "xdreid/nets.hpp"

#include <cmath>

namespace xdreid {

void NetConfig::validate() const {
    if (image_h <= 0 || image_w <= 0 || base_width <= 0 || app_channels <= 0 ||
        structure_channels <= 0 || n_res_blocks <= 0 || embed_dim <= 0 || app_pool_w <= 0 ||
        disc_scales <= 0 || dom_hidden1 <= 0 || dom_hidden2 <= 0 || dom_hidden3 <= 0)
        throw ArgumentError("NetConfig: all architecture scalars must be positive");
    if (num_source_classes < 0 || num_target_classes < 0)
        throw ArgumentError("NetConfig: class counts must be non-negative");
    if (image_h % 8 != 0 || image_w % 8 != 0)
        throw ArgumentError("NetConfig: image size must divide by the encoder stride (8)");
    if ((image_w / 8) % app_pool_w != 0)
        throw ArgumentError("NetConfig: image_w/8 must divide by app_pool_w");
    if (image_h % (1 << disc_scales) != 0 || image_w % (1 << disc_scales) != 0)
        throw ArgumentError("NetConfig: image size must divide by the discriminator scales");
}

namespace layers {

Conv make_conv(int ci, int co, int k, int stride, int pad, std::mt19937_64& rng) {
    const double bound = std::sqrt(kInitGain / (static_cast<double>(ci) * k * k));
    Conv c;
    c.w = Tensor::uniform({co, ci, k, k}, -bound, bound, rng, true);
    c.b = Tensor::zeros({co}, true);
    c.stride = stride;
    c.pad = pad;
    return c;
}

Dense make_dense(int d, int m, std::mt19937_64& rng) {
    const double bound = std::sqrt(kInitGain / static_cast<double>(d));
    Dense l;
    l.w = Tensor::uniform({d, m}, -bound, bound, rng, true);
    l.b = Tensor::zeros({m}, true);
    return l;
}

}  // namespace layers

std::vector<std::vector<double>> l2_normalized_rows(const Tensor& m) {
    const int n = m.dim(0), e = m.dim(1);
    std::vector<std::vector<double>> rows(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        rows[r].resize(e);
        const double* p = m.data().data() + static_cast<size_t>(r) * e;
        double norm = 0.0;
        for (int j = 0; j < e; ++j) norm += p[j] * p[j];
        norm = std::sqrt(norm);
        const double inv = norm > 1e-12 ? 1.0 / norm : 0.0;
        for (int j = 0; j < e; ++j) rows[r][j] = p[j] * inv;
    }
    return rows;
}

Networks::Networks(const NetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.num_source_classes <= 0)
        throw ArgumentError("Networks: num_source_classes must be positive");
    std::mt19937_64 rng(cfg_.seed);
    const int w = cfg_.base_width;
    const int ac = cfg_.app_channels;
    const int sc = cfg_.structure_channels;

    app_c1_ = layers::make_conv(3, w, 3, 2, 1, rng);
    app_c2_ = layers::make_conv(w, 2 * w, 3, 2, 1, rng);
    app_c3_ = layers::make_conv(2 * w, ac, 3, 2, 1, rng);
    app_c4_ = layers::make_conv(ac, ac, 3, 1, 1, rng);
    app_head_ = layers::make_dense(cfg_.app_flat(), cfg_.embed_dim, rng);

    auto make_structure = [&](StructureEncoder& s) {
        s.c1 = layers::make_conv(1, w, 3, 1, 1, rng);
        s.c2 = layers::make_conv(w, w, 3, 2, 1, rng);
        s.c3 = layers::make_conv(w, sc, 3, 2, 1, rng);
        s.c4 = layers::make_conv(sc, sc, 3, 1, 1, rng);
        for (int i = 0; i < cfg_.n_res_blocks * 2; ++i)
            s.res.push_back(layers::make_conv(sc, sc, 3, 1, 1, rng));
    };
    make_structure(str_s_);
    make_structure(str_t_);

    const int n_adain = cfg_.n_res_blocks * 2;  // AdaIN layers in the decoder
    auto make_decoder = [&](Decoder& d) {
        d.mlp1 = layers::make_dense(cfg_.app_flat(), cfg_.embed_dim, rng);
        d.mlp2 = layers::make_dense(cfg_.embed_dim, 2 * n_adain * sc, rng);
        for (int i = 0; i < n_adain; ++i) d.res.push_back(layers::make_conv(sc, sc, 3, 1, 1, rng));
        d.up1 = layers::make_conv(sc, sc, 3, 1, 1, rng);
        d.up2 = layers::make_conv(sc, w, 3, 1, 1, rng);
        d.post = layers::make_conv(w, w, 3, 1, 1, rng);
        d.out = layers::make_conv(w, 3, 3, 1, 1, rng);
    };
    make_decoder(dec_s_);
    make_decoder(dec_t_);

    d_img_.resize(static_cast<size_t>(cfg_.disc_scales));
    for (auto& sd : d_img_) {
        sd.c1 = layers::make_conv(3, w, 3, 2, 1, rng);
        sd.c2 = layers::make_conv(w, 2 * w, 3, 2, 1, rng);
        sd.c3 = layers::make_conv(2 * w, 1, 3, 1, 1, rng);
    }

    dom_fc1_ = layers::make_dense(cfg_.app_flat(), cfg_.dom_hidden1, rng);
    dom_fc2_ = layers::make_dense(cfg_.dom_hidden1, cfg_.dom_hidden2, rng);
    dom_fc3_ = layers::make_dense(cfg_.dom_hidden2, cfg_.dom_hidden3, rng);
    dom_fc4_ = layers::make_dense(cfg_.dom_hidden3, 1, rng);

    src_head_ = layers::make_dense(cfg_.embed_dim, cfg_.num_source_classes, rng);
    if (cfg_.num_target_classes > 0)
        tgt_head_ = layers::make_dense(cfg_.embed_dim, cfg_.num_target_classes, rng);
}

namespace {

void check_image(const Tensor& images, const NetConfig& cfg, const char* who) {
    if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != cfg.image_h ||
        images.dim(3) != cfg.image_w)
        throw DimensionError(std::string(who) + ": expected N x 3 x " + std::to_string(cfg.image_h) +
                             " x " + std::to_string(cfg.image_w) + " image batch");
}

}  // namespace

AppearanceOut Networks::encode_appearance(const Tensor& images) const {
    check_image(images, cfg_, "encode_appearance");
    const double sl = cfg_.leaky_slope;
    auto h = leaky_relu(app_c1_(images), sl);
    h = leaky_relu(app_c2_(h), sl);
    h = leaky_relu(app_c3_(h), sl);
    h = leaky_relu(app_c4_(h), sl);
    AppearanceOut out;
    out.code = max_pool2d(h, 1, cfg_.app_pool_w);
    auto flat = reshape(out.code, {images.dim(0), cfg_.app_flat()});
    out.embedding = app_head_(flat);
    out.normalized = l2_normalized_rows(out.embedding);
    return out;
}

Tensor Networks::run_structure(const StructureEncoder& enc, const Tensor& images) const {
    const double sl = cfg_.leaky_slope;
    auto g = grayscale(images);
    auto h = leaky_relu(enc.c1(g), sl);
    h = leaky_relu(enc.c2(h), sl);
    h = leaky_relu(enc.c3(h), sl);
    h = leaky_relu(enc.c4(h), sl);
    for (int i = 0; i < cfg_.n_res_blocks; ++i) {
        auto t = leaky_relu(instance_norm(enc.res[2 * i](h)), sl);
        t = instance_norm(enc.res[2 * i + 1](t));
        h = add(h, t);
    }
    return h;
}

Tensor Networks::encode_structure(const Tensor& images, Domain domain) const {
    check_image(images, cfg_, "encode_structure");
    return run_structure(domain == Domain::Source ? str_s_ : str_t_, images);
}

Tensor Networks::run_decoder(const Decoder& dec, const Tensor& app_code,
                             const Tensor& structure_code) const {
    const int n = structure_code.dim(0);
    const int sc = cfg_.structure_channels;
    if (app_code.ndim() != 4 || app_code.dim(0) != n || app_code.dim(1) != cfg_.app_channels ||
        app_code.dim(2) != cfg_.app_h() || app_code.dim(3) != cfg_.app_w())
        throw DimensionError("decode: appearance code shape does not match the config");
    if (structure_code.dim(1) != sc || structure_code.dim(2) != cfg_.structure_h() ||
        structure_code.dim(3) != cfg_.structure_w())
        throw DimensionError("decode: structure code shape does not match the config");
    const double sl = cfg_.leaky_slope;

    auto style = leaky_relu(dec.mlp1(reshape(app_code, {n, cfg_.app_flat()})), sl);
    auto params = dec.mlp2(style);  // N x (2 * n_adain * sc), scale block then bias block

    auto h = structure_code;
    for (int i = 0; i < cfg_.n_res_blocks; ++i) {
        const int l0 = 2 * i, l1 = 2 * i + 1;
        auto s0 = add_scalar(slice_cols(params, l0 * sc, sc), 1.0);  // centered at identity scale
        auto b0 = slice_cols(params, (cfg_.n_res_blocks * 2 + l0) * sc, sc);
        auto s1 = add_scalar(slice_cols(params, l1 * sc, sc), 1.0);
        auto b1 = slice_cols(params, (cfg_.n_res_blocks * 2 + l1) * sc, sc);
        auto t = leaky_relu(adain(dec.res[l0](h), s0, b0), sl);
        t = adain(dec.res[l1](t), s1, b1);
        h = add(h, t);
    }
    h = leaky_relu(dec.up1(upsample_nearest(h, 2)), sl);
    h = leaky_relu(dec.up2(upsample_nearest(h, 2)), sl);
    h = leaky_relu(dec.post(h), sl);
    return tanh(dec.out(h));
}

Tensor Networks::decode(const Tensor& app_code, const Tensor& structure_code, Domain domain) const {
    return run_decoder(domain == Domain::Source ? dec_s_ : dec_t_, app_code, structure_code);
}

std::vector<Tensor> Networks::discriminate_image(const Tensor& images) const {
    check_image(images, cfg_, "discriminate_image");
    const double sl = cfg_.leaky_slope;
    std::vector<Tensor> maps;
    Tensor x = images;
    for (int s = 0; s < cfg_.disc_scales; ++s) {
        if (s > 0) x = avg_pool2d(x, 2);
        const auto& sd = d_img_[static_cast<size_t>(s)];
        auto h = leaky_relu(sd.c1(x), sl);
        h = leaky_relu(sd.c2(h), sl);
        maps.push_back(sigmoid(sd.c3(h)));
    }
    return maps;
}

Tensor Networks::discriminate_domain(const Tensor& app_code) const {
    if (app_code.ndim() != 4 || app_code.dim(1) != cfg_.app_channels ||
        app_code.dim(2) != cfg_.app_h() || app_code.dim(3) != cfg_.app_w())
        throw DimensionError("discriminate_domain: appearance code shape mismatch");
    const double sl = cfg_.leaky_slope;
    auto h = reshape(app_code, {app_code.dim(0), cfg_.app_flat()});
    h = leaky_relu(dom_fc1_(h), sl);
    h = leaky_relu(dom_fc2_(h), sl);
    h = leaky_relu(dom_fc3_(h), sl);
    return sigmoid(dom_fc4_(h));
}

Tensor Networks::identity_logits(const Tensor& embedding, Domain head) const {
    if (embedding.ndim() != 2 || embedding.dim(1) != cfg_.embed_dim)
        throw DimensionError("classify_identity: expected N x E embedding");
    if (head == Domain::Source) return src_head_(embedding);
    if (!has_target_head())
        throw StateError("classify_identity: no target head, pseudo-labels do not exist yet");
    return tgt_head_(embedding);
}

Tensor Networks::classify_identity(const Tensor& embedding, Domain head) const {
    return softmax(identity_logits(embedding, head));
}

void Networks::rebuild_target_head(int k_new) {
    if (k_new < 1) throw ArgumentError("rebuild_target_head: need at least one class");
    ++target_head_generation_;
    // deterministic fresh init, decoupled from the construction-time stream
    std::mt19937_64 rng(cfg_.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(target_head_generation_)));
    tgt_head_ = layers::make_dense(cfg_.embed_dim, k_new, rng);
    cfg_.num_target_classes = k_new;
}

namespace {

void push(ParamList& out, const std::string& name, const layers::Conv& c) {
    out.emplace_back(name + ".w", c.w);
    out.emplace_back(name + ".b", c.b);
}

void push(ParamList& out, const std::string& name, const layers::Dense& d) {
    out.emplace_back(name + ".w", d.w);
    out.emplace_back(name + ".b", d.b);
}

}  // namespace

ParamList Networks::appearance_params() const {
    ParamList p;
    push(p, "app.c1", app_c1_);
    push(p, "app.c2", app_c2_);
    push(p, "app.c3", app_c3_);
    push(p, "app.c4", app_c4_);
    push(p, "app.head", app_head_);
    push(p, "head.src", src_head_);
    if (has_target_head()) push(p, "head.tgt", tgt_head_);
    return p;
}

ParamList Networks::structure_params(Domain d) const {
    const auto& s = d == Domain::Source ? str_s_ : str_t_;
    const std::string n = d == Domain::Source ? "str_s" : "str_t";
    ParamList p;
    push(p, n + ".c1", s.c1);
    push(p, n + ".c2", s.c2);
    push(p, n + ".c3", s.c3);
    push(p, n + ".c4", s.c4);
    for (size_t i = 0; i < s.res.size(); ++i) push(p, n + ".res" + std::to_string(i), s.res[i]);
    return p;
}

ParamList Networks::decoder_params(Domain d) const {
    const auto& g = d == Domain::Source ? dec_s_ : dec_t_;
    const std::string n = d == Domain::Source ? "dec_s" : "dec_t";
    ParamList p;
    push(p, n + ".mlp1", g.mlp1);
    push(p, n + ".mlp2", g.mlp2);
    for (size_t i = 0; i < g.res.size(); ++i) push(p, n + ".res" + std::to_string(i), g.res[i]);
    push(p, n + ".up1", g.up1);
    push(p, n + ".up2", g.up2);
    push(p, n + ".post", g.post);
    push(p, n + ".out", g.out);
    return p;
}

ParamList Networks::image_disc_params() const {
    ParamList p;
    for (size_t s = 0; s < d_img_.size(); ++s) {
        const std::string n = "d_img.s" + std::to_string(s);
        push(p, n + ".c1", d_img_[s].c1);
        push(p, n + ".c2", d_img_[s].c2);
        push(p, n + ".c3", d_img_[s].c3);
    }
    return p;
}

ParamList Networks::domain_disc_params() const {
    ParamList p;
    push(p, "d_dom.fc1", dom_fc1_);
    push(p, "d_dom.fc2", dom_fc2_);
    push(p, "d_dom.fc3", dom_fc3_);
    push(p, "d_dom.fc4", dom_fc4_);
    return p;
}

ParamList Networks::generator_group() const {
    ParamList p = appearance_params();
    for (auto d : {Domain::Source, Domain::Target}) {
        auto s = structure_params(d);
        p.insert(p.end(), s.begin(), s.end());
        auto g = decoder_params(d);
        p.insert(p.end(), g.begin(), g.end());
    }
    return p;
}

ParamList Networks::discriminator_group() const {
    ParamList p = image_disc_params();
    auto d = domain_disc_params();
    p.insert(p.end(), d.begin(), d.end());
    return p;
}

ParamList Networks::all_params() const {
    ParamList p = generator_group();
    auto d = discriminator_group();
    p.insert(p.end(), d.begin(), d.end());
    return p;
}

}  // namespace xdreid
