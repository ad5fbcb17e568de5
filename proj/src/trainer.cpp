#include "xdreid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <type_traits>

#include "xdreid/evalkit.hpp"

namespace fs = std::filesystem;

namespace xdreid {

void TrainConfig::validate() const {
    if (lambda_cyc < 0.0 || lambda_id < 0.0)
        throw ConfigError("loss weights must be non-negative");
    if (stage_a_iters <= 0 || stage_b_iters <= 0 || stage_c_epochs <= 0)
        throw ConfigError("stage budgets must be positive");
    if (lr_app <= 0.0 || lr_gen <= 0.0 || lr_ddom <= 0.0)
        throw ConfigError("learning rates must be positive");
    if (momentum_app < 0.0 || momentum_app >= 1.0) throw ConfigError("momentum must be in [0,1)");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
        throw ConfigError("adam betas must be in [0,1)");
    if (dbscan_eps <= 0.0) throw ConfigError("dbscan_eps must be positive");
    if (dbscan_min_pts < 1) throw ConfigError("dbscan_min_pts must be at least 1");
    if (k1 < 1 || k2 < 1 || k2 > k1) throw ConfigError("require 1 <= k2 <= k1");
    if (lambda_orig < 0.0 || lambda_orig > 1.0) throw ConfigError("lambda_orig must be in [0,1]");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (precision != "f32" && precision != "f64")
        throw ConfigError("precision must be f32 or f64, got " + precision);
    if (log_interval < 1) throw ConfigError("log_interval must be positive");
}

double total_loss(const LossReport& c, const TrainConfig& cfg) {
    if (cfg.lambda_cyc < 0.0 || cfg.lambda_id < 0.0)
        throw ConfigError("total_loss: negative loss weight");
    return cfg.lambda_cyc * c.cyc + c.id_s1 + c.id_t1 + cfg.lambda_id * c.id_s2 +
           cfg.lambda_id * c.id_t2 + c.adv_img + c.adv_dom;
}

void SgdMomentum::step(const ParamList& params) {
    for (const auto& [name, p] : params) {
        auto& vel = velocity_[name];
        auto& data = const_cast<Tensor&>(p).data();
        const auto& grad = p.grad();
        if (vel.size() != data.size()) vel.assign(data.size(), 0.0);
        for (size_t i = 0; i < data.size(); ++i) {
            vel[i] = momentum_ * vel[i] + grad[i];
            data[i] -= lr_ * vel[i];
        }
    }
}

void Adam::step(const ParamList& params) {
    for (const auto& [name, p] : params) {
        auto& st = state_[name];
        auto& data = const_cast<Tensor&>(p).data();
        const auto& grad = p.grad();
        if (st.m.size() != data.size()) {
            st.m.assign(data.size(), 0.0);
            st.v.assign(data.size(), 0.0);
            st.t = 0;
        }
        ++st.t;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(st.t));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(st.t));
        for (size_t i = 0; i < data.size(); ++i) {
            st.m[i] = b1_ * st.m[i] + (1.0 - b1_) * grad[i];
            st.v[i] = b2_ * st.v[i] + (1.0 - b2_) * grad[i] * grad[i];
            const double mhat = st.m[i] / bc1;
            const double vhat = st.v[i] / bc2;
            data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

namespace {

ParamList concat(std::initializer_list<ParamList> lists) {
    ParamList out;
    for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
    return out;
}

void zero_grads(const ParamList& params) {
    for (const auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, Dataset source, Dataset target, std::string out_dir)
    : cfg_(std::move(cfg)),
      source_(std::move(source)),
      target_(std::move(target)),
      out_dir_(std::move(out_dir)),
      opt_app_(cfg_.lr_app, cfg_.momentum_app),
      opt_gen_(cfg_.lr_gen, cfg_.adam_beta1, cfg_.adam_beta2),
      opt_dimg_(cfg_.lr_gen, cfg_.adam_beta1, cfg_.adam_beta2),
      opt_ddom_(cfg_.lr_ddom, cfg_.adam_beta1, cfg_.adam_beta2) {
    cfg_.validate();
    if (source_.samples.empty() || target_.samples.empty())
        throw ArgumentError("Trainer: datasets must be non-empty");

    std::set<int> ids;
    for (const auto& s : source_.samples) ids.insert(s.id);
    int next = 0;
    for (int id : ids) source_class_of_id_[id] = next++;

    cfg_.net.num_source_classes = next;
    cfg_.net.num_target_classes = 0;
    cfg_.net.image_h = source_.image_h;
    cfg_.net.image_w = source_.image_w;
    cfg_.net.seed = cfg_.seed;
    nets_ = std::make_unique<Networks>(cfg_.net);
    quantize_if_f32(nets_->all_params());

    rng_.seed(cfg_.seed ^ 0xC0FFEEULL);
    fs::create_directories(out_dir_);
    log_path_ = (fs::path(out_dir_) / "training_log.csv").string();
}

void Trainer::quantize_if_f32(const ParamList& params) {
    if (cfg_.precision != "f32") return;
    for (const auto& [name, p] : params)
        for (auto& v : const_cast<Tensor&>(p).data()) v = static_cast<double>(static_cast<float>(v));
}

std::vector<int> Trainer::sample_indices(const Dataset& ds, int count) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(ds.samples.size()) - 1);
    std::vector<int> idx(static_cast<size_t>(count));
    for (auto& i : idx) i = pick(rng_);
    return idx;
}

std::vector<int> Trainer::class_labels(const Dataset& ds, const std::vector<int>& idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(source_class_of_id_.at(ds.samples[static_cast<size_t>(i)].id));
    return out;
}

void Trainer::open_log(bool truncate) {
    if (truncate) fs::remove(log_path_);
    if (!fs::exists(log_path_)) {
        std::ofstream f(log_path_);
        f << "stage,epoch,iteration,event,cyc,id_s1,id_t1,id_s2,id_t2,adv_img,adv_dom,total,"
             "d_img,d_dom,clusters,labeled,purity\n";
    }
}

void Trainer::log_row(int stage, long long epoch, const LossReport& r, const std::string& event,
                      int clusters, int labeled, std::optional<double> pur) {
    std::ofstream f(log_path_, std::ios::app);
    f << stage << "," << epoch << "," << r.iteration << "," << event << "," << fmt(r.cyc) << ","
      << fmt(r.id_s1) << "," << fmt(r.id_t1) << "," << fmt(r.id_s2) << "," << fmt(r.id_t2) << ","
      << fmt(r.adv_img) << "," << fmt(r.adv_dom) << "," << fmt(r.total) << "," << fmt(r.d_img_loss)
      << "," << fmt(r.d_dom_loss) << "," << clusters << "," << labeled << ","
      << (pur ? fmt(*pur) : "") << "\n";
}

void Trainer::train_iteration_source_only(int log_stage) {
    const auto idx = sample_indices(source_, cfg_.batch_size);
    const auto x_s = batch_tensor(source_, idx);
    const auto y_s = class_labels(source_, idx);

    LossReport r;
    r.iteration = iter_;
    if (cfg_.use_generation) {
        auto app = nets_->encode_appearance(x_s);
        auto tau = nets_->encode_structure(x_s, Domain::Source);
        auto recon = nets_->decode(app.code, tau, Domain::Source);

        // discriminator step on (real, reconstruction)
        auto d_img = adv_image_loss_D(x_s, recon.detach(), *nets_);
        zero_grads(nets_->all_params());
        backward(d_img);
        opt_dimg_.step(nets_->image_disc_params());
        quantize_if_f32(nets_->image_disc_params());
        ++d_steps_;
        r.d_img_loss = d_img.item();

        // generator step against the updated discriminator
        auto cyc = mean(abs(sub(x_s, recon)));
        auto id_s = id_loss_on_embedding(app.embedding, y_s, *nets_, Domain::Source);
        auto adv_g = adv_image_loss_G(recon, *nets_);
        auto total = add(add(scale(cyc, cfg_.lambda_cyc), id_s), adv_g);
        zero_grads(nets_->all_params());
        backward(total);
        const auto gen_active = concat({nets_->structure_params(Domain::Source),
                                        nets_->decoder_params(Domain::Source)});
        opt_app_.step(nets_->appearance_params());
        opt_gen_.step(gen_active);
        quantize_if_f32(nets_->appearance_params());
        quantize_if_f32(gen_active);
        ++g_steps_;
        r.cyc = cyc.item();
        r.id_s1 = id_s.item();
        r.adv_img = adv_g.item();
    } else {
        // source-supervised baseline: identification loss only
        auto app = nets_->encode_appearance(x_s);
        auto id_s = id_loss_on_embedding(app.embedding, y_s, *nets_, Domain::Source);
        zero_grads(nets_->appearance_params());
        backward(id_s);
        opt_app_.step(nets_->appearance_params());
        quantize_if_f32(nets_->appearance_params());
        ++g_steps_;
        r.id_s1 = id_s.item();
    }
    r.total = total_loss(r, cfg_);
    ++iter_;
    if (iter_ % cfg_.log_interval == 0) log_row(log_stage, 0, r, "", 0, 0, std::nullopt);
}

void Trainer::train_iteration_joint(int log_stage, long long epoch, const PseudoLabeled* labeled) {
    const auto sidx = sample_indices(source_, cfg_.batch_size);
    const auto x_s = batch_tensor(source_, sidx);
    const auto y_s = class_labels(source_, sidx);

    std::vector<int> tidx;
    std::vector<int> y_t;
    const bool with_target_id = labeled != nullptr && !labeled->empty() && nets_->has_target_head();
    if (with_target_id) {
        std::uniform_int_distribution<int> pick(0, static_cast<int>(labeled->sample_indices.size()) - 1);
        for (int b = 0; b < cfg_.batch_size; ++b) {
            const int j = pick(rng_);
            tidx.push_back(labeled->sample_indices[static_cast<size_t>(j)]);
            y_t.push_back(labeled->labels[static_cast<size_t>(j)]);
        }
    } else {
        tidx = sample_indices(target_, cfg_.batch_size);
    }
    const auto x_t = batch_tensor(target_, tidx);

    LossReport r;
    r.iteration = iter_;

    if (cfg_.use_generation) {
        auto gen = cross_generate(x_s, x_t, *nets_);

        // --- discriminator step: Eq. 4 pairs (x_s, x_t^s) and (x_t, x_s^t),
        //     plus the domain discriminator side when alignment is on
        auto d_img = add(adv_image_loss_D(x_s, gen.synth_t.detach(), *nets_),
                         adv_image_loss_D(x_t, gen.synth_s.detach(), *nets_));
        Tensor d_total = d_img;
        Tensor d_dom;
        if (cfg_.use_alignment) {
            d_dom = adv_domain_loss_D(gen.app_s.code.detach(), gen.app_t.code.detach(), *nets_);
            d_total = add(d_total, d_dom);
        }
        zero_grads(nets_->all_params());
        backward(d_total);
        opt_dimg_.step(nets_->image_disc_params());
        quantize_if_f32(nets_->image_disc_params());
        if (cfg_.use_alignment) {
            opt_ddom_.step(nets_->domain_disc_params());
            quantize_if_f32(nets_->domain_disc_params());
        }
        ++d_steps_;
        r.d_img_loss = d_img.item();
        if (d_dom.defined()) r.d_dom_loss = d_dom.item();

        // --- generator step against the updated discriminators
        auto cyc = cycle_loss(gen, x_s, x_t);
        auto id_s1 = id_loss_on_embedding(gen.app_s.embedding, y_s, *nets_, Domain::Source);
        auto id_s2 = id_loss_on_embedding(gen.app_synth_t.embedding, y_s, *nets_, Domain::Source);
        auto total = add(add(scale(cyc, cfg_.lambda_cyc), id_s1), scale(id_s2, cfg_.lambda_id));
        if (with_target_id) {
            auto id_t1 = id_loss_on_embedding(gen.app_t.embedding, y_t, *nets_, Domain::Target);
            auto id_t2 = id_loss_on_embedding(gen.app_synth_s.embedding, y_t, *nets_, Domain::Target);
            total = add(total, add(id_t1, scale(id_t2, cfg_.lambda_id)));
            r.id_t1 = id_t1.item();
            r.id_t2 = id_t2.item();
        }
        auto adv_g = add(adv_image_loss_G(gen.synth_t, *nets_), adv_image_loss_G(gen.synth_s, *nets_));
        total = add(total, adv_g);
        if (cfg_.use_alignment) {
            auto adv_e = adv_domain_loss_E(gen.app_s.code, gen.app_t.code, *nets_);
            total = add(total, adv_e);
            r.adv_dom = adv_e.item();
        }
        zero_grads(nets_->all_params());
        backward(total);
        const auto gen_active = concat(
            {nets_->structure_params(Domain::Source), nets_->structure_params(Domain::Target),
             nets_->decoder_params(Domain::Source), nets_->decoder_params(Domain::Target)});
        opt_app_.step(nets_->appearance_params());
        opt_gen_.step(gen_active);
        quantize_if_f32(nets_->appearance_params());
        quantize_if_f32(gen_active);
        ++g_steps_;
        r.cyc = cyc.item();
        r.id_s1 = id_s1.item();
        r.id_s2 = id_s2.item();
        r.adv_img = adv_g.item();
    } else {
        // generation ablated: supervised source loss, pseudo-label target loss,
        // optional adversarial alignment, nothing else
        auto app_s = nets_->encode_appearance(x_s);
        auto app_t = nets_->encode_appearance(x_t);
        if (cfg_.use_alignment) {
            auto d_dom = adv_domain_loss_D(app_s.code.detach(), app_t.code.detach(), *nets_);
            zero_grads(nets_->all_params());
            backward(d_dom);
            opt_ddom_.step(nets_->domain_disc_params());
            quantize_if_f32(nets_->domain_disc_params());
            ++d_steps_;
            r.d_dom_loss = d_dom.item();
        }
        auto id_s1 = id_loss_on_embedding(app_s.embedding, y_s, *nets_, Domain::Source);
        Tensor total = id_s1;
        if (with_target_id) {
            auto id_t1 = id_loss_on_embedding(app_t.embedding, y_t, *nets_, Domain::Target);
            total = add(total, id_t1);
            r.id_t1 = id_t1.item();
        }
        if (cfg_.use_alignment) {
            auto adv_e = adv_domain_loss_E(app_s.code, app_t.code, *nets_);
            total = add(total, adv_e);
            r.adv_dom = adv_e.item();
        }
        zero_grads(nets_->all_params());
        backward(total);
        opt_app_.step(nets_->appearance_params());
        quantize_if_f32(nets_->appearance_params());
        ++g_steps_;
        r.id_s1 = id_s1.item();
    }
    r.total = total_loss(r, cfg_);
    ++iter_;
    if (iter_ % cfg_.log_interval == 0) log_row(log_stage, epoch, r, "", pseudo_.num_clusters,
                                                static_cast<int>(labeled_.sample_indices.size()),
                                                std::nullopt);
}

void Trainer::run_stage_A() {
    if (stage_ != Stage::Fresh) throw StateError("run_stage_A: warm-up already done");
    open_log(false);
    for (int i = 0; i < cfg_.stage_a_iters; ++i) train_iteration_source_only(1);
    stage_ = Stage::WarmupDone;
}

void Trainer::run_stage_B() {
    if (stage_ != Stage::WarmupDone) throw StateError("run_stage_B: stage A incomplete");
    open_log(false);
    for (int i = 0; i < cfg_.stage_b_iters; ++i) train_iteration_joint(2, 0, nullptr);
    stage_ = Stage::AlignDone;
}

void Trainer::refresh_pseudo_labels(long long epoch) {
    auto emb = extract_embeddings(target_, *nets_);
    auto dist = k_reciprocal_distances(emb, cfg_.k1, cfg_.k2, cfg_.lambda_orig);
    pseudo_ = dbscan(dist, cfg_.dbscan_eps, cfg_.dbscan_min_pts);
    pseudo_.epoch = epoch;
    labeled_ = assign_pseudo_labels(pseudo_, target_, nets_.get());
    quantize_if_f32(nets_->appearance_params());  // target head may be fresh

    std::vector<int> gt;
    gt.reserve(target_.samples.size());
    for (const auto& s : target_.samples) gt.push_back(s.id);
    auto pur = purity(pseudo_, gt);

    LossReport r;
    r.iteration = iter_;
    log_row(3, epoch, r, "refresh", pseudo_.num_clusters,
            static_cast<int>(labeled_.sample_indices.size()), pur);
}

void Trainer::run_stage_C() {
    if (stage_ != Stage::AlignDone) throw StateError("run_stage_C: stage B incomplete");
    open_log(false);
    for (long long epoch = 0; epoch < cfg_.stage_c_epochs; ++epoch) {
        if (epoch % kPseudoRefreshPeriod == 0) refresh_pseudo_labels(epoch);
        const size_t pool =
            labeled_.empty() ? target_.samples.size() : labeled_.sample_indices.size();
        const int iters =
            static_cast<int>((pool + static_cast<size_t>(cfg_.batch_size) - 1) / cfg_.batch_size);
        for (int i = 0; i < iters; ++i) train_iteration_joint(3, epoch, &labeled_);
    }
    stage_ = Stage::SelfTrainDone;
}

void Trainer::run() {
    open_log(stage_ == Stage::Fresh);
    if (stage_ == Stage::Fresh) {
        run_stage_A();
        save_checkpoint((fs::path(out_dir_) / "ckpt_stage_a.bin").string());
    }
    if (stage_ == Stage::WarmupDone) {
        run_stage_B();
        save_checkpoint((fs::path(out_dir_) / "ckpt_stage_b.bin").string());
    }
    if (stage_ == Stage::AlignDone) {
        if (cfg_.use_self_training)
            run_stage_C();
        else
            stage_ = Stage::SelfTrainDone;
    }
    save_checkpoint((fs::path(out_dir_) / "ckpt_final.bin").string());
}

// --- checkpoint serialization ---

namespace {

void put_u32(std::ostream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

void put_i64(std::ostream& f, std::int64_t v) {
    for (int i = 0; i < 8; ++i) f.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

void put_f64(std::ostream& f, double v) {
    static_assert(sizeof(double) == 8);
    f.write(reinterpret_cast<const char*>(&v), 8);
}

void put_str(std::ostream& f, const std::string& s) {
    put_u32(f, static_cast<std::uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_blob(std::ostream& f, const std::vector<double>& data, bool as_f32) {
    put_u32(f, as_f32 ? 4u : 8u);
    put_u32(f, static_cast<std::uint32_t>(data.size()));
    if (as_f32) {
        for (double v : data) {
            const float x = static_cast<float>(v);
            f.write(reinterpret_cast<const char*>(&x), 4);
        }
    } else {
        f.write(reinterpret_cast<const char*>(data.data()),
                static_cast<std::streamsize>(data.size() * 8));
    }
}

struct Reader {
    std::ifstream f;
    std::string path;

    explicit Reader(const std::string& p) : f(p, std::ios::binary), path(p) {
        if (!f) throw FormatError("cannot read checkpoint " + p);
    }
    void raw(void* dst, size_t n) {
        f.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(f.gcount()) != n) throw FormatError("truncated checkpoint " + path);
    }
    std::uint32_t u32() {
        unsigned char b[4];
        raw(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::int64_t i64() {
        std::uint64_t v = 0;
        unsigned char b[8];
        raw(b, 8);
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return static_cast<std::int64_t>(v);
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        const auto n = u32();
        if (n > (1u << 20)) throw FormatError("implausible string length in " + path);
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    std::vector<double> blob() {
        const auto dtype = u32();
        const auto n = u32();
        if (dtype != 4 && dtype != 8) throw FormatError("bad blob dtype in " + path);
        if (n > (1u << 28)) throw FormatError("implausible blob length in " + path);
        std::vector<double> out(n);
        if (dtype == 4) {
            std::vector<float> tmp(n);
            raw(tmp.data(), static_cast<size_t>(n) * 4);
            for (std::uint32_t i = 0; i < n; ++i) out[i] = static_cast<double>(tmp[i]);
        } else {
            raw(out.data(), static_cast<size_t>(n) * 8);
        }
        return out;
    }
};

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write checkpoint " + path);
    const bool f32 = cfg_.precision == "f32";
    f.write(kCheckpointMagic, 8);
    put_u32(f, kCheckpointVersion);
    put_u32(f, f32 ? 4u : 8u);
    put_u32(f, static_cast<std::uint32_t>(stage_));
    put_i64(f, iter_);
    put_u32(f, static_cast<std::uint32_t>(nets_->target_head_generation()));

    // architecture snapshot, checked on load
    const auto& nc = nets_->config();
    for (int v : {nc.image_h, nc.image_w, nc.base_width, nc.app_channels, nc.app_pool_w,
                  nc.structure_channels, nc.n_res_blocks, nc.embed_dim, nc.num_source_classes,
                  nc.num_target_classes, nc.disc_scales, nc.dom_hidden1, nc.dom_hidden2,
                  nc.dom_hidden3})
        put_u32(f, static_cast<std::uint32_t>(v));
    put_f64(f, nc.leaky_slope);
    put_i64(f, static_cast<std::int64_t>(nc.seed));

    // parameters
    const auto params = nets_->all_params();
    put_u32(f, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, p] : params) {
        put_str(f, name);
        put_u32(f, static_cast<std::uint32_t>(p.shape().size()));
        for (int d : p.shape()) put_u32(f, static_cast<std::uint32_t>(d));
        put_blob(f, p.data(), f32);
    }

    // optimizer states (always f64)
    const auto& vel = opt_app_.state();
    put_u32(f, static_cast<std::uint32_t>(vel.size()));
    for (const auto& [name, v] : vel) {
        put_str(f, name);
        put_blob(f, v, false);
    }
    for (const Adam* opt : {&opt_gen_, &opt_dimg_, &opt_ddom_}) {
        const auto& st = opt->state();
        put_u32(f, static_cast<std::uint32_t>(st.size()));
        for (const auto& [name, s] : st) {
            put_str(f, name);
            put_i64(f, s.t);
            put_blob(f, s.m, false);
            put_blob(f, s.v, false);
        }
    }

    // pseudo-label state
    put_u32(f, static_cast<std::uint32_t>(pseudo_.labels.size()));
    for (int lab : pseudo_.labels) put_u32(f, static_cast<std::uint32_t>(lab));
    put_u32(f, static_cast<std::uint32_t>(pseudo_.num_clusters));
    put_i64(f, pseudo_.epoch);

    // random generator state
    std::ostringstream rs;
    rs << rng_;
    put_str(f, rs.str());
    if (!f) throw FormatError("write failed for checkpoint " + path);
}

namespace {

struct CheckpointData {
    std::uint32_t precision = 8;
    Stage stage = Stage::Fresh;
    std::int64_t iter = 0;
    int head_generation = 0;
    NetConfig net;
    std::map<std::string, std::pair<Shape, std::vector<double>>> params;
    std::map<std::string, std::vector<double>> sgd_velocity;
    std::map<std::string, Adam::State> adam_states[3];  // gen, d_img, d_dom
    PseudoLabelState pseudo;
    std::string rng_state;
};

CheckpointData read_checkpoint_data(const std::string& path) {
    Reader r(path);
    CheckpointData c;
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("bad checkpoint magic in " + path);
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ") in " + path);
    c.precision = r.u32();
    if (c.precision != 4 && c.precision != 8) throw FormatError("bad precision marker in " + path);
    c.stage = static_cast<Stage>(r.u32());
    c.iter = r.i64();
    c.head_generation = static_cast<int>(r.u32());

    NetConfig& nc = c.net;
    nc.image_h = static_cast<int>(r.u32());
    nc.image_w = static_cast<int>(r.u32());
    nc.base_width = static_cast<int>(r.u32());
    nc.app_channels = static_cast<int>(r.u32());
    nc.app_pool_w = static_cast<int>(r.u32());
    nc.structure_channels = static_cast<int>(r.u32());
    nc.n_res_blocks = static_cast<int>(r.u32());
    nc.embed_dim = static_cast<int>(r.u32());
    nc.num_source_classes = static_cast<int>(r.u32());
    nc.num_target_classes = static_cast<int>(r.u32());
    nc.disc_scales = static_cast<int>(r.u32());
    nc.dom_hidden1 = static_cast<int>(r.u32());
    nc.dom_hidden2 = static_cast<int>(r.u32());
    nc.dom_hidden3 = static_cast<int>(r.u32());
    nc.leaky_slope = r.f64();
    nc.seed = static_cast<std::uint64_t>(r.i64());

    const auto n_params = r.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const auto name = r.str();
        const auto ndim = r.u32();
        if (ndim > 8) throw FormatError("implausible parameter rank in " + path);
        Shape shape;
        for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(r.u32()));
        c.params[name] = {shape, r.blob()};
    }

    const auto n_vel = r.u32();
    for (std::uint32_t i = 0; i < n_vel; ++i) {
        const auto name = r.str();
        c.sgd_velocity[name] = r.blob();
    }
    for (auto& states : c.adam_states) {
        const auto count = r.u32();
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto name = r.str();
            Adam::State s;
            s.t = r.i64();
            s.m = r.blob();
            s.v = r.blob();
            states[name] = std::move(s);
        }
    }

    const auto n_labels = r.u32();
    c.pseudo.labels.reserve(n_labels);
    for (std::uint32_t i = 0; i < n_labels; ++i)
        c.pseudo.labels.push_back(static_cast<int>(r.u32()));
    c.pseudo.num_clusters = static_cast<int>(r.u32());
    c.pseudo.epoch = r.i64();
    c.rng_state = r.str();
    return c;
}

std::unique_ptr<Networks> networks_from(const CheckpointData& c) {
    auto nets = std::make_unique<Networks>(c.net);  // the ctor builds the target head when K_t > 0
    nets->set_target_head_generation(c.head_generation);
    for (auto& [name, p] : nets->all_params()) {
        auto it = c.params.find(name);
        if (it == c.params.end()) throw FormatError("checkpoint misses parameter " + name);
        if (it->second.first != p.shape())
            throw FormatError("checkpoint parameter " + name + " has mismatched shape");
        p.data() = it->second.second;
    }
    return nets;
}

}  // namespace

std::unique_ptr<Networks> load_networks_from_checkpoint(const std::string& path) {
    return networks_from(read_checkpoint_data(path));
}

void Trainer::load_checkpoint(const std::string& path) {
    auto c = read_checkpoint_data(path);
    if (c.net.image_h != source_.image_h || c.net.image_w != source_.image_w ||
        c.net.image_h != target_.image_h || c.net.image_w != target_.image_w)
        throw ConfigError("checkpoint image size does not match the datasets");
    auto nets = networks_from(c);

    SgdMomentum opt_app(cfg_.lr_app, cfg_.momentum_app);
    opt_app.state() = std::move(c.sgd_velocity);
    Adam opt_gen(cfg_.lr_gen, cfg_.adam_beta1, cfg_.adam_beta2);
    Adam opt_dimg(cfg_.lr_gen, cfg_.adam_beta1, cfg_.adam_beta2);
    Adam opt_ddom(cfg_.lr_ddom, cfg_.adam_beta1, cfg_.adam_beta2);
    opt_gen.state() = std::move(c.adam_states[0]);
    opt_dimg.state() = std::move(c.adam_states[1]);
    opt_ddom.state() = std::move(c.adam_states[2]);

    std::mt19937_64 rng;
    {
        std::istringstream rs(c.rng_state);
        rs >> rng;
        if (!rs) throw FormatError("corrupt random state in " + path);
    }

    // all pieces parsed: commit
    nets_ = std::move(nets);
    cfg_.net = c.net;
    cfg_.precision = c.precision == 4 ? "f32" : "f64";
    opt_app_ = std::move(opt_app);
    opt_gen_ = std::move(opt_gen);
    opt_dimg_ = std::move(opt_dimg);
    opt_ddom_ = std::move(opt_ddom);
    stage_ = c.stage;
    iter_ = c.iter;
    pseudo_ = std::move(c.pseudo);
    rng_ = rng;
    if (!pseudo_.labels.empty() && pseudo_.labels.size() == target_.samples.size())
        labeled_ = assign_pseudo_labels(pseudo_, target_, nullptr);
    else
        labeled_ = {};
}

// --- config entries ---

namespace {

template <typename T>
std::string to_string_cfg(const T& v) {
    if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
    else if constexpr (std::is_same_v<T, std::string>) return v;
    else if constexpr (std::is_floating_point_v<T>) {
        return fmt(v);
    } else {
        return std::to_string(v);
    }
}

struct ConfigKey {
    std::string name;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
    }
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const long d = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<int>(d);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as an integer");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a boolean");
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        auto dbl = [&k](const std::string& n, double TrainConfig::* f) {
            k.push_back({n, [n, f](TrainConfig& c, const std::string& v) { c.*f = parse_double(n, v); },
                         [f](const TrainConfig& c) { return to_string_cfg(c.*f); }});
        };
        auto intk = [&k](const std::string& n, int TrainConfig::* f) {
            k.push_back({n, [n, f](TrainConfig& c, const std::string& v) { c.*f = parse_int(n, v); },
                         [f](const TrainConfig& c) { return to_string_cfg(c.*f); }});
        };
        auto boolk = [&k](const std::string& n, bool TrainConfig::* f) {
            k.push_back({n, [n, f](TrainConfig& c, const std::string& v) { c.*f = parse_bool(n, v); },
                         [f](const TrainConfig& c) { return to_string_cfg(c.*f); }});
        };
        auto net_int = [&k](const std::string& n, int NetConfig::* f) {
            k.push_back({n, [n, f](TrainConfig& c, const std::string& v) { c.net.*f = parse_int(n, v); },
                         [f](const TrainConfig& c) { return to_string_cfg(c.net.*f); }});
        };
        dbl("lambda_cyc", &TrainConfig::lambda_cyc);
        dbl("lambda_id", &TrainConfig::lambda_id);
        intk("stage_a_iters", &TrainConfig::stage_a_iters);
        intk("stage_b_iters", &TrainConfig::stage_b_iters);
        intk("stage_c_epochs", &TrainConfig::stage_c_epochs);
        dbl("lr_app", &TrainConfig::lr_app);
        dbl("momentum_app", &TrainConfig::momentum_app);
        dbl("lr_gen", &TrainConfig::lr_gen);
        dbl("lr_ddom", &TrainConfig::lr_ddom);
        dbl("adam_beta1", &TrainConfig::adam_beta1);
        dbl("adam_beta2", &TrainConfig::adam_beta2);
        dbl("dbscan_eps", &TrainConfig::dbscan_eps);
        intk("dbscan_min_pts", &TrainConfig::dbscan_min_pts);
        intk("k1", &TrainConfig::k1);
        intk("k2", &TrainConfig::k2);
        dbl("lambda_orig", &TrainConfig::lambda_orig);
        intk("batch_size", &TrainConfig::batch_size);
        intk("log_interval", &TrainConfig::log_interval);
        boolk("use_generation", &TrainConfig::use_generation);
        boolk("use_alignment", &TrainConfig::use_alignment);
        boolk("use_self_training", &TrainConfig::use_self_training);
        k.push_back({"seed",
                     [](TrainConfig& c, const std::string& v) {
                         c.seed = static_cast<std::uint64_t>(std::stoull(v));
                     },
                     [](const TrainConfig& c) { return std::to_string(c.seed); }});
        k.push_back({"precision",
                     [](TrainConfig& c, const std::string& v) { c.precision = v; },
                     [](const TrainConfig& c) { return c.precision; }});
        net_int("image_h", &NetConfig::image_h);
        net_int("image_w", &NetConfig::image_w);
        net_int("base_width", &NetConfig::base_width);
        net_int("app_channels", &NetConfig::app_channels);
        net_int("app_pool_w", &NetConfig::app_pool_w);
        net_int("structure_channels", &NetConfig::structure_channels);
        net_int("n_res_blocks", &NetConfig::n_res_blocks);
        net_int("embed_dim", &NetConfig::embed_dim);
        net_int("disc_scales", &NetConfig::disc_scales);
        net_int("dom_hidden1", &NetConfig::dom_hidden1);
        net_int("dom_hidden2", &NetConfig::dom_hidden2);
        net_int("dom_hidden3", &NetConfig::dom_hidden3);
        k.push_back({"leaky_slope",
                     [](TrainConfig& c, const std::string& v) {
                         c.net.leaky_slope = parse_double("leaky_slope", v);
                     },
                     [](const TrainConfig& c) { return to_string_cfg(c.net.leaky_slope); }});
        return k;
    }();
    return keys;
}

}  // namespace

void apply_config_entries(TrainConfig& cfg, const std::map<std::string, std::string>& entries) {
    for (const auto& [key, value] : entries) {
        bool found = false;
        for (const auto& ck : config_keys())
            if (ck.name == key) {
                ck.set(cfg, value);
                found = true;
                break;
            }
        if (!found) throw ConfigError("unknown config key '" + key + "'");
    }
    cfg.validate();
}

std::map<std::string, std::string> config_entries(const TrainConfig& cfg) {
    std::map<std::string, std::string> out;
    for (const auto& ck : config_keys()) out[ck.name] = ck.get(cfg);
    return out;
}

}  // namespace xdreid
