#include "xdreid/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "xdreid/evalkit.hpp"
#include "xdreid/io.hpp"
#include "xdreid/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xdreid::cli {

namespace {

int verbosity() {
    const char* env = std::getenv("XDREID_LOG");
    if (!env) return 1;
    const std::string v = env;
    if (v == "quiet") return 0;
    if (v == "debug") return 2;
    return 1;
}

void info(const std::string& msg) {
    if (verbosity() >= 1) std::cerr << msg << "\n";
}

Domain parse_domain(const std::string& s) {
    if (s == "source") return Domain::Source;
    if (s == "target") return Domain::Target;
    throw ArgumentError("domain must be 'source' or 'target', got '" + s + "'");
}

TrainConfig load_train_config(const std::string& config_path) {
    TrainConfig cfg;
    if (!config_path.empty()) apply_config_entries(cfg, parse_config_text(config_path));
    cfg.validate();
    return cfg;
}

struct EvalOutcome {
    RetrievalResult retrieval;
    std::optional<double> pur;
    int clusters = 0;
    int n_query = 0, n_gallery = 0;
};

EvalOutcome evaluate_checkpoint(const Networks& nets, const Dataset& target,
                                const TrainConfig& cfg) {
    std::vector<int> q_idx, g_idx;
    for (size_t i = 0; i < target.samples.size(); ++i)
        (target.samples[i].is_query ? q_idx : g_idx).push_back(static_cast<int>(i));
    if (q_idx.empty() || g_idx.empty())
        throw ArgumentError("target dataset has no query/gallery split");

    auto all_emb = extract_embeddings(target, nets);
    auto pick = [&](const std::vector<int>& idx) {
        Matrix m(static_cast<int>(idx.size()), all_emb.cols);
        for (size_t r = 0; r < idx.size(); ++r)
            std::copy(all_emb.row(idx[r]), all_emb.row(idx[r]) + all_emb.cols,
                      m.v.begin() + static_cast<long>(r) * m.cols);
        return m;
    };
    auto meta = [&](const std::vector<int>& idx) {
        std::vector<SampleMeta> out;
        for (int i : idx)
            out.push_back({target.samples[static_cast<size_t>(i)].id,
                           target.samples[static_cast<size_t>(i)].camera});
        return out;
    };

    EvalOutcome out;
    out.n_query = static_cast<int>(q_idx.size());
    out.n_gallery = static_cast<int>(g_idx.size());
    out.retrieval = evaluate(pick(q_idx), meta(q_idx), pick(g_idx), meta(g_idx));

    // cluster the full target set for the purity score
    auto dist = k_reciprocal_distances(all_emb, cfg.k1, cfg.k2, cfg.lambda_orig);
    auto state = dbscan(dist, cfg.dbscan_eps, cfg.dbscan_min_pts);
    out.clusters = state.num_clusters;
    std::vector<int> gt;
    for (const auto& s : target.samples) gt.push_back(s.id);
    out.pur = purity(state, gt);
    return out;
}

json eval_report_json(const EvalOutcome& e) {
    json rep;
    rep["mAP"] = e.retrieval.mAP * 100.0;
    rep["rank1"] = e.retrieval.rank1 * 100.0;
    rep["rank5"] = e.retrieval.rank5 * 100.0;
    rep["rank10"] = e.retrieval.rank10 * 100.0;
    if (e.pur)
        rep["purity"] = *e.pur * 100.0;
    else
        rep["purity"] = nullptr;
    rep["clusters"] = e.clusters;
    rep["counted_queries"] = e.retrieval.counted_queries;
    rep["num_query"] = e.n_query;
    rep["num_gallery"] = e.n_gallery;
    return rep;
}

void print_eval_table(const EvalOutcome& e, std::ostream& os) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-8s %-8s %-8s %-8s %-8s", "Rank@1", "Rank@5", "Rank@10",
                  "mAP", "purity");
    os << buf << "\n";
    std::string pur = e.pur ? [&] {
        char b[32];
        std::snprintf(b, sizeof(b), "%.2f", *e.pur * 100.0);
        return std::string(b);
    }() : std::string("n/a");
    std::snprintf(buf, sizeof(buf), "%-8.2f %-8.2f %-8.2f %-8.2f %-8s", e.retrieval.rank1 * 100.0,
                  e.retrieval.rank5 * 100.0, e.retrieval.rank10 * 100.0, e.retrieval.mAP * 100.0,
                  pur.c_str());
    os << buf << "\n";
}

// Tiny line plot of the total-loss column; best effort only.
void render_training_curve(const std::string& log_path, const std::string& out_path) {
    std::ifstream f(log_path);
    if (!f) return;
    std::string line;
    std::getline(f, line);  // header
    std::vector<double> totals;
    while (std::getline(f, line)) {
        std::istringstream ls(line);
        std::string field;
        for (int c = 0; c < 12 && std::getline(ls, field, ','); ++c)
            if (c == 11 && !field.empty()) totals.push_back(std::stod(field));
    }
    if (totals.size() < 2) return;
    const int w = 400, h = 160;
    std::vector<unsigned char> img(static_cast<size_t>(w) * h * 3, 250);
    double lo = totals[0], hi = totals[0];
    for (double v : totals) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    auto put = [&](int x, int y) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        const size_t p = (static_cast<size_t>(y) * w + x) * 3;
        img[p] = 40;
        img[p + 1] = 70;
        img[p + 2] = 180;
    };
    for (size_t i = 0; i + 1 < totals.size(); ++i) {
        const int x0 = static_cast<int>(i * (w - 1) / (totals.size() - 1));
        const int x1 = static_cast<int>((i + 1) * (w - 1) / (totals.size() - 1));
        const int y0 = static_cast<int>((h - 1) * (1.0 - (totals[i] - lo) / (hi - lo)));
        const int y1 = static_cast<int>((h - 1) * (1.0 - (totals[i + 1] - lo) / (hi - lo)));
        const int steps = std::max(1, std::max(std::abs(x1 - x0), std::abs(y1 - y0)));
        for (int s = 0; s <= steps; ++s)
            put(x0 + (x1 - x0) * s / steps, y0 + (y1 - y0) * s / steps);
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) return;
    out << "P6\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
}

void write_manifest(const std::string& out_dir, const TrainConfig& cfg,
                    const std::string& source_path, const std::string& target_path,
                    const std::vector<std::string>& checkpoints) {
    json m;
    m["tool_version"] = kToolVersion;
    m["command"] = "train";
    m["seed"] = cfg.seed;
    json c;
    for (const auto& [k, v] : config_entries(cfg)) c[k] = v;
    m["config"] = c;
    m["artifacts"]["source_dataset"] = source_path;
    m["artifacts"]["target_dataset"] = target_path;
    m["artifacts"]["training_log"] = (fs::path(out_dir) / "training_log.csv").string();
    m["artifacts"]["training_curve"] = (fs::path(out_dir) / "training_curve.ppm").string();
    m["artifacts"]["checkpoints"] = checkpoints;
    std::ofstream f(fs::path(out_dir) / "run_manifest.json");
    f << m.dump(2) << "\n";
}

int run_train(const std::string& config_path, const std::string& source_path,
              const std::string& target_path, const std::string& out_dir,
              const std::string& resume) {
    TrainConfig cfg = load_train_config(config_path);
    info("loading datasets");
    auto source = load_dataset(source_path);
    auto target = load_dataset(target_path);
    fs::create_directories(out_dir);
    if (resume.empty()) fs::remove(fs::path(out_dir) / "training_log.csv");

    Trainer trainer(cfg, std::move(source), std::move(target), out_dir);
    if (!resume.empty()) {
        info("resuming from " + resume);
        trainer.load_checkpoint(resume);
    }
    info("training stages " + std::to_string(static_cast<int>(trainer.stage()) + 1) + "..3");
    trainer.run();

    std::vector<std::string> ckpts;
    for (const char* name : {"ckpt_stage_a.bin", "ckpt_stage_b.bin", "ckpt_final.bin"}) {
        const auto p = fs::path(out_dir) / name;
        if (fs::exists(p)) ckpts.push_back(p.string());
    }
    render_training_curve(trainer.log_path(), (fs::path(out_dir) / "training_curve.ppm").string());
    write_manifest(out_dir, trainer.config(), source_path, target_path, ckpts);
    std::cout << "training complete: " << trainer.iteration() << " iterations, artifacts in "
              << out_dir << "\n";
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& target_path, const std::string& report,
             const TrainConfig& cfg) {
    auto nets = load_networks_from_checkpoint(ckpt);
    auto target = load_dataset(target_path);
    auto outcome = evaluate_checkpoint(*nets, target, cfg);
    print_eval_table(outcome, std::cout);
    if (!report.empty()) {
        std::ofstream f(report);
        if (!f) throw FormatError("cannot write report " + report);
        f << eval_report_json(outcome).dump(2) << "\n";
    }
    return 0;
}

int run_sweep(const std::string& param, const std::string& values_csv,
              const std::string& config_path, const std::string& source_path,
              const std::string& target_path, const std::string& out_dir) {
    static const std::vector<std::string> kSweepable = {"eps", "min_pts", "lambda_cyc",
                                                        "lambda_id"};
    if (std::find(kSweepable.begin(), kSweepable.end(), param) == kSweepable.end())
        throw ArgumentError("sweep parameter must be one of eps|min_pts|lambda_cyc|lambda_id");
    std::vector<std::string> values;
    std::istringstream vs(values_csv);
    std::string tok;
    while (std::getline(vs, tok, ','))
        if (!tok.empty()) values.push_back(tok);
    if (values.empty()) throw ArgumentError("sweep needs a non-empty --values list");

    auto source = load_dataset(source_path);
    auto target = load_dataset(target_path);
    fs::create_directories(out_dir);

    std::ofstream table(fs::path(out_dir) / "sweep.csv");
    table << param << ",mAP\n";
    std::cout << param << "    mAP\n";
    for (const auto& v : values) {
        TrainConfig cfg = load_train_config(config_path);
        if (param == "eps")
            cfg.dbscan_eps = std::stod(v);
        else if (param == "min_pts")
            cfg.dbscan_min_pts = std::stoi(v);
        else if (param == "lambda_cyc")
            cfg.lambda_cyc = std::stod(v);
        else
            cfg.lambda_id = std::stod(v);
        cfg.validate();

        const std::string run_dir = (fs::path(out_dir) / ("run_" + param + "_" + v)).string();
        fs::create_directories(run_dir);
        fs::remove(fs::path(run_dir) / "training_log.csv");
        info("sweep " + param + " = " + v);
        Trainer trainer(cfg, source, target, run_dir);
        trainer.run();
        auto outcome = evaluate_checkpoint(trainer.networks(), target, cfg);
        const double map_pct = outcome.retrieval.mAP * 100.0;
        char mapbuf[32];
        std::snprintf(mapbuf, sizeof(mapbuf), "%.17g", map_pct);
        table << v << "," << mapbuf << "\n";
        table.flush();
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%-6s %.2f", v.c_str(), map_pct);
        std::cout << buf << "\n";
    }
    std::cout << "sweep table: " << (fs::path(out_dir) / "sweep.csv").string() << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"cross-domain person re-id: disentangling + adaptation at desk scale"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset");
    std::string gd_domain = "source", gd_out;
    int gd_ids = 20, gd_per_id = 40, gd_cams = 4;
    std::uint64_t gd_seed = 1;
    gen->add_option("--domain", gd_domain)->check(CLI::IsMember({"source", "target"}));
    gen->add_option("--ids", gd_ids)->check(CLI::PositiveNumber);
    gen->add_option("--per-id", gd_per_id)->check(CLI::PositiveNumber);
    gen->add_option("--cams", gd_cams)->check(CLI::PositiveNumber);
    gen->add_option("--seed", gd_seed);
    gen->add_option("--out", gd_out)->required();

    // train
    auto* train = app.add_subcommand("train", "run the three-stage training schedule");
    std::string tr_config, tr_source, tr_target, tr_out, tr_resume;
    train->add_option("--config", tr_config)->check(CLI::ExistingFile);
    train->add_option("--source", tr_source)->required();
    train->add_option("--target", tr_target)->required();
    train->add_option("--out", tr_out)->required();
    train->add_option("--resume", tr_resume)->check(CLI::ExistingFile);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a target dataset");
    std::string ev_ckpt, ev_target, ev_report, ev_config;
    ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
    ev->add_option("--target", ev_target)->required();
    ev->add_option("--report", ev_report);
    ev->add_option("--config", ev_config)->check(CLI::ExistingFile);

    // rerank
    auto* rr = app.add_subcommand("rerank", "k-reciprocal re-ranking of an embedding file");
    std::string rr_emb, rr_out;
    int rr_k1 = 10, rr_k2 = 3;
    double rr_lambda = 0.3;
    rr->add_option("--embeddings", rr_emb)->required()->check(CLI::ExistingFile);
    rr->add_option("--k1", rr_k1)->check(CLI::PositiveNumber);
    rr->add_option("--k2", rr_k2)->check(CLI::PositiveNumber);
    rr->add_option("--lambda", rr_lambda)->check(CLI::Range(0.0, 1.0));
    rr->add_option("--out", rr_out)->required();

    // cluster
    auto* cl = app.add_subcommand("cluster", "DBSCAN over a distance-matrix file");
    std::string cl_dist, cl_out;
    double cl_eps = 0.45;
    int cl_min_pts = 7;
    cl->add_option("--distances", cl_dist)->required()->check(CLI::ExistingFile);
    cl->add_option("--eps", cl_eps)->check(CLI::PositiveNumber);
    cl->add_option("--min-pts", cl_min_pts)->check(CLI::PositiveNumber);
    cl->add_option("--out", cl_out)->required();

    // sweep
    auto* sw = app.add_subcommand("sweep", "train and evaluate across one hyper-parameter grid");
    std::string sw_param, sw_values, sw_config, sw_source, sw_target, sw_out;
    sw->add_option("--param", sw_param)->required();
    sw->add_option("--values", sw_values)->required();
    sw->add_option("--config", sw_config)->check(CLI::ExistingFile);
    sw->add_option("--source", sw_source)->required();
    sw->add_option("--target", sw_target)->required();
    sw->add_option("--out", sw_out)->required();

    std::vector<const char*> argv;
    argv.push_back("xdreid");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) {
            auto ds = sample_dataset(parse_domain(gd_domain), gd_ids, gd_per_id, gd_cams, gd_seed);
            save_dataset(ds, gd_out);
            std::cout << "wrote " << ds.samples.size() << " samples to " << gd_out << "\n";
            return 0;
        }
        if (train->parsed()) return run_train(tr_config, tr_source, tr_target, tr_out, tr_resume);
        if (ev->parsed()) return run_eval(ev_ckpt, ev_target, ev_report, load_train_config(ev_config));
        if (rr->parsed()) {
            auto emb = read_matrix(rr_emb);
            auto dist = k_reciprocal_distances(emb, rr_k1, rr_k2, rr_lambda);
            Matrix m(dist.n, dist.n);
            m.v = dist.d;
            write_matrix(rr_out, m);
            std::cout << "re-ranked " << dist.n << " x " << dist.n << " distances to " << rr_out
                      << "\n";
            return 0;
        }
        if (cl->parsed()) {
            auto m = read_matrix(cl_dist);
            if (m.rows != m.cols) throw FormatError("distance matrix must be square");
            DistanceMatrix dist;
            dist.n = m.rows;
            dist.d = m.v;
            auto state = dbscan(dist, cl_eps, cl_min_pts);
            std::ofstream f(cl_out);
            if (!f) throw FormatError("cannot write " + cl_out);
            for (size_t i = 0; i < state.labels.size(); ++i)
                f << i << "\t" << state.labels[i] << "\n";
            std::cout << state.num_clusters << " clusters over " << dist.n << " samples -> "
                      << cl_out << "\n";
            return 0;
        }
        if (sw->parsed())
            return run_sweep(sw_param, sw_values, sw_config, sw_source, sw_target, sw_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace xdreid::cli
