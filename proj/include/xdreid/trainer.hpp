#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "xdreid/adapt.hpp"
#include "xdreid/gen_losses.hpp"
#include "xdreid/nets.hpp"
#include "xdreid/synthdata.hpp"

namespace xdreid {

// Full-scale reference values (the desk defaults below are scaled for the
// tiny nets and short budgets this artifact trains).
inline constexpr double kRefLrAppearance = 0.0006;  // momentum-SGD, momentum 0.9
inline constexpr double kRefLrGenerator = 1e-6;     // Adam (0, 0.999)
inline constexpr double kRefLrDomainDisc = 1e-5;    // Adam
inline constexpr int kRefWarmupIters = 100000;
inline constexpr int kRefAlignIters = 50000;
// Pseudo-labels refresh every two epochs during self-training.
inline constexpr int kPseudoRefreshPeriod = 2;

struct TrainConfig {
    // objective weights
    double lambda_cyc = 2.0;
    double lambda_id = 0.5;
    // stage budgets, desk scale
    int stage_a_iters = 2000;
    int stage_b_iters = 1000;
    int stage_c_epochs = 10;
    // optimizers (desk defaults; full-scale references in the constants above)
    double lr_app = 0.02;
    double momentum_app = 0.9;
    double lr_gen = 2e-4;
    double lr_ddom = 1e-4;
    double adam_beta1 = 0.0;
    double adam_beta2 = 0.999;
    // self-training
    double dbscan_eps = 0.45;
    int dbscan_min_pts = 7;
    int k1 = 10;
    int k2 = 3;
    double lambda_orig = 0.3;
    // run shape
    int batch_size = 4;
    std::uint64_t seed = 1;
    std::string precision = "f64";  // f32 | f64
    int log_interval = 50;
    // ablation switches: generation (disentangling), adversarial alignment,
    // clustering self-training
    bool use_generation = true;
    bool use_alignment = true;
    bool use_self_training = true;
    // architecture (class counts are filled from the datasets)
    NetConfig net;

    void validate() const;
};

/// Weighted sum of the objective components; absent terms enter as zero.
double total_loss(const LossReport& components, const TrainConfig& cfg);

/// Momentum SGD with per-parameter state keyed by name; state resets when a
/// parameter is rebuilt with a new shape.
class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
    void step(const ParamList& params);

    std::map<std::string, std::vector<double>>& state() { return velocity_; }
    const std::map<std::string, std::vector<double>>& state() const { return velocity_; }

private:
    double lr_, momentum_;
    std::map<std::string, std::vector<double>> velocity_;
};

class Adam {
public:
    struct State {
        long long t = 0;
        std::vector<double> m, v;
    };
    Adam(double lr, double beta1, double beta2, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
    void step(const ParamList& params);

    std::map<std::string, State>& state() { return state_; }
    const std::map<std::string, State>& state() const { return state_; }

private:
    double lr_, b1_, b2_, eps_;
    std::map<std::string, State> state_;
};

enum class Stage : int { Fresh = 0, WarmupDone = 1, AlignDone = 2, SelfTrainDone = 3 };

/// Orchestrates the three-stage schedule: source warm-up, adversarial
/// alignment, clustering self-training; owns optimizers, the training log
/// and checkpoints.
class Trainer {
public:
    Trainer(TrainConfig cfg, Dataset source, Dataset target, std::string out_dir);

    /// Runs the remaining stages from the current state and writes per-stage
    /// checkpoints plus the final one.
    void run();
    void run_stage_A();
    void run_stage_B();
    void run_stage_C();

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    const Networks& networks() const { return *nets_; }
    Networks& networks() { return *nets_; }
    Stage stage() const { return stage_; }
    long long iteration() const { return iter_; }
    const TrainConfig& config() const { return cfg_; }
    const PseudoLabelState& pseudo_state() const { return pseudo_; }
    const std::string& log_path() const { return log_path_; }
    long long d_steps() const { return d_steps_; }
    long long g_steps() const { return g_steps_; }

private:
    struct StepLosses {
        LossReport report;
        int d_steps = 0, g_steps = 0;
    };

    std::vector<int> sample_indices(const Dataset& ds, int count);
    std::vector<int> class_labels(const Dataset& ds, const std::vector<int>& idx) const;
    void train_iteration_source_only(int log_stage);
    void train_iteration_joint(int log_stage, long long epoch, const PseudoLabeled* labeled);
    void refresh_pseudo_labels(long long epoch);
    void quantize_if_f32(const ParamList& params);
    void log_row(int stage, long long epoch, const LossReport& r, const std::string& event,
                 int clusters, int labeled, std::optional<double> pur);
    void open_log(bool truncate);

    TrainConfig cfg_;
    Dataset source_, target_;
    std::string out_dir_, log_path_;
    std::unique_ptr<Networks> nets_;
    SgdMomentum opt_app_;
    Adam opt_gen_, opt_dimg_, opt_ddom_;
    std::mt19937_64 rng_;
    Stage stage_ = Stage::Fresh;
    long long iter_ = 0;
    long long d_steps_ = 0, g_steps_ = 0;
    PseudoLabelState pseudo_;
    PseudoLabeled labeled_;
    std::map<int, int> source_class_of_id_;
};

// Checkpoint container: magic, version, then the complete training state.
inline constexpr char kCheckpointMagic[9] = "XREIDCK1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Rebuilds just the networks from a checkpoint (for evaluation and the
/// standalone tools; training resume goes through Trainer::load_checkpoint).
std::unique_ptr<Networks> load_networks_from_checkpoint(const std::string& path);

/// TrainConfig <-> flat key/value entries (the config-file vocabulary).
/// Unknown keys raise ConfigError naming the key.
void apply_config_entries(TrainConfig& cfg, const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> config_entries(const TrainConfig& cfg);

}  // namespace xdreid
