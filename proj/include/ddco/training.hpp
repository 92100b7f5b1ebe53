#pragma once

#include <optional>

#include "ddco/inference.hpp"

namespace ddco {

enum class OptimKind { sgd, momentum, adam };

struct OptimConfig {
    OptimKind kind = OptimKind::adam;
    double lr = 1e-5;
    double momentum = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerState {
    OptimConfig cfg;
    Vec buf1;  // momentum buffer / adam first moment
    Vec buf2;  // adam second moment
    int64_t step_count = 0;
};

OptimizerState make_optimizer(const OptimConfig& cfg, size_t n_params);

// Ascent update: params move along grad. Non-finite gradient entries are
// reported with their parameter index.
void optimizer_step(OptimizerState& state, Vec& params, const Vec& grad);

// ---- flat parameter view of a hierarchical policy ----
// theta = [high | option_0.policy | option_0.termination | option_1.policy | ...]

struct ThetaLayout {
    struct Segment {
        size_t off, len;
    };
    Segment high;
    std::vector<Segment> opt_policy;
    std::vector<Segment> opt_term;
    size_t total = 0;
};

ThetaLayout theta_layout(const HierarchicalPolicy& p);
Vec get_theta(const HierarchicalPolicy& p);
void set_theta(HierarchicalPolicy& p, const Vec& theta);

// ---- gradients ----

// Behavior-cloning gradient of the Gaussian log-likelihood, accumulated over
// the trajectory; returns the trajectory log-likelihood.
double bc_gradient(const Approximator& net, double sigma, const Trajectory& traj, Vec& grad,
                   Mode mode = Mode::eval, Rng* rng = nullptr);

struct EgFlags {
    bool train_high = true;
    bool train_options = true;  // option policies and terminations together
    bool uniform_high = false;  // posteriors came from the fixed-uniform high level
};

// Expectation-Gradient step for one trajectory: accumulates the posterior-
// weighted log-likelihood gradient into grad (length layout.total). post must
// come from forward_backward on the same policy and trajectory (and the same
// uniform_high setting).
void eg_gradient(const HierarchicalPolicy& policy, const Trajectory& traj,
                 const PosteriorTables& post, const ThetaLayout& layout, Vec& grad,
                 const EgFlags& flags = {}, Mode mode = Mode::eval, Rng* rng = nullptr);

// ---- training ----

enum class InitScheme { random, vq };
enum class Schedule { joint, layerwise };
enum class BatchMode { per_trajectory, full };

struct TrainConfig {
    int k = 2;
    HeadMode head_mode = HeadMode::categorical;
    double sigma = 0.1;
    int epochs = 1;
    BatchMode batch = BatchMode::per_trajectory;
    uint64_t seed = 0;
    double dropout_rate = 0.0;
    InitScheme init = InitScheme::random;
    Schedule schedule = Schedule::joint;
    OptimConfig optim;
    Arch option_arch = Arch::linear;
    Arch high_arch = Arch::linear;
    Arch term_arch = Arch::linear;
    int hidden_width = 64;
    bool layerwise_finetune_options = false;
    int layerwise_phase1_epochs = -1;  // -1: first half of the epochs
    int vq_epochs = 150;               // full-batch epochs for the per-cluster fits
    int jobs = 1;
    const Dataset* heldout = nullptr;  // optional per-epoch held-out score
};

void validate_config(const TrainConfig& cfg, bool allow_zero_epochs = true);

struct EpochStats {
    int epoch = 0;
    double total_loglik = 0.0;
    std::optional<double> heldout_loglik;  // mean per-step over held-out trajectories
    Vec usage;                             // per-option posterior mass over the dataset
    double hc_mass = 0.0;
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    std::vector<std::string> warnings;
};

void write_train_log_csv(const TrainLog& log, int k, const std::string& path);

// k-means with k-means++ seeding (deterministic given the seed).
struct KMeansResult {
    std::vector<int> assign;
    std::vector<Vec> centroids;
    double inertia = 0.0;
    int iterations = 0;
};
KMeansResult kmeans(const std::vector<Vec>& points, int k, uint64_t seed, int max_iter = 100,
                    double tol = 1e-6);

// Vector-quantization initialization: k-means over state observations, one
// behavior-cloned Gaussian policy per cluster, terminations started at 0.5.
struct VqInit {
    std::vector<OptionSpec> options;
    std::vector<int> cluster_sizes;
    std::vector<std::string> warnings;
};
VqInit vq_initialize(const Dataset& ds, int k, const TrainConfig& cfg);

struct TrainResult {
    HierarchicalPolicy policy;
    TrainLog log;
};
TrainResult ddco_train(const Dataset& ds, const TrainConfig& cfg);

struct BcResult {
    FlatPolicy policy;
    TrainLog log;
};
BcResult bc_train(const Dataset& ds, Arch arch, const TrainConfig& cfg);

// Mean per-step log-likelihood over a dataset (the held-out score).
double mean_per_step_loglik(const HierarchicalPolicy& policy, const Dataset& ds);
double mean_per_step_loglik(const FlatPolicy& policy, const Dataset& ds);

}  // namespace ddco
