#pragma once

#include <array>

#include "ddco/core.hpp"

namespace ddco {

// ---- planar 3-link pushing environment ----

struct PushParams {
    std::array<double, 3> link_lengths{5.0, 5.0, 3.0};
    double base_height = 8.0;     // arm mount above the sliding surface
    double rate_limit = 0.2;      // |joint velocity| per step
    double friction = 0.8;        // attenuation of the transferred push
    double topple_speed = 0.15;   // vertical end-effector speed at contact
    double goal_tol = 0.5;
    double box_half_width = 1.0;
    double box_height = 2.0;
    double workspace_half = 10.0;  // 20 x 20 unit workspace
    double goal_band_min = 4.0;
    double goal_band_max = 8.0;
    double demo_noise = 0.02;  // exploration noise injected while collecting demos
    int episode_steps = 2000;
};

struct PushEnvState {
    std::array<double, 3> joints{0.0, 0.0, 0.0};
    double box_x = 0.0;
    bool box_toppled = false;
    double goal_x = 0.0;
    int steps_elapsed = 0;
    int goals_reached = 0;
};

struct Point2 {
    double x = 0.0, y = 0.0;
};

// Endpoints of the three links; base at the origin.
std::array<Point2, 3> arm_fk(const std::array<double, 3>& joints,
                             const std::array<double, 3>& link_lengths = {5.0, 5.0, 3.0});

// One simulation step. Quasi-static side contact: an end-effector that
// overlaps the box's side band and moves horizontally drags the box by the
// friction-attenuated horizontal displacement; contact above the topple
// speed knocks the box over (absorbing). Reaching the goal resamples it from
// the reachable band on a side drawn from rng.
PushEnvState push_step(const PushEnvState& state, std::array<double, 3> control,
                       const PushParams& p, Rng& rng);

class PushEnv {
public:
    static constexpr int obs_dim = 6;
    static constexpr int control_dim = 3;

    explicit PushEnv(PushParams params = {}, uint64_t seed = 0) : p_(params), rng_(0) {
        reset(seed);
    }

    void reset(uint64_t seed);
    void step(std::span<const double> control);
    const PushEnvState& state() const { return s_; }
    const PushParams& params() const { return p_; }
    // (phi1, phi2, phi3, box_x, toppled indicator, goal_x)
    Vec observation() const;

private:
    PushParams p_;
    PushEnvState s_;
    Rng rng_;
};

// Deterministic two-branch waypoint supervisor (forehand / backhand keyed on
// the push direction): travels to a pre-contact posture behind the box, then
// performs a low-vertical-speed push toward the goal. The optional mode
// register carries the travel/push phase between steps (hysteresis); without
// it the phase is inferred from the geometry alone.
std::array<double, 3> scripted_supervisor(const PushEnvState& state, const PushParams& p,
                                          int* mode = nullptr);

// Scales a joint-velocity command down until the realized vertical
// end-effector motion near the contact band stays under the topple threshold.
std::array<double, 3> limit_vertical_rate(const std::array<double, 3>& joints,
                                          std::array<double, 3> control, const PushParams& p);

// n supervisor episodes, cut into one trajectory per completed goal.
Dataset generate_demos(int n, uint64_t seed, const PushParams& params = {});

// ---- switching-linear-dynamics generator with ground-truth labels ----

struct SldsConfig {
    int k_true = 2;
    int d_s = 2;  // first two coordinates carry the rotation plane
    int d_a = 2;
    double noise = 0.05;   // control noise scale
    int horizon = 20;
    double radius = 2.0;   // anchor circle radius
    double omega = 0.45;   // rotation per step
    double contraction = 0.1;
    double bias = 0.4;        // per-mode control offset
    double omega_spread = 0.0; // per-mode rotation-rate spread (fraction of omega)
    double axis_ratio = 1.0;   // x/y semi-axis ratio of the orbits
    double dt = 1.0;
};

struct LabeledDataset {
    Dataset data;
    std::vector<std::vector<int>> labels;  // per trajectory, length T
};

// Latent mode = nearest anchor (ties to the lowest index); per-mode control
// law is affine; states integrate the controls. Labels are emitted alongside.
LabeledDataset slds_generate(const SldsConfig& cfg, int n, uint64_t seed);

int slds_mode(const SldsConfig& cfg, const Vec& state);

// ---- closed-loop evaluation ----

enum class RolloutMode { stochastic, mean };

struct TraceRow {
    int t = 0;
    Vec state;
    int option = -1;  // -1 for a flat policy; k means the physical-control branch
    Vec control;
    bool terminated = false;  // a high-level selection happened at this step
};

struct RolloutResult {
    int reward = 0;  // goals reached
    std::vector<TraceRow> trace;
    int hc_selections = 0;
    int total_selections = 0;
};

RolloutResult rollout(const HierarchicalPolicy& policy, PushEnv& env, int horizon, uint64_t seed,
                      RolloutMode mode = RolloutMode::stochastic);
RolloutResult rollout(const FlatPolicy& policy, PushEnv& env, int horizon, uint64_t seed,
                      RolloutMode mode = RolloutMode::stochastic);

void write_trace_csv(const std::vector<std::pair<int, RolloutResult>>& episodes, int d_s, int d_a,
                     const std::string& path);

}  // namespace ddco
