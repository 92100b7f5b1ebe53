#include "ddco/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ddco {

std::array<Point2, 3> arm_fk(const std::array<double, 3>& joints,
                             const std::array<double, 3>& link_lengths) {
    std::array<Point2, 3> pts;
    double angle = 0.0, x = 0.0, y = 0.0;
    for (int i = 0; i < 3; ++i) {
        angle += joints[i];
        x += link_lengths[i] * std::cos(angle);
        y += link_lengths[i] * std::sin(angle);
        pts[i] = {x, y};
    }
    return pts;
}

namespace {

double resample_goal(const PushParams& p, Rng& rng) {
    double side = rng.uniform01() < 0.5 ? -1.0 : 1.0;
    return side * rng.uniform(p.goal_band_min, p.goal_band_max);
}

// end-effector in surface coordinates (the arm is mounted above the surface)
Point2 end_effector(const std::array<double, 3>& joints, const PushParams& p) {
    Point2 ee = arm_fk(joints, p.link_lengths)[2];
    return {ee.x, ee.y + p.base_height};
}

}  // namespace

std::array<double, 3> limit_vertical_rate(const std::array<double, 3>& joints,
                                          std::array<double, 3> control, const PushParams& p) {
    // keep the realized vertical end-effector motion under the topple
    // threshold for any step that starts or ends near the contact band; the
    // exact kinematics catch what a linearisation and the joint clamps miss
    double low_y = p.box_height + 0.1;
    Point2 ee = end_effector(joints, p);
    for (int it = 0; it < 6; ++it) {
        std::array<double, 3> next = joints;
        for (int i = 0; i < 3; ++i) next[i] = std::clamp(next[i] + control[i], -M_PI, M_PI);
        Point2 ee1 = end_effector(next, p);
        double dy_actual = ee1.y - ee.y;
        bool near_band = ee.y < low_y || ee1.y < low_y;
        bool diving = ee1.y < 0.2 && dy_actual < 0.0;  // never burrow under the surface
        if (diving) {
            for (double& c : control) c *= 0.5;
            continue;
        }
        if (!near_band || std::abs(dy_actual) <= 0.10) break;
        for (double& c : control) c *= 0.10 / std::abs(dy_actual);
    }
    return control;
}

PushEnvState push_step(const PushEnvState& state, std::array<double, 3> control,
                       const PushParams& p, Rng& rng) {
    PushEnvState s = state;
    s.steps_elapsed += 1;
    if (s.box_toppled) return s;  // absorbing failure

    for (double& c : control) {
        if (!std::isfinite(c)) throw Error("push_step: non-finite control");
        c = std::clamp(c, -p.rate_limit, p.rate_limit);
    }
    Point2 ee0 = end_effector(s.joints, p);
    for (int i = 0; i < 3; ++i)
        s.joints[i] = std::clamp(s.joints[i] + control[i], -M_PI, M_PI);
    Point2 ee1 = end_effector(s.joints, p);

    double dx = ee1.x - ee0.x;
    double dy = ee1.y - ee0.y;
    double left = s.box_x - p.box_half_width;
    double right = s.box_x + p.box_half_width;
    bool in_band = ee1.y >= 0.0 && ee1.y <= p.box_height;
    double xlo = std::min(ee0.x, ee1.x);
    double xhi = std::max(ee0.x, ee1.x);
    bool overlap = xhi > left && xlo < right;
    // contact only transfers motion toward the box; pulling away separates
    bool toward = (ee0.x <= s.box_x && dx > 0.0) || (ee0.x >= s.box_x && dx < 0.0);
    if (in_band && overlap && toward && dx != 0.0) {
        if (std::abs(dy) > p.topple_speed) {
            s.box_toppled = true;
        } else {
            s.box_x = std::clamp(s.box_x + p.friction * dx, -p.workspace_half, p.workspace_half);
        }
    }
    if (!s.box_toppled && std::abs(s.box_x - s.goal_x) < p.goal_tol) {
        s.goals_reached += 1;
        s.goal_x = resample_goal(p, rng);
    }
    return s;
}

void PushEnv::reset(uint64_t seed) {
    rng_ = Rng(derive_seed(seed, 0xE4F));
    s_ = PushEnvState{};
    s_.joints = {0.9, -1.4, -1.0};
    double side = rng_.uniform01() < 0.5 ? -1.0 : 1.0;
    s_.box_x = side * rng_.uniform(3.0, 5.0);
    s_.goal_x = resample_goal(p_, rng_);
}

void PushEnv::step(std::span<const double> control) {
    if (control.size() != 3) throw Error("push env: control must have dimension 3");
    s_ = push_step(s_, {control[0], control[1], control[2]}, p_, rng_);
}

Vec PushEnv::observation() const {
    return {s_.joints[0], s_.joints[1], s_.joints[2],
            s_.box_x,     s_.box_toppled ? 1.0 : 0.0, s_.goal_x};
}

namespace {

// Closed-form elbow-up posture with the end link pointing straight down.
// Every commanded target keeps the wrist strictly below the mount, where the
// two-link solution varies smoothly with the target.
std::array<double, 3> ik_posture(Point2 ee_target, const PushParams& p) {
    double l1 = p.link_lengths[0], l2 = p.link_lengths[1], l3 = p.link_lengths[2];
    double dx = ee_target.x;
    double dy = std::min(ee_target.y + l3 - p.base_height, -0.4);  // wrist, arm frame
    double r2 = dx * dx + dy * dy;
    double reach = l1 + l2;
    r2 = std::min(r2, (reach - 0.05) * (reach - 0.05));
    double cos_bend = std::clamp((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
    double bend = std::acos(cos_bend);  // interior elbow angle offset, in [0, pi]
    double q1 = std::atan2(dy, dx) + 0.5 * bend;
    double q2 = -bend;
    double q3 = std::remainder(-M_PI / 2.0 - (q1 + q2), 2.0 * M_PI);
    return {std::remainder(q1, 2.0 * M_PI), q2, q3};
}

}  // namespace

std::array<double, 3> scripted_supervisor(const PushEnvState& state, const PushParams& p,
                                          int* mode) {
    if (state.box_toppled) return {0.0, 0.0, 0.0};
    Point2 ee = end_effector(state.joints, p);

    double dir = state.goal_x >= state.box_x ? 1.0 : -1.0;
    double w = p.box_half_width;
    double push_y = 0.5 * p.box_height;
    double travel_y = p.box_height + 0.5;
    double behind = (state.box_x - ee.x) * dir;  // > 0: end-effector behind the box centre

    // travel/push with a hysteresis gap so the phases cannot chatter; the
    // travel field ends by descending onto the push start, so the labels of
    // the two phases agree where the handoff happens
    double stage_x = state.box_x - dir * (w + 1.0);
    int phase = mode ? *mode : (behind >= 0.0 ? 1 : 0);
    if (phase == 1 && behind < -(w + 0.6)) phase = 0;
    if (phase == 0 && behind > w && ee.y < push_y + 0.4) phase = 1;
    if (mode) *mode = phase;

    Point2 target;
    if (phase == 0) {
        bool over_box = std::abs(ee.x - state.box_x) < w + 1.2 && behind < w;
        if (over_box && ee.y < p.box_height + 0.3) {
            target = {ee.x, travel_y};  // rise clear of the box before moving over it
        } else if (std::abs(ee.x - stage_x) > 0.5) {
            target = {stage_x, travel_y};  // glide to the staging point
        } else {
            target = {stage_x, push_y};  // descend onto the push start
        }
    } else {
        // pursue a point just ahead at push height; the environment resamples
        // the goal the moment the box reaches it
        target = {ee.x + dir * 1.2, push_y};
    }

    // short posture hops track the target field closely; long joint-space
    // moves would swing the end-effector along deeply bowed paths
    target.x = std::clamp(target.x, ee.x - 2.0, ee.x + 2.0);
    target.y = std::max(std::clamp(target.y, ee.y - 0.7, ee.y + 0.7), 0.35);
    std::array<double, 3> posture = ik_posture(target, p);
    std::array<double, 3> q{};
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
        q[i] = 0.5 * std::remainder(posture[i] - state.joints[i], 2.0 * M_PI);
        worst = std::max(worst, std::abs(q[i]));
    }
    // uniform scaling keeps the joint-space direction; per-joint clamping
    // would bend the end-effector path
    if (worst > p.rate_limit)
        for (double& qi : q) qi *= p.rate_limit / worst;
    return limit_vertical_rate(state.joints, q, p);
}

Dataset generate_demos(int n, uint64_t seed, const PushParams& params) {
    if (n < 1) throw Error("generate_demos: n must be >= 1");
    Dataset ds;
    ds.d_s = PushEnv::obs_dim;
    ds.d_a = PushEnv::control_dim;
    for (int e = 0; e < n; ++e) {
        PushEnv env(params, derive_seed(seed, static_cast<uint64_t>(e)));
        Rng explore(derive_seed(seed, 0xDA27, static_cast<uint64_t>(e)));
        std::vector<Vec> states;
        std::vector<Vec> controls;
        states.push_back(env.observation());
        int segments_before = static_cast<int>(ds.trajectories.size());
        int seg_start = 0;
        int goals_prev = env.state().goals_reached;
        int mode = 0;
        for (int t = 0; t < params.episode_steps; ++t) {
            std::array<double, 3> u = scripted_supervisor(env.state(), params, &mode);
            // execute a perturbed control but record the supervisor's label,
            // so the dataset covers a corrective tube around the nominal path
            std::array<double, 3> executed = u;
            for (double& c : executed)
                c = std::clamp(c + params.demo_noise * explore.normal(), -params.rate_limit,
                               params.rate_limit);
            executed = limit_vertical_rate(env.state().joints, executed, params);
            env.step(std::span<const double>(executed.data(), 3));
            controls.push_back({u[0], u[1], u[2]});
            states.push_back(env.observation());
            if (env.state().goals_reached > goals_prev) {
                Trajectory traj;
                traj.states.assign(states.begin() + seg_start, states.end());
                traj.controls.assign(controls.begin() + seg_start, controls.end());
                ds.trajectories.push_back(std::move(traj));
                goals_prev = env.state().goals_reached;
                seg_start = t + 1;
            }
        }
        // an episode with no completed goal still contributes one trajectory
        if (static_cast<int>(ds.trajectories.size()) == segments_before) {
            Trajectory traj;
            traj.states = std::move(states);
            traj.controls = std::move(controls);
            ds.trajectories.push_back(std::move(traj));
        }
    }
    validate_dataset(ds);
    return ds;
}

int slds_mode(const SldsConfig& cfg, const Vec& state) {
    if (cfg.k_true == 1) return 0;
    int best = 0;
    double bd = 0.0;
    for (int j = 0; j < cfg.k_true; ++j) {
        double ang = 2.0 * M_PI * j / cfg.k_true;
        double cx = cfg.radius * std::cos(ang);
        double cy = cfg.radius * std::sin(ang);
        double d = (state[0] - cx) * (state[0] - cx) + (state[1] - cy) * (state[1] - cy);
        for (int i = 2; i < cfg.d_s; ++i) d += state[i] * state[i];
        if (j == 0 || d < bd) {
            bd = d;
            best = j;
        }
    }
    return best;
}

LabeledDataset slds_generate(const SldsConfig& cfg, int n, uint64_t seed) {
    if (n < 1) throw Error("slds_generate: n must be >= 1");
    if (cfg.k_true < 1) throw Error("slds_generate: k_true must be >= 1");
    if (cfg.d_s < 2 || cfg.d_a != cfg.d_s)
        throw Error("slds_generate: needs d_s == d_a >= 2");
    if (cfg.noise < 0.0) throw Error("slds_generate: noise must be >= 0");
    if (cfg.horizon < 1) throw Error("slds_generate: horizon must be >= 1");

    LabeledDataset out;
    out.data.d_s = cfg.d_s;
    out.data.d_a = cfg.d_a;
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, 0x51D5, static_cast<uint64_t>(i)));
        Vec s(cfg.d_s, 0.0);
        double r = rng.uniform(0.75 * cfg.radius, 1.25 * cfg.radius);
        double ang = rng.uniform(0.0, 2.0 * M_PI);
        s[0] = r * std::cos(ang);
        s[1] = r * std::sin(ang) / cfg.axis_ratio;
        for (int d = 2; d < cfg.d_s; ++d) s[d] = rng.uniform(-0.5, 0.5);

        Trajectory traj;
        std::vector<int> labels;
        traj.states.push_back(s);
        for (int t = 0; t < cfg.horizon; ++t) {
            int mode = slds_mode(cfg, s);
            labels.push_back(mode);
            Vec a(cfg.d_a, 0.0);
            double omega_m =
                cfg.omega * (1.0 + cfg.omega_spread * std::cos(2.0 * M_PI * mode / cfg.k_true));
            a[0] = -omega_m * cfg.axis_ratio * s[1] - cfg.contraction * s[0];
            a[1] = omega_m / cfg.axis_ratio * s[0] - cfg.contraction * s[1];
            for (int d = 2; d < cfg.d_a; ++d) a[d] = -cfg.contraction * s[d];
            if (cfg.k_true > 1) {
                double bang = 2.0 * M_PI * mode / cfg.k_true;
                a[0] += cfg.bias * std::cos(bang);
                a[1] += cfg.bias * std::sin(bang);
            }
            for (int d = 0; d < cfg.d_a; ++d) a[d] += cfg.noise * rng.normal();
            for (int d = 0; d < cfg.d_s; ++d) s[d] += cfg.dt * a[d];
            traj.controls.push_back(a);
            traj.states.push_back(s);
        }
        out.data.trajectories.push_back(std::move(traj));
        out.labels.push_back(std::move(labels));
    }
    validate_dataset(out.data);
    return out;
}

namespace {

Vec sample_control(const Vec& mean, double sigma, RolloutMode mode, Rng& rng) {
    Vec a = mean;
    if (mode == RolloutMode::stochastic)
        for (double& x : a) x += sigma * rng.normal();
    return a;
}

void check_finite(const Vec& v, int t) {
    for (double x : v)
        if (!std::isfinite(x))
            throw Error("rollout: non-finite policy output at t=" + std::to_string(t));
}

}  // namespace

RolloutResult rollout(const HierarchicalPolicy& policy, PushEnv& env, int horizon, uint64_t seed,
                      RolloutMode mode) {
    validate_policy(policy);
    if (policy.d_s != PushEnv::obs_dim || policy.d_a != PushEnv::control_dim)
        throw Error("rollout: policy dimensions do not match the environment");
    Rng rng(derive_seed(seed, 0x1107));
    env.reset(seed);
    int k = policy.k();
    bool hybrid = policy.head_mode == HeadMode::hybrid;

    RolloutResult res;
    Vec obs = env.observation();

    auto select = [&](const Vec& s) -> int {
        res.total_selections += 1;
        Vec lp;
        if (hybrid) {
            HybridOut h = hybrid_out(policy.high, s);
            lp = std::move(h.log_probs);  // index 0 = physical control
        } else {
            lp = softmax_log_probs(policy.high, s);
        }
        double u = rng.uniform01(), acc = 0.0;
        int pick = static_cast<int>(lp.size()) - 1;
        for (size_t j = 0; j < lp.size(); ++j) {
            acc += std::exp(lp[j]);
            if (u < acc) {
                pick = static_cast<int>(j);
                break;
            }
        }
        if (hybrid) {
            if (pick == 0) {
                res.hc_selections += 1;
                return k;  // physical-control label
            }
            return pick - 1;
        }
        return pick;
    };

    int h = select(obs);
    bool selected_now = true;
    for (int t = 0; t < horizon; ++t) {
        Vec mean = h == k ? hybrid_out(policy.high, obs).mean
                          : gaussian_mean(policy.options[h].policy, obs);
        check_finite(mean, t);
        Vec a = sample_control(mean, policy.sigma, mode, rng);
        res.trace.push_back({t, obs, h, a, selected_now});
        env.step(a);
        obs = env.observation();
        if (t + 1 >= horizon) break;
        if (h == k) {
            h = select(obs);  // physical control always hands back
            selected_now = true;
        } else {
            double psi = termination_prob(policy.options[h].termination, obs);
            if (rng.uniform01() < psi) {
                h = select(obs);
                selected_now = true;
            } else {
                selected_now = false;
            }
        }
    }
    res.reward = env.state().goals_reached;
    return res;
}

RolloutResult rollout(const FlatPolicy& policy, PushEnv& env, int horizon, uint64_t seed,
                      RolloutMode mode) {
    if (policy.d_s != PushEnv::obs_dim || policy.d_a != PushEnv::control_dim)
        throw Error("rollout: policy dimensions do not match the environment");
    Rng rng(derive_seed(seed, 0x1107));
    env.reset(seed);
    RolloutResult res;
    Vec obs = env.observation();
    for (int t = 0; t < horizon; ++t) {
        Vec mean = gaussian_mean(policy.net, obs);
        check_finite(mean, t);
        Vec a = sample_control(mean, policy.sigma, mode, rng);
        res.trace.push_back({t, obs, -1, a, false});
        env.step(a);
        obs = env.observation();
    }
    res.reward = env.state().goals_reached;
    return res;
}

void write_trace_csv(const std::vector<std::pair<int, RolloutResult>>& episodes, int d_s, int d_a,
                     const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write trace file: " + path);
    out << "episode,t";
    for (int i = 0; i < d_s; ++i) out << ",s_" << i;
    out << ",option";
    for (int i = 0; i < d_a; ++i) out << ",a_" << i;
    out << ",terminated\n";
    for (const auto& [ep, r] : episodes) {
        for (const auto& row : r.trace) {
            out << ep << "," << row.t;
            for (double x : row.state) out << "," << format_double(x);
            if (row.option >= 0) out << "," << row.option;
            else out << ",";
            for (double x : row.control) out << "," << format_double(x);
            out << "," << (row.terminated ? 1 : 0) << "\n";
        }
    }
    if (!out) throw Error("I/O failure while writing " + path);
}

}  // namespace ddco
