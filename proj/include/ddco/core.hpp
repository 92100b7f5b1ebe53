#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ddco/approx.hpp"
#include "ddco/util.hpp"

namespace ddco {

/// One demonstration: states s_0..s_T and controls a_0..a_{T-1}.
struct Trajectory {
    std::vector<Vec> states;
    std::vector<Vec> controls;

    int horizon() const { return static_cast<int>(controls.size()); }
};

struct Dataset {
    std::vector<Trajectory> trajectories;
    int d_s = 0;
    int d_a = 0;

    int total_steps() const;
};

/// One assignment of the latent variables: termination indicators b_0..b_{T-1}
/// and option indices h_0..h_{T-1}. With the hybrid head, index k is the
/// physical-control branch.
struct LatentPath {
    std::vector<uint8_t> b;
    std::vector<int> h;
};

/// E-step marginals for one trajectory. Row t, column h (options only; the
/// hybrid physical-control mass is carried in vc, and u_t(h^c) == vc[t]
/// because the branch always terminates after one step).
struct PosteriorTables {
    std::vector<Vec> u;  // T x k: P(h_t = h | xi)
    std::vector<Vec> v;  // T x k: P(b_t = 1, h_t = h | xi)
    std::vector<Vec> w;  // (T-1) x k: P(h_t = h, b_{t+1} = 0 | xi)
    Vec vc;              // T (hybrid head only): P(b_t = 1, physical control | xi)
    double loglik = 0.0;
};

/// A low-level skill: a Gaussian control policy and a logistic termination.
struct OptionSpec {
    Approximator policy;       // gaussian head, output d_a
    Approximator termination;  // logistic head
};

enum class HeadMode { categorical, hybrid };

struct HierarchicalPolicy {
    HeadMode head_mode = HeadMode::categorical;
    std::vector<OptionSpec> options;
    Approximator high;  // softmax(k) head, or hybrid(k, d_a)
    double sigma = 0.1;
    int d_s = 0;
    int d_a = 0;

    int k() const { return static_cast<int>(options.size()); }
};

struct FlatPolicy {
    Approximator net;  // gaussian head
    double sigma = 0.1;
    int d_s = 0;
    int d_a = 0;
};

using LoadedPolicy = std::variant<HierarchicalPolicy, FlatPolicy>;

// ---- validation ----

// Empty result means the trajectory satisfies every invariant. All violations
// are collected, no early exit.
std::vector<std::string> validate_trajectory(const Trajectory& traj, int d_s, int d_a);

void validate_dataset(const Dataset& ds);
void validate_policy(const HierarchicalPolicy& p);

// ---- dataset files (line-delimited JSON) ----

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

std::vector<std::vector<int>> load_labels(const std::string& path);
void save_labels(const std::vector<std::vector<int>>& labels, const std::string& path);

// ---- checkpoints ----

void save_checkpoint(const HierarchicalPolicy& p, const std::string& path);
void save_checkpoint(const FlatPolicy& p, const std::string& path);
LoadedPolicy load_checkpoint(const std::string& path);

}  // namespace ddco
