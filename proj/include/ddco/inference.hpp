#pragma once

#include "ddco/core.hpp"

namespace ddco {

/// Scaled forward/backward messages for one trajectory. K is the number of
/// latent branches: k options, plus the physical-control branch for a hybrid
/// head. Row t of alpha is the normalized forward distribution at slot t;
/// scale holds the per-time normalizers, so sum_t log scale[t] reconstructs
/// the trajectory log-likelihood (up to the dynamics constant, which cancels
/// from every posterior).
struct MessageTable {
    std::vector<Vec> alpha;  // (T+1) x K, rows sum to 1
    std::vector<Vec> beta;   // (T+1) x K, scaled so sum_h alpha*beta == 1
    Vec scale;               // T+1, positive
};

struct InferenceOptions {
    // Optional per-step log-constants injected into every latent path
    // (stands in for the unknown dynamics factors in tests; posteriors are
    // invariant to it, the log-likelihood shifts by their sum).
    const Vec* step_logconst = nullptr;
    // Layer-wise phase 1: the high-level policy is fixed uniform over the
    // options and the physical-control branch is excluded.
    bool uniform_high = false;
};

MessageTable compute_messages(const HierarchicalPolicy& policy, const Trajectory& traj,
                              const InferenceOptions& opts = {});

// Exact E-step marginals u, v, w (and vc for the hybrid head).
PosteriorTables forward_backward(const HierarchicalPolicy& policy, const Trajectory& traj,
                                 const InferenceOptions& opts = {});

// Forward pass only; log of the marginal likelihood of the trajectory under
// the policy, up to the additive dynamics constant.
double trajectory_loglikelihood(const HierarchicalPolicy& policy, const Trajectory& traj,
                                const InferenceOptions& opts = {});

// Enumeration oracle: sums over every admissible latent path. Guarded to
// T <= 8 and K <= 4.
PosteriorTables brute_force_posteriors(const HierarchicalPolicy& policy, const Trajectory& traj,
                                       const InferenceOptions& opts = {});

// Most likely branch per time-step: argmax_h u_t(h), ties to the lowest
// index. With the hybrid head the physical-control branch is label k.
std::vector<int> annotate_segments(const HierarchicalPolicy& policy, const Trajectory& traj);

}  // namespace ddco
