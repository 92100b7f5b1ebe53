#include "ddco/inference.hpp"

#include <algorithm>
#include <cmath>

namespace ddco {

namespace {

// Per-trajectory evaluation of every policy component the recursions need.
// Branch indices 0..k-1 are options; branch k (present only for a hybrid head
// outside uniform-high mode) is the physical-control branch, which emits from
// the high-level control mean and terminates deterministically.
struct Evaluated {
    int T = 0;
    int K = 0;
    bool hybrid_branch = false;
    std::vector<Vec> eta_logp;   // T x K: log eta(branch | s_t)
    std::vector<Vec> emis_logp;  // T x K: log pi_branch(a_t | s_t) (+ injected constant)
    std::vector<Vec> psi;        // T x K: termination prob at s_t (row 0 unused)
};

Evaluated evaluate_policy(const HierarchicalPolicy& policy, const Trajectory& traj,
                          const InferenceOptions& opts) {
    auto violations = validate_trajectory(traj, policy.d_s, policy.d_a);
    if (!violations.empty()) throw Error("inference: " + violations.front());
    if (opts.step_logconst && static_cast<int>(opts.step_logconst->size()) != traj.horizon())
        throw Error("inference: step_logconst length must equal T");

    Evaluated ev;
    ev.T = traj.horizon();
    int k = policy.k();
    ev.hybrid_branch = policy.head_mode == HeadMode::hybrid && !opts.uniform_high;
    ev.K = ev.hybrid_branch ? k + 1 : k;
    if (ev.K < 1) throw Error("inference: policy has no latent branches");

    ev.eta_logp.assign(ev.T, Vec(ev.K, 0.0));
    ev.emis_logp.assign(ev.T, Vec(ev.K, 0.0));
    ev.psi.assign(ev.T, Vec(ev.K, 1.0));

    for (int t = 0; t < ev.T; ++t) {
        const Vec& s = traj.states[t];
        const Vec& a = traj.controls[t];
        if (opts.uniform_high) {
            double lp = -std::log(static_cast<double>(k));
            for (int j = 0; j < k; ++j) ev.eta_logp[t][j] = lp;
        } else if (policy.head_mode == HeadMode::categorical) {
            Vec lp = softmax_log_probs(policy.high, s);
            for (int j = 0; j < k; ++j) ev.eta_logp[t][j] = lp[j];
        } else {
            HybridOut h = hybrid_out(policy.high, s);
            for (int j = 0; j < k; ++j) ev.eta_logp[t][j] = h.log_probs[1 + j];
            ev.eta_logp[t][k] = h.log_probs[0];
            ev.emis_logp[t][k] = gaussian_logdensity(h.mean, a, policy.sigma);
        }
        for (int j = 0; j < k; ++j) {
            Vec mu = gaussian_mean(policy.options[j].policy, s);
            ev.emis_logp[t][j] = gaussian_logdensity(mu, a, policy.sigma);
        }
        if (opts.step_logconst)
            for (int j = 0; j < ev.K; ++j) ev.emis_logp[t][j] += (*opts.step_logconst)[t];
        if (t >= 1)
            for (int j = 0; j < k; ++j)
                ev.psi[t][j] = termination_prob(policy.options[j].termination, s);
        for (int j = 0; j < ev.K; ++j)
            if (!std::isfinite(ev.emis_logp[t][j]) || !std::isfinite(ev.eta_logp[t][j]))
                throw Error("inference: non-finite log-density at t=" + std::to_string(t));
    }
    return ev;
}

// Scaled forward-backward engine. Emission densities are max-shifted per
// step before exponentiation; the shift is folded back into the stored scale
// factor, whose underflow is reported rather than flushed to zero.
struct Engine {
    Evaluated ev;
    std::vector<Vec> emis;   // T x K: exp(emis_logp - shift)
    Vec shift;               // T
    std::vector<Vec> alpha;  // (T+1) x K, normalized rows
    std::vector<Vec> beta;   // (T+1) x K
    Vec sc;                  // T+1, scale of the shifted recursion
    Vec scale;               // T+1, sc with the emission shift folded back

    explicit Engine(Evaluated e) : ev(std::move(e)) {}

    void forward() {
        int T = ev.T, K = ev.K;
        emis.assign(T, Vec(K, 0.0));
        shift.assign(T, 0.0);
        for (int t = 0; t < T; ++t) {
            double m = ev.emis_logp[t][0];
            for (int j = 1; j < K; ++j) m = std::max(m, ev.emis_logp[t][j]);
            shift[t] = m;
            for (int j = 0; j < K; ++j) emis[t][j] = std::exp(ev.emis_logp[t][j] - m);
        }
        alpha.assign(T + 1, Vec(K, 0.0));
        sc.assign(T + 1, 0.0);
        scale.assign(T + 1, 0.0);
        double c0 = 0.0;
        for (int j = 0; j < K; ++j) {
            alpha[0][j] = std::exp(ev.eta_logp[0][j]);
            c0 += alpha[0][j];
        }
        sc[0] = scale[0] = c0;
        check_scale(0);
        for (int j = 0; j < K; ++j) alpha[0][j] /= c0;

        Vec raw(K, 0.0);
        for (int t = 0; t < T; ++t) {
            if (t + 1 <= T - 1) {
                // terminate-and-reselect mass plus the continuation term
                double term_mass = 0.0;
                for (int h = 0; h < K; ++h)
                    term_mass += alpha[t][h] * emis[t][h] * psi_at(t + 1, h);
                for (int j = 0; j < K; ++j)
                    raw[j] = term_mass * std::exp(ev.eta_logp[t + 1][j]) +
                             alpha[t][j] * emis[t][j] * (1.0 - psi_at(t + 1, j));
            } else {
                // boundary slot: fold the last emission, no termination event
                for (int j = 0; j < K; ++j) raw[j] = alpha[t][j] * emis[t][j];
            }
            double c = 0.0;
            for (int j = 0; j < K; ++j) c += raw[j];
            sc[t + 1] = c;
            scale[t + 1] = c * std::exp(shift[t]);
            check_scale(t + 1);
            for (int j = 0; j < K; ++j) alpha[t + 1][j] = raw[j] / c;
        }
    }

    void backward() {
        int T = ev.T, K = ev.K;
        beta.assign(T + 1, Vec(K, 1.0));
        for (int t = T - 1; t >= 0; --t) {
            if (t + 1 <= T - 1) {
                double resel = 0.0;
                for (int j = 0; j < K; ++j)
                    resel += std::exp(ev.eta_logp[t + 1][j]) * beta[t + 1][j];
                for (int h = 0; h < K; ++h) {
                    double p = psi_at(t + 1, h);
                    beta[t][h] =
                        emis[t][h] * (p * resel + (1.0 - p) * beta[t + 1][h]) / sc[t + 1];
                }
            } else {
                for (int h = 0; h < K; ++h) beta[t][h] = emis[t][h] / sc[t + 1];
            }
        }
    }

    double psi_at(int t, int h) const {
        // physical-control branch terminates after exactly one step
        if (ev.hybrid_branch && h == ev.K - 1) return 1.0;
        return ev.psi[t][h];
    }

    void check_scale(int t) const {
        if (!(scale[t] > 0.0) || !std::isfinite(scale[t]))
            throw Error("inference: likelihood underflow at t=" + std::to_string(t) +
                        " (scale=" + format_double(scale[t]) + ")");
    }

    double loglik() const {
        // identical to sum_t log(scale[t]), assembled from the shifted pieces
        double ll = 0.0;
        for (double c : sc) ll += std::log(c);
        for (double m : shift) ll += m;
        return ll;
    }
};

PosteriorTables assemble_posteriors(const Engine& eng, int k) {
    const Evaluated& ev = eng.ev;
    int T = ev.T, K = ev.K;
    PosteriorTables post;
    post.loglik = eng.loglik();
    post.u.assign(T, Vec(k, 0.0));
    post.v.assign(T, Vec(k, 0.0));
    if (T >= 1) post.w.assign(T - 1, Vec(k, 0.0));
    if (ev.hybrid_branch) post.vc.assign(T, 0.0);

    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < k; ++j) post.u[t][j] = eng.alpha[t][j] * eng.beta[t][j];
        if (t == 0) {
            for (int j = 0; j < k; ++j) post.v[0][j] = post.u[0][j];
            if (ev.hybrid_branch) post.vc[0] = eng.alpha[0][K - 1] * eng.beta[0][K - 1];
        } else {
            double term_in = 0.0;
            for (int h = 0; h < K; ++h)
                term_in += eng.alpha[t - 1][h] * eng.emis[t - 1][h] * eng.psi_at(t, h);
            for (int j = 0; j < k; ++j)
                post.v[t][j] =
                    term_in * std::exp(ev.eta_logp[t][j]) * eng.beta[t][j] / eng.sc[t];
            if (ev.hybrid_branch)
                post.vc[t] =
                    term_in * std::exp(ev.eta_logp[t][K - 1]) * eng.beta[t][K - 1] / eng.sc[t];
        }
        if (t <= T - 2)
            for (int j = 0; j < k; ++j)
                post.w[t][j] = eng.alpha[t][j] * eng.emis[t][j] * (1.0 - eng.psi_at(t + 1, j)) *
                               eng.beta[t + 1][j] / eng.sc[t + 1];
    }
    return post;
}

}  // namespace

MessageTable compute_messages(const HierarchicalPolicy& policy, const Trajectory& traj,
                              const InferenceOptions& opts) {
    Engine eng(evaluate_policy(policy, traj, opts));
    eng.forward();
    eng.backward();
    return {eng.alpha, eng.beta, eng.scale};
}

PosteriorTables forward_backward(const HierarchicalPolicy& policy, const Trajectory& traj,
                                 const InferenceOptions& opts) {
    Engine eng(evaluate_policy(policy, traj, opts));
    eng.forward();
    eng.backward();
    return assemble_posteriors(eng, policy.k());
}

double trajectory_loglikelihood(const HierarchicalPolicy& policy, const Trajectory& traj,
                                const InferenceOptions& opts) {
    Engine eng(evaluate_policy(policy, traj, opts));
    eng.forward();
    return eng.loglik();
}

PosteriorTables brute_force_posteriors(const HierarchicalPolicy& policy, const Trajectory& traj,
                                       const InferenceOptions& opts) {
    Evaluated ev = evaluate_policy(policy, traj, opts);
    int T = ev.T, K = ev.K, k = policy.k();
    if (T > 8 || K > 4)
        throw Error("brute_force_posteriors: instance too large for enumeration (T=" +
                    std::to_string(T) + ", K=" + std::to_string(K) + ")");

    struct Path {
        double logp;
        LatentPath zeta;
    };
    std::vector<Path> paths;
    LatentPath cur;
    cur.h.assign(T, 0);
    cur.b.assign(T, 0);
    std::vector<int>& h = cur.h;
    std::vector<uint8_t>& b = cur.b;

    // depth-first over (b_t, h_t); b_0 = 1 always
    auto psi_at = [&](int t, int branch) -> double {
        if (ev.hybrid_branch && branch == K - 1) return 1.0;
        return ev.psi[t][branch];
    };
    std::function<void(int, double)> extend = [&](int t, double logp) {
        if (t == T) {
            paths.push_back({logp, cur});
            return;
        }
        if (t == 0) {
            b[0] = 1;
            for (int j = 0; j < K; ++j) {
                h[0] = j;
                extend(1, ev.eta_logp[0][j] + ev.emis_logp[0][j]);
            }
            return;
        }
        int prev = h[t - 1];
        double psi = psi_at(t, prev);
        if (psi > 0.0) {
            b[t] = 1;
            for (int j = 0; j < K; ++j) {
                h[t] = j;
                extend(t + 1,
                       logp + std::log(psi) + ev.eta_logp[t][j] + ev.emis_logp[t][j]);
            }
        }
        if (psi < 1.0) {
            b[t] = 0;
            h[t] = prev;
            extend(t + 1, logp + std::log1p(-psi) + ev.emis_logp[t][prev]);
        }
    };
    extend(0, 0.0);

    double mx = paths.front().logp;
    for (const auto& p : paths) mx = std::max(mx, p.logp);
    double z = 0.0;
    for (const auto& p : paths) z += std::exp(p.logp - mx);

    PosteriorTables post;
    post.loglik = mx + std::log(z);
    post.u.assign(T, Vec(k, 0.0));
    post.v.assign(T, Vec(k, 0.0));
    if (T >= 1) post.w.assign(T - 1, Vec(k, 0.0));
    if (ev.hybrid_branch) post.vc.assign(T, 0.0);
    for (const auto& p : paths) {
        double wt = std::exp(p.logp - mx) / z;
        for (int t = 0; t < T; ++t) {
            int j = p.zeta.h[t];
            bool is_hc = ev.hybrid_branch && j == K - 1;
            if (!is_hc) {
                post.u[t][j] += wt;
                if (p.zeta.b[t]) post.v[t][j] += wt;
                if (t <= T - 2 && !p.zeta.b[t + 1]) post.w[t][j] += wt;
            } else if (p.zeta.b[t]) {
                post.vc[t] += wt;
            }
        }
    }
    return post;
}

std::vector<int> annotate_segments(const HierarchicalPolicy& policy, const Trajectory& traj) {
    PosteriorTables post = forward_backward(policy, traj);
    int T = traj.horizon(), k = policy.k();
    std::vector<int> labels(T, 0);
    for (int t = 0; t < T; ++t) {
        int best = 0;
        double best_mass = k > 0 ? post.u[t][0] : -1.0;
        for (int j = 1; j < k; ++j)
            if (post.u[t][j] > best_mass) {
                best_mass = post.u[t][j];
                best = j;
            }
        if (!post.vc.empty() && post.vc[t] > best_mass) best = k;
        labels[t] = best;
    }
    return labels;
}

}  // namespace ddco
