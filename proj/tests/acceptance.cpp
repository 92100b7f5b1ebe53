// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavier criteria print their measured quantities so a failure is
// diagnosable from the log alone.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ddco/env.hpp"
#include "ddco/modelselect.hpp"
#include "test_helpers.hpp"

using namespace ddco;
using namespace ddco::testing;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail, double seconds) {
    std::printf("[%s] criterion %d: %s (%.0fs)\n", pass ? "PASS" : "FAIL", criterion,
                detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static auto start = clock::now();
    return std::chrono::duration<double>(clock::now() - start).count();
}

struct Timer {
    double t0 = now_seconds();
    double elapsed() const { return now_seconds() - t0; }
};

// ---------------------------------------------------------------- criterion 1
void criterion_1() {
    Timer timer;
    Rng rng(20260808);
    double max_table = 0.0, max_ll = 0.0;
    int done = 0;
    for (int rep = 0; rep < 200; ++rep) {
        bool hybrid = rep % 2 == 1;
        int k = 1 + rng.uniform_int(3);
        if (hybrid && k + 1 > 4) k = 3;
        int T = 2 + rng.uniform_int(4);
        int d_s = 1 + rng.uniform_int(3);
        int d_a = 1 + rng.uniform_int(2);
        RandomPolicyOpts opts;
        opts.head_mode = hybrid ? HeadMode::hybrid : HeadMode::categorical;
        if (rep % 5 == 0) opts.option_arch = Arch::mlp;
        if (rep % 7 == 0) opts.high_arch = Arch::mlp;
        HierarchicalPolicy p = random_policy(rng, d_s, d_a, k, opts);
        Trajectory traj = random_trajectory(rng, T, d_s, d_a);
        PosteriorTables fb = forward_backward(p, traj);
        PosteriorTables bf = brute_force_posteriors(p, traj);
        max_table = std::max(max_table, posterior_max_diff(fb, bf));
        max_ll = std::max(max_ll, std::abs(fb.loglik - bf.loglik));
        ++done;
    }
    bool pass = done == 200 && max_table <= 1e-8 && max_ll <= 1e-8;
    report(1, pass,
           "posterior oracle equivalence over 200 instances: max|fb-bf|=" +
               format_double(max_table) + ", max|dloglik|=" + format_double(max_ll),
           timer.elapsed());
}

// ---------------------------------------------------------------- criterion 2
void criterion_2() {
    Timer timer;
    Rng rng(77001);
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        bool hybrid = rep % 2 == 1;
        RandomPolicyOpts opts;
        opts.head_mode = hybrid ? HeadMode::hybrid : HeadMode::categorical;
        if (rep % 3 == 0) opts.option_arch = Arch::mlp;
        if (rep % 4 == 0) opts.high_arch = Arch::mlp;
        int k = 1 + rng.uniform_int(2);
        int T = 3 + rng.uniform_int(2);
        HierarchicalPolicy p = random_policy(rng, 2, 2, k, opts);
        Trajectory traj = random_trajectory(rng, T, 2, 2);
        ThetaLayout layout = theta_layout(p);
        PosteriorTables post = forward_backward(p, traj);
        Vec analytic(layout.total, 0.0);
        eg_gradient(p, traj, post, layout, analytic);
        Vec fd = finite_difference_grad(
            [&](const Vec& theta) {
                HierarchicalPolicy q = p;
                set_theta(q, theta);
                return trajectory_loglikelihood(q, traj);
            },
            get_theta(p), 1e-5);
        worst = std::max(worst, rel_l2_error(analytic, fd));
    }
    report(2, worst <= 1e-4,
           "gradient identity over 50 instances: max rel err=" + format_double(worst),
           timer.elapsed());
}

// ---------------------------------------------------------------- criterion 3
void criterion_3() {
    Timer timer;
    SldsConfig scfg;
    scfg.axis_ratio = 2.2;
    scfg.omega_spread = 0.3;
    LabeledDataset data = slds_generate(scfg, 8, 6);
    bool bit_exact = true;
    for (Arch arch : {Arch::linear, Arch::mlp}) {
        for (OptimKind kind : {OptimKind::sgd, OptimKind::adam}) {
            TrainConfig cfg;
            cfg.k = 0;
            cfg.head_mode = HeadMode::hybrid;
            cfg.epochs = 10;
            cfg.sigma = 0.5;
            cfg.optim.kind = kind;
            cfg.optim.lr = kind == OptimKind::adam ? 1e-4 : 1e-5;
            cfg.seed = 31;
            cfg.option_arch = arch;
            cfg.high_arch = arch;
            cfg.hidden_width = 8;
            TrainResult ddco = ddco_train(data.data, cfg);
            BcResult bc = bc_train(data.data, arch, cfg);
            const Vec& hp = ddco.policy.high.params;
            const Vec& fp = bc.policy.net.params;
            size_t gaussian_block =
                arch == Arch::linear
                    ? static_cast<size_t>(2) * 2
                    : static_cast<size_t>(8) * 2 + 8 + static_cast<size_t>(2) * 8;
            for (size_t i = 0; i < gaussian_block; ++i)
                if (hp[i] != fp[i]) bit_exact = false;
        }
    }

    // k=1 categorical matches flat BC likelihood per step after convergence
    SldsConfig lin_cfg;
    lin_cfg.k_true = 1;
    lin_cfg.noise = 0.0;
    LabeledDataset lin = slds_generate(lin_cfg, 20, 2);
    TrainConfig cfg;
    cfg.k = 1;
    cfg.epochs = 3000;
    cfg.batch = BatchMode::full;
    cfg.sigma = 0.1;
    cfg.optim.kind = OptimKind::adam;
    cfg.optim.lr = 0.02;
    cfg.seed = 4;
    TrainResult ddco = ddco_train(lin.data, cfg);
    BcResult bc = bc_train(lin.data, Arch::linear, cfg);
    int steps = lin.data.total_steps();
    double ll_ddco = 0.0, ll_bc = 0.0;
    for (const auto& traj : lin.data.trajectories) {
        ll_ddco += trajectory_loglikelihood(ddco.policy, traj);
        for (int t = 0; t < traj.horizon(); ++t)
            ll_bc += gaussian_logdensity(gaussian_mean(bc.policy.net, traj.states[t]),
                                         traj.controls[t], cfg.sigma);
    }
    double per_step_gap = std::abs(ll_ddco - ll_bc) / steps;
    bool pass = bit_exact && per_step_gap <= 1e-6;
    report(3, pass,
           "reductions: hybrid k=0 bit-exact=" + std::string(bit_exact ? "yes" : "no") +
               ", k=1 per-step loglik gap=" + format_double(per_step_gap),
           timer.elapsed());
}

// ---------------------------------------------------------------- criterion 4
void criterion_4() {
    Timer timer;
    Rng rng(909);
    bool pass = true;
    std::string what;

    for (int rep = 0; rep < 100 && pass; ++rep) {
        bool hybrid = rep % 2 == 1;
        RandomPolicyOpts opts;
        opts.head_mode = hybrid ? HeadMode::hybrid : HeadMode::categorical;
        int k = 1 + rng.uniform_int(3);
        int T = 2 + rng.uniform_int(5);
        HierarchicalPolicy p = random_policy(rng, 2, 1, k, opts);
        Trajectory traj = random_trajectory(rng, T, 2, 1);
        PosteriorTables post = forward_backward(p, traj);
        for (int t = 0; t < T && pass; ++t) {
            double mass = hybrid ? post.vc[t] : 0.0;
            double vmass = hybrid ? post.vc[t] : 0.0;
            for (int h = 0; h < k; ++h) {
                mass += post.u[t][h];
                vmass += post.v[t][h];
                if (post.u[t][h] < -1e-12 || post.u[t][h] > 1.0 + 1e-12 ||
                    post.v[t][h] > post.u[t][h] + 1e-12 ||
                    (t < T - 1 && post.w[t][h] > post.u[t][h] + 1e-12))
                    pass = false;
                if (t == 0 && std::abs(post.v[0][h] - post.u[0][h]) > 1e-12) pass = false;
            }
            if (std::abs(mass - 1.0) > 1e-9 || vmass > 1.0 + 1e-9) pass = false;
        }
        if (!pass) what = "posterior invariants";
    }

    for (int rep = 0; rep < 100 && pass; ++rep) {
        int d_s = 1 + rng.uniform_int(3);
        Vec s = random_vec(rng, d_s, -2.0, 2.0);
        Approximator sm =
            make_approximator(Arch::linear, HeadSpec::softmax(1 + rng.uniform_int(4)), d_s);
        randomize_params(sm, rng, 2.0);
        double mass = 0.0;
        for (double lp : softmax_log_probs(sm, s)) mass += std::exp(lp);
        if (std::abs(mass - 1.0) > 1e-12) pass = false;
        Approximator hy =
            make_approximator(Arch::linear, HeadSpec::hybrid(rng.uniform_int(3), 2), d_s);
        randomize_params(hy, rng, 2.0);
        mass = 0.0;
        for (double lp : hybrid_out(hy, s).log_probs) mass += std::exp(lp);
        if (std::abs(mass - 1.0) > 1e-12) pass = false;
        if (!pass) what = "softmax/hybrid mass";
    }

    for (int rep = 0; rep < 100 && pass; ++rep) {
        int n = 30 + rng.uniform_int(100);
        std::vector<int> a(n), b(n), perm_b(n);
        int perm[4] = {2, 0, 3, 1};
        for (int i = 0; i < n; ++i) {
            a[i] = rng.uniform_int(4);
            b[i] = rng.uniform_int(3);
            perm_b[i] = perm[a[i]];
        }
        double ab = nmi(a, b);
        if (std::abs(ab - nmi(b, a)) > 1e-12 || ab < 0.0 || ab > 1.0) pass = false;
        if (std::abs(nmi(a, perm_b) - 1.0) > 1e-9) pass = false;
        if (!pass) what = "nmi properties";
    }

    for (int rep = 0; rep < 100 && pass; ++rep) {
        bool hybrid = rep % 2 == 1;
        RandomPolicyOpts opts;
        opts.head_mode = hybrid ? HeadMode::hybrid : HeadMode::categorical;
        if (rep % 3 == 0) opts.option_arch = Arch::mlp;
        HierarchicalPolicy p =
            random_policy(rng, 2, 2, hybrid ? rng.uniform_int(3) : 1 + rng.uniform_int(3), opts);
        std::string path = "/tmp/ddco_accept_ckpt.json";
        save_checkpoint(p, path);
        LoadedPolicy lp = load_checkpoint(path);
        const auto& q = std::get<HierarchicalPolicy>(lp);
        if (q.high.params != p.high.params) pass = false;
        for (size_t i = 0; i < p.options.size() && pass; ++i)
            if (q.options[i].policy.params != p.options[i].policy.params ||
                q.options[i].termination.params != p.options[i].termination.params)
                pass = false;
        if (pass) {
            Trajectory traj = random_trajectory(rng, 3, 2, 2);
            if (trajectory_loglikelihood(p, traj) != trajectory_loglikelihood(q, traj))
                pass = false;
        }
        if (!pass) what = "checkpoint round-trip";
    }

    for (int rep = 0; rep < 100 && pass; ++rep) {
        PushParams pp;
        uint64_t seed = rng.next_u64();
        PushEnv a(pp, seed), b(pp, seed);
        for (int t = 0; t < 50; ++t) {
            Vec u = random_vec(rng, 3, -0.2, 0.2);
            a.step(u);
            b.step(u);
        }
        if (a.observation() != b.observation()) pass = false;
        if (!pass) what = "environment determinism";
    }

    report(4, pass, pass ? "invariant suite: all property groups hold (>=100 cases each)"
                         : "invariant suite failed at: " + what,
           timer.elapsed());
}

// ---------------------------------------------------------------- criterion 5
void criterion_5() {
    Timer timer;
    SldsConfig scfg;
    scfg.k_true = 2;
    scfg.noise = 0.05;
    scfg.horizon = 20;
    scfg.axis_ratio = 2.2;
    scfg.omega_spread = 0.3;
    LabeledDataset data = slds_generate(scfg, 100, 42);
    TrainConfig cfg;
    cfg.sigma = 0.05;
    cfg.epochs = 40;
    cfg.layerwise_phase1_epochs = 34;
    cfg.optim.lr = 0.005;
    cfg.optim.kind = OptimKind::adam;
    cfg.init = InitScheme::vq;
    cfg.schedule = Schedule::layerwise;
    cfg.seed = 17;
    cfg.jobs = default_jobs();
    CvResult cv = cross_validate_k(data.data, {1, 2, 3, 4, 5}, cfg, 10);
    std::vector<int> est, truth;
    for (size_t i = 0; i < data.data.trajectories.size(); ++i) {
        auto l = annotate_segments(cv.final_policy, data.data.trajectories[i]);
        est.insert(est.end(), l.begin(), l.end());
        truth.insert(truth.end(), data.labels[i].begin(), data.labels[i].end());
    }
    double score = nmi(est, truth);
    bool pass = cv.selected_k == 2 && score >= 0.8;
    report(5, pass,
           "synthetic recovery: selected k=" + std::to_string(cv.selected_k) +
               " (want 2), segmentation NMI=" + format_double(score) + " (want >=0.8)",
           timer.elapsed());
}

// ---------------------------------------------------------------- criterion 6
PushParams acceptance_push_params() {
    // configured variant of the pushing environment for the trend studies:
    // wide topple margin so stochastic-action evaluation measures task
    // competence rather than contact jitter
    PushParams pp;
    pp.demo_noise = 0.02;
    pp.topple_speed = 0.8;
    return pp;
}

double supervisor_reference(const PushParams& pp, int seeds) {
    double ref = 0.0;
    for (int seed = 0; seed < seeds; ++seed) {
        PushEnv env(pp, seed);
        int mode = 0;
        for (int t = 0; t < pp.episode_steps; ++t) {
            auto u = scripted_supervisor(env.state(), pp, &mode);
            env.step(std::span<const double>(u.data(), 3));
        }
        ref += env.state().goals_reached / static_cast<double>(seeds);
    }
    return ref;
}

TrainConfig pushing_train_config() {
    TrainConfig cfg;
    cfg.k = 2;
    cfg.sigma = 0.02;
    cfg.epochs = 40;
    cfg.optim.lr = 0.005;
    cfg.optim.kind = OptimKind::adam;
    cfg.option_arch = Arch::mlp;
    cfg.high_arch = Arch::mlp;
    cfg.term_arch = Arch::mlp;
    cfg.hidden_width = 64;
    cfg.init = InitScheme::random;
    cfg.schedule = Schedule::joint;
    cfg.seed = 3;
    return cfg;
}

void criterion_6() {
    Timer timer;
    PushParams pp = acceptance_push_params();
    double ref = supervisor_reference(pp, 50);
    double bar = 0.9 * ref;

    std::vector<int> budgets{10, 20, 30, 60};
    std::vector<double> ddco_reward, bc_reward;
    std::vector<int> selected_ks;
    bool budget_errors = false;
    for (int budget : budgets) {
        Dataset demos = generate_demos(budget, 7, pp);
        TrainConfig cfg = pushing_train_config();
        cfg.jobs = default_jobs();
        try {
            CvResult cv = cross_validate_k(demos, {2, 3}, cfg, 3);
            selected_ks.push_back(cv.selected_k);
            BcResult bc = bc_train(demos, Arch::mlp, cfg);
            double sd = 0.0, sb = 0.0;
            for (int e = 0; e < 20; ++e) {
                PushEnv env(pp, 0);
                sd += rollout(cv.final_policy, env, pp.episode_steps, 1000 + e).reward / 20.0;
                PushEnv env2(pp, 0);
                sb += rollout(bc.policy, env2, pp.episode_steps, 1000 + e).reward / 20.0;
            }
            ddco_reward.push_back(sd);
            bc_reward.push_back(sb);
            std::printf("    budget %2d: k*=%d ddco=%.2f flat=%.2f (ref %.2f)\n", budget,
                        cv.selected_k, sd, sb, ref);
        } catch (const std::exception& e) {
            budget_errors = true;
            ddco_reward.push_back(-1.0);
            bc_reward.push_back(0.0);
            std::printf("    budget %2d: FAILED (%s)\n", budget, e.what());
        }
        std::fflush(stdout);
    }

    bool dominates = true;
    for (size_t i = 0; i < budgets.size(); ++i)
        if (ddco_reward[i] < bc_reward[i]) dominates = false;
    int ddco_cross = -1, bc_cross = -1;
    for (size_t i = 0; i < budgets.size(); ++i) {
        if (ddco_cross < 0 && ddco_reward[i] >= bar) ddco_cross = budgets[i];
        if (bc_cross < 0 && bc_reward[i] >= bar) bc_cross = budgets[i];
    }
    bool crossing = ddco_cross > 0 && (bc_cross < 0 || ddco_cross < bc_cross);
    bool pass = dominates && crossing && !budget_errors;
    report(6, pass,
           "sample-efficiency trend: ddco>=flat at every budget=" +
               std::string(dominates ? "yes" : "no") + "; 90% bar=" + format_double(bar) +
               " crossed by ddco at budget " + std::to_string(ddco_cross) + ", flat at " +
               std::to_string(bc_cross) + " (-1 = never)",
           timer.elapsed());
}

// ---------------------------------------------------------------- criterion 7
void criterion_7() {
    Timer timer;
    PushParams pp = acceptance_push_params();
    Dataset demos = generate_demos(20, 7, pp);
    std::vector<double> frac(4, 0.0);
    std::vector<uint64_t> seeds{3, 5};
    std::vector<double> results(4 * seeds.size(), 0.0);
    parallel_for(static_cast<int>(4 * seeds.size()), default_jobs(), [&](int job) {
        int k = 1 + job / static_cast<int>(seeds.size());
        uint64_t seed = seeds[job % seeds.size()];
        TrainConfig cfg = pushing_train_config();
        cfg.k = k;
        cfg.head_mode = HeadMode::hybrid;
        cfg.sigma = 0.05;
        cfg.seed = seed;
        TrainResult r = ddco_train(demos, cfg);
        int hc = 0, total = 0;
        for (int e = 0; e < 20; ++e) {
            PushEnv env(pp, 0);
            RolloutResult rr = rollout(r.policy, env, pp.episode_steps, 1000 + e);
            hc += rr.hc_selections;
            total += rr.total_selections;
        }
        results[job] = total > 0 ? static_cast<double>(hc) / total : 0.0;
    });
    for (int k = 1; k <= 4; ++k) {
        for (size_t s = 0; s < seeds.size(); ++s)
            frac[k - 1] += results[(k - 1) * seeds.size() + s] / seeds.size();
        std::printf("    k=%d: hc fraction %.3f\n", k, frac[k - 1]);
    }
    int inversions = 0;
    for (int k = 1; k < 4; ++k)
        if (frac[k] > frac[k - 1] + 1e-12) ++inversions;
    bool pass = inversions <= 1;
    report(7, pass,
           "augmentation behavior: hc fractions " + format_double(frac[0]) + ", " +
               format_double(frac[1]) + ", " + format_double(frac[2]) + ", " +
               format_double(frac[3]) + " (" + std::to_string(inversions) +
               " inversion(s), <=1 allowed)",
           timer.elapsed());
}

// ---------------------------------------------------------------- criterion 8
void criterion_8() {
    Timer timer;
    SldsConfig scfg;
    scfg.k_true = 2;
    scfg.noise = 0.05;
    scfg.horizon = 20;
    scfg.axis_ratio = 2.2;  // bias-only laws: weak identification stresses the init
    LabeledDataset data = slds_generate(scfg, 100, 42);
    TrainConfig cfg;
    cfg.sigma = 0.2;
    cfg.epochs = 40;
    cfg.layerwise_phase1_epochs = 34;
    cfg.optim.lr = 0.002;
    cfg.optim.kind = OptimKind::adam;
    StabilityReport rep = stability_report(data.data, 2, 10, cfg, default_jobs());
    const auto& rj = rep.regimes[0];   // random+joint
    const auto& vl = rep.regimes[3];   // vq+layerwise
    bool pass = vl.loglik_variance <= rj.loglik_variance &&
                vl.mean_pairwise_nmi >= rj.mean_pairwise_nmi;
    report(8, pass,
           "stability: var(vq+lw)=" + format_double(vl.loglik_variance) +
               " vs var(random+joint)=" + format_double(rj.loglik_variance) +
               "; nmi " + format_double(vl.mean_pairwise_nmi) + " vs " +
               format_double(rj.mean_pairwise_nmi),
           timer.elapsed());
}

// ---------------------------------------------------------------- criterion 9
void criterion_9() {
    Timer timer;
    SldsConfig scfg;
    scfg.k_true = 2;
    scfg.noise = 0.2;
    scfg.horizon = 8;
    scfg.axis_ratio = 2.2;
    scfg.omega_spread = 0.3;
    LabeledDataset train = slds_generate(scfg, 10, 42);
    LabeledDataset held = slds_generate(scfg, 100, 4242);
    double mean_with = 0.0, mean_without = 0.0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        for (double rate : {0.0, 0.5}) {
            TrainConfig cfg;
            cfg.k = 2;
            cfg.sigma = 0.2;
            cfg.epochs = 2000;
            cfg.batch = BatchMode::full;
            cfg.optim.lr = 0.01;
            cfg.optim.kind = OptimKind::adam;
            cfg.option_arch = Arch::mlp;
            cfg.hidden_width = 64;
            cfg.dropout_rate = rate;
            cfg.init = InitScheme::vq;
            cfg.seed = seed;
            cfg.jobs = default_jobs();
            TrainResult r = ddco_train(train.data, cfg);
            double h = mean_per_step_loglik(r.policy, held.data);
            (rate > 0 ? mean_with : mean_without) += h / 5.0;
        }
    }
    bool pass = mean_with >= mean_without;
    report(9, pass,
           "dropout effect: heldout with=" + format_double(mean_with) +
               " vs without=" + format_double(mean_without),
           timer.elapsed());
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    if (g_failures > 0) {
        std::printf("%d criterion(s) FAILED\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
