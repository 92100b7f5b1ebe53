#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "ddco/inference.hpp"
#include "test_helpers.hpp"

using namespace ddco;
using namespace ddco::testing;

namespace {

void check_posterior_invariants(const PosteriorTables& post, int T, int k, bool hybrid) {
    REQUIRE(static_cast<int>(post.u.size()) == T);
    REQUIRE(static_cast<int>(post.v.size()) == T);
    REQUIRE(static_cast<int>(post.w.size()) == T - 1);
    if (hybrid) REQUIRE(static_cast<int>(post.vc.size()) == T);
    for (int t = 0; t < T; ++t) {
        double mass = hybrid ? post.vc[t] : 0.0;
        double vmass = hybrid ? post.vc[t] : 0.0;
        for (int h = 0; h < k; ++h) {
            CHECK(post.u[t][h] >= -1e-12);
            CHECK(post.u[t][h] <= 1.0 + 1e-12);
            CHECK(post.v[t][h] <= post.u[t][h] + 1e-12);
            if (t < T - 1) CHECK(post.w[t][h] <= post.u[t][h] + 1e-12);
            mass += post.u[t][h];
            vmass += post.v[t][h];
        }
        CHECK(std::abs(mass - 1.0) < 1e-9);
        CHECK(vmass <= 1.0 + 1e-9);
        if (t == 0)
            for (int h = 0; h < k; ++h)
                CHECK(post.v[0][h] == doctest::Approx(post.u[0][h]).epsilon(1e-12));
    }
    CHECK(std::isfinite(post.loglik));
}

}  // namespace

TEST_CASE("single-option policies put certain mass on option zero") {
    Rng rng(2);
    HierarchicalPolicy p = random_policy(rng, 2, 1, 1);
    Trajectory traj = random_trajectory(rng, 4, 2, 1);
    PosteriorTables post = forward_backward(p, traj);
    for (int t = 0; t < 4; ++t) CHECK(post.u[t][0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(post.v[0][0] == doctest::Approx(1.0).epsilon(1e-12));
    // v_t(0) equals the termination probability of the previous step
    for (int t = 1; t < 4; ++t) {
        double psi = termination_prob(p.options[0].termination, traj.states[t]);
        CHECK(post.v[t][0] == doctest::Approx(psi).epsilon(1e-9));
    }
}

TEST_CASE("T=1 posterior is the Bayes rule over the first selection") {
    Rng rng(3);
    HierarchicalPolicy p = random_policy(rng, 2, 1, 3);
    Trajectory traj = random_trajectory(rng, 1, 2, 1);
    PosteriorTables post = forward_backward(p, traj);
    Vec lp = softmax_log_probs(p.high, traj.states[0]);
    Vec expect(3);
    double z = 0.0;
    for (int h = 0; h < 3; ++h) {
        Vec mu = gaussian_mean(p.options[h].policy, traj.states[0]);
        expect[h] = std::exp(lp[h] + gaussian_logdensity(mu, traj.controls[0], p.sigma));
        z += expect[h];
    }
    for (int h = 0; h < 3; ++h) {
        CHECK(post.u[0][h] == doctest::Approx(expect[h] / z).epsilon(1e-10));
        CHECK(post.v[0][h] == doctest::Approx(expect[h] / z).epsilon(1e-10));
    }
}

TEST_CASE("forward-backward matches the enumeration oracle") {
    Rng rng(5);
    for (int rep = 0; rep < 60; ++rep) {
        bool hybrid = rep % 2 == 1;
        int k = hybrid ? 1 + rng.uniform_int(3) : 1 + rng.uniform_int(3);
        int T = 2 + rng.uniform_int(4);
        int d_s = 1 + rng.uniform_int(3);
        int d_a = 1 + rng.uniform_int(2);
        RandomPolicyOpts opts;
        opts.head_mode = hybrid ? HeadMode::hybrid : HeadMode::categorical;
        if (rep % 5 == 0) opts.option_arch = Arch::mlp;
        if (rep % 7 == 0) opts.high_arch = Arch::mlp;
        HierarchicalPolicy p = random_policy(rng, d_s, d_a, k, opts);
        if (hybrid && k + 1 > 4) continue;
        Trajectory traj = random_trajectory(rng, T, d_s, d_a);
        PosteriorTables fb = forward_backward(p, traj);
        PosteriorTables bf = brute_force_posteriors(p, traj);
        CHECK(posterior_max_diff(fb, bf) < 1e-8);
        CHECK(std::abs(fb.loglik - bf.loglik) < 1e-8);
        check_posterior_invariants(fb, T, k, hybrid);
    }
}

TEST_CASE("brute force masses are normalized by construction") {
    Rng rng(6);
    HierarchicalPolicy p = random_policy(rng, 2, 1, 2);
    Trajectory traj = random_trajectory(rng, 4, 2, 1);
    PosteriorTables bf = brute_force_posteriors(p, traj);
    for (int t = 0; t < 4; ++t) {
        double mass = 0.0;
        for (double x : bf.u[t]) mass += x;
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("brute force rejects oversized instances") {
    Rng rng(7);
    HierarchicalPolicy p = random_policy(rng, 2, 1, 2);
    Trajectory traj = random_trajectory(rng, 9, 2, 1);
    CHECK_THROWS_WITH_AS(brute_force_posteriors(p, traj), doctest::Contains("too large"), Error);
}

TEST_CASE("hybrid k=0 log-likelihood equals flat behavior cloning") {
    Rng rng(8);
    RandomPolicyOpts opts;
    opts.head_mode = HeadMode::hybrid;
    HierarchicalPolicy p = random_policy(rng, 3, 2, 0, opts);
    Trajectory traj = random_trajectory(rng, 5, 3, 2);
    double expect = 0.0;
    for (int t = 0; t < 5; ++t) {
        HybridOut h = hybrid_out(p.high, traj.states[t]);
        expect += gaussian_logdensity(h.mean, traj.controls[t], p.sigma);
    }
    CHECK(trajectory_loglikelihood(p, traj) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("log-likelihood is additive over trajectories") {
    Rng rng(9);
    HierarchicalPolicy p = random_policy(rng, 2, 2, 2);
    Trajectory traj = random_trajectory(rng, 6, 2, 2);
    double one = trajectory_loglikelihood(p, traj);
    double total = trajectory_loglikelihood(p, traj) + trajectory_loglikelihood(p, traj);
    CHECK(total == doctest::Approx(2.0 * one).epsilon(1e-15));
}

TEST_CASE("loglik matches the enumeration oracle on tiny instances") {
    Rng rng(10);
    for (int rep = 0; rep < 20; ++rep) {
        HierarchicalPolicy p = random_policy(rng, 2, 1, 1 + rng.uniform_int(3));
        Trajectory traj = random_trajectory(rng, 2 + rng.uniform_int(3), 2, 1);
        CHECK(trajectory_loglikelihood(p, traj) ==
              doctest::Approx(brute_force_posteriors(p, traj).loglik).epsilon(1e-10));
    }
}

TEST_CASE("injected per-step dynamics constants cancel from the posteriors") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        bool hybrid = rep % 2 == 1;
        RandomPolicyOpts opts;
        opts.head_mode = hybrid ? HeadMode::hybrid : HeadMode::categorical;
        int k = 1 + rng.uniform_int(2);
        HierarchicalPolicy p = random_policy(rng, 2, 1, k, opts);
        int T = 3 + rng.uniform_int(3);
        Trajectory traj = random_trajectory(rng, T, 2, 1);
        Vec consts = random_vec(rng, T, -3.0, 3.0);
        double shift = 0.0;
        for (double c : consts) shift += c;

        InferenceOptions with;
        with.step_logconst = &consts;
        PosteriorTables base = forward_backward(p, traj);
        PosteriorTables injected = forward_backward(p, traj, with);
        CHECK(posterior_max_diff(base, injected) < 1e-12);
        CHECK(injected.loglik == doctest::Approx(base.loglik + shift).epsilon(1e-9));

        PosteriorTables bf = brute_force_posteriors(p, traj, with);
        CHECK(posterior_max_diff(injected, bf) < 1e-8);
    }
}

TEST_CASE("permuting option indices permutes the posterior rows") {
    Rng rng(12);
    HierarchicalPolicy p = random_policy(rng, 2, 1, 3);
    Trajectory traj = random_trajectory(rng, 5, 2, 1);
    PosteriorTables base = forward_backward(p, traj);

    // rotate options by one and permute the softmax rows to match
    HierarchicalPolicy q = p;
    std::rotate(q.options.begin(), q.options.begin() + 1, q.options.end());
    int k = 3, d_s = 2;
    for (int r = 0; r < k; ++r) {
        int src = (r + 1) % k;
        for (int c = 0; c < d_s; ++c)
            q.high.params[static_cast<size_t>(r) * d_s + c] =
                p.high.params[static_cast<size_t>(src) * d_s + c];
        q.high.params[static_cast<size_t>(k) * d_s + r] =
            p.high.params[static_cast<size_t>(k) * d_s + src];
    }
    PosteriorTables perm = forward_backward(q, traj);
    for (int t = 0; t < 5; ++t)
        for (int h = 0; h < k; ++h) {
            CHECK(perm.u[t][h] == doctest::Approx(base.u[t][(h + 1) % k]).epsilon(1e-9));
            CHECK(perm.v[t][h] == doctest::Approx(base.v[t][(h + 1) % k]).epsilon(1e-9));
            if (t < 4)
                CHECK(perm.w[t][h] == doctest::Approx(base.w[t][(h + 1) % k]).epsilon(1e-9));
        }
}

TEST_CASE("message table rows are normalized and reconstruct the loglik") {
    Rng rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        bool hybrid = rep % 2 == 0;
        RandomPolicyOpts opts;
        opts.head_mode = hybrid ? HeadMode::hybrid : HeadMode::categorical;
        HierarchicalPolicy p = random_policy(rng, 2, 2, 1 + rng.uniform_int(3), opts);
        int T = 2 + rng.uniform_int(5);
        Trajectory traj = random_trajectory(rng, T, 2, 2);
        MessageTable mt = compute_messages(p, traj);
        REQUIRE(static_cast<int>(mt.alpha.size()) == T + 1);
        REQUIRE(static_cast<int>(mt.scale.size()) == T + 1);
        double ll = 0.0;
        for (int t = 0; t <= T; ++t) {
            double mass = 0.0;
            for (double x : mt.alpha[t]) mass += x;
            CHECK(std::abs(mass - 1.0) < 1e-12);
            CHECK(mt.scale[t] > 0.0);
            ll += std::log(mt.scale[t]);
        }
        CHECK(ll == doctest::Approx(trajectory_loglikelihood(p, traj)).epsilon(1e-9));
    }
}

TEST_CASE("emission underflow raises an error instead of flushing to zero") {
    Rng rng(14);
    HierarchicalPolicy p = random_policy(rng, 1, 1, 1);
    p.sigma = 1e-3;
    Trajectory traj;
    traj.states = {Vec{0.0}, Vec{0.0}, Vec{0.0}};
    traj.controls = {Vec{1e6}, Vec{1e6}};
    CHECK_THROWS_WITH_AS(forward_backward(p, traj), doctest::Contains("underflow"), Error);
}

TEST_CASE("annotate_segments labels a single option everywhere") {
    Rng rng(15);
    HierarchicalPolicy p = random_policy(rng, 2, 1, 1);
    Trajectory traj = random_trajectory(rng, 6, 2, 1);
    auto labels = annotate_segments(p, traj);
    for (int l : labels) CHECK(l == 0);
}

TEST_CASE("annotate_segments breaks exact ties toward the lowest index") {
    // two identical options, symmetric high level: u is exactly split
    HierarchicalPolicy p;
    p.head_mode = HeadMode::categorical;
    p.d_s = 1;
    p.d_a = 1;
    p.sigma = 0.5;
    p.high = make_approximator(Arch::linear, HeadSpec::softmax(2), 1);
    OptionSpec o{make_approximator(Arch::linear, HeadSpec::gaussian(1), 1),
                 make_approximator(Arch::linear, HeadSpec::logistic(), 1)};
    p.options = {o, o};
    Trajectory traj;
    traj.states = {Vec{0.5}, Vec{0.5}, Vec{0.5}};
    traj.controls = {Vec{0.1}, Vec{0.1}};
    auto labels = annotate_segments(p, traj);
    for (int l : labels) CHECK(l == 0);
}

TEST_CASE("annotate_segments recovers a planted option switch") {
    // two well-separated linear options; data generated by option 1 then 0
    HierarchicalPolicy p;
    p.head_mode = HeadMode::categorical;
    p.d_s = 1;
    p.d_a = 1;
    p.sigma = 0.1;
    p.high = make_approximator(Arch::linear, HeadSpec::softmax(2), 1);
    OptionSpec a{make_approximator(Arch::linear, HeadSpec::gaussian(1), 1),
                 make_approximator(Arch::linear, HeadSpec::logistic(), 1)};
    OptionSpec b = a;
    // option 0 outputs +1, option 1 outputs -1 regardless of state
    a.policy.params = {0.0, 1.0};
    b.policy.params = {0.0, -1.0};
    p.options = {a, b};
    Trajectory traj;
    int T = 10;
    for (int t = 0; t <= T; ++t) traj.states.push_back(Vec{0.0});
    for (int t = 0; t < T; ++t) traj.controls.push_back(Vec{t < 5 ? -1.0 : 1.0});
    auto labels = annotate_segments(p, traj);
    for (int t = 0; t < 5; ++t) CHECK(labels[t] == 1);
    for (int t = 5; t < 10; ++t) CHECK(labels[t] == 0);
}

TEST_CASE("posterior invariants hold across random instances") {
    Rng rng(16);
    for (int rep = 0; rep < 100; ++rep) {
        bool hybrid = rep % 2 == 1;
        RandomPolicyOpts opts;
        opts.head_mode = hybrid ? HeadMode::hybrid : HeadMode::categorical;
        int k = 1 + rng.uniform_int(3);
        int T = 2 + rng.uniform_int(5);
        HierarchicalPolicy p = random_policy(rng, 2, 1, k, opts);
        Trajectory traj = random_trajectory(rng, T, 2, 1);
        PosteriorTables post = forward_backward(p, traj);
        check_posterior_invariants(post, T, k, hybrid);
    }
}
