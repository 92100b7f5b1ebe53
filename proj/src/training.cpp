#include "ddco/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ddco {

OptimizerState make_optimizer(const OptimConfig& cfg, size_t n_params) {
    if (!(cfg.lr > 0.0)) throw Error("optimizer: learning rate must be positive");
    OptimizerState s;
    s.cfg = cfg;
    s.buf1.assign(n_params, 0.0);
    if (cfg.kind == OptimKind::adam) s.buf2.assign(n_params, 0.0);
    return s;
}

void optimizer_step(OptimizerState& state, Vec& params, const Vec& grad) {
    if (params.size() != state.buf1.size() || grad.size() != params.size())
        throw Error("optimizer: shape mismatch");
    for (size_t i = 0; i < grad.size(); ++i)
        if (!std::isfinite(grad[i]))
            throw Error("optimizer: non-finite gradient entry at parameter index " +
                        std::to_string(i));
    const OptimConfig& c = state.cfg;
    switch (c.kind) {
        case OptimKind::sgd:
            for (size_t i = 0; i < params.size(); ++i) params[i] += c.lr * grad[i];
            break;
        case OptimKind::momentum:
            for (size_t i = 0; i < params.size(); ++i) {
                state.buf1[i] = c.momentum * state.buf1[i] + grad[i];
                params[i] += c.lr * state.buf1[i];
            }
            break;
        case OptimKind::adam: {
            ++state.step_count;
            double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_count));
            double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_count));
            for (size_t i = 0; i < params.size(); ++i) {
                state.buf1[i] = c.beta1 * state.buf1[i] + (1.0 - c.beta1) * grad[i];
                state.buf2[i] = c.beta2 * state.buf2[i] + (1.0 - c.beta2) * grad[i] * grad[i];
                double mhat = state.buf1[i] / bc1;
                double vhat = state.buf2[i] / bc2;
                params[i] += c.lr * mhat / (std::sqrt(vhat) + c.eps);
            }
            break;
        }
    }
}

ThetaLayout theta_layout(const HierarchicalPolicy& p) {
    ThetaLayout l;
    size_t off = 0;
    l.high = {off, p.high.params.size()};
    off += l.high.len;
    for (const auto& o : p.options) {
        l.opt_policy.push_back({off, o.policy.params.size()});
        off += o.policy.params.size();
        l.opt_term.push_back({off, o.termination.params.size()});
        off += o.termination.params.size();
    }
    l.total = off;
    return l;
}

Vec get_theta(const HierarchicalPolicy& p) {
    Vec theta;
    theta.reserve(theta_layout(p).total);
    theta.insert(theta.end(), p.high.params.begin(), p.high.params.end());
    for (const auto& o : p.options) {
        theta.insert(theta.end(), o.policy.params.begin(), o.policy.params.end());
        theta.insert(theta.end(), o.termination.params.begin(), o.termination.params.end());
    }
    return theta;
}

void set_theta(HierarchicalPolicy& p, const Vec& theta) {
    ThetaLayout l = theta_layout(p);
    if (theta.size() != l.total) throw Error("set_theta: length mismatch");
    std::copy_n(theta.begin() + l.high.off, l.high.len, p.high.params.begin());
    for (size_t i = 0; i < p.options.size(); ++i) {
        std::copy_n(theta.begin() + l.opt_policy[i].off, l.opt_policy[i].len,
                    p.options[i].policy.params.begin());
        std::copy_n(theta.begin() + l.opt_term[i].off, l.opt_term[i].len,
                    p.options[i].termination.params.begin());
    }
}

double bc_gradient(const Approximator& net, double sigma, const Trajectory& traj, Vec& grad,
                   Mode mode, Rng* rng) {
    if (grad.size() != net.params.size()) throw Error("bc_gradient: gradient length mismatch");
    double loglik = 0.0;
    for (int t = 0; t < traj.horizon(); ++t)
        loglik += weighted_logprob_grad(net, traj.states[t], TargetControl{traj.controls[t]}, 1.0,
                                        sigma, grad, mode, rng);
    return loglik;
}

namespace {

// One fused backprop per module per time-step; the head output-gradients are
// the posterior-weighted sums of the per-target gradients.
struct SegGrad {
    Vec* grad;
    size_t off, len;
    void add(const Approximator& a, const ForwardCache& cache, const Vec& dout) {
        // accumulate into the segment via a temporary view-free pass
        std::span<double> seg(grad->data() + off, len);
        // backprop expects a full-length accumulator; use a small adapter
        static thread_local Vec scratch;
        scratch.assign(len, 0.0);
        backprop(a, cache, dout, 1.0, scratch);
        for (size_t i = 0; i < len; ++i) seg[i] += scratch[i];
    }
};

}  // namespace

void eg_gradient(const HierarchicalPolicy& policy, const Trajectory& traj,
                 const PosteriorTables& post, const ThetaLayout& layout, Vec& grad,
                 const EgFlags& flags, Mode mode, Rng* rng) {
    int T = traj.horizon();
    int k = policy.k();
    if (grad.size() != layout.total) throw Error("eg_gradient: gradient length mismatch");
    if (static_cast<int>(post.u.size()) != T || static_cast<int>(post.v.size()) != T ||
        static_cast<int>(post.w.size()) != std::max(0, T - 1))
        throw Error("eg_gradient: posterior tables do not match the trajectory length");
    for (int t = 0; t < T; ++t)
        if (static_cast<int>(post.u[t].size()) != k || static_cast<int>(post.v[t].size()) != k)
            throw Error("eg_gradient: posterior tables do not match the option count");
    bool hybrid = policy.head_mode == HeadMode::hybrid && !flags.uniform_high;
    if (hybrid && static_cast<int>(post.vc.size()) != T)
        throw Error("eg_gradient: hybrid posteriors missing the physical-control column");

    double inv_s2 = 1.0 / (policy.sigma * policy.sigma);

    for (int t = 0; t < T; ++t) {
        const Vec& s = traj.states[t];
        const Vec& a = traj.controls[t];

        if (flags.train_high && !flags.uniform_high) {
            ForwardCache cache = forward_cached(policy.high, s, mode, rng);
            if (policy.head_mode == HeadMode::categorical) {
                Vec lp = log_softmax(cache.out);
                double vsum = 0.0;
                for (int h = 0; h < k; ++h) vsum += post.v[t][h];
                Vec dout(k, 0.0);
                for (int h = 0; h < k; ++h) dout[h] = post.v[t][h] - vsum * std::exp(lp[h]);
                SegGrad{&grad, layout.high.off, layout.high.len}.add(policy.high, cache, dout);
            } else {
                int d_a = policy.d_a;
                Vec logits(cache.out.begin() + d_a, cache.out.end());
                Vec lp = log_softmax(logits);
                double vsum = post.vc[t];
                for (int h = 0; h < k; ++h) vsum += post.v[t][h];
                Vec dout(cache.out.size(), 0.0);
                dout[d_a] = post.vc[t];
                for (int h = 0; h < k; ++h) dout[d_a + 1 + h] = post.v[t][h];
                for (int j = 0; j <= k; ++j) dout[d_a + j] -= vsum * std::exp(lp[j]);
                for (int i = 0; i < d_a; ++i)
                    dout[i] = post.vc[t] * (a[i] - cache.out[i]) * inv_s2;
                SegGrad{&grad, layout.high.off, layout.high.len}.add(policy.high, cache, dout);
            }
        }

        if (flags.train_options) {
            for (int h = 0; h < k; ++h) {
                double u = post.u[t][h];
                const Approximator& net = policy.options[h].policy;
                ForwardCache cache = forward_cached(net, s, mode, rng);
                Vec dout(policy.d_a, 0.0);
                for (int i = 0; i < policy.d_a; ++i) dout[i] = u * (a[i] - cache.out[i]) * inv_s2;
                SegGrad{&grad, layout.opt_policy[h].off, layout.opt_policy[h].len}.add(net, cache,
                                                                                       dout);
            }
            if (t <= T - 2) {
                const Vec& s_next = traj.states[t + 1];
                for (int h = 0; h < k; ++h) {
                    const Approximator& net = policy.options[h].termination;
                    ForwardCache cache = forward_cached(net, s_next, mode, rng);
                    LogisticOut lo = logistic_from_preactivation(cache.out[0]);
                    double du = (post.u[t][h] - post.w[t][h]) * (1.0 - lo.psi) -
                                post.w[t][h] * lo.psi;
                    Vec dout{du};
                    SegGrad{&grad, layout.opt_term[h].off, layout.opt_term[h].len}.add(net, cache,
                                                                                       dout);
                }
            }
        }
    }
}

void validate_config(const TrainConfig& cfg, bool allow_zero_epochs) {
    if (cfg.head_mode == HeadMode::categorical && cfg.k < 1)
        throw Error("config: categorical head requires k >= 1");
    if (cfg.k < 0) throw Error("config: k must be non-negative");
    if (cfg.epochs < (allow_zero_epochs ? 0 : 1)) throw Error("config: epochs must be >= 0");
    if (!(cfg.sigma > 0.0)) throw Error("config: sigma must be positive");
    if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0)
        throw Error("config: dropout rate must be in [0,1)");
    if (!(cfg.optim.lr > 0.0)) throw Error("config: learning rate must be positive");
    if (cfg.option_arch == Arch::mlp && cfg.hidden_width < 1)
        throw Error("config: hidden width must be positive");
}

void write_train_log_csv(const TrainLog& log, int k, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write training log: " + path);
    out << "epoch,total_loglik,heldout_loglik";
    for (int h = 0; h < k; ++h) out << ",usage_" << h;
    out << ",hc_mass\n";
    for (const auto& e : log.epochs) {
        out << e.epoch << "," << format_double(e.total_loglik) << ",";
        if (e.heldout_loglik) out << format_double(*e.heldout_loglik);
        for (int h = 0; h < k; ++h)
            out << "," << format_double(h < static_cast<int>(e.usage.size()) ? e.usage[h] : 0.0);
        out << "," << format_double(e.hc_mass) << "\n";
    }
    if (!out) throw Error("I/O failure while writing " + path);
}

namespace {

double sqdist(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

namespace {

KMeansResult kmeans_single(const std::vector<Vec>& points, int k, uint64_t seed, int max_iter,
                           double tol) {
    int n = static_cast<int>(points.size());
    Rng rng(seed);

    // k-means++ seeding
    std::vector<Vec> centroids;
    centroids.push_back(points[rng.uniform_int(n)]);
    Vec d2(n, 0.0);
    while (static_cast<int>(centroids.size()) < k) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = sqdist(points[i], centroids[0]);
            for (size_t c = 1; c < centroids.size(); ++c)
                best = std::min(best, sqdist(points[i], centroids[c]));
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            // degenerate input: every point coincides with a centroid
            centroids.push_back(points[rng.uniform_int(n)]);
            continue;
        }
        double r = rng.uniform01() * total;
        int pick = n - 1;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += d2[i];
            if (acc >= r) {
                pick = i;
                break;
            }
        }
        centroids.push_back(points[pick]);
    }

    KMeansResult res;
    res.assign.assign(n, 0);
    double prev_inertia = -1.0;
    for (int it = 0; it < max_iter; ++it) {
        res.iterations = it + 1;
        double inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = sqdist(points[i], centroids[0]);
            for (int c = 1; c < k; ++c) {
                double d = sqdist(points[i], centroids[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            res.assign[i] = best;
            inertia += bd;
        }
        std::vector<Vec> sums(k, Vec(points[0].size(), 0.0));
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            ++counts[res.assign[i]];
            for (size_t d = 0; d < points[i].size(); ++d) sums[res.assign[i]][d] += points[i][d];
        }
        for (int c = 0; c < k; ++c)
            if (counts[c] > 0)
                for (size_t d = 0; d < sums[c].size(); ++d)
                    centroids[c][d] = sums[c][d] / counts[c];
        res.inertia = inertia;
        if (prev_inertia >= 0.0) {
            double denom = std::max(prev_inertia, 1e-300);
            if (std::abs(prev_inertia - inertia) / denom < tol) break;
        }
        prev_inertia = inertia;
    }
    res.centroids = std::move(centroids);
    return res;
}

}  // namespace

KMeansResult kmeans(const std::vector<Vec>& points, int k, uint64_t seed, int max_iter,
                    double tol) {
    if (k < 1) throw Error("kmeans: k must be >= 1");
    if (points.empty()) throw Error("kmeans: no points");
    // several seeded restarts; Lloyd's iterations stall in poor local optima
    // on ring-shaped clouds
    constexpr int kRestarts = 8;
    KMeansResult best;
    for (int r = 0; r < kRestarts; ++r) {
        KMeansResult cur =
            kmeans_single(points, k, derive_seed(seed, 0x4B52, static_cast<uint64_t>(r)),
                          max_iter, tol);
        if (r == 0 || cur.inertia < best.inertia) best = std::move(cur);
    }
    return best;
}

namespace {

Approximator make_option_policy_net(const TrainConfig& cfg, int d_s, int d_a) {
    return make_approximator(cfg.option_arch, HeadSpec::gaussian(d_a), d_s, cfg.hidden_width,
                             cfg.dropout_rate);
}

Approximator make_termination_net(const TrainConfig& cfg, int d_s, uint64_t seed) {
    // a zero readout keeps psi at 0.5 regardless of architecture
    Approximator net = make_approximator(cfg.term_arch, HeadSpec::logistic(), d_s,
                                         cfg.hidden_width, cfg.dropout_rate);
    if (cfg.term_arch == Arch::mlp) {
        Rng rng(seed);
        init_params(net, rng);
        size_t readout = net.params.size() - (static_cast<size_t>(net.hidden_width) + 1);
        std::fill(net.params.begin() + readout, net.params.end(), 0.0);
    }
    return net;
}

// Full-batch behavior cloning over bare (s, a) pairs; used by the
// vector-quantization initialization.
void train_bc_pairs(Approximator& net, const std::vector<const Vec*>& states,
                    const std::vector<const Vec*>& controls, const TrainConfig& cfg,
                    uint64_t dropout_seed) {
    // same optimizer family as the outer loop, but a pre-fit needs to reach
    // the cluster optimum in a bounded number of full-batch steps
    OptimConfig inner = cfg.optim;
    inner.lr = std::max(inner.lr, 0.05);
    OptimizerState opt = make_optimizer(inner, net.params.size());
    Vec grad(net.params.size(), 0.0);
    for (int e = 0; e < cfg.vq_epochs; ++e) {
        std::fill(grad.begin(), grad.end(), 0.0);
        Rng rng(derive_seed(dropout_seed, 0xD0, static_cast<uint64_t>(e)));
        for (size_t i = 0; i < states.size(); ++i)
            weighted_logprob_grad(net, *states[i], TargetControl{*controls[i]}, 1.0, cfg.sigma,
                                  grad, Mode::train, &rng);
        optimizer_step(opt, net.params, grad);
    }
}

}  // namespace

VqInit vq_initialize(const Dataset& ds, int k, const TrainConfig& cfg) {
    if (k < 1) throw Error("vq_initialize: k must be >= 1");
    validate_dataset(ds);
    VqInit out;

    // cluster every state observation; (s, a) pairs inherit the cluster of s_t
    std::vector<Vec> all_states;
    for (const auto& traj : ds.trajectories)
        for (const auto& s : traj.states) all_states.push_back(s);
    KMeansResult km = kmeans(all_states, k, derive_seed(cfg.seed, 0x4B17));

    std::vector<std::vector<std::pair<const Vec*, const Vec*>>> clusters(k);
    {
        size_t idx = 0;
        for (const auto& traj : ds.trajectories) {
            for (int t = 0; t < traj.horizon(); ++t)
                clusters[km.assign[idx + t]].push_back({&traj.states[t], &traj.controls[t]});
            idx += traj.states.size();
        }
    }

    // every cluster needs at least d_a + 1 pairs to fit a control map
    int min_count = ds.d_a + 1;
    int total_pairs = ds.total_steps();
    if (total_pairs < k * min_count)
        throw Error("vq_initialize: dataset has too few steps for " + std::to_string(k) +
                    " clusters of at least " + std::to_string(min_count));
    for (int c = 0; c < k; ++c) {
        while (static_cast<int>(clusters[c].size()) < min_count) {
            out.warnings.push_back("vq_initialize: cluster " + std::to_string(c) + " has " +
                                   std::to_string(clusters[c].size()) +
                                   " samples, reassigning nearest points");
            // take the nearest pair from the largest donor cluster with surplus
            int donor = -1;
            for (int d = 0; d < k; ++d)
                if (static_cast<int>(clusters[d].size()) > min_count &&
                    (donor < 0 || clusters[d].size() > clusters[donor].size()))
                    donor = d;
            if (donor < 0) throw Error("vq_initialize: cannot rebalance clusters");
            size_t best = 0;
            double bd = sqdist(*clusters[donor][0].first, km.centroids[c]);
            for (size_t i = 1; i < clusters[donor].size(); ++i) {
                double dist = sqdist(*clusters[donor][i].first, km.centroids[c]);
                if (dist < bd) {
                    bd = dist;
                    best = i;
                }
            }
            clusters[c].push_back(clusters[donor][best]);
            clusters[donor].erase(clusters[donor].begin() + best);
        }
    }

    for (int c = 0; c < k; ++c) {
        OptionSpec spec{
            make_option_policy_net(cfg, ds.d_s, ds.d_a),
            make_termination_net(cfg, ds.d_s, derive_seed(cfg.seed, 0xBC50 + c))};
        Rng init_rng(derive_seed(cfg.seed, 0xBC00 + static_cast<uint64_t>(c)));
        init_params(spec.policy, init_rng);
        std::vector<const Vec*> ss, as;
        ss.reserve(clusters[c].size());
        as.reserve(clusters[c].size());
        for (auto& [s, a] : clusters[c]) {
            ss.push_back(s);
            as.push_back(a);
        }
        train_bc_pairs(spec.policy, ss, as, cfg, derive_seed(cfg.seed, 0xBCD0 + c));
        out.options.push_back(std::move(spec));
        out.cluster_sizes.push_back(static_cast<int>(clusters[c].size()));
    }
    return out;
}

namespace {

HierarchicalPolicy build_policy(const Dataset& ds, const TrainConfig& cfg) {
    HierarchicalPolicy p;
    p.head_mode = cfg.head_mode;
    p.sigma = cfg.sigma;
    p.d_s = ds.d_s;
    p.d_a = ds.d_a;
    HeadSpec high_head = cfg.head_mode == HeadMode::categorical
                             ? HeadSpec::softmax(cfg.k)
                             : HeadSpec::hybrid(cfg.k, ds.d_a);
    p.high = make_approximator(cfg.high_arch, high_head, ds.d_s, cfg.hidden_width,
                               cfg.dropout_rate);
    Rng high_rng(derive_seed(cfg.seed, 0));
    init_params(p.high, high_rng);
    if (cfg.init == InitScheme::vq && cfg.k >= 1) {
        VqInit vq = vq_initialize(ds, cfg.k, cfg);
        p.options = std::move(vq.options);
    } else {
        for (int h = 0; h < cfg.k; ++h) {
            OptionSpec spec{
                make_option_policy_net(cfg, ds.d_s, ds.d_a),
                make_termination_net(cfg, ds.d_s,
                                     derive_seed(cfg.seed, 2 + 2 * static_cast<uint64_t>(h)))};
            Rng rng(derive_seed(cfg.seed, 1 + 2 * static_cast<uint64_t>(h)));
            init_params(spec.policy, rng);
            p.options.push_back(std::move(spec));
        }
    }
    validate_policy(p);
    return p;
}

struct EpochAccum {
    double loglik = 0.0;
    Vec usage;
    double hc = 0.0;
};

void accumulate_usage(const PosteriorTables& post, EpochAccum& acc) {
    acc.loglik += post.loglik;
    for (const auto& row : post.u)
        for (size_t h = 0; h < row.size(); ++h) acc.usage[h] += row[h];
    for (double x : post.vc) acc.hc += x;
}

}  // namespace

TrainResult ddco_train(const Dataset& ds, const TrainConfig& cfg) {
    validate_config(cfg);
    validate_dataset(ds);
    if (cfg.head_mode == HeadMode::hybrid && cfg.k == 0 && cfg.schedule == Schedule::layerwise)
        throw Error("ddco_train: layerwise schedule needs at least one option");

    TrainResult res;
    res.policy = build_policy(ds, cfg);
    HierarchicalPolicy& policy = res.policy;
    ThetaLayout layout = theta_layout(policy);
    Vec theta = get_theta(policy);
    OptimizerState opt = make_optimizer(cfg.optim, layout.total);

    int n = static_cast<int>(ds.trajectories.size());
    int phase1_epochs = cfg.epochs;
    if (cfg.schedule == Schedule::layerwise)
        phase1_epochs = cfg.layerwise_phase1_epochs >= 0
                            ? std::min(cfg.layerwise_phase1_epochs, cfg.epochs)
                            : (cfg.epochs + 1) / 2;

    for (int e = 0; e < cfg.epochs; ++e) {
        bool phase1 = cfg.schedule == Schedule::layerwise && e < phase1_epochs;
        if (cfg.schedule == Schedule::layerwise && e == phase1_epochs)
            opt = make_optimizer(cfg.optim, layout.total);  // stale moments would thaw frozen blocks
        EgFlags flags;
        if (cfg.schedule == Schedule::layerwise) {
            flags.uniform_high = phase1;
            flags.train_high = !phase1;
            flags.train_options = phase1 || cfg.layerwise_finetune_options;
        }
        InferenceOptions iopts;
        iopts.uniform_high = flags.uniform_high;

        EpochAccum acc;
        acc.usage.assign(cfg.k, 0.0);

        if (cfg.batch == BatchMode::full) {
            std::vector<PosteriorTables> posts(n);
            std::vector<Vec> grads(n, Vec(layout.total, 0.0));
            parallel_for(n, cfg.jobs, [&](int i) {
                posts[i] = forward_backward(policy, ds.trajectories[i], iopts);
                Rng rng(derive_seed(cfg.seed, 0xD0D0, static_cast<uint64_t>(e),
                                    static_cast<uint64_t>(i)));
                eg_gradient(policy, ds.trajectories[i], posts[i], layout, grads[i], flags,
                            Mode::train, &rng);
            });
            Vec grad(layout.total, 0.0);
            for (int i = 0; i < n; ++i) {
                accumulate_usage(posts[i], acc);
                for (size_t j = 0; j < grad.size(); ++j) grad[j] += grads[i][j];
            }
            optimizer_step(opt, theta, grad);
            set_theta(policy, theta);
        } else {
            Vec grad(layout.total, 0.0);
            for (int i = 0; i < n; ++i) {
                PosteriorTables post = forward_backward(policy, ds.trajectories[i], iopts);
                accumulate_usage(post, acc);
                std::fill(grad.begin(), grad.end(), 0.0);
                Rng rng(derive_seed(cfg.seed, 0xD0D0, static_cast<uint64_t>(e),
                                    static_cast<uint64_t>(i)));
                eg_gradient(policy, ds.trajectories[i], post, layout, grad, flags, Mode::train,
                            &rng);
                optimizer_step(opt, theta, grad);
                set_theta(policy, theta);
            }
        }

        EpochStats stats;
        stats.epoch = e;
        stats.total_loglik = acc.loglik;
        stats.usage = acc.usage;
        stats.hc_mass = acc.hc;
        if (cfg.heldout) stats.heldout_loglik = mean_per_step_loglik(policy, *cfg.heldout);
        res.log.epochs.push_back(std::move(stats));
    }
    return res;
}

BcResult bc_train(const Dataset& ds, Arch arch, const TrainConfig& cfg) {
    validate_config(cfg);
    validate_dataset(ds);
    BcResult res;
    res.policy.sigma = cfg.sigma;
    res.policy.d_s = ds.d_s;
    res.policy.d_a = ds.d_a;
    res.policy.net = make_approximator(arch, HeadSpec::gaussian(ds.d_a), ds.d_s, cfg.hidden_width,
                                       cfg.dropout_rate);
    Rng init_rng(derive_seed(cfg.seed, 0));
    init_params(res.policy.net, init_rng);
    Approximator& net = res.policy.net;
    OptimizerState opt = make_optimizer(cfg.optim, net.params.size());

    int n = static_cast<int>(ds.trajectories.size());
    for (int e = 0; e < cfg.epochs; ++e) {
        double total = 0.0;
        if (cfg.batch == BatchMode::full) {
            Vec grad(net.params.size(), 0.0);
            for (int i = 0; i < n; ++i) {
                Rng rng(derive_seed(cfg.seed, 0xD0D0, static_cast<uint64_t>(e),
                                    static_cast<uint64_t>(i)));
                total += bc_gradient(net, cfg.sigma, ds.trajectories[i], grad, Mode::train, &rng);
            }
            optimizer_step(opt, net.params, grad);
        } else {
            Vec grad(net.params.size(), 0.0);
            for (int i = 0; i < n; ++i) {
                std::fill(grad.begin(), grad.end(), 0.0);
                Rng rng(derive_seed(cfg.seed, 0xD0D0, static_cast<uint64_t>(e),
                                    static_cast<uint64_t>(i)));
                total += bc_gradient(net, cfg.sigma, ds.trajectories[i], grad, Mode::train, &rng);
                optimizer_step(opt, net.params, grad);
            }
        }
        EpochStats stats;
        stats.epoch = e;
        stats.total_loglik = total;
        if (cfg.heldout) stats.heldout_loglik = mean_per_step_loglik(res.policy, *cfg.heldout);
        res.log.epochs.push_back(std::move(stats));
    }
    return res;
}

double mean_per_step_loglik(const HierarchicalPolicy& policy, const Dataset& ds) {
    double sum = 0.0;
    for (const auto& traj : ds.trajectories)
        sum += trajectory_loglikelihood(policy, traj) / traj.horizon();
    return sum / static_cast<double>(ds.trajectories.size());
}

double mean_per_step_loglik(const FlatPolicy& policy, const Dataset& ds) {
    double sum = 0.0;
    for (const auto& traj : ds.trajectories) {
        double ll = 0.0;
        for (int t = 0; t < traj.horizon(); ++t) {
            Vec mu = gaussian_mean(policy.net, traj.states[t]);
            ll += gaussian_logdensity(mu, traj.controls[t], policy.sigma);
        }
        sum += ll / traj.horizon();
    }
    return sum / static_cast<double>(ds.trajectories.size());
}

}  // namespace ddco
