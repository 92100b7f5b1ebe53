#include "ddco/modelselect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

namespace ddco {

namespace {

std::vector<std::vector<int>> make_folds(int n, int fold_count, uint64_t seed) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0xF01D));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    std::vector<std::vector<int>> folds(fold_count);
    for (int f = 0; f < fold_count; ++f) {
        int lo = static_cast<int>(static_cast<int64_t>(n) * f / fold_count);
        int hi = static_cast<int>(static_cast<int64_t>(n) * (f + 1) / fold_count);
        folds[f].assign(order.begin() + lo, order.begin() + hi);
    }
    return folds;
}

Dataset subset(const Dataset& ds, const std::vector<int>& idx) {
    Dataset out;
    out.d_s = ds.d_s;
    out.d_a = ds.d_a;
    out.trajectories.reserve(idx.size());
    for (int i : idx) out.trajectories.push_back(ds.trajectories[i]);
    return out;
}

Dataset complement(const Dataset& ds, const std::vector<int>& held) {
    std::vector<uint8_t> mask(ds.trajectories.size(), 0);
    for (int i : held) mask[i] = 1;
    Dataset out;
    out.d_s = ds.d_s;
    out.d_a = ds.d_a;
    for (size_t i = 0; i < ds.trajectories.size(); ++i)
        if (!mask[i]) out.trajectories.push_back(ds.trajectories[i]);
    return out;
}

}  // namespace

CvResult cross_validate_k(const Dataset& ds, const std::vector<int>& k_candidates,
                          const TrainConfig& cfg, int folds) {
    validate_dataset(ds);
    if (k_candidates.empty()) throw Error("cross_validate_k: no candidates");
    int n = static_cast<int>(ds.trajectories.size());
    int fold_count = std::min(folds, n);
    if (fold_count < 2 && n >= 2) fold_count = 2;
    if (n < 2) throw Error("cross_validate_k: need at least 2 trajectories");

    CvResult cv;
    cv.folds = make_folds(n, fold_count, cfg.seed);

    int n_k = static_cast<int>(k_candidates.size());
    cv.table.assign(static_cast<size_t>(n_k) * fold_count, CvCell{});
    parallel_for(n_k * fold_count, cfg.jobs, [&](int job) {
        int ki = job / fold_count;
        int f = job % fold_count;
        CvCell& cell = cv.table[job];
        cell.k = k_candidates[ki];
        cell.fold = f;
        TrainConfig run_cfg = cfg;
        run_cfg.k = k_candidates[ki];
        run_cfg.jobs = 1;
        try {
            Dataset train = complement(ds, cv.folds[f]);
            Dataset held = subset(ds, cv.folds[f]);
            TrainResult r = ddco_train(train, run_cfg);
            cell.heldout_loglik_per_step = mean_per_step_loglik(r.policy, held);
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
        }
    });

    for (int ki = 0; ki < n_k; ++ki) {
        CvSummaryRow row;
        row.k = k_candidates[ki];
        row.valid = true;
        Vec scores;
        for (int f = 0; f < fold_count; ++f) {
            const CvCell& cell = cv.table[static_cast<size_t>(ki) * fold_count + f];
            if (!cell.ok) {
                row.valid = false;
                continue;
            }
            scores.push_back(cell.heldout_loglik_per_step);
        }
        if (row.valid && !scores.empty()) {
            double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / scores.size();
            double var = 0.0;
            for (double s : scores) var += (s - mean) * (s - mean);
            var = scores.size() > 1 ? var / (scores.size() - 1) : 0.0;
            row.mean = mean;
            row.stderr_ = std::sqrt(var / scores.size());
        }
        cv.summary.push_back(row);
    }

    int best = -1;
    for (size_t i = 0; i < cv.summary.size(); ++i) {
        if (!cv.summary[i].valid) continue;
        if (best < 0 || cv.summary[i].mean > cv.summary[best].mean ||
            (cv.summary[i].mean == cv.summary[best].mean &&
             cv.summary[i].k < cv.summary[best].k))
            best = static_cast<int>(i);
    }
    if (best < 0) throw Error("cross_validate_k: every candidate failed");
    cv.summary[best].selected = true;
    cv.selected_k = cv.summary[best].k;

    TrainConfig final_cfg = cfg;
    final_cfg.k = cv.selected_k;
    TrainResult final = ddco_train(ds, final_cfg);
    cv.final_policy = std::move(final.policy);
    cv.final_log = std::move(final.log);
    return cv;
}

void write_cv_table_csv(const CvResult& cv, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write CV table: " + path);
    out << "k,fold,heldout_loglik_per_step,ok\n";
    for (const auto& c : cv.table) {
        out << c.k << "," << c.fold << ",";
        if (c.ok) out << format_double(c.heldout_loglik_per_step);
        out << "," << (c.ok ? 1 : 0) << "\n";
    }
}

void write_cv_summary_csv(const CvResult& cv, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write CV summary: " + path);
    out << "k,mean,stderr,selected\n";
    for (const auto& r : cv.summary) {
        out << r.k << ",";
        if (r.valid) out << format_double(r.mean) << "," << format_double(r.stderr_);
        else out << ",";
        out << "," << (r.selected ? 1 : 0) << "\n";
    }
}

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw Error("nmi: labelings differ in length");
    if (a.empty()) throw Error("nmi: empty labelings");
    double n = static_cast<double>(a.size());
    std::map<int, double> pa, pb;
    std::map<std::pair<int, int>, double> pab;
    for (size_t i = 0; i < a.size(); ++i) {
        pa[a[i]] += 1.0;
        pb[b[i]] += 1.0;
        pab[{a[i], b[i]}] += 1.0;
    }
    double ha = 0.0, hb = 0.0, mi = 0.0;
    for (auto& [la, c] : pa) {
        double p = c / n;
        ha -= p * std::log(p);
    }
    for (auto& [lb, c] : pb) {
        double p = c / n;
        hb -= p * std::log(p);
    }
    for (auto& [key, c] : pab) {
        double pj = c / n;
        double px = pa[key.first] / n;
        double py = pb[key.second] / n;
        mi += pj * std::log(pj / (px * py));
    }
    bool const_a = pa.size() == 1, const_b = pb.size() == 1;
    if (const_a && const_b) return 1.0;
    if (const_a || const_b) return 0.0;
    double val = mi / std::sqrt(ha * hb);
    return std::min(1.0, std::max(0.0, val));
}

namespace {

struct SeedRun {
    double final_loglik = 0.0;
    std::vector<int> labels;    // segmentation concatenated over the dataset
    double option_mass = 0.0;   // fractions of total posterior mass
    double hc_mass = 0.0;
};

SeedRun run_regime_seed(const Dataset& ds, const TrainConfig& base, InitScheme init,
                        Schedule schedule, int k, uint64_t seed) {
    TrainConfig cfg = base;
    cfg.k = k;
    cfg.init = init;
    cfg.schedule = schedule;
    cfg.seed = seed;
    cfg.jobs = 1;
    TrainResult r = ddco_train(ds, cfg);
    SeedRun out;
    double total_mass = 0.0, opt_mass = 0.0, hc = 0.0;
    for (const auto& traj : ds.trajectories) {
        PosteriorTables post = forward_backward(r.policy, traj);
        out.final_loglik += post.loglik;
        for (const auto& row : post.u)
            for (double x : row) opt_mass += x;
        for (double x : post.vc) hc += x;
        total_mass += traj.horizon();
        std::vector<int> l = annotate_segments(r.policy, traj);
        out.labels.insert(out.labels.end(), l.begin(), l.end());
    }
    out.option_mass = opt_mass / total_mass;
    out.hc_mass = hc / total_mass;
    return out;
}

}  // namespace

StabilityReport stability_report(const Dataset& ds, int k, int n_seeds, const TrainConfig& cfg,
                                 int jobs) {
    if (n_seeds < 2) throw Error("stability_report: need at least 2 seeds");
    struct RegimeDef {
        const char* name;
        InitScheme init;
        Schedule schedule;
    };
    const RegimeDef defs[] = {
        {"random+joint", InitScheme::random, Schedule::joint},
        {"random+layerwise", InitScheme::random, Schedule::layerwise},
        {"vq+joint", InitScheme::vq, Schedule::joint},
        {"vq+layerwise", InitScheme::vq, Schedule::layerwise},
    };
    StabilityReport rep;
    std::vector<SeedRun> runs(static_cast<size_t>(4) * n_seeds);
    parallel_for(4 * n_seeds, jobs, [&](int job) {
        int r = job / n_seeds;
        int s = job % n_seeds;
        runs[job] = run_regime_seed(ds, cfg, defs[r].init, defs[r].schedule, k,
                                    static_cast<uint64_t>(s));
    });
    for (int r = 0; r < 4; ++r) {
        StabilityRegime reg;
        reg.name = defs[r].name;
        reg.init = defs[r].init;
        reg.schedule = defs[r].schedule;
        double mean = 0.0;
        for (int s = 0; s < n_seeds; ++s) {
            const SeedRun& run = runs[static_cast<size_t>(r) * n_seeds + s];
            reg.final_logliks.push_back(run.final_loglik);
            mean += run.final_loglik;
            reg.option_mass += run.option_mass / n_seeds;
            reg.hc_mass += run.hc_mass / n_seeds;
        }
        mean /= n_seeds;
        double var = 0.0;
        for (double x : reg.final_logliks) var += (x - mean) * (x - mean);
        reg.loglik_variance = var / (n_seeds - 1);
        double nmi_sum = 0.0;
        int pairs = 0;
        for (int i = 0; i < n_seeds; ++i)
            for (int j = i + 1; j < n_seeds; ++j) {
                nmi_sum += nmi(runs[static_cast<size_t>(r) * n_seeds + i].labels,
                               runs[static_cast<size_t>(r) * n_seeds + j].labels);
                ++pairs;
            }
        reg.mean_pairwise_nmi = nmi_sum / pairs;
        rep.regimes.push_back(std::move(reg));
    }
    return rep;
}

void write_stability_csv(const StabilityReport& rep, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write stability report: " + path);
    out << "regime,loglik_variance,mean_pairwise_nmi,option_mass,hc_mass\n";
    for (const auto& r : rep.regimes)
        out << r.name << "," << format_double(r.loglik_variance) << ","
            << format_double(r.mean_pairwise_nmi) << "," << format_double(r.option_mass) << ","
            << format_double(r.hc_mass) << "\n";
}

}  // namespace ddco
