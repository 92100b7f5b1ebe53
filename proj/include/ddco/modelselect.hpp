#pragma once

#include "ddco/training.hpp"

namespace ddco {

struct CvCell {
    int k = 0;
    int fold = 0;
    double heldout_loglik_per_step = 0.0;
    bool ok = false;
    std::string error;
};

struct CvSummaryRow {
    int k = 0;
    double mean = 0.0;
    double stderr_ = 0.0;
    bool selected = false;
    bool valid = false;  // every fold trained
};

struct CvResult {
    std::vector<CvCell> table;
    std::vector<CvSummaryRow> summary;
    int selected_k = 0;
    HierarchicalPolicy final_policy;  // trained on the full dataset
    TrainLog final_log;
    std::vector<std::vector<int>> folds;  // trajectory indices per fold
};

// k-fold cross-validation over the number of options. Trajectories are
// shuffled once from the seed and split into `folds` contiguous folds (capped
// at the dataset size). Held-out score is the mean per-step log-likelihood
// over the fold's trajectories; the k with the highest fold-mean wins, ties
// to the smaller k, and the returned policy is retrained on the full data.
CvResult cross_validate_k(const Dataset& ds, const std::vector<int>& k_candidates,
                          const TrainConfig& cfg, int folds = 10);

void write_cv_table_csv(const CvResult& cv, const std::string& path);
void write_cv_summary_csv(const CvResult& cv, const std::string& path);

// Normalized mutual information I(A;B)/sqrt(H(A) H(B)) of two labelings,
// natural-log entropies. Both constant: 1; exactly one constant: 0.
double nmi(const std::vector<int>& a, const std::vector<int>& b);

struct StabilityRegime {
    std::string name;  // e.g. "vq+layerwise"
    InitScheme init;
    Schedule schedule;
    double loglik_variance = 0.0;   // across seeds, of the final total log-likelihood
    double mean_pairwise_nmi = 0.0; // segmentation consistency across seeds
    double option_mass = 0.0;       // posterior mass on options (mean over seeds)
    double hc_mass = 0.0;           // posterior mass on the physical-control branch
    Vec final_logliks;
};

struct StabilityReport {
    std::vector<StabilityRegime> regimes;
};

// Trains n_seeds policies (seeds 0..n-1) under each of the four
// init x schedule regimes and reports per-regime variance, segmentation
// consistency, and option-usage mass.
StabilityReport stability_report(const Dataset& ds, int k, int n_seeds, const TrainConfig& cfg,
                                 int jobs = 1);

void write_stability_csv(const StabilityReport& rep, const std::string& path);

}  // namespace ddco
