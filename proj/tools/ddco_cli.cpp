#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ddco/env.hpp"
#include "ddco/modelselect.hpp"

using namespace ddco;

namespace {

struct TrainFlags {
    std::string data;
    std::string out;
    std::string log;
    std::string arch = "linear";
    std::string optimizer = "adam";
    std::string batch = "traj";
    int hidden = 64;
    int epochs = 50;
    double lr = 1e-5;
    double sigma = 0.1;
    double dropout = 0.0;
    double momentum = 0.0;
    uint64_t seed = 0;
    int jobs = 0;
};

Arch parse_arch(const std::string& s) {
    if (s == "linear") return Arch::linear;
    if (s == "mlp") return Arch::mlp;
    throw CLI::ValidationError("--arch", "must be linear or mlp");
}

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_arch = true,
                     bool require_out = true) {
    cmd->add_option("--data", f.data, "input dataset (jsonl)")->required();
    auto* out_opt = cmd->add_option("--out", f.out, "output path");
    if (require_out) out_opt->required();
    cmd->add_option("--log", f.log, "training-log CSV (default: <out>.log.csv)");
    if (with_arch) {
        cmd->add_option("--arch", f.arch, "policy architecture: linear|mlp")
            ->check(CLI::IsMember({"linear", "mlp"}));
        cmd->add_option("--hidden", f.hidden, "mlp hidden width");
    }
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--lr", f.lr, "learning rate");
    cmd->add_option("--sigma", f.sigma, "control standard deviation");
    cmd->add_option("--dropout", f.dropout, "hidden-layer dropout rate");
    cmd->add_option("--optimizer", f.optimizer, "sgd|momentum|adam")
        ->check(CLI::IsMember({"sgd", "momentum", "adam"}));
    cmd->add_option("--momentum", f.momentum, "momentum coefficient");
    cmd->add_option("--batch", f.batch, "gradient batch unit: traj|full")
        ->check(CLI::IsMember({"traj", "full"}));
    cmd->add_option("--seed", f.seed, "rng seed");
    cmd->add_option("--jobs", f.jobs, "worker threads (default: DDCO_JOBS or cores)");
}

TrainConfig to_config(const TrainFlags& f) {
    TrainConfig cfg;
    cfg.epochs = f.epochs;
    cfg.sigma = f.sigma;
    cfg.dropout_rate = f.dropout;
    cfg.seed = f.seed;
    cfg.hidden_width = f.hidden;
    cfg.option_arch = parse_arch(f.arch);
    cfg.batch = f.batch == "full" ? BatchMode::full : BatchMode::per_trajectory;
    cfg.optim.lr = f.lr;
    cfg.optim.momentum = f.momentum;
    cfg.optim.kind = f.optimizer == "sgd"
                         ? OptimKind::sgd
                         : (f.optimizer == "momentum" ? OptimKind::momentum : OptimKind::adam);
    cfg.jobs = f.jobs > 0 ? f.jobs : default_jobs();
    return cfg;
}

std::string log_path(const TrainFlags& f) { return f.log.empty() ? f.out + ".log.csv" : f.log; }

std::vector<int> parse_k_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stoi(tok));
    }
    if (out.empty()) throw CLI::ValidationError("--k-list", "no candidates given");
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"option discovery from continuous-control demonstrations"};
    app.require_subcommand(1);

    // ---- gen-demos ----
    auto* gen = app.add_subcommand("gen-demos", "generate demonstration datasets");
    std::string gen_env = "push", gen_out;
    int gen_n = 10, gen_slds_k = 2, gen_horizon = 20;
    double gen_noise = 0.05;
    uint64_t gen_seed = 0;
    gen->add_option("--env", gen_env, "push|slds")->check(CLI::IsMember({"push", "slds"}));
    gen->add_option("--n", gen_n, "episode / trajectory count")->required();
    gen->add_option("--seed", gen_seed, "rng seed");
    gen->add_option("--out", gen_out, "output dataset path (jsonl)")->required();
    gen->add_option("--slds-k", gen_slds_k, "ground-truth mode count (slds)");
    gen->add_option("--noise", gen_noise, "control noise scale (slds)");
    gen->add_option("--horizon", gen_horizon, "trajectory length (slds)");

    // ---- train-bc ----
    auto* bc = app.add_subcommand("train-bc", "behavior-clone a flat policy");
    TrainFlags bc_flags;
    add_train_flags(bc, bc_flags);

    // ---- train-ddco ----
    auto* ddco = app.add_subcommand("train-ddco", "discover options by expectation-gradient");
    TrainFlags dd_flags;
    int dd_k = 2;
    std::string dd_head = "cat", dd_init = "random", dd_schedule = "joint";
    bool dd_finetune = false;
    int dd_phase1 = -1;
    ddco->add_option("--k", dd_k, "number of options")->required();
    ddco->add_option("--head", dd_head, "high-level head: cat|hybrid")
        ->check(CLI::IsMember({"cat", "hybrid"}));
    ddco->add_option("--init", dd_init, "option initialization: random|vq")
        ->check(CLI::IsMember({"random", "vq"}));
    ddco->add_option("--schedule", dd_schedule, "training schedule: joint|layerwise")
        ->check(CLI::IsMember({"joint", "layerwise"}));
    ddco->add_flag("--finetune-options", dd_finetune, "keep training options in phase 2");
    ddco->add_option("--phase1-epochs", dd_phase1, "layerwise phase-1 epochs (default: half)");
    std::string dd_high_arch = "linear", dd_term_arch = "linear";
    ddco->add_option("--high-arch", dd_high_arch, "high-level architecture: linear|mlp")
        ->check(CLI::IsMember({"linear", "mlp"}));
    ddco->add_option("--term-arch", dd_term_arch, "termination architecture: linear|mlp")
        ->check(CLI::IsMember({"linear", "mlp"}));
    add_train_flags(ddco, dd_flags);

    // ---- crossval ----
    auto* cv = app.add_subcommand("crossval", "select k by k-fold cross-validation");
    TrainFlags cv_flags;
    std::string cv_klist, cv_table, cv_model, cv_head = "cat", cv_init = "random",
                           cv_schedule = "joint";
    int cv_folds = 10;
    cv->add_option("--k-list", cv_klist, "comma-separated candidates, e.g. 1,2,3")->required();
    cv->add_option("--folds", cv_folds, "fold count");
    cv->add_option("--table-out", cv_table, "per-fold table CSV");
    cv->add_option("--model-out", cv_model, "checkpoint for the final full-data policy");
    cv->add_option("--head", cv_head, "cat|hybrid")->check(CLI::IsMember({"cat", "hybrid"}));
    cv->add_option("--init", cv_init, "random|vq")->check(CLI::IsMember({"random", "vq"}));
    cv->add_option("--schedule", cv_schedule, "joint|layerwise")
        ->check(CLI::IsMember({"joint", "layerwise"}));
    add_train_flags(cv, cv_flags);

    // ---- segment ----
    auto* seg = app.add_subcommand("segment", "label time-steps with the most likely option");
    std::string seg_data, seg_model, seg_out, seg_loglik;
    seg->add_option("--data", seg_data, "input dataset (jsonl)")->required();
    seg->add_option("--model", seg_model, "policy checkpoint")->required();
    seg->add_option("--out", seg_out, "output labels (jsonl)")->required();
    seg->add_option("--loglik-out", seg_loglik, "per-trajectory log-likelihood CSV");

    // ---- rollout ----
    auto* ro = app.add_subcommand("rollout", "execute a policy in the pushing environment");
    std::string ro_model, ro_env = "push", ro_out, ro_rewards, ro_mode = "stochastic";
    int ro_episodes = 0, ro_horizon = 2000;
    uint64_t ro_seed = 0;
    ro->add_option("--model", ro_model, "policy checkpoint")->required();
    ro->add_option("--env", ro_env, "environment (push)")->check(CLI::IsMember({"push"}));
    ro->add_option("--episodes", ro_episodes, "episode count")->required();
    ro->add_option("--horizon", ro_horizon, "steps per episode");
    ro->add_option("--seed", ro_seed, "rng seed");
    ro->add_option("--mode", ro_mode, "stochastic|mean")
        ->check(CLI::IsMember({"stochastic", "mean"}));
    ro->add_option("--out", ro_out, "trace CSV")->required();
    ro->add_option("--rewards-out", ro_rewards, "per-episode reward CSV");

    // ---- stability ----
    auto* st = app.add_subcommand("stability", "multi-seed stability report");
    TrainFlags st_flags;
    int st_k = 2, st_seeds = 10;
    std::string st_out;
    st->add_option("--k", st_k, "number of options")->required();
    st->add_option("--seeds", st_seeds, "seed count")->required();
    st->add_option("--report-out", st_out, "report CSV")->required();
    add_train_flags(st, st_flags, true, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    if (gen->parsed()) {
        if (gen_n < 1) throw CLI::ValidationError("--n", "must be >= 1");
        if (gen_env == "push") {
            Dataset ds = generate_demos(gen_n, gen_seed);
            save_dataset(ds, gen_out);
            std::cerr << "wrote " << ds.trajectories.size() << " trajectories to " << gen_out
                      << "\n";
        } else {
            SldsConfig cfg;
            cfg.k_true = gen_slds_k;
            cfg.noise = gen_noise;
            cfg.horizon = gen_horizon;
            LabeledDataset out = slds_generate(cfg, gen_n, gen_seed);
            save_dataset(out.data, gen_out);
            save_labels(out.labels, gen_out + ".labels.jsonl");
            std::cerr << "wrote " << out.data.trajectories.size() << " trajectories to "
                      << gen_out << " (+ labels sidecar)\n";
        }
        return 0;
    }

    if (bc->parsed()) {
        Dataset ds = load_dataset(bc_flags.data);
        TrainConfig cfg = to_config(bc_flags);
        BcResult r = bc_train(ds, parse_arch(bc_flags.arch), cfg);
        save_checkpoint(r.policy, bc_flags.out);
        write_train_log_csv(r.log, 0, log_path(bc_flags));
        std::cerr << "final training loglik: "
                  << (r.log.epochs.empty() ? 0.0 : r.log.epochs.back().total_loglik) << "\n";
        return 0;
    }

    if (ddco->parsed()) {
        Dataset ds = load_dataset(dd_flags.data);
        TrainConfig cfg = to_config(dd_flags);
        cfg.k = dd_k;
        cfg.head_mode = dd_head == "hybrid" ? HeadMode::hybrid : HeadMode::categorical;
        cfg.init = dd_init == "vq" ? InitScheme::vq : InitScheme::random;
        cfg.schedule = dd_schedule == "layerwise" ? Schedule::layerwise : Schedule::joint;
        cfg.layerwise_finetune_options = dd_finetune;
        cfg.layerwise_phase1_epochs = dd_phase1;
        cfg.high_arch = parse_arch(dd_high_arch);
        cfg.term_arch = parse_arch(dd_term_arch);
        if (cfg.head_mode == HeadMode::categorical && cfg.k < 1)
            throw CLI::ValidationError("--k", "categorical head requires k >= 1");
        TrainResult r = ddco_train(ds, cfg);
        save_checkpoint(r.policy, dd_flags.out);
        write_train_log_csv(r.log, cfg.k, log_path(dd_flags));
        std::cerr << "final training loglik: "
                  << (r.log.epochs.empty() ? 0.0 : r.log.epochs.back().total_loglik) << "\n";
        return 0;
    }

    if (cv->parsed()) {
        Dataset ds = load_dataset(cv_flags.data);
        TrainConfig cfg = to_config(cv_flags);
        cfg.head_mode = cv_head == "hybrid" ? HeadMode::hybrid : HeadMode::categorical;
        cfg.init = cv_init == "vq" ? InitScheme::vq : InitScheme::random;
        cfg.schedule = cv_schedule == "layerwise" ? Schedule::layerwise : Schedule::joint;
        CvResult result = cross_validate_k(ds, parse_k_list(cv_klist), cfg, cv_folds);
        write_cv_summary_csv(result, cv_flags.out);
        if (!cv_table.empty()) write_cv_table_csv(result, cv_table);
        if (!cv_model.empty()) save_checkpoint(result.final_policy, cv_model);
        std::cerr << "selected k = " << result.selected_k << "\n";
        return 0;
    }

    if (seg->parsed()) {
        Dataset ds = load_dataset(seg_data);
        LoadedPolicy lp = load_checkpoint(seg_model);
        const auto* policy = std::get_if<HierarchicalPolicy>(&lp);
        if (!policy) throw Error("segment: the checkpoint holds a flat policy with no options");
        std::vector<std::vector<int>> labels;
        std::vector<double> logliks;
        for (const auto& traj : ds.trajectories) {
            labels.push_back(annotate_segments(*policy, traj));
            logliks.push_back(trajectory_loglikelihood(*policy, traj));
        }
        save_labels(labels, seg_out);
        if (!seg_loglik.empty()) {
            std::ofstream csv(seg_loglik);
            if (!csv) throw Error("cannot write " + seg_loglik);
            csv << "trajectory,loglik\n";
            for (size_t i = 0; i < logliks.size(); ++i)
                csv << i << "," << format_double(logliks[i]) << "\n";
        }
        return 0;
    }

    if (ro->parsed()) {
        if (ro_episodes < 1) throw CLI::ValidationError("--episodes", "must be >= 1");
        LoadedPolicy lp = load_checkpoint(ro_model);
        RolloutMode mode = ro_mode == "mean" ? RolloutMode::mean : RolloutMode::stochastic;
        std::vector<std::pair<int, RolloutResult>> episodes;
        double total = 0.0;
        for (int e = 0; e < ro_episodes; ++e) {
            PushEnv env;
            uint64_t ep_seed = derive_seed(ro_seed, static_cast<uint64_t>(e));
            RolloutResult r = std::holds_alternative<HierarchicalPolicy>(lp)
                                  ? rollout(std::get<HierarchicalPolicy>(lp), env, ro_horizon,
                                            ep_seed, mode)
                                  : rollout(std::get<FlatPolicy>(lp), env, ro_horizon, ep_seed,
                                            mode);
            total += r.reward;
            episodes.emplace_back(e, std::move(r));
        }
        write_trace_csv(episodes, PushEnv::obs_dim, PushEnv::control_dim, ro_out);
        if (!ro_rewards.empty()) {
            std::ofstream csv(ro_rewards);
            if (!csv) throw Error("cannot write " + ro_rewards);
            csv << "episode,reward,hc_selections,total_selections\n";
            for (const auto& [e, r] : episodes)
                csv << e << "," << r.reward << "," << r.hc_selections << ","
                    << r.total_selections << "\n";
        }
        std::cerr << "mean reward over " << ro_episodes << " episodes: " << total / ro_episodes
                  << "\n";
        return 0;
    }

    if (st->parsed()) {
        Dataset ds = load_dataset(st_flags.data);
        TrainConfig cfg = to_config(st_flags);
        StabilityReport rep = stability_report(ds, st_k, st_seeds, cfg, cfg.jobs);
        write_stability_csv(rep, st_out);
        for (const auto& r : rep.regimes)
            std::cerr << r.name << ": var=" << r.loglik_variance
                      << " nmi=" << r.mean_pairwise_nmi << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
