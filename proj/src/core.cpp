#include "ddco/core.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ddco {

using nlohmann::json;

int Dataset::total_steps() const {
    int n = 0;
    for (const auto& t : trajectories) n += t.horizon();
    return n;
}

std::vector<std::string> validate_trajectory(const Trajectory& traj, int d_s, int d_a) {
    std::vector<std::string> out;
    if (traj.states.size() != traj.controls.size() + 1)
        out.push_back("length mismatch: " + std::to_string(traj.states.size()) + " states vs " +
                      std::to_string(traj.controls.size()) + " controls (need T+1 states)");
    if (traj.controls.empty()) out.push_back("trajectory must have T >= 1 controls");
    for (size_t t = 0; t < traj.states.size(); ++t) {
        const Vec& s = traj.states[t];
        if (static_cast<int>(s.size()) != d_s) {
            out.push_back("state at t=" + std::to_string(t) + " has dimension " +
                          std::to_string(s.size()) + ", expected " + std::to_string(d_s));
            continue;
        }
        for (double x : s)
            if (!std::isfinite(x)) {
                out.push_back("non-finite value at t=" + std::to_string(t) + " in state");
                break;
            }
    }
    for (size_t t = 0; t < traj.controls.size(); ++t) {
        const Vec& a = traj.controls[t];
        if (static_cast<int>(a.size()) != d_a) {
            out.push_back("control at t=" + std::to_string(t) + " has dimension " +
                          std::to_string(a.size()) + ", expected " + std::to_string(d_a));
            continue;
        }
        for (double x : a)
            if (!std::isfinite(x)) {
                out.push_back("non-finite value at t=" + std::to_string(t) + " in control");
                break;
            }
    }
    return out;
}

void validate_dataset(const Dataset& ds) {
    if (ds.trajectories.empty()) throw Error("empty dataset");
    if (ds.d_s < 1 || ds.d_a < 1) throw Error("dataset dimensions must be positive");
    for (size_t i = 0; i < ds.trajectories.size(); ++i) {
        auto violations = validate_trajectory(ds.trajectories[i], ds.d_s, ds.d_a);
        if (!violations.empty())
            throw Error("trajectory " + std::to_string(i + 1) + ": " + violations.front());
    }
}

void validate_policy(const HierarchicalPolicy& p) {
    if (!(p.sigma > 0.0)) throw Error("policy: sigma must be positive");
    if (p.head_mode == HeadMode::categorical && p.k() < 1)
        throw Error("policy: categorical head requires k >= 1");
    if (p.d_s < 1 || p.d_a < 1) throw Error("policy: dimensions must be positive");
    validate_approximator(p.high);
    if (p.head_mode == HeadMode::categorical) {
        if (p.high.head.kind != HeadKind::softmax || p.high.head.m != p.k())
            throw Error("policy: categorical high-level head must be softmax over k options");
    } else {
        if (p.high.head.kind != HeadKind::hybrid || p.high.head.k != p.k() ||
            p.high.head.d_a != p.d_a)
            throw Error("policy: hybrid high-level head must be hybrid(k, d_a)");
    }
    if (p.high.input_dim != p.d_s) throw Error("policy: high-level input dimension mismatch");
    for (const auto& opt : p.options) {
        validate_approximator(opt.policy);
        validate_approximator(opt.termination);
        if (opt.policy.head.kind != HeadKind::gaussian || opt.policy.head.d_a != p.d_a)
            throw Error("policy: option control head must be gaussian(d_a)");
        if (opt.termination.head.kind != HeadKind::logistic)
            throw Error("policy: option termination head must be logistic");
        if (opt.policy.input_dim != p.d_s || opt.termination.input_dim != p.d_s)
            throw Error("policy: option input dimension mismatch");
    }
}

namespace {

Vec parse_vec(const json& j) {
    Vec v;
    v.reserve(j.size());
    for (const auto& x : j) {
        if (!x.is_number()) throw Error("expected a number");
        v.push_back(x.get<double>());
    }
    return v;
}

std::vector<Vec> parse_vec_list(const json& j) {
    std::vector<Vec> out;
    out.reserve(j.size());
    for (const auto& row : j) {
        if (!row.is_array()) throw Error("expected an array of arrays");
        out.push_back(parse_vec(row));
    }
    return out;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset file: " + path);
    Dataset ds;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error("dataset " + path + " line " + std::to_string(lineno) +
                        ": parse failure: " + e.what());
        }
        if (!j.is_object() || !j.contains("states") || !j.contains("controls"))
            throw Error("dataset " + path + " line " + std::to_string(lineno) +
                        ": record must have \"states\" and \"controls\"");
        Trajectory traj;
        try {
            traj.states = parse_vec_list(j["states"]);
            traj.controls = parse_vec_list(j["controls"]);
        } catch (const Error& e) {
            throw Error("dataset " + path + " line " + std::to_string(lineno) + ": " + e.what());
        }
        if (ds.trajectories.empty()) {
            if (traj.states.empty() || traj.states.front().empty())
                throw Error("dataset " + path + " line " + std::to_string(lineno) +
                            ": record has no states");
            if (traj.controls.empty() || traj.controls.front().empty())
                throw Error("dataset " + path + " line " + std::to_string(lineno) +
                            ": record has no controls");
            ds.d_s = static_cast<int>(traj.states.front().size());
            ds.d_a = static_cast<int>(traj.controls.front().size());
        }
        auto violations = validate_trajectory(traj, ds.d_s, ds.d_a);
        if (!violations.empty())
            throw Error("dataset " + path + " line " + std::to_string(lineno) + ": " +
                        violations.front());
        ds.trajectories.push_back(std::move(traj));
    }
    if (ds.trajectories.empty()) throw Error("empty dataset: " + path);
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write dataset file: " + path);
    for (const auto& traj : ds.trajectories) {
        json j;
        j["states"] = traj.states;
        j["controls"] = traj.controls;
        out << j.dump() << "\n";
    }
    if (!out) throw Error("I/O failure while writing " + path);
}

std::vector<std::vector<int>> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open label file: " + path);
    std::vector<std::vector<int>> labels;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error("labels " + path + " line " + std::to_string(lineno) +
                        ": parse failure: " + e.what());
        }
        if (!j.is_object() || !j.contains("labels"))
            throw Error("labels " + path + " line " + std::to_string(lineno) +
                        ": record must have \"labels\"");
        labels.push_back(j["labels"].get<std::vector<int>>());
    }
    return labels;
}

void save_labels(const std::vector<std::vector<int>>& labels, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write label file: " + path);
    for (const auto& l : labels) {
        json j;
        j["labels"] = l;
        out << j.dump() << "\n";
    }
    if (!out) throw Error("I/O failure while writing " + path);
}

namespace {

constexpr int kCheckpointVersion = 1;

std::string arch_name(Arch a) { return a == Arch::linear ? "linear" : "mlp"; }

Arch arch_from_name(const std::string& s) {
    if (s == "linear") return Arch::linear;
    if (s == "mlp") return Arch::mlp;
    throw Error("checkpoint: unknown architecture \"" + s + "\"");
}

json head_to_json(const HeadSpec& h) {
    json j;
    switch (h.kind) {
        case HeadKind::gaussian:
            j["kind"] = "gaussian";
            j["d_a"] = h.d_a;
            break;
        case HeadKind::softmax:
            j["kind"] = "softmax";
            j["m"] = h.m;
            break;
        case HeadKind::logistic: j["kind"] = "logistic"; break;
        case HeadKind::hybrid:
            j["kind"] = "hybrid";
            j["k"] = h.k;
            j["d_a"] = h.d_a;
            break;
    }
    return j;
}

HeadSpec head_from_json(const json& j) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "gaussian") return HeadSpec::gaussian(j.at("d_a").get<int>());
    if (kind == "softmax") return HeadSpec::softmax(j.at("m").get<int>());
    if (kind == "logistic") return HeadSpec::logistic();
    if (kind == "hybrid") return HeadSpec::hybrid(j.at("k").get<int>(), j.at("d_a").get<int>());
    throw Error("checkpoint: unknown head kind \"" + kind + "\"");
}

json approx_to_json(const Approximator& a) {
    for (double x : a.params)
        if (!std::isfinite(x)) throw Error("checkpoint: cannot save non-finite parameters");
    json j;
    j["arch"] = arch_name(a.arch);
    j["input_dim"] = a.input_dim;
    if (a.arch == Arch::mlp) j["hidden_width"] = a.hidden_width;
    j["head"] = head_to_json(a.head);
    j["dropout_rate"] = a.dropout_rate;
    j["params"] = a.params;
    return j;
}

Approximator approx_from_json(const json& j) {
    Approximator a;
    a.arch = arch_from_name(j.at("arch").get<std::string>());
    a.input_dim = j.at("input_dim").get<int>();
    a.hidden_width = a.arch == Arch::mlp ? j.at("hidden_width").get<int>() : 0;
    a.head = head_from_json(j.at("head"));
    a.dropout_rate = j.value("dropout_rate", 0.0);
    a.params = j.at("params").get<Vec>();
    if (static_cast<int>(a.params.size()) != a.param_count())
        throw Error("checkpoint: parameter array length " + std::to_string(a.params.size()) +
                    " does not match architecture descriptor (" +
                    std::to_string(a.param_count()) + ")");
    validate_approximator(a);
    return a;
}

json checkpoint_header(const std::string& mode, int k, double sigma, int d_s, int d_a) {
    json j;
    j["format_version"] = kCheckpointVersion;
    j["head_mode"] = mode;
    j["k"] = k;
    j["sigma"] = sigma;
    j["d_s"] = d_s;
    j["d_a"] = d_a;
    return j;
}

void write_checkpoint(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint file: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw Error("I/O failure while writing " + path);
}

}  // namespace

void save_checkpoint(const HierarchicalPolicy& p, const std::string& path) {
    validate_policy(p);
    json j = checkpoint_header(p.head_mode == HeadMode::categorical ? "categorical" : "hybrid",
                               p.k(), p.sigma, p.d_s, p.d_a);
    j["high"] = approx_to_json(p.high);
    json opts = json::array();
    for (const auto& o : p.options) {
        json jo;
        jo["policy"] = approx_to_json(o.policy);
        jo["termination"] = approx_to_json(o.termination);
        opts.push_back(std::move(jo));
    }
    j["options"] = std::move(opts);
    write_checkpoint(j, path);
}

void save_checkpoint(const FlatPolicy& p, const std::string& path) {
    if (!(p.sigma > 0.0)) throw Error("policy: sigma must be positive");
    json j = checkpoint_header("flat", 0, p.sigma, p.d_s, p.d_a);
    j["high"] = approx_to_json(p.net);
    j["options"] = json::array();
    write_checkpoint(j, path);
}

LoadedPolicy load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error("unexpected end of checkpoint or corrupted file " + path + ": " + e.what());
    }
    int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion)
        throw Error("checkpoint version mismatch: file has " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointVersion));
    std::string mode = j.at("head_mode").get<std::string>();
    int k = j.at("k").get<int>();
    double sigma = j.at("sigma").get<double>();
    int d_s = j.at("d_s").get<int>();
    int d_a = j.at("d_a").get<int>();
    if (mode == "flat") {
        FlatPolicy p;
        p.net = approx_from_json(j.at("high"));
        p.sigma = sigma;
        p.d_s = d_s;
        p.d_a = d_a;
        if (p.net.head.kind != HeadKind::gaussian)
            throw Error("checkpoint: flat policy must have a gaussian head");
        return p;
    }
    HierarchicalPolicy p;
    if (mode == "categorical")
        p.head_mode = HeadMode::categorical;
    else if (mode == "hybrid")
        p.head_mode = HeadMode::hybrid;
    else
        throw Error("checkpoint: unknown head_mode \"" + mode + "\"");
    p.sigma = sigma;
    p.d_s = d_s;
    p.d_a = d_a;
    p.high = approx_from_json(j.at("high"));
    const json& opts = j.at("options");
    if (static_cast<int>(opts.size()) != k)
        throw Error("checkpoint: k=" + std::to_string(k) + " descriptor but " +
                    std::to_string(opts.size()) + " option parameter blocks");
    for (const auto& jo : opts) {
        OptionSpec o;
        o.policy = approx_from_json(jo.at("policy"));
        o.termination = approx_from_json(jo.at("termination"));
        p.options.push_back(std::move(o));
    }
    validate_policy(p);
    return p;
}

}  // namespace ddco
