#include "ddco/approx.hpp"

#include <algorithm>
#include <cmath>

namespace ddco {

namespace {

constexpr double kMinLogProb = -27.631021115928547;  // log(1e-12)

double softplus(double x) {
    // log(1 + e^x), stable for large |x|
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

}  // namespace

int HeadSpec::output_dim() const {
    switch (kind) {
        case HeadKind::gaussian: return d_a;
        case HeadKind::softmax: return m;
        case HeadKind::logistic: return 1;
        case HeadKind::hybrid: return d_a + k + 1;
    }
    return 0;
}

bool operator==(const HeadSpec& a, const HeadSpec& b) {
    return a.kind == b.kind && a.d_a == b.d_a && a.m == b.m && a.k == b.k;
}

int Approximator::param_count() const {
    int out = output_dim();
    if (arch == Arch::linear) return out * input_dim + out;
    return hidden_width * input_dim + hidden_width + out * hidden_width + out;
}

Approximator make_approximator(Arch arch, HeadSpec head, int input_dim, int hidden_width,
                               double dropout_rate) {
    Approximator a;
    a.arch = arch;
    a.head = head;
    a.input_dim = input_dim;
    a.hidden_width = arch == Arch::mlp ? hidden_width : 0;
    a.dropout_rate = dropout_rate;
    a.params.assign(a.param_count(), 0.0);
    validate_approximator(a);
    return a;
}

void validate_approximator(const Approximator& a) {
    if (a.input_dim < 1) throw Error("approximator: input_dim must be positive");
    if (a.output_dim() < 1) throw Error("approximator: head output dimension must be positive");
    if (a.arch == Arch::mlp && a.hidden_width < 1)
        throw Error("approximator: mlp hidden width must be positive");
    if (a.dropout_rate < 0.0 || a.dropout_rate >= 1.0)
        throw Error("approximator: dropout rate must be in [0,1)");
    if (static_cast<int>(a.params.size()) != a.param_count())
        throw Error("approximator: parameter vector length does not match architecture");
}

namespace {

// Glorot-uniform rows [row_begin, row_end) of a (rows x cols) weight block,
// with the given per-group fan-out.
void glorot_rows(Vec& params, size_t w_off, int cols, int row_begin, int row_end, int fan_in,
                 int fan_out, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (int r = row_begin; r < row_end; ++r)
        for (int c = 0; c < cols; ++c)
            params[w_off + static_cast<size_t>(r) * cols + c] = rng.uniform(-bound, bound);
}

// Control-mean rows start near zero so that an untrained policy assigns a
// finite likelihood to every demonstration step; a full-scale random mean
// can sit hundreds of residual standard deviations from the data, which
// collapses the E-step posteriors before training begins.
constexpr double kControlReadoutScale = 0.01;

void scale_rows(Vec& params, size_t w_off, int cols, int row_begin, int row_end, double factor) {
    for (int r = row_begin; r < row_end; ++r)
        for (int c = 0; c < cols; ++c)
            params[w_off + static_cast<size_t>(r) * cols + c] *= factor;
}

void init_readout(Vec& params, size_t w_off, const HeadSpec& head, int fan_in, Rng& rng) {
    int out = head.output_dim();
    if (head.kind == HeadKind::hybrid) {
        glorot_rows(params, w_off, fan_in, 0, head.d_a, fan_in, head.d_a, rng);
        glorot_rows(params, w_off, fan_in, head.d_a, out, fan_in, head.k + 1, rng);
        scale_rows(params, w_off, fan_in, 0, head.d_a, kControlReadoutScale);
    } else {
        glorot_rows(params, w_off, fan_in, 0, out, fan_in, out, rng);
        if (head.kind == HeadKind::gaussian)
            scale_rows(params, w_off, fan_in, 0, out, kControlReadoutScale);
    }
}

}  // namespace

void init_params(Approximator& a, Rng& rng) {
    std::fill(a.params.begin(), a.params.end(), 0.0);
    if (a.arch == Arch::linear) {
        init_readout(a.params, 0, a.head, a.input_dim, rng);
    } else {
        glorot_rows(a.params, 0, a.input_dim, 0, a.hidden_width, a.input_dim, a.hidden_width, rng);
        size_t w2_off =
            static_cast<size_t>(a.hidden_width) * a.input_dim + a.hidden_width;
        init_readout(a.params, w2_off, a.head, a.hidden_width, rng);
    }
}

void zero_params(Approximator& a) { std::fill(a.params.begin(), a.params.end(), 0.0); }

ForwardCache forward_cached(const Approximator& a, std::span<const double> s, Mode mode,
                            Rng* rng) {
    if (static_cast<int>(s.size()) != a.input_dim)
        throw Error("forward: input has dimension " + std::to_string(s.size()) + ", expected " +
                    std::to_string(a.input_dim));
    ForwardCache c;
    c.input.assign(s.begin(), s.end());
    int out_dim = a.output_dim();
    c.out.assign(out_dim, 0.0);
    if (a.arch == Arch::linear) {
        const double* w = a.params.data();
        const double* b = w + static_cast<size_t>(out_dim) * a.input_dim;
        for (int o = 0; o < out_dim; ++o) {
            double acc = b[o];
            const double* row = w + static_cast<size_t>(o) * a.input_dim;
            for (int i = 0; i < a.input_dim; ++i) acc += row[i] * s[i];
            c.out[o] = acc;
        }
        return c;
    }
    int h = a.hidden_width;
    const double* w1 = a.params.data();
    const double* b1 = w1 + static_cast<size_t>(h) * a.input_dim;
    const double* w2 = b1 + h;
    const double* b2 = w2 + static_cast<size_t>(out_dim) * h;
    c.hidden_pre.assign(h, 0.0);
    c.hidden_mult.assign(h, 1.0);
    c.hidden_act.assign(h, 0.0);
    bool drop = mode == Mode::train && a.dropout_rate > 0.0;
    if (drop && rng == nullptr) throw Error("forward: train-mode dropout requires an rng");
    double keep_scale = drop ? 1.0 / (1.0 - a.dropout_rate) : 1.0;
    for (int j = 0; j < h; ++j) {
        double acc = b1[j];
        const double* row = w1 + static_cast<size_t>(j) * a.input_dim;
        for (int i = 0; i < a.input_dim; ++i) acc += row[i] * s[i];
        c.hidden_pre[j] = acc;
        double mult = 1.0;
        if (drop) mult = rng->uniform01() < a.dropout_rate ? 0.0 : keep_scale;
        c.hidden_mult[j] = mult;
        c.hidden_act[j] = acc > 0.0 ? mult * acc : 0.0;
    }
    for (int o = 0; o < out_dim; ++o) {
        double acc = b2[o];
        const double* row = w2 + static_cast<size_t>(o) * h;
        for (int j = 0; j < h; ++j) acc += row[j] * c.hidden_act[j];
        c.out[o] = acc;
    }
    return c;
}

Vec forward(const Approximator& a, std::span<const double> s, Mode mode, Rng* rng) {
    return forward_cached(a, s, mode, rng).out;
}

void backprop(const Approximator& a, const ForwardCache& cache, const Vec& dout, double weight,
              Vec& accum) {
    int out_dim = a.output_dim();
    if (static_cast<int>(dout.size()) != out_dim) throw Error("backprop: dout dimension mismatch");
    if (accum.size() != a.params.size()) throw Error("backprop: accumulator length mismatch");
    if (a.arch == Arch::linear) {
        size_t b_off = static_cast<size_t>(out_dim) * a.input_dim;
        for (int o = 0; o < out_dim; ++o) {
            double g = weight * dout[o];
            size_t row = static_cast<size_t>(o) * a.input_dim;
            for (int i = 0; i < a.input_dim; ++i) accum[row + i] += g * cache.input[i];
            accum[b_off + o] += g;
        }
        return;
    }
    int h = a.hidden_width;
    size_t b1_off = static_cast<size_t>(h) * a.input_dim;
    size_t w2_off = b1_off + h;
    size_t b2_off = w2_off + static_cast<size_t>(out_dim) * h;
    const double* w2 = a.params.data() + w2_off;
    Vec delta(h, 0.0);
    for (int o = 0; o < out_dim; ++o) {
        double g = weight * dout[o];
        size_t row = w2_off + static_cast<size_t>(o) * h;
        for (int j = 0; j < h; ++j) accum[row + j] += g * cache.hidden_act[j];
        accum[b2_off + o] += g;
        const double* w2row = w2 + static_cast<size_t>(o) * h;
        for (int j = 0; j < h; ++j) delta[j] += g * w2row[j];
    }
    for (int j = 0; j < h; ++j) {
        double d = cache.hidden_pre[j] > 0.0 ? delta[j] * cache.hidden_mult[j] : 0.0;
        if (d == 0.0) continue;
        size_t row = static_cast<size_t>(j) * a.input_dim;
        for (int i = 0; i < a.input_dim; ++i) accum[row + i] += d * cache.input[i];
        accum[b1_off + j] += d;
    }
}

Vec log_softmax(const Vec& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    double lse = mx + std::log(sum);
    Vec lp(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) lp[i] = logits[i] - lse;
    return lp;
}

LogisticOut logistic_from_preactivation(double z) {
    double lp = -softplus(-z);  // log sigmoid(z)
    double lq = lp - z;         // log(1 - sigmoid(z)), exact identity
    lp = std::max(lp, kMinLogProb);
    lq = std::max(lq, kMinLogProb);
    double psi = std::exp(lp);
    psi = std::min(std::max(psi, 1e-12), 1.0 - 1e-12);
    return {psi, lp, lq};
}

double gaussian_logdensity(std::span<const double> mu, std::span<const double> a, double sigma) {
    if (mu.size() != a.size()) throw Error("gaussian_logdensity: dimension mismatch");
    if (!(sigma > 0.0)) throw Error("gaussian_logdensity: sigma must be positive");
    double sq = 0.0;
    for (size_t i = 0; i < mu.size(); ++i) {
        double d = a[i] - mu[i];
        sq += d * d;
    }
    double d_a = static_cast<double>(a.size());
    return -sq / (2.0 * sigma * sigma) - 0.5 * d_a * std::log(2.0 * M_PI * sigma * sigma);
}

Vec gaussian_mean(const Approximator& a, std::span<const double> s) {
    if (a.head.kind != HeadKind::gaussian) throw Error("gaussian_mean: head is not gaussian");
    return forward(a, s);
}

Vec softmax_log_probs(const Approximator& a, std::span<const double> s) {
    if (a.head.kind != HeadKind::softmax) throw Error("softmax_log_probs: head is not softmax");
    return log_softmax(forward(a, s));
}

double termination_prob(const Approximator& a, std::span<const double> s) {
    if (a.head.kind != HeadKind::logistic) throw Error("termination_prob: head is not logistic");
    return logistic_from_preactivation(forward(a, s)[0]).psi;
}

HybridOut hybrid_out(const Approximator& a, std::span<const double> s) {
    if (a.head.kind != HeadKind::hybrid) throw Error("hybrid_out: head is not hybrid");
    Vec raw = forward(a, s);
    HybridOut h;
    h.mean.assign(raw.begin(), raw.begin() + a.head.d_a);
    Vec logits(raw.begin() + a.head.d_a, raw.end());
    h.log_probs = log_softmax(logits);
    return h;
}

namespace {

struct HeadGrad {
    double logp = 0.0;
    Vec dout;  // gradient w.r.t. the raw outputs
};

HeadGrad head_logprob_grad(const Approximator& a, const Vec& out, const Target& target,
                           double sigma) {
    HeadGrad r;
    r.dout.assign(out.size(), 0.0);
    switch (a.head.kind) {
        case HeadKind::gaussian: {
            const auto* tc = std::get_if<TargetControl>(&target);
            if (!tc) throw Error("weighted_logprob_grad: gaussian head needs a control target");
            r.logp = gaussian_logdensity(out, tc->a, sigma);
            double inv = 1.0 / (sigma * sigma);
            for (size_t i = 0; i < out.size(); ++i) r.dout[i] = (tc->a[i] - out[i]) * inv;
            return r;
        }
        case HeadKind::softmax: {
            const auto* ti = std::get_if<TargetClass>(&target);
            if (!ti) throw Error("weighted_logprob_grad: softmax head needs a class target");
            if (ti->index < 0 || ti->index >= a.head.m)
                throw Error("weighted_logprob_grad: class index out of range");
            Vec lp = log_softmax(out);
            r.logp = lp[ti->index];
            for (size_t i = 0; i < out.size(); ++i) r.dout[i] = -std::exp(lp[i]);
            r.dout[ti->index] += 1.0;
            return r;
        }
        case HeadKind::logistic: {
            const auto* tb = std::get_if<TargetBinary>(&target);
            if (!tb) throw Error("weighted_logprob_grad: logistic head needs a binary target");
            LogisticOut lo = logistic_from_preactivation(out[0]);
            if (tb->outcome) {
                r.logp = lo.log_psi;
                r.dout[0] = 1.0 - lo.psi;
            } else {
                r.logp = lo.log_one_minus_psi;
                r.dout[0] = -lo.psi;
            }
            return r;
        }
        case HeadKind::hybrid: {
            int d_a = a.head.d_a;
            Vec logits(out.begin() + d_a, out.end());
            Vec lp = log_softmax(logits);
            if (const auto* ti = std::get_if<TargetClass>(&target)) {
                if (ti->index < 0 || ti->index >= a.head.k)
                    throw Error("weighted_logprob_grad: hybrid option index out of range");
                r.logp = lp[1 + ti->index];
                for (size_t i = 0; i < lp.size(); ++i) r.dout[d_a + i] = -std::exp(lp[i]);
                r.dout[d_a + 1 + ti->index] += 1.0;
                return r;
            }
            const auto* tc = std::get_if<TargetControl>(&target);
            if (!tc) throw Error("weighted_logprob_grad: hybrid head needs a control or option target");
            std::span<const double> mu(out.data(), static_cast<size_t>(d_a));
            r.logp = lp[0] + gaussian_logdensity(mu, tc->a, sigma);
            double inv = 1.0 / (sigma * sigma);
            for (int i = 0; i < d_a; ++i) r.dout[i] = (tc->a[i] - out[i]) * inv;
            for (size_t i = 0; i < lp.size(); ++i) r.dout[d_a + i] = -std::exp(lp[i]);
            r.dout[d_a] += 1.0;
            return r;
        }
    }
    throw Error("weighted_logprob_grad: unknown head");
}

}  // namespace

double weighted_logprob_grad(const Approximator& a, std::span<const double> s,
                             const Target& target, double weight, double sigma, Vec& accum,
                             Mode mode, Rng* rng) {
    ForwardCache cache = forward_cached(a, s, mode, rng);
    HeadGrad hg = head_logprob_grad(a, cache.out, target, sigma);
    if (weight != 0.0) backprop(a, cache, hg.dout, weight, accum);
    return hg.logp;
}

double hybrid_logdensity(const Approximator& a, std::span<const double> s, const Target& target,
                         double sigma) {
    if (a.head.kind != HeadKind::hybrid) throw Error("hybrid_logdensity: head is not hybrid");
    Vec out = forward(a, s);
    return head_logprob_grad(a, out, target, sigma).logp;
}

Vec finite_difference_grad(const std::function<double(const Vec&)>& f, const Vec& params,
                           double step) {
    if (!(step > 0.0)) throw Error("finite_difference_grad: step must be positive");
    Vec g(params.size(), 0.0);
    Vec p = params;
    for (size_t i = 0; i < p.size(); ++i) {
        double saved = p[i];
        p[i] = saved + step;
        double fp = f(p);
        p[i] = saved - step;
        double fm = f(p);
        p[i] = saved;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

}  // namespace ddco
