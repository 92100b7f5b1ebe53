#pragma once

#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "ddco/util.hpp"

namespace ddco {

enum class Arch { linear, mlp };
enum class HeadKind { gaussian, softmax, logistic, hybrid };
enum class Mode { eval, train };

struct HeadSpec {
    HeadKind kind = HeadKind::gaussian;
    int d_a = 0;  // control dimension (gaussian, hybrid)
    int m = 0;    // class count (softmax)
    int k = 0;    // option count (hybrid; logits are k+1)

    int output_dim() const;

    static HeadSpec gaussian(int d_a) { return {HeadKind::gaussian, d_a, 0, 0}; }
    static HeadSpec softmax(int m) { return {HeadKind::softmax, 0, m, 0}; }
    static HeadSpec logistic() { return {HeadKind::logistic, 0, 0, 0}; }
    static HeadSpec hybrid(int k, int d_a) { return {HeadKind::hybrid, d_a, 0, k}; }
};

bool operator==(const HeadSpec& a, const HeadSpec& b);

/// A differentiable parametric map from states to a typed head output.
/// Architectures: a linear map, or one ReLU hidden layer followed by a linear
/// readout. Parameters live in one flat vector:
///   linear: [W (out x in, row-major), b (out)]
///   mlp:    [W1 (hidden x in), b1 (hidden), W2 (out x hidden), b2 (out)]
/// For the hybrid head the raw output is [mean (d_a), logits (k+1)] where
/// logit 0 is the physical-control branch.
struct Approximator {
    Arch arch = Arch::linear;
    HeadSpec head;
    int input_dim = 0;
    int hidden_width = 0;  // mlp only
    double dropout_rate = 0.0;
    Vec params;

    int output_dim() const { return head.output_dim(); }
    int param_count() const;
};

Approximator make_approximator(Arch arch, HeadSpec head, int input_dim, int hidden_width = 64,
                               double dropout_rate = 0.0);

// Glorot-uniform weights, zero biases. The hybrid head's mean rows and logit
// rows are treated as separate output groups with their own fan-out, so the
// mean block of a hybrid head draws the same values as a standalone
// gaussian-head map given the same rng stream.
void init_params(Approximator& a, Rng& rng);
void zero_params(Approximator& a);
void validate_approximator(const Approximator& a);

struct ForwardCache {
    Vec input;
    Vec hidden_pre;   // mlp
    Vec hidden_mult;  // mlp: realized per-unit dropout multiplier (1 or 1/(1-p) or 0)
    Vec hidden_act;   // mlp: mult * relu(pre)
    Vec out;          // raw head inputs
};

// Raw network output. Train mode applies inverted dropout to the hidden layer
// (one mask draw per call) using the supplied rng.
Vec forward(const Approximator& a, std::span<const double> s, Mode mode = Mode::eval,
            Rng* rng = nullptr);
ForwardCache forward_cached(const Approximator& a, std::span<const double> s,
                            Mode mode = Mode::eval, Rng* rng = nullptr);

// accum += weight * d(out . dout)/d(params), reusing the cached activations.
void backprop(const Approximator& a, const ForwardCache& cache, const Vec& dout, double weight,
              Vec& accum);

// ---- head evaluation ----

Vec log_softmax(const Vec& logits);

struct LogisticOut {
    double psi;                // in (0,1), clamped away from the endpoints
    double log_psi;            // log psi
    double log_one_minus_psi;  // log(1 - psi)
};
LogisticOut logistic_from_preactivation(double z);

double gaussian_logdensity(std::span<const double> mu, std::span<const double> a, double sigma);

// Convenience evaluators (eval mode).
Vec gaussian_mean(const Approximator& a, std::span<const double> s);
Vec softmax_log_probs(const Approximator& a, std::span<const double> s);
double termination_prob(const Approximator& a, std::span<const double> s);

struct HybridOut {
    Vec mean;       // d_a
    Vec log_probs;  // k+1 log-probabilities, index 0 = physical control
};
HybridOut hybrid_out(const Approximator& a, std::span<const double> s);

// ---- log-probability targets and gradients ----

struct TargetControl {
    std::span<const double> a;
};  // gaussian head, or the hybrid physical-control branch
struct TargetClass {
    int index;
};  // softmax class, or hybrid option index in [0, k)
struct TargetBinary {
    bool outcome;
};  // logistic
using Target = std::variant<TargetControl, TargetClass, TargetBinary>;

// accum += weight * grad_params log p(target | s); returns log p(target | s).
// sigma is used by gaussian-density targets and ignored otherwise. With
// weight == 0 the accumulator is left untouched.
double weighted_logprob_grad(const Approximator& a, std::span<const double> s,
                             const Target& target, double weight, double sigma, Vec& accum,
                             Mode mode = Mode::eval, Rng* rng = nullptr);

// Log-density under the hybrid head: an option index scores the categorical
// branch; a control vector scores the physical-control branch times a
// normalized Gaussian around the head's mean.
double hybrid_logdensity(const Approximator& a, std::span<const double> s, const Target& target,
                         double sigma);

// Central finite differences of f, one coordinate at a time (test oracle).
Vec finite_difference_grad(const std::function<double(const Vec&)>& f, const Vec& params,
                           double step);

}  // namespace ddco
