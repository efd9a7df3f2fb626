#pragma once

#include <cstdint>
#include <functional>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "df2am/array.hpp"

// Reverse-mode differentiation over Arrays.
//
// A Tape records every primitive applied during a forward pass. Parameters are
// leaves bound to a ParamStore entry; Tape::backward accumulates d(loss)/d(param)
// into the store's gradient slots (additively, callers reset between steps).
//
// Primitives with non-differentiable points (hinge, abs, masked max/min, clamped
// log) use subgradient 0 at the kink and fold their branch decisions into
// Tape::branch_signature(), which finite_diff_check uses to detect stencils that
// straddle a kink.
namespace df2am::ad {

class ParamStore {
public:
    struct Entry {
        Array value;
        Array grad;
    };

    // Adds a parameter with a zero gradient. Names must be unique.
    Entry& add(const std::string& name, Array value);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Entry& at(const std::string& name);
    const Entry& at(const std::string& name) const;
    Array& value(const std::string& name) { return at(name).value; }
    const Array& value(const std::string& name) const { return at(name).value; }
    Array& grad(const std::string& name) { return at(name).grad; }

    // Names in insertion order.
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }
    std::size_t total_size() const;

    void zero_grad();

private:
    std::vector<std::string> order_;
    std::map<std::string, std::size_t> index_;
    std::vector<Entry> entries_;
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the Tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

    const Array& value() const;
    const Shape& shape() const { return value().shape(); }
    double item() const { return value().item(); }
    Tape* tape() const { return tape_; }
    std::uint32_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Array& out_grad)>;

    // A tape with record_gradients = false skips all backward bookkeeping.
    explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Array value);
    // Leaf bound to store[name]. Repeated calls return the same node.
    Var param(ParamStore& store, const std::string& name);

    // Records an op output. `backward` runs only if some input needs gradients.
    Var record(Array value, std::initializer_list<Var> inputs, Backward backward, const char* op);

    bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
    const Array& value(Var v) const { return nodes_[v.id()].value; }
    // Gradient slot of a node, allocated on first use.
    Array& grad(Var v);

    // Seeds d(loss)/d(loss) = 1 and propagates. Adds parameter gradients into their stores.
    void backward(Var loss);

    void note_branch(std::uint64_t decision);
    void note_kink_distance(double distance);
    std::uint64_t branch_signature() const { return signature_; }
    // Smallest observed distance of any kinked primitive's input to its kink.
    double min_kink_distance() const { return min_kink_; }

    bool recording() const { return recording_; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Array value;
        Array grad;
        bool needs_grad = false;
        Backward backward;
        ParamStore* store = nullptr;
        std::string param_name;
    };

    bool recording_;
    std::deque<Node> nodes_;
    std::map<std::pair<ParamStore*, std::string>, std::uint32_t> param_nodes_;
    std::uint64_t signature_ = 0xcbf29ce484222325ULL;
    double min_kink_ = 1e300;
};

// ---- primitives -------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var square(Var a);
Var abs(Var a);
Var relu(Var a);
// max(x, 0), subgradient 0 at 0.
Var hinge(Var a);
Var log(Var a);
// log(max(x, floor)); entries at or below floor get zero gradient and bump *clamp_count.
Var log_clamped(Var a, double floor, std::size_t* clamp_count);

Var reshape(Var a, Shape shape);
Var sum(Var a);
Var mean(Var a);
// [n, c] -> [n]
Var row_sum(Var a);

// [m, k] x [k, n] -> [m, n]
Var matmul(Var a, Var b);
// x [n, d], weight [out, d], bias [out] -> x * weight^T + bias, [n, out]
Var linear(Var x, Var weight, Var bias);
// x [n, c] + row [c] broadcast over rows.
Var add_row(Var x, Var row);
// x [n, c] * row [c] broadcast over rows.
Var mul_row(Var x, Var row);

// x [B, Ci, H, W], weight [Co, Ci, k, k], bias [Co]; zero padding.
Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad);

// Softmax along the last axis of a rank-2 array (or of a vector).
Var softmax(Var a);
// x [n, c], picks x[i, index[i]] -> [n]
Var pick(Var x, const std::vector<std::size_t>& index);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var concat_rows(Var a, Var b);

// x [n, d] -> x_i / ||x_i||. Rows with norm below eps raise NumericalError naming the row.
Var l2_normalize_rows(Var x, double eps = 1e-12);
// x [n, d] -> [n, n] Euclidean distances. Gradient through a zero distance is 0.
Var pairwise_distance(Var x);
// d [n, n]; per row, max/min over entries where mask is true. Each row needs a true entry.
Var masked_row_max(Var d, const std::vector<bool>& mask);
Var masked_row_min(Var d, const std::vector<bool>& mask);

// x [B, C, H, W] -> [B, C], mean over all spatial positions.
Var spatial_mean(Var x);
// x [B, C, H, W] -> [B, P, C]; part p averages rows [p*H/P, (p+1)*H/P).
Var band_means(Var x, std::size_t parts);
// parts [B, P, C], weights [P] -> [B, C], sum_p weights[p] * parts[:, p, :]
Var weighted_parts(Var parts, Var weights);

struct BatchNormResult {
    Var out;
    Array batch_mean;
    Array batch_var;  // biased
};
// x [n, c]; normalizes with batch statistics, then gamma * xhat + beta. n >= 2.
BatchNormResult batchnorm_train(Var x, Var gamma, Var beta, double eps);
// x [n, c]; (x - mean) / sqrt(var + eps) * gamma + beta with fixed statistics.
Var batchnorm_infer(Var x, Var gamma, Var beta, const Array& mean, const Array& var, double eps);

// ---- drivers ----------------------------------------------------------------

using LossFn = std::function<Var(Tape&, ParamStore&)>;

// Evaluates loss_fn, back-propagates, and adds gradients into `params`. Returns the loss.
double forward_backward(const LossFn& loss_fn, ParamStore& params);
// Forward only.
double evaluate(const LossFn& loss_fn, ParamStore& params);

struct GradCheckResult {
    double max_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    // Coordinates whose central-difference stencil crossed a kink; excluded from max_error.
    std::size_t kink_crossings = 0;
    // Retries at a shifted base point after a stencil crossed a kink.
    std::size_t nudges = 0;
};

// Compares analytic gradients with (f(x+h) - f(x-h)) / 2h at sample_count coordinates
// drawn without replacement. Error is relative, or absolute when |analytic| < 1e-8.
// When a stencil straddles a kink, the coordinate's base point is shifted by `nudge`
// (up to max_nudges times) and both gradients are recomputed there.
// Leaves parameter values unchanged and gradients zeroed.
GradCheckResult finite_diff_check(const LossFn& loss_fn, ParamStore& params, double step,
                                  std::size_t sample_count, std::uint64_t seed, double nudge = 0.0,
                                  std::size_t max_nudges = 3);

}  // namespace df2am::ad
