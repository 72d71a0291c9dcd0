#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace traceprune {

// Element type of the engine. The gradient-check suite compiles this file a
// second time with TRACEPRUNE_REAL_DOUBLE to run finite differences at f64
// tolerances; the shipped library always uses f32.
#ifdef TRACEPRUNE_REAL_DOUBLE
using real = double;
#else
using real = float;
#endif

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// While a guard is alive on this thread, ops record no graph: outputs have no
// parents and drop intermediate buffers as soon as their handles go out of
// scope. Evaluation passes run under a guard so activation memory stays flat.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_recording();

// Number of threads the engine (and the BLAS backend) may use. Initialized
// from the TRACEPRUNE_THREADS environment variable, overridable at runtime.
int engine_threads();
void set_engine_threads(int n);

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One node of the compute graph: a dense row-major buffer plus, for op
// outputs, the recorded inputs and the gradient rule. The graph is the
// implicit DAG formed by `parents`; backward() walks it in exact reverse
// topological order.
struct TensorNode {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;   // persistent accumulated gradient, lazily sized
    std::vector<real> gpass;  // per-backward-pass buffer, transient
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    // Reads this->gpass, accumulates into parents' gpass (already allocated
    // and zero-filled for every parent that requires grad).
    std::function<void(TensorNode&)> backward_fn;

    int64_t numel() const { return shape_numel(shape); }
};

// Value-semantics handle to a graph node. Copying a Tensor copies the handle,
// not the buffer. One graph must not be mutated from two threads; tensors may
// be handed off between threads once no live graph references them.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, real value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<real> values,
                            bool requires_grad = false);
    // I.i.d. normal(0, stddev) fill drawn from `rng`.
    static Tensor randn(const Shape& shape, SplitMix64& rng, double stddev,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<real> data() { return {node_->data.data(), node_->data.size()}; }
    std::span<const real> data() const { return {node_->data.data(), node_->data.size()}; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<real> grad();              // allocates zeros on first use
    std::span<const real> grad() const;  // fails if never populated
    void zero_grad();

    // Scalar value of a 1-element tensor.
    real item() const;

    // Deep copy with no graph history; keeps requires_grad.
    Tensor clone_detached() const;

    NodePtr node() const { return node_; }

  private:
    NodePtr node_;
};

// ---------------------------------------------------------------------------
// Ops. Forward runs eagerly; each op records the gradient rule on the output
// node. Gradients accumulate additively: within one backward pass through the
// transient buffers, across passes into Tensor::grad (so two backward calls
// without zero_grad yield exactly doubled leaf gradients).
// ---------------------------------------------------------------------------

// Elementwise sum. `b` must have the same shape as `a` or a shape equal to a
// trailing suffix of a's shape (bias / positional-table broadcast).
Tensor add(const Tensor& a, const Tensor& b);
// Elementwise product, shapes must match.
Tensor mul(const Tensor& a, const Tensor& b);
// Multiply by a compile-time-constant scalar (attention score scaling).
Tensor scale(const Tensor& a, real factor);
Tensor relu(const Tensor& a);
// Inverted dropout. rate == 0 is the identity; the keep mask is a pure
// function of `seed`.
Tensor dropout(const Tensor& a, double rate, uint64_t seed);

// 2-D matrix product [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched product [nb,m,k] x [nb,k,n] -> [nb,m,n].
Tensor bmm(const Tensor& a, const Tensor& b);
// Batched product against the transposed right operand:
// [nb,m,k] x [nb,n,k] -> [nb,m,n] (attention scores).
Tensor bmm_nt(const Tensor& a, const Tensor& b);

// Row gather: table [V,C] indexed by ids (values in [0,V)) arranged as
// ids_shape; result shape ids_shape + [C]. Gradient scatter-adds rows.
Tensor embedding(const Tensor& table, std::span<const int32_t> ids, const Shape& ids_shape);

// Per-row normalization over the last axis: zero mean, unit population
// variance (eps inside the square root), then affine gain/bias of length d.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps);

// Softmax along the last axis, stabilized by max subtraction.
Tensor softmax(const Tensor& x);

// Additive causal mask over the trailing [T,T] axes: entries above the
// diagonal become -infinity (the one engine op whose output is deliberately
// non-finite); on-or-below-diagonal entries pass through.
Tensor causal_mask(const Tensor& scores);

// softmax(causal_mask(scores)) in one op: row i of each trailing [T,T]
// matrix is a distribution over columns 0..i, zero above the diagonal.
// Saves one score-sized buffer per attention layer.
Tensor causal_softmax(const Tensor& scores);

Tensor reshape(const Tensor& a, const Shape& new_shape);
// Axis permutation (rank <= 4), materialized.
Tensor permute(const Tensor& a, const std::vector<int>& perm);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Mean over rows of -log softmax(logits)[target]: logits [N,V], one target
// index in [0,V) per row.
Tensor cross_entropy(const Tensor& logits, std::span<const int32_t> targets);

// Reverse-mode sweep from a scalar. Accumulates dLoss/dT into the grad of
// every reachable tensor that requires grad.
void backward(const Tensor& loss);

}  // namespace traceprune
