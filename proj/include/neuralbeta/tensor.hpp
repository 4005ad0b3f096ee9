#pragma once

// Dense row-major float64 tensors with tape-based reverse-mode autodiff.
//
// Ops record themselves on the calling thread's active Tape (see TapeScope)
// whenever at least one input requires a gradient. Without an active tape,
// or with constant inputs only, ops are plain forward computations and keep
// no references to their inputs.

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "neuralbeta/errors.hpp"

namespace neuralbeta::ad {

using Shape = std::vector<std::size_t>;

// Allocator for tensor storage. Every buffer starts on a 64-byte boundary so
// vectorised kernels see the same alignment, and round the same way, on
// every run.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
    Shape shape;
    Buffer value;
    Buffer grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    std::size_t numel() const { return value.size(); }
    // Lazily allocated, zero-initialised gradient buffer.
    Buffer& grad_buffer();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, const std::vector<double>& values, bool requires_grad = false);
    static Tensor adopt(Shape shape, Buffer values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> data() const { return node_->value; }
    // Direct write access; intended for leaves (parameter init and optimiser
    // updates). Writing into a recorded intermediate invalidates backward.
    std::span<double> mutable_data() { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

class Tape {
public:
    void record(std::shared_ptr<Node> node) { nodes_.push_back(std::move(node)); }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Every
    // requires_grad leaf reachable from `loss` receives its gradient; grads
    // accumulate across repeated uses of a node.
    void backward(const Tensor& loss);

private:
    std::vector<std::shared_ptr<Node>> nodes_;
};

// Installs `tape` as the active tape of the current thread for its lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

// Convenience wrapper: backward on the active tape.
void backward(const Tensor& loss);

// ---- linear algebra --------------------------------------------------------

// Rank-2 [m,k]x[k,n] or batched rank-3 [B,m,k]x[B,k,n]; transpose flags apply
// to the trailing two dims.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

// x[..., in] * weight[in, out] + bias[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Solves A z = b for symmetric positive-definite A via Cholesky.
// A: [d,d] or [B,d,d]; b: [d] or [B,d]. Only the symmetric part of A enters
// the solve; the gradient w.r.t. A is symmetrised accordingly.
Tensor linear_solve(const Tensor& a, const Tensor& b);

// [d] -> [d,d] diagonal matrix.
Tensor diag(const Tensor& v);

// ---- elementwise ---------------------------------------------------------------

// Binary ops broadcast numpy-style on trailing dims (equal extents or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor scale(const Tensor& x, double c);

Tensor neg(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// ---- reductions and normalisation ----------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);

// Max-shifted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
// Softmax over the last axis of a [..., T, T] score tensor where row i only
// sees columns j <= i. Masked entries are exactly zero.
Tensor causal_softmax(const Tensor& scores);

// Fused multi-head causal self-attention. qkv [B, T, 3H] packs queries,
// keys and values (each split into n_heads slices of width H / n_heads);
// returns the merged context [B, T, H] with softmax(QK'/sqrt(dh)) V per head.
Tensor causal_attention(const Tensor& qkv, std::size_t n_heads);

// Normalises over the last dim, then applies gamma/beta (both [last]).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- shape manipulation --------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
// Drops `axis`, keeping entry `index`.
Tensor select(const Tensor& x, std::size_t axis, std::size_t index);
// Keeps [start, start+length) along `axis`.
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
// Stacks equally shaped tensors along a new `axis`.
Tensor stack(const std::vector<Tensor>& xs, std::size_t axis);

// ---- stochastic ----------------------------------------------------------------

// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);

}  // namespace neuralbeta::ad
