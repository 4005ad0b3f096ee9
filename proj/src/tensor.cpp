#include "neuralbeta/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace neuralbeta::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

thread_local Tape* g_active_tape = nullptr;

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

// Builds the result node and, when a gradient is needed, records it on the
// active tape. `make_backward` is only invoked in that case so that saved
// intermediates are not copied during inference.
template <typename MakeBackward>
Tensor finish(Shape shape, Buffer value, std::initializer_list<const Tensor*> inputs,
              MakeBackward&& make_backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    Tape* tape = g_active_tape;
    if (tape != nullptr && any_requires_grad(inputs)) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (const Tensor* t : inputs) node->inputs.push_back(t->node());
        node->backward_fn = make_backward();
        tape->record(node);
    }
    return Tensor(node);
}

void require(bool cond, const std::string& what) {
    if (!cond) throw ShapeError(what);
}

// ---- broadcasting ----

enum class BroadcastKind { Same, BRepeats, ARepeats, General };

struct BroadcastPlan {
    Shape out_shape;
    BroadcastKind kind = BroadcastKind::Same;
    std::size_t a_numel = 0;
    std::size_t b_numel = 0;
    std::vector<std::size_t> a_index;  // General only
    std::vector<std::size_t> b_index;

    std::size_t ai(std::size_t i) const {
        switch (kind) {
            case BroadcastKind::Same:
            case BroadcastKind::BRepeats: return i;
            case BroadcastKind::ARepeats: return i % a_numel;
            default: return a_index[i];
        }
    }
    std::size_t bi(std::size_t i) const {
        switch (kind) {
            case BroadcastKind::Same:
            case BroadcastKind::ARepeats: return i;
            case BroadcastKind::BRepeats: return i % b_numel;
            default: return b_index[i];
        }
    }
};

Shape strip_leading_ones(const Shape& s) {
    std::size_t k = 0;
    while (k < s.size() && s[k] == 1) ++k;
    return Shape(s.begin() + static_cast<std::ptrdiff_t>(k), s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
    Shape s = strip_leading_ones(small);
    if (s.size() > big.size()) return false;
    return std::equal(s.begin(), s.end(), big.end() - static_cast<std::ptrdiff_t>(s.size()));
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    plan.a_numel = shape_numel(a);
    plan.b_numel = shape_numel(b);
    if (a == b) {
        plan.out_shape = a;
        plan.kind = BroadcastKind::Same;
        return plan;
    }
    if (a.size() >= b.size() && is_suffix(b, a)) {
        plan.out_shape = a;
        plan.kind = BroadcastKind::BRepeats;
        return plan;
    }
    if (b.size() >= a.size() && is_suffix(a, b)) {
        plan.out_shape = b;
        plan.kind = BroadcastKind::ARepeats;
        return plan;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
    plan.out_shape.resize(rank);
    for (std::size_t k = 0; k < rank; ++k) {
        if (pa[k] != pb[k] && pa[k] != 1 && pb[k] != 1) {
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        plan.out_shape[k] = std::max(pa[k], pb[k]);
    }
    std::vector<std::size_t> sa(rank), sb(rank);
    std::size_t acc_a = 1, acc_b = 1;
    for (std::size_t k = rank; k-- > 0;) {
        sa[k] = pa[k] == 1 ? 0 : acc_a;
        sb[k] = pb[k] == 1 ? 0 : acc_b;
        acc_a *= pa[k];
        acc_b *= pb[k];
    }
    const std::size_t n = shape_numel(plan.out_shape);
    plan.kind = BroadcastKind::General;
    plan.a_index.resize(n);
    plan.b_index.resize(n);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t ia = 0, ib = 0;
        for (std::size_t k = 0; k < rank; ++k) {
            ia += idx[k] * sa[k];
            ib += idx[k] * sb[k];
        }
        plan.a_index[i] = ia;
        plan.b_index[i] = ib;
        for (std::size_t k = rank; k-- > 0;) {
            if (++idx[k] < plan.out_shape[k]) break;
            idx[k] = 0;
        }
    }
    return plan;
}

// Binary elementwise op. `f(a,b)` is the value; `da(a,b,y)` and `db(a,b,y)`
// the partial derivatives.
template <typename F, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, DA da, DB db) {
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
    const std::size_t n = shape_numel(plan->out_shape);
    Buffer out(n);
    auto av = a.data();
    auto bv = b.data();
    if (plan->kind == BroadcastKind::Same) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(av[plan->ai(i)], bv[plan->bi(i)]);
    }
    Shape shape = plan->out_shape;
    return finish(std::move(shape), std::move(out), {&a, &b}, [&] {
        return [plan, da, db](Node& self) {
            Node& an = *self.inputs[0];
            Node& bn = *self.inputs[1];
            const std::size_t n = self.numel();
            if (an.requires_grad) {
                auto& ga = an.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t ia = plan->ai(i);
                    const std::size_t ib = plan->bi(i);
                    ga[ia] += self.grad[i] * da(an.value[ia], bn.value[ib], self.value[i]);
                }
            }
            if (bn.requires_grad) {
                auto& gb = bn.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t ia = plan->ai(i);
                    const std::size_t ib = plan->bi(i);
                    gb[ib] += self.grad[i] * db(an.value[ia], bn.value[ib], self.value[i]);
                }
            }
        };
    });
}

// Unary elementwise op with derivative `df(x, y)`.
template <typename F, typename DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
    auto xv = x.data();
    Buffer out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return finish(x.shape(), std::move(out), {&x}, [&] {
        return [df](Node& self) {
            Node& xn = *self.inputs[0];
            auto& gx = xn.grad_buffer();
            for (std::size_t i = 0; i < self.numel(); ++i) {
                gx[i] += self.grad[i] * df(xn.value[i], self.value[i]);
            }
        };
    });
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

void check_finite(std::span<const double> v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NonFiniteError(std::string(op) + " produced a non-finite value");
    }
}

// outer x axis x inner decomposition for axis-wise kernels
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit r;
    for (std::size_t k = 0; k < axis; ++k) r.outer *= s[k];
    r.extent = s[axis];
    for (std::size_t k = axis + 1; k < s.size(); ++k) r.inner *= s[k];
    return r;
}

}  // namespace

// ---- basics ----

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Buffer& Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return adopt(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, const std::vector<double>& values, bool requires_grad) {
    return adopt(std::move(shape), Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::adopt(Shape shape, Buffer values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw ShapeError("axis out of range");
    return node_->shape[axis];
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ShapeError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t k = 0;
    for (std::size_t i : index) {
        if (i >= node_->shape[k]) throw BoundsError("index out of range");
        flat = flat * node_->shape[k] + i;
        ++k;
    }
    return node_->value[flat];
}

// ---- tape ----

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss");
    }
    if (!loss.requires_grad()) {
        throw ContractError("loss is not connected to any parameter on this tape");
    }
    const auto& root = loss.node();
    auto it = std::find(nodes_.rbegin(), nodes_.rend(), root);
    root->grad_buffer()[0] += 1.0;
    if (it == nodes_.rend()) return;  // loss is a leaf
    for (; it != nodes_.rend(); ++it) {
        Node& node = **it;
        if (node.grad.empty() || !node.backward_fn) continue;
        node.backward_fn(node);
    }
}

void backward(const Tensor& loss) {
    if (g_active_tape == nullptr) throw ContractError("backward called without an active tape");
    g_active_tape->backward(loss);
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
    require(a.rank() == b.rank() && (a.rank() == 2 || a.rank() == 3),
            "matmul expects two rank-2 or two rank-3 tensors, got " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
    const bool batched = a.rank() == 3;
    const std::size_t batch = batched ? a.dim(0) : 1;
    if (batched) require(b.dim(0) == batch, "matmul batch mismatch");
    const std::size_t off = batched ? 1 : 0;
    const std::size_t ar = a.dim(off), ac = a.dim(off + 1);
    const std::size_t br = b.dim(off), bc = b.dim(off + 1);
    const std::size_t m = transpose_a ? ac : ar;
    const std::size_t k = transpose_a ? ar : ac;
    const std::size_t kb = transpose_b ? bc : br;
    const std::size_t n = transpose_b ? br : bc;
    if (k != kb) {
        throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Buffer out(batch * m * n);
    const auto* ap = a.data().data();
    const auto* bp = b.data().data();
    for (std::size_t i = 0; i < batch; ++i) {
        MapConstMat A(ap + i * ar * ac, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
        MapConstMat B(bp + i * br * bc, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
        MapMat C(out.data() + i * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        if (!transpose_a && !transpose_b) C.noalias() = A * B;
        else if (transpose_a && !transpose_b) C.noalias() = A.transpose() * B;
        else if (!transpose_a && transpose_b) C.noalias() = A * B.transpose();
        else C.noalias() = A.transpose() * B.transpose();
    }
    Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
    return finish(std::move(shape), std::move(out), {&a, &b}, [&] {
        return [=](Node& self) {
            Node& an = *self.inputs[0];
            Node& bn = *self.inputs[1];
            double* ga = an.requires_grad ? an.grad_buffer().data() : nullptr;
            double* gb = bn.requires_grad ? bn.grad_buffer().data() : nullptr;
            for (std::size_t i = 0; i < batch; ++i) {
                MapConstMat A(an.value.data() + i * ar * ac, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
                MapConstMat B(bn.value.data() + i * br * bc, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
                MapConstMat G(self.grad.data() + i * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
                if (ga != nullptr) {
                    MapMat GA(ga + i * ar * ac, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
                    if (!transpose_a && !transpose_b) GA.noalias() += G * B.transpose();
                    else if (transpose_a && !transpose_b) GA.noalias() += B * G.transpose();
                    else if (!transpose_a && transpose_b) GA.noalias() += G * B;
                    else GA.noalias() += B.transpose() * G.transpose();
                }
                if (gb != nullptr) {
                    MapMat GB(gb + i * br * bc, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
                    if (!transpose_a && !transpose_b) GB.noalias() += A.transpose() * G;
                    else if (transpose_a && !transpose_b) GB.noalias() += A * G;
                    else if (!transpose_a && transpose_b) GB.noalias() += G.transpose() * A;
                    else GB.noalias() += G.transpose() * A.transpose();
                }
            }
        };
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require(x.rank() >= 1 && weight.rank() == 2 && bias.rank() == 1, "linear: bad ranks");
    const std::size_t in = weight.dim(0);
    const std::size_t outd = weight.dim(1);
    require(x.shape().back() == in, "linear: input width " + std::to_string(x.shape().back()) +
                                        " does not match weight " + shape_str(weight.shape()));
    require(bias.dim(0) == outd, "linear: bias shape mismatch");
    const std::size_t rows = x.numel() / in;
    Buffer out(rows * outd);
    MapConstMat X(x.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in));
    MapConstMat W(weight.data().data(), static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(outd));
    Eigen::Map<const Eigen::RowVectorXd> bvec(bias.data().data(), static_cast<Eigen::Index>(outd));
    MapMat Y(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(outd));
    Y.noalias() = X * W;
    Y.rowwise() += bvec;
    Shape shape = x.shape();
    shape.back() = outd;
    return finish(std::move(shape), std::move(out), {&x, &weight, &bias}, [&] {
        return [rows, in, outd](Node& self) {
            Node& xn = *self.inputs[0];
            Node& wn = *self.inputs[1];
            Node& bn = *self.inputs[2];
            MapConstMat G(self.grad.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(outd));
            if (xn.requires_grad) {
                MapConstMat W(wn.value.data(), static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(outd));
                MapMat GX(xn.grad_buffer().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in));
                GX.noalias() += G * W.transpose();
            }
            if (wn.requires_grad) {
                MapConstMat X(xn.value.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in));
                MapMat GW(wn.grad_buffer().data(), static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(outd));
                GW.noalias() += X.transpose() * G;
            }
            if (bn.requires_grad) {
                Eigen::Map<Eigen::RowVectorXd> GB(bn.grad_buffer().data(), static_cast<Eigen::Index>(outd));
                GB += G.colwise().sum();
            }
        };
    });
}

Tensor linear_solve(const Tensor& a, const Tensor& b) {
    const bool batched = a.rank() == 3;
    require((a.rank() == 2 && b.rank() == 1) || (a.rank() == 3 && b.rank() == 2),
            "linear_solve expects A[d,d], b[d] or A[B,d,d], b[B,d]");
    const std::size_t batch = batched ? a.dim(0) : 1;
    const std::size_t d = b.shape().back();
    require(a.shape()[a.rank() - 1] == d && a.shape()[a.rank() - 2] == d,
            "linear_solve: A " + shape_str(a.shape()) + " incompatible with b " + shape_str(b.shape()));
    if (batched) require(b.dim(0) == batch, "linear_solve batch mismatch");
    const auto di = static_cast<Eigen::Index>(d);

    auto factors = std::make_shared<std::vector<Eigen::LLT<Eigen::MatrixXd>>>();
    factors->reserve(batch);
    Buffer out(batch * d);
    for (std::size_t i = 0; i < batch; ++i) {
        MapConstMat A(a.data().data() + i * d * d, di, di);
        Eigen::MatrixXd sym = 0.5 * (A + A.transpose());
        Eigen::LLT<Eigen::MatrixXd> llt(sym);
        if (llt.info() != Eigen::Success || !(llt.rcond() >= 1e-12)) {
            throw SingularSystemError("linear_solve: system " + std::to_string(i) +
                                      " is not positive definite within tolerance");
        }
        Eigen::Map<const Eigen::VectorXd> rhs(b.data().data() + i * d, di);
        Eigen::Map<Eigen::VectorXd>(out.data() + i * d, di) = llt.solve(rhs);
        factors->push_back(std::move(llt));
    }
    Shape shape = b.shape();
    return finish(std::move(shape), std::move(out), {&a, &b}, [&] {
        return [factors, batch, d, di](Node& self) {
            Node& an = *self.inputs[0];
            Node& bn = *self.inputs[1];
            for (std::size_t i = 0; i < batch; ++i) {
                Eigen::Map<const Eigen::VectorXd> g(self.grad.data() + i * d, di);
                Eigen::VectorXd adj = (*factors)[i].solve(g);
                if (bn.requires_grad) {
                    Eigen::Map<Eigen::VectorXd>(bn.grad_buffer().data() + i * d, di) += adj;
                }
                if (an.requires_grad) {
                    Eigen::Map<const Eigen::VectorXd> z(self.value.data() + i * d, di);
                    MapMat GA(an.grad_buffer().data() + i * d * d, di, di);
                    GA.noalias() -= 0.5 * (adj * z.transpose() + z * adj.transpose());
                }
            }
        };
    });
}

Tensor diag(const Tensor& v) {
    require(v.rank() == 1, "diag expects a vector");
    const std::size_t d = v.dim(0);
    Buffer out(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) out[i * d + i] = v.data()[i];
    return finish({d, d}, std::move(out), {&v}, [&] {
        return [d](Node& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < d; ++i) g[i] += self.grad[i * d + i];
        };
    });
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (double y : b.data()) {
        if (y == 0.0) throw NonFiniteError("div: division by zero");
    }
    Tensor out = binary_op(
        a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double q) { return -q / y; });
    check_finite(out.data(), "div");
    return out;
}

Tensor add_scalar(const Tensor& x, double c) {
    return unary_op(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& x, double c) {
    return unary_op(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor tanh(const Tensor& x) {
    return unary_op(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
    Tensor out = unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
    check_finite(out.data(), "exp");
    return out;
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) throw NonFiniteError("log: non-positive argument");
    }
    return unary_op(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor softplus(const Tensor& x) {
    return unary_op(x, stable_softplus, [](double v, double) { return stable_sigmoid(v); });
}

Tensor square(const Tensor& x) {
    return unary_op(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor relu(const Tensor& x) {
    return unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return finish({}, {s}, {&x}, [&] {
        return [](Node& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (double& v : g) v += self.grad[0];
        };
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ContractError("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, std::size_t axis) {
    const AxisSplit s = split_axis(x.shape(), axis);
    Buffer out(s.outer * s.inner, 0.0);
    auto xv = x.data();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.extent; ++k)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.extent + k) * s.inner + i];
    Shape shape = x.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    return finish(std::move(shape), std::move(out), {&x}, [&] {
        return [s](Node& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t k = 0; k < s.extent; ++k)
                    for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.extent + k) * s.inner + i] += self.grad[o * s.inner + i];
        };
    });
}

Tensor mean(const Tensor& x, std::size_t axis) {
    const std::size_t extent = split_axis(x.shape(), axis).extent;
    if (extent == 0) throw ContractError("mean over empty axis");
    return scale(sum(x, axis), 1.0 / static_cast<double>(extent));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const AxisSplit s = split_axis(x.shape(), axis);
    if (s.extent == 0) throw ContractError("softmax over empty axis");
    auto xv = x.data();
    Buffer out(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            double mx = xv[base];
            for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, xv[base + k * s.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < s.extent; ++k) {
                const double e = std::exp(xv[base + k * s.inner] - mx);
                out[base + k * s.inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= z;
        }
    }
    return finish(x.shape(), std::move(out), {&x}, [&] {
        return [s](Node& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t o = 0; o < s.outer; ++o) {
                for (std::size_t i = 0; i < s.inner; ++i) {
                    const std::size_t base = o * s.extent * s.inner + i;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < s.extent; ++k) {
                        dot += self.grad[base + k * s.inner] * self.value[base + k * s.inner];
                    }
                    for (std::size_t k = 0; k < s.extent; ++k) {
                        const std::size_t j = base + k * s.inner;
                        g[j] += self.value[j] * (self.grad[j] - dot);
                    }
                }
            }
        };
    });
}

Tensor causal_softmax(const Tensor& scores) {
    require(scores.rank() >= 2, "causal_softmax expects [..., T, T]");
    const std::size_t t = scores.shape().back();
    require(scores.shape()[scores.rank() - 2] == t, "causal_softmax expects square trailing dims");
    const std::size_t mats = t == 0 ? 0 : scores.numel() / (t * t);
    auto xv = scores.data();
    Buffer out(xv.size(), 0.0);
    for (std::size_t m = 0; m < mats; ++m) {
        for (std::size_t r = 0; r < t; ++r) {
            const double* row = xv.data() + (m * t + r) * t;
            double* orow = out.data() + (m * t + r) * t;
            double mx = row[0];
            for (std::size_t c = 1; c <= r; ++c) mx = std::max(mx, row[c]);
            double z = 0.0;
            for (std::size_t c = 0; c <= r; ++c) {
                orow[c] = std::exp(row[c] - mx);
                z += orow[c];
            }
            const double inv = 1.0 / z;
            for (std::size_t c = 0; c <= r; ++c) orow[c] *= inv;
        }
    }
    return finish(scores.shape(), std::move(out), {&scores}, [&] {
        return [mats, t](Node& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t m = 0; m < mats; ++m) {
                for (std::size_t r = 0; r < t; ++r) {
                    const std::size_t base = (m * t + r) * t;
                    double dot = 0.0;
                    for (std::size_t c = 0; c <= r; ++c) dot += self.grad[base + c] * self.value[base + c];
                    for (std::size_t c = 0; c <= r; ++c) {
                        g[base + c] += self.value[base + c] * (self.grad[base + c] - dot);
                    }
                }
            }
        };
    });
}

namespace {

// Head width DH as a compile-time constant (0 = runtime) so the inner
// loops fully unroll and vectorise for the common widths.
template <std::size_t DH>
void attention_forward(const double* src, double* out, double* probs, std::size_t batch, std::size_t t,
                       std::size_t width, std::size_t hidden, std::size_t n_heads, std::size_t dh_rt, double sc) {
    const std::size_t dh = DH == 0 ? dh_rt : DH;
    const std::size_t tri = t * (t + 1) / 2;
    Buffer kt(dh * t);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t hd = 0; hd < n_heads; ++hd) {
            const double* q = src + b * t * width + hd * dh;
            const double* k = q + hidden;
            const double* v = q + 2 * hidden;
            double* pp = probs + (b * n_heads + hd) * tri;
            double* o = out + b * t * hidden + hd * dh;
            for (std::size_t j = 0; j < t; ++j)
                for (std::size_t c = 0; c < dh; ++c) kt[c * t + j] = k[j * width + c] * sc;
            for (std::size_t i = 0; i < t; ++i) {
                double* row = pp + i * (i + 1) / 2;
                const double* qi = q + i * width;
                for (std::size_t j = 0; j <= i; ++j) row[j] = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                    const double qc = qi[c];
                    const double* ktc = kt.data() + c * t;
                    for (std::size_t j = 0; j <= i; ++j) row[j] += qc * ktc[j];
                }
                double mx = row[0];
                for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
                Eigen::Map<Eigen::ArrayXd> r(row, static_cast<Eigen::Index>(i + 1));
                r = (r - mx).exp();
                const double inv = 1.0 / r.sum();
                double* oi = o + i * hidden;
                for (std::size_t j = 0; j <= i; ++j) {
                    row[j] *= inv;
                    const double pij = row[j];
                    const double* vj = v + j * width;
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += pij * vj[c];
                }
            }
        }
    }
}

template <std::size_t DH>
void attention_backward(const double* src, const double* go_all, const double* probs, double* g, std::size_t batch,
                        std::size_t t, std::size_t width, std::size_t hidden, std::size_t n_heads, std::size_t dh_rt,
                        double sc) {
    const std::size_t dh = DH == 0 ? dh_rt : DH;
    const std::size_t tri = t * (t + 1) / 2;
    Buffer ds(t), vt(dh * t);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t hd = 0; hd < n_heads; ++hd) {
            const std::size_t off = b * t * width + hd * dh;
            const double* q = src + off;
            const double* k = q + hidden;
            const double* v = q + 2 * hidden;
            double* gq = g + off;
            double* gk = gq + hidden;
            double* gv = gq + 2 * hidden;
            const double* go = go_all + b * t * hidden + hd * dh;
            const double* pp = probs + (b * n_heads + hd) * tri;
            for (std::size_t j = 0; j < t; ++j)
                for (std::size_t c = 0; c < dh; ++c) vt[c * t + j] = v[j * width + c];
            for (std::size_t i = 0; i < t; ++i) {
                const double* row = pp + i * (i + 1) / 2;
                const double* goi = go + i * hidden;
                for (std::size_t j = 0; j <= i; ++j) ds[j] = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                    const double gc = goi[c];
                    const double* vtc = vt.data() + c * t;
                    for (std::size_t j = 0; j <= i; ++j) ds[j] += gc * vtc[j];
                }
                double dot = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    dot += row[j] * ds[j];
                    double* gvj = gv + j * width;
                    for (std::size_t c = 0; c < dh; ++c) gvj[c] += row[j] * goi[c];
                }
                const double* qi = q + i * width;
                double* gqi = gq + i * width;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double dsj = row[j] * (ds[j] - dot) * sc;
                    const double* kj = k + j * width;
                    double* gkj = gk + j * width;
                    for (std::size_t c = 0; c < dh; ++c) {
                        gqi[c] += dsj * kj[c];
                        gkj[c] += dsj * qi[c];
                    }
                }
            }
        }
    }
}

#define NB_DISPATCH_DH(fn, dh, ...)                 \
    switch (dh) {                                   \
        case 8: fn<8>(__VA_ARGS__); break;          \
        case 16: fn<16>(__VA_ARGS__); break;        \
        case 32: fn<32>(__VA_ARGS__); break;        \
        case 64: fn<64>(__VA_ARGS__); break;        \
        default: fn<0>(__VA_ARGS__); break;         \
    }

}  // namespace

Tensor causal_attention(const Tensor& qkv, std::size_t n_heads) {
    require(qkv.rank() == 3, "causal_attention expects qkv [B, T, 3H]");
    require(n_heads >= 1 && qkv.dim(2) % (3 * n_heads) == 0, "causal_attention: width not divisible by 3 * heads");
    const std::size_t batch = qkv.dim(0), t = qkv.dim(1), width = qkv.dim(2), hidden = width / 3;
    const std::size_t dh = hidden / n_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    // lower-triangular probabilities per (batch, head), packed row by row
    const std::size_t tri = t * (t + 1) / 2;
    auto probs = std::make_shared<Buffer>(batch * n_heads * tri);
    Buffer out(batch * t * hidden, 0.0);
    NB_DISPATCH_DH(attention_forward, dh, qkv.data().data(), out.data(), probs->data(), batch, t, width, hidden,
                   n_heads, dh, sc)
    return finish({batch, t, hidden}, std::move(out), {&qkv}, [&] {
        return [probs, batch, t, width, hidden, n_heads, dh, sc](Node& self) {
            Node& in = *self.inputs[0];
            auto& g = in.grad_buffer();
            NB_DISPATCH_DH(attention_backward, dh, in.value.data(), self.grad.data(), probs->data(), g.data(), batch,
                           t, width, hidden, n_heads, dh, sc)
        };
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require(x.rank() >= 1, "layer_norm expects rank >= 1");
    const std::size_t n = x.shape().back();
    require(gamma.rank() == 1 && gamma.dim(0) == n && beta.rank() == 1 && beta.dim(0) == n,
            "layer_norm: gamma/beta must be [" + std::to_string(n) + "]");
    const std::size_t rows = n == 0 ? 0 : x.numel() / n;
    auto xv = x.data();
    auto gv = gamma.data();
    auto bv = beta.data();
    auto xhat = std::make_shared<Buffer>(xv.size());
    auto rstd = std::make_shared<Buffer>(rows);
    Buffer out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * n;
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += row[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<double>(n);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t i = 0; i < n; ++i) {
            const double h = (row[i] - mu) * rs;
            (*xhat)[r * n + i] = h;
            out[r * n + i] = h * gv[i] + bv[i];
        }
    }
    return finish(x.shape(), std::move(out), {&x, &gamma, &beta}, [&] {
        return [xhat, rstd, rows, n](Node& self) {
            Node& xn = *self.inputs[0];
            Node& gn = *self.inputs[1];
            Node& bn = *self.inputs[2];
            double* gx = xn.requires_grad ? xn.grad_buffer().data() : nullptr;
            double* gg = gn.requires_grad ? gn.grad_buffer().data() : nullptr;
            double* gb = bn.requires_grad ? bn.grad_buffer().data() : nullptr;
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = self.grad.data() + r * n;
                const double* h = xhat->data() + r * n;
                if (gg != nullptr)
                    for (std::size_t i = 0; i < n; ++i) gg[i] += g[i] * h[i];
                if (gb != nullptr)
                    for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
                if (gx != nullptr) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double dh = g[i] * gn.value[i];
                        m1 += dh;
                        m2 += dh * h[i];
                    }
                    m1 *= inv_n;
                    m2 *= inv_n;
                    const double rs = (*rstd)[r];
                    for (std::size_t i = 0; i < n; ++i) {
                        gx[r * n + i] += rs * (g[i] * gn.value[i] - m1 - h[i] * m2);
                    }
                }
            }
        };
    });
}

// ---- shape manipulation ----

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    Buffer out(x.data().begin(), x.data().end());
    return finish(std::move(shape), std::move(out), {&x}, [&] {
        return [](Node& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        };
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
    const std::size_t rank = x.rank();
    require(order.size() == rank, "permute: order rank mismatch");
    std::vector<bool> seen(rank, false);
    for (std::size_t k : order) {
        require(k < rank && !seen[k], "permute: invalid order");
        seen[k] = true;
    }
    const Shape& in_shape = x.shape();
    std::vector<std::size_t> in_stride(rank, 1);
    for (std::size_t k = rank; k-- > 1;) in_stride[k - 1] = in_stride[k] * in_shape[k];
    Shape out_shape(rank);
    std::vector<std::size_t> src_stride(rank);
    for (std::size_t k = 0; k < rank; ++k) {
        out_shape[k] = in_shape[order[k]];
        src_stride[k] = in_stride[order[k]];
    }
    const std::size_t n = x.numel();
    auto src_index = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t s = 0;
        for (std::size_t k = 0; k < rank; ++k) s += idx[k] * src_stride[k];
        (*src_index)[i] = s;
        for (std::size_t k = rank; k-- > 0;) {
            if (++idx[k] < out_shape[k]) break;
            idx[k] = 0;
        }
    }
    Buffer out(n);
    auto xv = x.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*src_index)[i]];
    return finish(std::move(out_shape), std::move(out), {&x}, [&] {
        return [src_index](Node& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < src_index->size(); ++i) g[(*src_index)[i]] += self.grad[i];
        };
    });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    const AxisSplit s = split_axis(x.shape(), axis);
    if (start + length > s.extent) throw BoundsError("narrow: range exceeds axis extent");
    Buffer out(s.outer * length * s.inner);
    auto xv = x.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * s.extent + start) * s.inner),
                    length * s.inner, out.begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
    }
    Shape shape = x.shape();
    shape[axis] = length;
    return finish(std::move(shape), std::move(out), {&x}, [&] {
        return [s, start, length](Node& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t o = 0; o < s.outer; ++o) {
                const double* src = self.grad.data() + o * length * s.inner;
                double* dst = g.data() + (o * s.extent + start) * s.inner;
                for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
            }
        };
    });
}

Tensor select(const Tensor& x, std::size_t axis, std::size_t index) {
    Tensor sliced = narrow(x, axis, index, 1);
    Shape shape = x.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    return reshape(sliced, std::move(shape));
}

Tensor stack(const std::vector<Tensor>& xs, std::size_t axis) {
    if (xs.empty()) throw ContractError("stack of zero tensors");
    const Shape& base = xs.front().shape();
    if (axis > base.size()) throw ShapeError("stack axis out of range");
    for (const auto& t : xs) {
        if (t.shape() != base) throw ShapeError("stack: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(base));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t k = 0; k < axis; ++k) outer *= base[k];
    for (std::size_t k = axis; k < base.size(); ++k) inner *= base[k];
    const std::size_t count = xs.size();
    Buffer out(outer * count * inner);
    for (std::size_t j = 0; j < count; ++j) {
        auto v = xs[j].data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * count + j) * inner));
        }
    }
    Shape shape = base;
    shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), count);

    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(out);
    Tape* tape = g_active_tape;
    const bool needs = tape != nullptr && std::any_of(xs.begin(), xs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (needs) {
        node->requires_grad = true;
        for (const auto& t : xs) node->inputs.push_back(t.node());
        node->backward_fn = [outer, inner, count](Node& self) {
            for (std::size_t j = 0; j < count; ++j) {
                Node& in = *self.inputs[j];
                if (!in.requires_grad) continue;
                auto& g = in.grad_buffer();
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = self.grad.data() + (o * count + j) * inner;
                    for (std::size_t i = 0; i < inner; ++i) g[o * inner + i] += src[i];
                }
            }
        };
        tape->record(node);
    }
    return Tensor(node);
}

// ---- stochastic ----

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
    if (!training || rate == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale_kept = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<Buffer>(x.numel());
    for (double& m : *mask) m = keep(rng) ? scale_kept : 0.0;
    auto xv = x.data();
    Buffer out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * (*mask)[i];
    return finish(x.shape(), std::move(out), {&x}, [&] {
        return [mask](Node& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
        };
    });
}

}  // namespace neuralbeta::ad
