#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "neuralbeta/tensor.hpp"

#include <Eigen/Dense>

using namespace neuralbeta;
using namespace neuralbeta::ad;
using nbtest::gradcheck;
using nbtest::random_tensor;

namespace {

constexpr double kTol = 1e-6;

void expect_grad_ok(const nbtest::GradCheckResult& r) { EXPECT_LT(r.max_rel_error, kTol) << r.worst; }

}  // namespace

TEST(Tensor, FactoriesAndAccessors) {
    const Tensor z = Tensor::zeros({2, 3});
    EXPECT_EQ(z.numel(), 6u);
    EXPECT_EQ(z.rank(), 2u);
    const Tensor t = Tensor::from({2, 2}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(t.at({1, 0}), 3.0);
    EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
    EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_THROW(t.item(), ShapeError);
}

TEST(Tensor, NoTapeMeansNoRecording) {
    const Tensor a = Tensor::from({2}, {1, 2}, true);
    const Tensor b = add(a, a);
    EXPECT_FALSE(b.requires_grad());
    EXPECT_TRUE(b.node()->inputs.empty());
}

TEST(Tensor, ConstantsAreNotRecorded) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor a = Tensor::from({2}, {1, 2});
    const Tensor b = mul(a, a);
    EXPECT_FALSE(b.requires_grad());
    EXPECT_EQ(tape.size(), 0u);
}

TEST(Tensor, BackwardRejectsNonScalarLoss) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor a = Tensor::from({2}, {1, 2}, true);
    EXPECT_THROW(tape.backward(mul(a, a)), ContractError);
}

TEST(Tensor, BackwardRejectsDisconnectedLoss) {
    Tape tape;
    TapeScope scope(tape);
    EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), ContractError);
}

TEST(Tensor, GradientsAccumulateOverReuse) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor a = Tensor::from({1}, {3.0}, true);
    // d/da (a*a + a) = 2a + 1
    tape.backward(sum(add(mul(a, a), a)));
    EXPECT_DOUBLE_EQ(a.grad()[0], 7.0);
}

TEST(Tensor, MatmulValues) {
    const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
    const Tensor c = matmul(a, b);
    EXPECT_EQ(c.shape(), (Shape{2, 2}));
    EXPECT_DOUBLE_EQ(c.at({0, 0}), 58.0);
    EXPECT_DOUBLE_EQ(c.at({1, 1}), 154.0);
    const Tensor ct = matmul(b, a, true, true);  // (a b)^T
    EXPECT_DOUBLE_EQ(ct.at({0, 1}), 139.0);
    EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Tensor, MatmulGradients) {
    std::mt19937_64 rng(1);
    for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
            const Tensor a = random_tensor(ta ? Shape{3, 2, 4} : Shape{3, 4, 2}, rng);
            const Tensor b = random_tensor(tb ? Shape{3, 5, 2} : Shape{3, 2, 5}, rng);
            expect_grad_ok(gradcheck([&](const std::vector<Tensor>& in) { return matmul(in[0], in[1], ta, tb); },
                                     {a, b}));
        }
    }
    const Tensor a2 = random_tensor({3, 4}, rng);
    const Tensor b2 = random_tensor({4, 2}, rng);
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); }, {a2, b2}));
}

TEST(Tensor, LinearGradients) {
    std::mt19937_64 rng(2);
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return linear(in[0], in[1], in[2]); },
                             {random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)}));
}

TEST(Tensor, LinearSolveMatchesEigen) {
    const Tensor a = Tensor::from({2, 2}, {4, 1, 1, 3});
    const Tensor b = Tensor::from({2}, {1, 2});
    const Tensor z = linear_solve(a, b);
    // [4 1; 1 3]^{-1} [1; 2] = [1/11; 7/11]
    EXPECT_NEAR(z.at({0}), 1.0 / 11.0, 1e-14);
    EXPECT_NEAR(z.at({1}), 7.0 / 11.0, 1e-14);
}

TEST(Tensor, LinearSolveRejectsSingular) {
    const Tensor a = Tensor::from({2, 2}, {1, 1, 1, 1});
    EXPECT_THROW(linear_solve(a, Tensor::from({2}, {1, 2})), SingularSystemError);
    const Tensor neg = Tensor::from({1, 1}, {-1});
    EXPECT_THROW(linear_solve(neg, Tensor::from({1}, {1})), SingularSystemError);
}

TEST(Tensor, LinearSolveGradients) {
    std::mt19937_64 rng(3);
    // SPD batch built as M M^T + I inside the function so perturbations stay SPD
    const Tensor m = random_tensor({4, 3, 3}, rng);
    const Tensor b = random_tensor({4, 3}, rng);
    const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    expect_grad_ok(gradcheck(
        [&](const std::vector<Tensor>& in) {
            return linear_solve(add(matmul(in[0], in[0], false, true), eye), in[1]);
        },
        {m, b}));
}

TEST(Tensor, LinearSolveGradientIsSymmetricInA) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor a = Tensor::from({2, 2}, {3, 0.5, 0.5, 2}, true);
    const Tensor b = Tensor::from({2}, {1, -1});
    tape.backward(sum(linear_solve(a, b)));
    EXPECT_NEAR(a.grad()[1], a.grad()[2], 1e-15);
}

TEST(Tensor, DiagGradients) {
    std::mt19937_64 rng(4);
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return diag(in[0]); }, {random_tensor({3}, rng)}));
}

TEST(Tensor, BroadcastValues) {
    const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor row = Tensor::from({3}, {10, 20, 30});
    const Tensor col = Tensor::from({2, 1}, {100, 200});
    EXPECT_DOUBLE_EQ(add(a, row).at({1, 2}), 36.0);
    EXPECT_DOUBLE_EQ(add(a, col).at({1, 0}), 204.0);
    EXPECT_DOUBLE_EQ(add(row, a).at({0, 1}), 22.0);
    EXPECT_THROW(add(a, Tensor::from({2}, {1, 2})), ShapeError);
}

TEST(Tensor, BinaryGradients) {
    std::mt19937_64 rng(5);
    const std::vector<std::pair<Shape, Shape>> shapes = {
        {{2, 3}, {2, 3}}, {{2, 3}, {3}}, {{3}, {2, 3}}, {{2, 3}, {2, 1}}, {{2, 1, 3}, {1, 4, 1}}};
    for (const auto& [sa, sb] : shapes) {
        const Tensor a = random_tensor(sa, rng);
        const Tensor b = random_tensor(sb, rng, true, 0.5, 2.0);
        expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return add(in[0], in[1]); }, {a, b}));
        expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return sub(in[0], in[1]); }, {a, b}));
        expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return mul(in[0], in[1]); }, {a, b}));
        expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return div(in[0], in[1]); }, {a, b}));
    }
}

TEST(Tensor, DivisionByZeroThrows) {
    EXPECT_THROW(div(Tensor::from({1}, {1}), Tensor::from({1}, {0})), NonFiniteError);
}

TEST(Tensor, UnaryGradients) {
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor({2, 5}, rng, true, -2.0, 2.0);
    const Tensor pos = random_tensor({2, 5}, rng, true, 0.5, 3.0);
    using F = Tensor (*)(const Tensor&);
    for (F f : {static_cast<F>(&neg), static_cast<F>(&tanh), static_cast<F>(&sigmoid), static_cast<F>(&exp),
                static_cast<F>(&softplus), static_cast<F>(&square)}) {
        expect_grad_ok(gradcheck([f](const std::vector<Tensor>& in) { return f(in[0]); }, {x}));
    }
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return log(in[0]); }, {pos}));
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return relu(in[0]); }, {pos}));
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return scale(add_scalar(in[0], 2.0), -3.0); }, {x}));
}

TEST(Tensor, LogOfNonPositiveThrows) { EXPECT_THROW(log(Tensor::from({1}, {0.0})), NonFiniteError); }

TEST(Tensor, SoftplusIsStableAndPositive) {
    const Tensor y = softplus(Tensor::from({3}, {-800.0, 0.0, 800.0}));
    EXPECT_GT(y.at({0}), 0.0 - 1e-300);
    EXPECT_NEAR(y.at({1}), std::log(2.0), 1e-15);
    EXPECT_DOUBLE_EQ(y.at({2}), 800.0);
    EXPECT_GT(softplus(Tensor::from({1}, {-30.0})).item(), 0.0);
}

TEST(Tensor, ReductionsAndGradients) {
    const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_DOUBLE_EQ(sum(a).item(), 21.0);
    EXPECT_DOUBLE_EQ(mean(a).item(), 3.5);
    EXPECT_DOUBLE_EQ(sum(a, 0).at({2}), 9.0);
    EXPECT_DOUBLE_EQ(mean(a, 1).at({1}), 5.0);
    std::mt19937_64 rng(8);
    const Tensor x = random_tensor({2, 3, 4}, rng);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        expect_grad_ok(gradcheck([axis](const std::vector<Tensor>& in) { return sum(in[0], axis); }, {x}));
        expect_grad_ok(gradcheck([axis](const std::vector<Tensor>& in) { return mean(in[0], axis); }, {x}));
    }
}

TEST(Tensor, SoftmaxRowsSumToOne) {
    std::mt19937_64 rng(9);
    const Tensor x = random_tensor({3, 4}, rng, false, -50, 50);
    const Tensor s = softmax(x, 1);
    for (std::size_t r = 0; r < 3; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 4; ++c) total += s.at({r, c});
        EXPECT_NEAR(total, 1.0, 1e-14);
    }
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return softmax(in[0], 0); }, {random_tensor({3, 4}, rng)}));
}

TEST(Tensor, CausalSoftmaxMasksFuture) {
    std::mt19937_64 rng(10);
    const Tensor s = causal_softmax(random_tensor({2, 4, 4}, rng, false));
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < 4; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                if (j > i) EXPECT_EQ(s.at({b, i, j}), 0.0);
                total += s.at({b, i, j});
            }
            EXPECT_NEAR(total, 1.0, 1e-14);
        }
    }
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return causal_softmax(in[0]); },
                             {random_tensor({2, 4, 4}, rng)}));
}

namespace {

// Unfused reference: per-head softmax(QK'/sqrt(dh)) V with a causal mask.
Tensor reference_attention(const Tensor& qkv, std::size_t heads) {
    const std::size_t b = qkv.dim(0), t = qkv.dim(1), h = qkv.dim(2) / 3, dh = h / heads;
    auto split = [&](std::size_t off) {
        return reshape(permute(reshape(narrow(qkv, 2, off, h), {b, t, heads, dh}), {0, 2, 1, 3}), {b * heads, t, dh});
    };
    const Tensor s = scale(matmul(split(0), split(h), false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    const Tensor ctx = matmul(causal_softmax(s), split(2 * h));
    return reshape(permute(reshape(ctx, {b, heads, t, dh}), {0, 2, 1, 3}), {b, t, h});
}

}  // namespace

TEST(Tensor, FusedAttentionMatchesReference) {
    std::mt19937_64 rng(11);
    for (std::size_t heads : {1u, 2u, 4u}) {
        for (std::size_t width : {8u, 24u}) {  // head widths hit both the unrolled and generic paths
            const Tensor qkv = random_tensor({3, 5, 3 * width}, rng, false, -2, 2);
            const Tensor a = causal_attention(qkv, heads);
            const Tensor r = reference_attention(qkv, heads);
            ASSERT_EQ(a.shape(), r.shape());
            for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], r.data()[i], 1e-13);
        }
    }
}

TEST(Tensor, FusedAttentionGradients) {
    std::mt19937_64 rng(12);
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return causal_attention(in[0], 2); },
                             {random_tensor({2, 6, 3 * 16}, rng)}));
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return causal_attention(in[0], 3); },
                             {random_tensor({2, 4, 3 * 9}, rng)}));
}

TEST(Tensor, FusedAttentionIsCausal) {
    std::mt19937_64 rng(13);
    Tensor qkv = random_tensor({1, 6, 24}, rng, false);
    const Tensor before = causal_attention(qkv, 2);
    auto data = qkv.mutable_data();
    for (std::size_t c = 0; c < 24; ++c) data[4 * 24 + c] += 5.0;  // perturb position 4
    const Tensor after = causal_attention(qkv, 2);
    for (std::size_t t = 0; t < 6; ++t) {
        for (std::size_t c = 0; c < 8; ++c) {
            const double d = std::abs(after.at({0, t, c}) - before.at({0, t, c}));
            if (t < 4) EXPECT_EQ(d, 0.0) << "position " << t;
        }
    }
}

TEST(Tensor, LayerNormGradients) {
    std::mt19937_64 rng(14);
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return layer_norm(in[0], in[1], in[2]); },
                             {random_tensor({2, 3, 5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)}));
}

TEST(Tensor, LayerNormNormalises) {
    const Tensor x = Tensor::from({1, 4}, {1, 2, 3, 4});
    const Tensor y = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}));
    double m = 0.0;
    for (double v : y.data()) m += v;
    EXPECT_NEAR(m, 0.0, 1e-12);
}

TEST(Tensor, ShapeOps) {
    const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_DOUBLE_EQ(permute(a, {1, 0}).at({2, 1}), 6.0);
    EXPECT_DOUBLE_EQ(select(a, 1, 2).at({1}), 6.0);
    EXPECT_DOUBLE_EQ(narrow(a, 1, 1, 2).at({0, 0}), 2.0);
    EXPECT_EQ(stack({a, a}, 1).shape(), (Shape{2, 2, 3}));
    EXPECT_THROW(reshape(a, {4}), ShapeError);
    EXPECT_THROW(select(a, 1, 3), BoundsError);

    std::mt19937_64 rng(15);
    const Tensor x = random_tensor({2, 3, 4}, rng);
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return permute(in[0], {2, 0, 1}); }, {x}));
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return reshape(in[0], {6, 4}); }, {x}));
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return select(in[0], 1, 2); }, {x}));
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return narrow(in[0], 2, 1, 2); }, {x}));
    expect_grad_ok(gradcheck([](const std::vector<Tensor>& in) { return stack({in[0], in[1]}, 1); },
                             {x, random_tensor({2, 3, 4}, rng)}));
}

TEST(Tensor, DropoutBehaviour) {
    std::mt19937_64 rng(16);
    const Tensor x = Tensor::full({10000}, 1.0);
    EXPECT_EQ(dropout(x, 0.5, false, rng).data()[0], 1.0);
    const Tensor y = dropout(x, 0.25, true, rng);
    double total = 0.0;
    std::size_t zeros = 0;
    for (double v : y.data()) {
        total += v;
        zeros += v == 0.0;
        if (v != 0.0) EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
    }
    EXPECT_NEAR(static_cast<double>(zeros) / 10000.0, 0.25, 0.02);
    EXPECT_NEAR(total / 10000.0, 1.0, 0.03);
    EXPECT_THROW(dropout(x, 1.0, true, rng), ConfigError);
    EXPECT_THROW(dropout(x, -0.1, true, rng), ConfigError);
}

TEST(Tensor, DropoutGradientUsesSameMask) {
    std::mt19937_64 rng(17);
    Tape tape;
    TapeScope scope(tape);
    const Tensor x = Tensor::full({50}, 2.0, true);
    const Tensor y = dropout(x, 0.5, true, rng);
    tape.backward(sum(y));
    for (std::size_t i = 0; i < 50; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], y.data()[i] == 0.0 ? 0.0 : 2.0);
}

TEST(TensorExamples, Matmul) {
    const Tensor c = matmul(Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2, 1}, {3, 4}));
    EXPECT_DOUBLE_EQ(c.at({0, 0}), 3.0);
    EXPECT_DOUBLE_EQ(c.at({1, 0}), 4.0);
    EXPECT_DOUBLE_EQ(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item(), 11.0);
    Tape tape;
    TapeScope scope(tape);
    const Tensor a = Tensor::from({1, 2}, {1, 2}, true);
    tape.backward(sum(matmul(a, Tensor::from({2, 1}, {3, 4}))));
    EXPECT_DOUBLE_EQ(a.grad()[0], 3.0);
    EXPECT_DOUBLE_EQ(a.grad()[1], 4.0);
}

TEST(TensorExamples, Elementwise) {
    EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
    EXPECT_NEAR(softplus(Tensor::scalar(0.0)).item(), 0.6931471805599453, 1e-15);
    Tape tape;
    TapeScope scope(tape);
    const Tensor x = Tensor::scalar(0.0, true);
    tape.backward(tanh(x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(TensorExamples, Softmax) {
    const Tensor a = softmax(Tensor::from({2}, {0, 0}), 0);
    EXPECT_DOUBLE_EQ(a.at({0}), 0.5);
    const Tensor b = softmax(Tensor::from({2}, {std::log(1.0), std::log(3.0)}), 0);
    EXPECT_NEAR(b.at({0}), 0.25, 1e-15);
    EXPECT_NEAR(b.at({1}), 0.75, 1e-15);
    const Tensor c = softmax(Tensor::from({2}, {1000, 1000}), 0);
    EXPECT_DOUBLE_EQ(c.at({0}), 0.5);
    EXPECT_DOUBLE_EQ(c.at({1}), 0.5);
}

TEST(TensorProperties, SoftmaxShiftInvariant) {
    std::mt19937_64 rng(20);
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor x = random_tensor({4, 7}, rng, false, -10, 10);
        const Tensor s1 = softmax(x, 1);
        const Tensor s2 = softmax(add_scalar(x, 123.456), 1);
        for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(s1.data()[i], s2.data()[i], 1e-12);
        for (std::size_t r = 0; r < 4; ++r) {
            double t = 0.0;
            for (std::size_t c = 0; c < 7; ++c) t += s1.at({r, c});
            EXPECT_NEAR(t, 1.0, 1e-12);
        }
    }
}

TEST(TensorExamples, LinearSolve) {
    const Tensor z = linear_solve(Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2}, {3, 4}));
    EXPECT_DOUBLE_EQ(z.at({0}), 3.0);
    EXPECT_DOUBLE_EQ(z.at({1}), 4.0);
    const Tensor w = linear_solve(Tensor::from({2, 2}, {4, 0, 0, 9}), Tensor::from({2}, {8, 27}));
    EXPECT_NEAR(w.at({0}), 2.0, 1e-15);
    EXPECT_NEAR(w.at({1}), 3.0, 1e-15);
    std::mt19937_64 rng(21);
    const Tensor m = random_tensor({3, 3}, rng);
    const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const auto r = gradcheck([&](const std::vector<Tensor>& in) {
        return linear_solve(add(matmul(in[0], in[0], false, true), eye), in[1]);
    }, {m, random_tensor({3}, rng)});
    EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(TensorProperties, LinearSolveRecoversSolution) {
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> logc(0.0, 6.0);
    for (int rep = 0; rep < 50; ++rep) {
        const int d = 1 + rep % 5;
        // A = Q diag(s) Q' with condition number below 1e6
        const Eigen::MatrixXd g = Eigen::MatrixXd::Random(d, d);
        const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        const Eigen::MatrixXd q = qr.householderQ();
        Eigen::VectorXd s(d);
        for (int i = 0; i < d; ++i) s(i) = std::pow(10.0, -logc(rng) * (i + 1) / (d + 1));
        const Eigen::MatrixXd a = q * s.asDiagonal() * q.transpose();
        const Eigen::VectorXd z = Eigen::VectorXd::Random(d);
        const Eigen::VectorXd b = a * z;
        std::vector<double> av(a.data(), a.data() + d * d), bv(b.data(), b.data() + d);  // a symmetric
        const Tensor out = linear_solve(Tensor::from({std::size_t(d), std::size_t(d)}, av), Tensor::from({std::size_t(d)}, bv));
        double err = 0.0;
        for (int i = 0; i < d; ++i) err = std::max(err, std::abs(out.data()[i] - z(i)));
        EXPECT_LT(err / z.cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(TensorExamples, Backward) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor x = Tensor::from({3}, {5, 6, 7}, true);
    tape.backward(sum(x));
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
    const Tensor y = Tensor::from({2}, {1, 2}, true);
    tape.backward(sum(square(y)));
    EXPECT_DOUBLE_EQ(y.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(y.grad()[1], 4.0);
    const Tensor z = Tensor::from({2}, {1, 2}, true);
    tape.backward(add(sum(z), sum(z)));
    EXPECT_DOUBLE_EQ(z.grad()[0], 2.0);
}

TEST(TensorExamples, DropoutHalfRatePreservesMean) {
    std::mt19937_64 rng(23);
    const Tensor x = Tensor::full({100000}, 1.0);
    EXPECT_EQ(dropout(x, 0.0, true, rng).data()[17], 1.0);
    double total = 0.0;
    const Tensor dropped = dropout(x, 0.5, true, rng);
    for (double v : dropped.data()) total += v;
    EXPECT_NEAR(total / 100000.0, 1.0, 0.02);
}

TEST(TensorProperties, BackwardIsBitwiseDeterministic) {
    auto run = [] {
        std::mt19937_64 rng(24);
        const Tensor qkv = random_tensor({2, 5, 24}, rng);
        const Tensor w = random_tensor({8, 3}, rng);
        const Tensor b = random_tensor({3}, rng);
        Tape tape;
        TapeScope scope(tape);
        tape.backward(sum(square(linear(causal_attention(qkv, 2), w, b))));
        std::vector<double> g(qkv.grad().begin(), qkv.grad().end());
        g.insert(g.end(), w.grad().begin(), w.grad().end());
        return g;
    };
    EXPECT_EQ(run(), run());
}
