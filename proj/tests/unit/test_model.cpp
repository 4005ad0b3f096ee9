#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "neuralbeta/baselines.hpp"
#include "neuralbeta/model.hpp"
#include "neuralbeta/synthetic.hpp"
#include "neuralbeta/training.hpp"

using namespace neuralbeta;
using ad::Tensor;
using nbtest::gradcheck;
using nbtest::random_tensor;

namespace {

ModelConfig small(SequenceKind seq, HeadKind head, std::size_t h = 6, std::size_t d = 2, std::uint64_t seed = 1) {
    ModelConfig c;
    c.sequence_kind = seq;
    c.head_kind = head;
    c.hidden_size = 8;
    c.n_heads = 2;
    c.n_layers = seq == SequenceKind::gru ? 1 : 2;
    c.lookback = h;
    c.d = d;
    c.seed = seed;
    c.allow_off_grid = true;
    return c;
}

const std::vector<std::pair<SequenceKind, HeadKind>> kAllKinds = {{SequenceKind::gru, HeadKind::nb},
                                                                   {SequenceKind::gru, HeadKind::nbi},
                                                                   {SequenceKind::attention, HeadKind::nb},
                                                                   {SequenceKind::attention, HeadKind::nbi}};

WindowBatch windows(std::size_t n, std::size_t h, std::size_t d, std::uint64_t seed) {
    ScenarioConfig c;
    c.kind = ScenarioKind::stepwise;
    c.n_samples = n;
    c.series_length = h + 1;
    c.d = d;
    c.seed = seed;
    return make_windows(generate(c), h);
}

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace

TEST(ModelConfig, GridsAndOverrides) {
    ModelConfig c;
    EXPECT_NO_THROW(c.validate());
    c.hidden_size = 48;
    EXPECT_THROW(c.validate(), ConfigError);
    c.allow_off_grid = true;
    EXPECT_NO_THROW(c.validate());
    c.hidden_size = 30;  // not divisible by 4 heads
    EXPECT_THROW(c.validate(), ConfigError);
    ModelConfig e;
    e.dropout = 0.1;
    EXPECT_THROW(e.validate(), ConfigError);
    e.dropout = 0.25;
    EXPECT_NO_THROW(e.validate());
    ModelConfig l;
    l.lookback = 0;
    EXPECT_THROW(l.validate(), ConfigError);
    EXPECT_THROW(parse_sequence_kind("lstm"), ConfigError);
    EXPECT_THROW(parse_head_kind("nbx"), ConfigError);
}

TEST(ModelConfig, JsonRoundTrip) {
    ModelConfig c = small(SequenceKind::gru, HeadKind::nb, 9, 3, 77);
    c.dropout = 0.3;
    const ModelConfig r = model_config_from_json(model_config_to_json(c));
    EXPECT_EQ(model_config_to_json(r), model_config_to_json(c));
    EXPECT_THROW(model_config_from_json("{\"hidden_size\": \"big\"}"), ConfigError);
    EXPECT_THROW(model_config_from_json("not json"), ConfigError);
}

TEST(Model, OutputShapes) {
    for (const auto& [seq, head] : kAllKinds) {
        const Model m(small(seq, head, 6, 2));
        std::mt19937_64 rng(3);
        const Tensor x = random_tensor({5, 6, 2}, rng, false);
        const Tensor y = random_tensor({5, 6}, rng, false);
        const Tensor in = random_tensor({5, 6, 3}, rng, false);
        EXPECT_EQ(m.encode(in, false, nullptr).shape(), (ad::Shape{5, 6, 8}));
        const ModelOutput out = m.forward(x, y, false, nullptr);
        EXPECT_EQ(out.beta.shape(), (ad::Shape{5, 2}));
        if (head == HeadKind::nbi) {
            EXPECT_EQ(out.weights.shape(), (ad::Shape{5, 6}));
        } else {
            EXPECT_FALSE(out.weights.defined());
        }
        EXPECT_THROW(m.forward(random_tensor({5, 7, 2}, rng, false), y, false, nullptr), ShapeError);
        EXPECT_THROW(m.encode(random_tensor({5, 6, 2}, rng, false), false, nullptr), ShapeError);
    }
}

TEST(Model, GruZeroInputZeroBiasStaysAtZero) {
    Model m(small(SequenceKind::gru, HeadKind::nb, 10, 1));
    for (auto& item : m.parameters().items()) {
        if (item.name.find("b_") != std::string::npos) std::fill(item.tensor.mutable_data().begin(), item.tensor.mutable_data().end(), 0.0);
    }
    const Tensor hidden = m.encode(Tensor::zeros({3, 10, 2}), false, nullptr);
    for (double v : hidden.data()) EXPECT_EQ(v, 0.0);
}

TEST(Model, EncoderIsCausal) {
    for (auto seq : {SequenceKind::gru, SequenceKind::attention}) {
        const Model m(small(seq, HeadKind::nbi, 8, 1));
        std::mt19937_64 rng(4);
        const Tensor base = random_tensor({2, 8, 2}, rng, false);
        const Tensor h0 = m.encode(base, false, nullptr);
        for (std::size_t j = 0; j < 8; ++j) {
            std::vector<double> v(base.data().begin(), base.data().end());
            for (std::size_t b = 0; b < 2; ++b)
                for (std::size_t c = 0; c < 2; ++c) v[(b * 8 + j) * 2 + c] += 0.7;
            const Tensor h1 = m.encode(Tensor::from({2, 8, 2}, v), false, nullptr);
            for (std::size_t b = 0; b < 2; ++b) {
                for (std::size_t t = 0; t < 8; ++t) {
                    double diff = 0.0;
                    for (std::size_t k = 0; k < 8; ++k) {
                        const std::size_t idx = (b * 8 + t) * 8 + k;
                        diff = std::max(diff, std::abs(h1.data()[idx] - h0.data()[idx]));
                    }
                    if (t < j) {
                        EXPECT_EQ(diff, 0.0) << to_string(seq) << " lag " << j << " leaked into position " << t;
                    } else {
                        EXPECT_GT(diff, 0.0) << to_string(seq) << " lag " << j << " did not reach position " << t;
                    }
                }
            }
        }
    }
}

TEST(Model, InferenceIsDeterministicAndSeeded) {
    for (const auto& [seq, head] : kAllKinds) {
        ModelConfig cfg = small(seq, head);
        cfg.dropout = 0.5;
        const Model a(cfg), b(cfg);
        cfg.seed = 2;
        const Model c(cfg);
        EXPECT_EQ(a.parameters().snapshot(), b.parameters().snapshot());
        EXPECT_NE(a.parameters().snapshot(), c.parameters().snapshot());
        const WindowBatch w = windows(9, 6, 2, 5);
        const Prediction p1 = a.predict(w), p2 = a.predict(w), p3 = b.predict(w, {}, 4);
        EXPECT_EQ(p1.beta, p2.beta);
        EXPECT_LT((p1.beta - p3.beta).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Model, DropoutOnlyActsInTraining) {
    ModelConfig cfg = small(SequenceKind::attention, HeadKind::nb);
    cfg.dropout = 0.5;
    const Model m(cfg);
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor({4, 6, 2}, rng, false), y = random_tensor({4, 6}, rng, false);
    std::mt19937_64 d1(1), d2(2);
    const auto a = m.forward(x, y, true, &d1).beta;
    const auto b = m.forward(x, y, true, &d2).beta;
    EXPECT_NE(std::vector<double>(a.data().begin(), a.data().end()), std::vector<double>(b.data().begin(), b.data().end()));
    EXPECT_THROW(m.forward(x, y, true, nullptr), ContractError);
}

TEST(Model, ParametersDependOnlyOnConfig) {
    const Model a(small(SequenceKind::attention, HeadKind::nbi));
    std::vector<std::string> names;
    for (const auto& item : a.parameters().items()) names.push_back(item.name);
    for (const auto& n : names) {
        EXPECT_EQ(n.find("asset"), std::string::npos);
        EXPECT_EQ(n.find("sample"), std::string::npos);
    }
    EXPECT_TRUE(a.parameters().contains("prior_mean"));
    EXPECT_TRUE(a.parameters().contains("prior_log_precision"));
    EXPECT_EQ(a.prior_mean(), Eigen::VectorXd::Ones(2));
    EXPECT_EQ(a.prior_precision(), Eigen::VectorXd::Ones(2));
    const Model nb(small(SequenceKind::attention, HeadKind::nb));
    EXPECT_THROW(nb.prior_mean(), UnsupportedError);
}

TEST(NbiHead, WeightsArePositive) {
    const Model m(small(SequenceKind::attention, HeadKind::nbi, 16, 1));
    const Prediction p = m.predict(windows(200, 16, 1, 8));
    ASSERT_TRUE(p.weights.has_value());
    EXPECT_GT(p.weights->minCoeff(), 0.0);
}

TEST(NbiHead, WeightsExactlyExplainBeta) {
    for (auto seq : {SequenceKind::gru, SequenceKind::attention}) {
        Model m(small(seq, HeadKind::nbi, 12, 3));
        // move the prior away from its initial values
        auto mu = m.parameters().get("prior_mean").mutable_data();
        mu[0] = 0.3;
        mu[2] = -1.2;
        m.parameters().get("prior_log_precision").mutable_data()[1] = 1.5;
        const WindowBatch w = windows(50, 12, 3, 9);
        const Prediction p = m.predict(w);
        double worst = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto ref = regularized_wls(w.window_x(i), w.window_y(i), p.weights->row(static_cast<Eigen::Index>(i)).transpose(),
                                             m.prior_mean(), m.prior_precision());
            worst = std::max(worst, (ref.beta - p.beta.row(static_cast<Eigen::Index>(i)).transpose()).cwiseAbs().maxCoeff());
        }
        EXPECT_LT(worst, 1e-10);
    }
}

TEST(NbiHead, LargeUniformWeightsAndTinyPriorGiveOls) {
    Model m(small(SequenceKind::attention, HeadKind::nbi, 16, 2));
    auto w = m.parameters().get("head_nbi.weight").mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    m.parameters().get("head_nbi.bias").mutable_data()[0] = 1e3;
    auto lp = m.parameters().get("prior_log_precision").mutable_data();
    std::fill(lp.begin(), lp.end(), std::log(1e-9));
    const WindowBatch batch = windows(40, 16, 2, 10);
    const Prediction p = m.predict(batch);
    const Eigen::MatrixXd ols = estimate_ols(batch);
    EXPECT_LT((p.beta - ols).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Model, GradientsMatchFiniteDifferences) {
    for (const auto& [seq, head] : kAllKinds) {
        Model m(small(seq, head, 5, 2));
        const WindowBatch w = windows(4, 5, 2, 11);
        const BatchTensors bt = gather(w, iota(4));
        std::vector<Tensor> params;
        for (auto& item : m.parameters().items()) params.push_back(item.tensor);
        const auto res = gradcheck(
            [&](const std::vector<Tensor>&) {
                const ModelOutput out = m.forward(bt.window_x, bt.window_y, false, nullptr);
                return mse_loss(predict_y(out.beta, bt.next_x), bt.next_y);
            },
            params);
        EXPECT_LT(res.max_rel_error, 1e-4) << to_string(seq) << "/" << to_string(head) << " " << res.worst;
    }
}

TEST(NbiHead, GradientThroughSolveWithRespectToWeights) {
    std::mt19937_64 rng(12);
    const Tensor x = random_tensor({3, 7, 2}, rng, false);
    const Tensor y = random_tensor({3, 7}, rng, false);
    const Tensor w = random_tensor({3, 7}, rng, true, 0.1, 2.0);
    const Tensor mu = random_tensor({2}, rng, true);
    const Tensor prec = random_tensor({2}, rng, true, 0.5, 1.5);
    const auto res = gradcheck([&](const std::vector<Tensor>& in) { return regularized_wls(x, y, in[0], in[1], in[2]); },
                               {w, mu, prec});
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(Model, SaveLoadRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "nb_model_roundtrip.nbck";
    Model m(small(SequenceKind::attention, HeadKind::nbi, 6, 2, 42));
    m.parameters().get("prior_mean").mutable_data()[1] = -0.25;
    m.save(path, "{\"note\": 1}");
    const Model r = Model::load(path);
    EXPECT_EQ(model_config_to_json(r.config()), model_config_to_json(m.config()));
    EXPECT_EQ(r.parameters().snapshot(), m.parameters().snapshot());
    const WindowBatch w = windows(7, 6, 2, 13);
    EXPECT_EQ(r.predict(w).beta, m.predict(w).beta);
    std::filesystem::remove(path);
}

TEST(Model, PredictRejectsMismatchedWindows) {
    const Model m(small(SequenceKind::gru, HeadKind::nb, 6, 2));
    EXPECT_THROW(m.predict(windows(3, 5, 2, 1)), DataError);
    EXPECT_THROW(m.predict(windows(3, 6, 1, 1)), DataError);
}

TEST(PredictY, Examples) {
    EXPECT_EQ(predict_y(Tensor::from({1, 3}, {1, 0, 0}), Tensor::from({1, 3}, {5, 7, 9})).item(), 5.0);
    EXPECT_EQ(predict_y(Tensor::zeros({1, 2}), Tensor::from({1, 2}, {3, 4})).item(), 0.0);
    EXPECT_EQ(predict_y(Tensor::from({1, 2}, {2, -1}), Tensor::from({1, 2}, {3, 4})).item(), 2.0);
    EXPECT_THROW(predict_y(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(ModelConfig, LayerCountDefaultsByKind) {
    ModelConfig c;
    c.sequence_kind = SequenceKind::gru;
    EXPECT_EQ(Model(c).config().n_layers, 1u);
    EXPECT_FALSE(Model(c).parameters().contains("gru1.w_input"));
    c.sequence_kind = SequenceKind::attention;
    EXPECT_EQ(Model(c).config().n_layers, 2u);
    c.n_layers = 3;
    EXPECT_TRUE(Model(c).parameters().contains("block2.qkv.weight"));
}
