#include "neuralbeta/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "neuralbeta/baselines.hpp"

namespace neuralbeta {

using ad::Shape;
using ad::Tensor;

namespace {

std::vector<double> uniform_init(std::size_t n, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

// [rows, cols] with orthonormal columns (or rows, whichever is shorter).
std::vector<double> orthogonal_init(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    const auto r = static_cast<Eigen::Index>(std::max(rows, cols));
    const auto c = static_cast<Eigen::Index>(std::min(rows, cols));
    Eigen::MatrixXd a(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) a(i, j) = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
    // sign fix so the distribution is uniform over orthogonal matrices
    for (Eigen::Index j = 0; j < c; ++j)
        if (qr.matrixQR()(j, j) < 0) q.col(j) *= -1.0;
    if (rows < cols) q.transposeInPlace();
    std::vector<double> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            out[i * cols + j] = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return out;
}

void add_affine(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    ps.add(name + ".weight", Tensor::from({in, out}, uniform_init(in * out, bound, rng)));
    ps.add(name + ".bias", Tensor::from({out}, uniform_init(out, bound, rng)));
}

void add_norm(ParameterSet& ps, const std::string& name, std::size_t width) {
    ps.add(name + ".gamma", Tensor::full({width}, 1.0));
    ps.add(name + ".beta", Tensor::zeros({width}));
}

bool on_grid(double v, const std::vector<double>& grid) {
    return std::any_of(grid.begin(), grid.end(), [&](double g) { return std::abs(g - v) < 1e-12; });
}

}  // namespace

std::string to_string(SequenceKind kind) { return kind == SequenceKind::gru ? "gru" : "attention"; }
std::string to_string(HeadKind kind) { return kind == HeadKind::nb ? "nb" : "nbi"; }

SequenceKind parse_sequence_kind(const std::string& name) {
    if (name == "gru") return SequenceKind::gru;
    if (name == "attention") return SequenceKind::attention;
    throw ConfigError("unknown sequence kind '" + name + "' (expected gru or attention)");
}

HeadKind parse_head_kind(const std::string& name) {
    if (name == "nb") return HeadKind::nb;
    if (name == "nbi") return HeadKind::nbi;
    throw ConfigError("unknown head kind '" + name + "' (expected nb or nbi)");
}

void ModelConfig::validate() const {
    if (lookback < 1) throw ConfigError("lookback must be at least 1");
    if (d < 1) throw ConfigError("d must be at least 1");
    if (hidden_size < 1) throw ConfigError("hidden_size must be at least 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (sequence_kind == SequenceKind::attention) {
        if (n_heads < 1 || hidden_size % n_heads != 0) {
            throw ConfigError("hidden_size " + std::to_string(hidden_size) + " not divisible by n_heads " +
                              std::to_string(n_heads));
        }
    }
    if (!allow_off_grid) {
        if (std::find(kHiddenSizeGrid.begin(), kHiddenSizeGrid.end(), hidden_size) == kHiddenSizeGrid.end()) {
            throw ConfigError("hidden_size " + std::to_string(hidden_size) +
                              " outside {32,64,128,256}; set allow_off_grid to override");
        }
        if (!on_grid(dropout, kDropoutGrid)) {
            throw ConfigError("dropout outside {0,0.25,0.5}; set allow_off_grid to override");
        }
    }
}

ModelConfig ModelConfig::resolved() const {
    ModelConfig c = *this;
    if (c.n_layers == 0) c.n_layers = sequence_kind == SequenceKind::gru ? 1 : 2;
    return c;
}

Model::Model(ModelConfig config) : config_(config.resolved()) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    const std::size_t H = config_.hidden_size;
    const std::size_t in = config_.d + 1;
    if (config_.sequence_kind == SequenceKind::gru) {
        for (std::size_t l = 0; l < config_.n_layers; ++l) {
            const std::string base = "gru" + std::to_string(l);
            const std::size_t lin = l == 0 ? in : H;
            const double bound = 1.0 / std::sqrt(static_cast<double>(H));
            params_.add(base + ".w_input", Tensor::from({lin, 3 * H}, uniform_init(lin * 3 * H, bound, rng)));
            // one orthogonal block per gate (r, z, n)
            std::vector<double> rec(H * 3 * H);
            for (std::size_t g = 0; g < 3; ++g) {
                const auto q = orthogonal_init(H, H, rng);
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < H; ++j) rec[i * 3 * H + g * H + j] = q[i * H + j];
            }
            params_.add(base + ".w_hidden", Tensor::from({H, 3 * H}, std::move(rec)));
            params_.add(base + ".b_input", Tensor::from({3 * H}, uniform_init(3 * H, bound, rng)));
            params_.add(base + ".b_hidden", Tensor::from({3 * H}, uniform_init(3 * H, bound, rng)));
        }
    } else {
        add_affine(params_, "embed", in, H, rng);
        params_.add("pos", Tensor::from({config_.lookback, H}, uniform_init(config_.lookback * H, 0.02, rng)));
        for (std::size_t b = 0; b < config_.n_layers; ++b) {
            const std::string base = "block" + std::to_string(b);
            add_norm(params_, base + ".ln1", H);
            add_affine(params_, base + ".qkv", H, 3 * H, rng);
            add_affine(params_, base + ".proj", H, H, rng);
            add_norm(params_, base + ".ln2", H);
            add_affine(params_, base + ".ff1", H, 2 * H, rng);
            add_affine(params_, base + ".ff2", 2 * H, H, rng);
        }
        add_norm(params_, "ln_final", H);
    }
    if (config_.head_kind == HeadKind::nb) {
        add_affine(params_, "head_nb", H, config_.d, rng);
    } else {
        add_affine(params_, "head_nbi", H, 1, rng);
        params_.add("prior_mean", Tensor::full({config_.d}, 1.0));
        params_.add("prior_log_precision", Tensor::zeros({config_.d}));
    }
}

Tensor Model::gru_layer(const Tensor& input, std::size_t layer) const {
    const std::string base = "gru" + std::to_string(layer);
    const std::size_t B = input.dim(0), h = input.dim(1), H = config_.hidden_size;
    const Tensor gx = ad::linear(input, p(base + ".w_input"), p(base + ".b_input"));  // [B,h,3H]
    Tensor state = Tensor::zeros({B, H});
    std::vector<Tensor> states;
    states.reserve(h);
    for (std::size_t t = 0; t < h; ++t) {
        const Tensor xt = ad::select(gx, 1, t);
        const Tensor gh = ad::linear(state, p(base + ".w_hidden"), p(base + ".b_hidden"));
        const Tensor r = ad::sigmoid(ad::narrow(xt, 1, 0, H) + ad::narrow(gh, 1, 0, H));
        const Tensor z = ad::sigmoid(ad::narrow(xt, 1, H, H) + ad::narrow(gh, 1, H, H));
        const Tensor n = ad::tanh(ad::narrow(xt, 1, 2 * H, H) + r * ad::narrow(gh, 1, 2 * H, H));
        // h' = (1 - z) n + z h = n + z (h - n)
        state = n + z * (state - n);
        states.push_back(state);
    }
    return ad::stack(states, 1);
}

Tensor Model::attention_block(const Tensor& x, std::size_t block, bool training, std::mt19937_64* rng) const {
    const std::string base = "block" + std::to_string(block);
    const bool drop = training && config_.dropout > 0.0;

    const Tensor a = ad::layer_norm(x, p(base + ".ln1.gamma"), p(base + ".ln1.beta"));
    const Tensor qkv = ad::linear(a, p(base + ".qkv.weight"), p(base + ".qkv.bias"));
    const Tensor merged = ad::causal_attention(qkv, config_.n_heads);
    Tensor out = ad::linear(merged, p(base + ".proj.weight"), p(base + ".proj.bias"));
    if (drop) out = ad::dropout(out, config_.dropout, true, *rng);
    const Tensor x1 = x + out;

    const Tensor f = ad::layer_norm(x1, p(base + ".ln2.gamma"), p(base + ".ln2.beta"));
    Tensor ff = ad::linear(ad::relu(ad::linear(f, p(base + ".ff1.weight"), p(base + ".ff1.bias"))),
                           p(base + ".ff2.weight"), p(base + ".ff2.bias"));
    if (drop) ff = ad::dropout(ff, config_.dropout, true, *rng);
    return x1 + ff;
}

Tensor Model::encode(const Tensor& input, bool training, std::mt19937_64* rng) const {
    const std::size_t h = config_.lookback, in = config_.d + 1;
    if (input.rank() != 3 || input.dim(1) != h || input.dim(2) != in) {
        throw ShapeError("encode expects [B, " + std::to_string(h) + ", " + std::to_string(in) + "], got " +
                         ad::shape_str(input.shape()));
    }
    if (training && config_.dropout > 0.0 && rng == nullptr) throw ContractError("dropout in training needs an rng");
    if (config_.sequence_kind == SequenceKind::gru) {
        Tensor x = input;
        for (std::size_t l = 0; l < config_.n_layers; ++l) {
            x = gru_layer(x, l);
            if (training && config_.dropout > 0.0) x = ad::dropout(x, config_.dropout, true, *rng);
        }
        return x;
    }
    Tensor x = ad::linear(input, p("embed.weight"), p("embed.bias")) + p("pos");
    for (std::size_t b = 0; b < config_.n_layers; ++b) x = attention_block(x, b, training, rng);
    return ad::layer_norm(x, p("ln_final.gamma"), p("ln_final.beta"));
}

ModelOutput Model::head_nb(const Tensor& hidden) const {
    if (config_.head_kind != HeadKind::nb) throw UnsupportedError("model has no NB head");
    const Tensor last = ad::select(hidden, 1, hidden.dim(1) - 1);
    return {ad::linear(last, p("head_nb.weight"), p("head_nb.bias")), Tensor{}};
}

ModelOutput Model::head_nbi(const Tensor& hidden, const Tensor& window_x, const Tensor& window_y) const {
    if (config_.head_kind != HeadKind::nbi) throw UnsupportedError("model has no NBI head");
    const std::size_t B = hidden.dim(0), h = hidden.dim(1);
    const Tensor w = ad::reshape(ad::softplus(ad::linear(hidden, p("head_nbi.weight"), p("head_nbi.bias"))), {B, h});
    const Tensor precision = ad::exp(p("prior_log_precision"));
    return {regularized_wls(window_x, window_y, w, p("prior_mean"), precision), w};
}

ModelOutput Model::forward(const Tensor& window_x, const Tensor& window_y, bool training, std::mt19937_64* rng) const {
    const std::size_t h = config_.lookback, d = config_.d;
    if (window_x.rank() != 3 || window_x.dim(1) != h || window_x.dim(2) != d) {
        throw ShapeError("window_x must be [B, " + std::to_string(h) + ", " + std::to_string(d) + "], got " +
                         ad::shape_str(window_x.shape()));
    }
    const std::size_t B = window_x.dim(0);
    if (window_y.shape() != Shape{B, h}) throw ShapeError("window_y must be [B, h]");
    // channel 0 is y, channels 1..d are x
    std::vector<double> in(B * h * (d + 1));
    const auto xs = window_x.data();
    const auto ys = window_y.data();
    for (std::size_t r = 0; r < B * h; ++r) {
        in[r * (d + 1)] = ys[r];
        std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(r * d), d, in.begin() + static_cast<std::ptrdiff_t>(r * (d + 1) + 1));
    }
    const Tensor hidden = encode(Tensor::from({B, h, d + 1}, std::move(in)), training, rng);
    if (config_.head_kind == HeadKind::nb) return head_nb(hidden);
    return head_nbi(hidden, window_x, window_y);
}

Prediction Model::predict(const WindowBatch& batch, const std::vector<std::size_t>& rows, std::size_t chunk) const {
    if (batch.lookback != config_.lookback || batch.dim != config_.d) {
        throw DataError("dataset windows (h=" + std::to_string(batch.lookback) + ", d=" + std::to_string(batch.dim) +
                        ") do not match model (h=" + std::to_string(config_.lookback) +
                        ", d=" + std::to_string(config_.d) + ")");
    }
    std::vector<std::size_t> all = rows;
    if (all.empty()) {
        all.resize(batch.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    }
    const auto n = static_cast<Eigen::Index>(all.size());
    const auto d = static_cast<Eigen::Index>(config_.d);
    const auto h = static_cast<Eigen::Index>(config_.lookback);
    Prediction out;
    out.beta.resize(n, d);
    if (config_.head_kind == HeadKind::nbi) out.weights = Eigen::MatrixXd(n, h);
    for (std::size_t start = 0; start < all.size(); start += chunk) {
        const std::size_t len = std::min(chunk, all.size() - start);
        std::vector<std::size_t> part(all.begin() + static_cast<std::ptrdiff_t>(start),
                                      all.begin() + static_cast<std::ptrdiff_t>(start + len));
        const BatchTensors bt = gather(batch, part);
        const ModelOutput mo = forward(bt.window_x, bt.window_y, false, nullptr);
        const auto b = mo.beta.data();
        for (std::size_t i = 0; i < len; ++i)
            for (Eigen::Index k = 0; k < d; ++k)
                out.beta(static_cast<Eigen::Index>(start + i), k) = b[i * config_.d + static_cast<std::size_t>(k)];
        if (out.weights) {
            const auto w = mo.weights.data();
            for (std::size_t i = 0; i < len; ++i)
                for (Eigen::Index j = 0; j < h; ++j)
                    (*out.weights)(static_cast<Eigen::Index>(start + i), j) =
                        w[i * config_.lookback + static_cast<std::size_t>(j)];
        }
    }
    return out;
}

Eigen::VectorXd Model::prior_precision() const {
    if (config_.head_kind != HeadKind::nbi) throw UnsupportedError("prior precision exists only for the NBI head");
    const auto v = p("prior_log_precision").data();
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = std::exp(v[i]);
    return out;
}

Eigen::VectorXd Model::prior_mean() const {
    if (config_.head_kind != HeadKind::nbi) throw UnsupportedError("prior mean exists only for the NBI head");
    const auto v = p("prior_mean").data();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void Model::save(const std::filesystem::path& path, const std::string& extra_metadata_json) const {
    nlohmann::json meta;
    meta["model_config"] = nlohmann::json::parse(model_config_to_json(config_));
    meta["extra"] = nlohmann::json::parse(extra_metadata_json);
    write_checkpoint(path, params_, meta.dump());
}

Model Model::load(const std::filesystem::path& path) {
    const StoredCheckpoint stored = read_checkpoint(path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(stored.metadata);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": metadata is not JSON (" + e.what() + ")");
    }
    if (!meta.contains("model_config")) throw DataError("checkpoint " + path.string() + " lacks model_config");
    Model model(model_config_from_json(meta["model_config"].dump()));
    load_into(model.params_, stored);
    return model;
}

BatchTensors gather(const WindowBatch& batch, const std::vector<std::size_t>& rows) {
    const std::size_t B = rows.size(), h = batch.lookback, d = batch.dim;
    std::vector<double> wx(B * h * d), wy(B * h), nx(B * d), ny(B);
    for (std::size_t i = 0; i < B; ++i) {
        const std::size_t r = rows[i];
        if (r >= batch.size()) throw BoundsError("row " + std::to_string(r) + " outside batch of " + std::to_string(batch.size()));
        std::copy_n(batch.windows_x.begin() + static_cast<std::ptrdiff_t>(r * h * d), h * d,
                    wx.begin() + static_cast<std::ptrdiff_t>(i * h * d));
        std::copy_n(batch.windows_y.begin() + static_cast<std::ptrdiff_t>(r * h), h,
                    wy.begin() + static_cast<std::ptrdiff_t>(i * h));
        std::copy_n(batch.next_x.begin() + static_cast<std::ptrdiff_t>(r * d), d,
                    nx.begin() + static_cast<std::ptrdiff_t>(i * d));
        ny[i] = batch.next_y[r];
    }
    return {Tensor::from({B, h, d}, std::move(wx)), Tensor::from({B, h}, std::move(wy)),
            Tensor::from({B, d}, std::move(nx)), Tensor::from({B}, std::move(ny))};
}

Tensor predict_y(const Tensor& beta, const Tensor& next_x) {
    if (beta.shape() != next_x.shape() || beta.rank() != 2) {
        throw ShapeError("predict_y: beta " + ad::shape_str(beta.shape()) + " vs x " + ad::shape_str(next_x.shape()));
    }
    return ad::sum(beta * next_x, 1);
}

std::string model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["sequence_kind"] = to_string(c.sequence_kind);
    j["head_kind"] = to_string(c.head_kind);
    j["hidden_size"] = c.hidden_size;
    j["dropout"] = c.dropout;
    j["lookback"] = c.lookback;
    j["d"] = c.d;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["seed"] = c.seed;
    j["allow_off_grid"] = c.allow_off_grid;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        ModelConfig c;
        c.sequence_kind = parse_sequence_kind(j.value("sequence_kind", to_string(c.sequence_kind)));
        c.head_kind = parse_head_kind(j.value("head_kind", to_string(c.head_kind)));
        c.hidden_size = j.value("hidden_size", c.hidden_size);
        c.dropout = j.value("dropout", c.dropout);
        c.lookback = j.value("lookback", c.lookback);
        c.d = j.value("d", c.d);
        c.n_layers = j.value("n_layers", c.n_layers);
        c.n_heads = j.value("n_heads", c.n_heads);
        c.seed = j.value("seed", c.seed);
        c.allow_off_grid = j.value("allow_off_grid", c.allow_off_grid);
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
}

}  // namespace neuralbeta
