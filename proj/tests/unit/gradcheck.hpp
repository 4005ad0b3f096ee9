#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "neuralbeta/tensor.hpp"

namespace nbtest {

using neuralbeta::ad::Shape;
using neuralbeta::ad::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double lo = -1.0,
                            double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(neuralbeta::ad::shape_numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;
};

// Compares tape gradients of sum(w * f(inputs)) against central differences,
// with w a fixed random weighting so every output element matters.
inline GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, double step = 1e-6, std::uint64_t seed = 7) {
    using namespace neuralbeta::ad;
    Tensor probe = f(inputs);
    std::mt19937_64 rng(seed);
    const Tensor weight = random_tensor(probe.shape(), rng, false);
    auto objective = [&](const std::vector<Tensor>& in) { return sum(mul(f(in), weight)); };

    for (auto& t : inputs) t.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        backward(objective(inputs));
    }
    GradCheckResult res;
    for (std::size_t a = 0; a < inputs.size(); ++a) {
        if (!inputs[a].requires_grad()) continue;
        const std::vector<double> analytic(inputs[a].grad().begin(), inputs[a].grad().end());
        for (std::size_t i = 0; i < inputs[a].numel(); ++i) {
            auto data = inputs[a].mutable_data();
            const double orig = data[i];
            data[i] = orig + step;
            const double up = objective(inputs).item();
            data[i] = orig - step;
            const double down = objective(inputs).item();
            data[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double an = analytic.empty() ? 0.0 : analytic[i];
            const double rel = std::abs(an - numeric) / std::max(1.0, std::abs(numeric));
            if (rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst = "input " + std::to_string(a) + " index " + std::to_string(i) + ": analytic " +
                            std::to_string(an) + " numeric " + std::to_string(numeric);
            }
        }
    }
    return res;
}

}  // namespace nbtest
