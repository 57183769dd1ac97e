#include "histosub/optim.hpp"

#include <cmath>

#include <Eigen/Core>

#include "histosub/error.hpp"

namespace histosub {

void adamw_step(std::span<double> params, std::span<const double> grads, OptState& state, const AdamWConfig& cfg,
                std::span<const std::size_t> frozen) {
    const std::size_t n = params.size();
    if (grads.size() != n || state.m.size() != n || state.v.size() != n) {
        throw InputError("adamw: parameter, gradient and moment shapes differ");
    }
    std::vector<double> saved;
    saved.reserve(frozen.size());
    for (auto i : frozen) saved.push_back(params[i]);

    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    const auto len = static_cast<Eigen::Index>(n);
    Eigen::Map<Eigen::ArrayXd> p(params.data(), len);
    Eigen::Map<const Eigen::ArrayXd> g(grads.data(), len);
    Eigen::Map<Eigen::ArrayXd> m(state.m.data(), len);
    Eigen::Map<Eigen::ArrayXd> v(state.v.data(), len);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    p = p * decay - cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
    for (std::size_t k = 0; k < frozen.size(); ++k) params[frozen[k]] = saved[k];
}

}  // namespace histosub
