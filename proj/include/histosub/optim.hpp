#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace histosub {

struct AdamWConfig {
    double lr = 5e-5;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;

    explicit OptState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/**
 * One AdamW step with decoupled weight decay:
 *   theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
 * with bias-corrected moments. Entries listed in `frozen` are left untouched.
 */
void adamw_step(std::span<double> params, std::span<const double> grads, OptState& state, const AdamWConfig& cfg = {},
                std::span<const std::size_t> frozen = {});

}  // namespace histosub
