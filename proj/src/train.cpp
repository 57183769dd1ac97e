#include "histosub/train.hpp"

#include <random>

#include "histosub/error.hpp"
#include "histosub/rng.hpp"

namespace histosub {

namespace {

void require_both_classes(std::span<const SlideBag> slides, std::span<const std::size_t> idx, const char* split) {
    if (idx.empty()) throw DegenerateError(std::string(split) + " split is empty");
    bool pos = false;
    bool neg = false;
    for (auto i : idx) {
        if (i >= slides.size()) throw InputError(std::string(split) + " split index out of range");
        const auto& label = slides[i].label;
        if (!label) throw InputError("slide '" + slides[i].slide_id + "' has no label");
        (*label == 1 ? pos : neg) = true;
    }
    if (!(pos && neg)) throw DegenerateError(std::string(split) + " split lacks one class; AUC undefined");
}

}  // namespace

std::vector<PredictionRecord> predict(std::span<const SlideBag> slides, std::span<const std::size_t> idx,
                                      const ModelParams& params) {
    std::vector<PredictionRecord> out;
    out.reserve(idx.size());
    for (auto i : idx) {
        const auto& bag = slides[i];
        out.push_back({bag.slide_id, bag.label.value_or(0), forward(bag, params).prob});
    }
    return out;
}

TrainResult train(std::span<const SlideBag> slides, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, const TrainConfig& config) {
    require_both_classes(slides, train_idx, "training");
    require_both_classes(slides, val_idx, "validation");
    if (config.max_epochs < 1) throw InputError("max_epochs must be at least 1");
    if (config.patience < 0) throw InputError("patience must be non-negative");

    ModelParams params = ModelParams::initialize(config.dims, derive_seed(config.seed, "init"));
    OptState state(params.size());
    ModelParams grad(config.dims);
    std::vector<std::size_t> frozen;
    const auto lambda_at = params.lambda_offset();
    if (lambda_at && config.dims.lambda_mode == LambdaMode::FixedUnit) frozen.push_back(*lambda_at);

    std::mt19937_64 shuffle_rng(derive_seed(config.seed, "shuffle"));
    std::vector<std::size_t> order(train_idx.begin(), train_idx.end());

    TrainResult result{params, 0, -1.0, {}};
    int stale = 0;
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(shuffle_rng() % (i + 1));
            std::swap(order[i], order[j]);
        }
        double loss_sum = 0.0;
        for (auto i : order) {
            const auto& bag = slides[i];
            loss_sum += backward_into(bag, params, *bag.label, grad);
            adamw_step(params.data(), grad.data(), state, config.optimizer, frozen);
            if (lambda_at && params.data()[*lambda_at] < 0.0) params.data()[*lambda_at] = 0.0;
        }
        const double auc = roc_auc(predict(slides, val_idx, params));
        result.history.push_back({epoch, loss_sum / static_cast<double>(order.size()), auc});
        if (auc > result.best_auc) {
            result.best_auc = auc;
            result.best_epoch = epoch;
            result.best = params;
            stale = 0;
        } else if (++stale > config.patience) {
            break;
        }
    }
    return result;
}

}  // namespace histosub
