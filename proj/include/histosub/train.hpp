#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "histosub/evaluation.hpp"
#include "histosub/model.hpp"
#include "histosub/optim.hpp"

namespace histosub {

struct TrainConfig {
    ModelDims dims;
    AdamWConfig optimizer;
    int max_epochs = 100;
    /// Consecutive non-improving epochs tolerated before stopping.
    int patience = 10;
    std::uint64_t seed = 0;
};

struct EpochRecord {
    int epoch;
    double train_loss;
    double val_auc;
};

struct TrainResult {
    ModelParams best;
    int best_epoch;
    double best_auc;
    std::vector<EpochRecord> history;
};

/**
 * Trains one model with batch size 1 (one slide per AdamW step) over a seeded
 * shuffle of the training split, and keeps the parameters of the epoch with
 * the highest validation AUC. Ties keep the earlier epoch.
 */
TrainResult train(std::span<const SlideBag> slides, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, const TrainConfig& config);

std::vector<PredictionRecord> predict(std::span<const SlideBag> slides, std::span<const std::size_t> idx,
                                      const ModelParams& params);

}  // namespace histosub
