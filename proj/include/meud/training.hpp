#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "meud/dataset.hpp"
#include "meud/network.hpp"

namespace meud {

/// Reconstruction cost (1/2mn) * sum of squared residuals.
double mse_cost(const Matrix& x, const Matrix& xhat);

/// Bias-corrected ADAM. Moment arrays are kept in the same order as the
/// parameter arrays they shadow; one step advances t exactly once.
struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t t = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    static AdamState for_params(const ModelParams& params, double learning_rate);
    static AdamState for_array(std::size_t size, double learning_rate);
};

/// Single-array update (FF layers, scalar tests).
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);
/// Full-model update across every dense matrix and band array.
void adam_step(AdamState& state, ModelParams& params, const Gradients& grads);

struct TrainConfig {
    int epochs = 50;
    int batch_size = 64;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate() const;
};

struct TrainReport {
    std::vector<double> epoch_loss;     // mean of the reconstruction cost per epoch
    std::vector<double> epoch_seconds;  // wall time per epoch
};

using EpochCallback = std::function<void(int epoch, double loss, double seconds)>;

/// Mini-batch epochs over all rows of the training matrix (positive and
/// negative halves together). Deterministic for a given seed; halts with
/// NumericError naming the epoch/batch if the loss or parameters go
/// non-finite. Never mutates the training data.
TrainReport train(ModelParams& params, const EncodedMatrix& training, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace meud
