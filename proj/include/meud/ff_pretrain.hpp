#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "meud/dataset.hpp"
#include "meud/matrix.hpp"
#include "meud/training.hpp"

namespace meud {

struct FFLayerConfig {
    double theta = 2.0;  // goodness threshold
    int epochs = 40;
    double learning_rate = 1e-3;
    int batch_size = 64;
    /// Apply forward-forward layer normalization between stacked shallow
    /// models. Off by default: the stack input follows the plain ReLU layer
    /// output.
    bool normalize_between_layers = false;
    bool use_sgd = false;  // plain gradient steps instead of ADAM

    void validate() const;
};

/// One shallow forward-forward model: an input layer and a hidden layer whose
/// weights are later transplanted into the deep network.
struct FFLayer {
    Matrix weights;  // fan_in x fan_out
    FFLayerConfig config;
};

/// Per-row sum of squared activations.
std::vector<double> goodness(const Matrix& hidden);

/// sigma(g - theta): probability that a row is a positive sample.
double p_positive(double goodness_value, double theta);

/// Rows divided by their L2 norm (+1e-8), so the next layer cannot read the
/// previous layer's goodness.
Matrix layer_normalize(const Matrix& hidden);

/// Loss and weight gradient of the softplus margin objective
///   mean_i softplus(theta - g_i)   for positive rows,
///   mean_i softplus(g_i - theta)   for negative rows,
/// with hidden = relu(batch * weights) and g_i the row goodness.
std::pair<Matrix, double> ff_layer_gradient(const Matrix& weights, const Matrix& batch,
                                            std::span<const Polarity> polarity, double theta);

/// One optimizer step on the layer; returns the pre-step loss.
double ff_layer_step(FFLayer& layer, AdamState& opt, const Matrix& batch,
                     std::span<const Polarity> polarity);

using FFTelemetry = std::function<void(std::size_t layer, int epoch, double loss)>;

/// Greedy stack pre-training: one shallow FF model per consecutive width pair.
/// The input to model k+1 is the deep network's layer-k output (ReLU of the
/// product with the just-trained weights). Returns the trained matrices in
/// order; deterministic for a given (data, widths, cfg, seed).
std::vector<Matrix> pretrain_stack(const EncodedMatrix& training,
                                   const std::vector<std::size_t>& widths,
                                   const FFLayerConfig& cfg, std::uint64_t seed,
                                   const FFTelemetry& telemetry = {});

}  // namespace meud
