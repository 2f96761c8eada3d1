#include "meud/ff_pretrain.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "meud/errors.hpp"

namespace meud {

namespace {

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

void FFLayerConfig::validate() const {
    if (epochs < 1) throw ConfigError("ff: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("ff: learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("ff: batch_size must be >= 1");
}

std::vector<double> goodness(const Matrix& hidden) {
    std::vector<double> out(hidden.rows());
    for (std::size_t i = 0; i < hidden.rows(); ++i) {
        double acc = 0.0;
        for (double v : hidden.row(i)) acc += v * v;
        out[i] = acc;
    }
    return out;
}

double p_positive(double goodness_value, double theta) {
    return sigmoid(goodness_value - theta);
}

Matrix layer_normalize(const Matrix& hidden) {
    Matrix out(hidden.rows(), hidden.cols());
    for (std::size_t i = 0; i < hidden.rows(); ++i) {
        double norm = 0.0;
        for (double v : hidden.row(i)) norm += v * v;
        const double inv = 1.0 / (std::sqrt(norm) + 1e-8);
        const auto src = hidden.row(i);
        auto dst = out.row(i);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] * inv;
    }
    return out;
}

std::pair<Matrix, double> ff_layer_gradient(const Matrix& weights, const Matrix& batch,
                                            std::span<const Polarity> polarity, double theta) {
    if (batch.cols() != weights.rows()) {
        throw DimensionError("ff: batch width " + std::to_string(batch.cols()) +
                             " vs layer fan-in " + std::to_string(weights.rows()));
    }
    if (polarity.size() != batch.rows()) {
        throw DimensionError("ff: polarity flags do not match batch rows");
    }
    const std::size_t m = batch.rows();
    const Matrix hidden = activate(matmul(batch, weights), Activation::Relu);
    const std::vector<double> g = goodness(hidden);

    // dL/dg_i = (p_i - target_i) / m; dg/dz flows through relu as 2 * hidden.
    Matrix delta(m, hidden.cols());
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const bool positive = polarity[i] == Polarity::Positive;
        loss += positive ? softplus(theta - g[i]) : softplus(g[i] - theta);
        const double target = positive ? 1.0 : 0.0;
        const double coeff = (p_positive(g[i], theta) - target) / static_cast<double>(m);
        const auto h = hidden.row(i);
        auto d = delta.row(i);
        for (std::size_t j = 0; j < h.size(); ++j) d[j] = coeff * 2.0 * h[j];
    }
    return {matmul(transpose(batch), delta), loss / static_cast<double>(m)};
}

double ff_layer_step(FFLayer& layer, AdamState& opt, const Matrix& batch,
                     std::span<const Polarity> polarity) {
    auto [grad, loss] = ff_layer_gradient(layer.weights, batch, polarity, layer.config.theta);
    if (layer.config.use_sgd) {
        auto w = layer.weights.values();
        const auto g = grad.values();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= layer.config.learning_rate * g[i];
    } else {
        adam_step(opt, layer.weights.values(), grad.values());
    }
    return loss;
}

namespace {

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> order, std::size_t begin,
                   std::size_t count) {
    Matrix out(count, src.cols());
    for (std::size_t i = 0; i < count; ++i) {
        const auto row = src.row(order[begin + i]);
        std::copy(row.begin(), row.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace

std::vector<Matrix> pretrain_stack(const EncodedMatrix& training,
                                   const std::vector<std::size_t>& widths,
                                   const FFLayerConfig& cfg, std::uint64_t seed,
                                   const FFTelemetry& telemetry) {
    cfg.validate();
    if (widths.size() < 2) throw ConfigError("pretrain_stack: need at least one width pair");
    for (std::size_t w : widths) {
        if (w == 0) throw ConfigError("pretrain_stack: zero width");
    }
    if (widths[0] != training.data.cols()) {
        throw DimensionError("pretrain_stack: widths[0] = " + std::to_string(widths[0]) +
                             " vs data width " + std::to_string(training.data.cols()));
    }

    const std::size_t m = training.data.rows();
    if (m == 0) throw ConfigError("pretrain_stack: empty training matrix");
    const std::size_t batch = std::min<std::size_t>(cfg.batch_size, m);

    std::vector<Matrix> trained;
    Matrix current = training.data;
    for (std::size_t stage = 0; stage + 1 < widths.size(); ++stage) {
        FFLayer layer{randn_matrix(widths[stage], widths[stage + 1], 0.0, 0.1,
                                   mix_seed(seed, 0x1000 + stage)),
                      cfg};
        AdamState opt = AdamState::for_array(layer.weights.size(), cfg.learning_rate);

        std::vector<std::size_t> order(m);
        std::iota(order.begin(), order.end(), 0);
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::mt19937_64 rng(
                mix_seed(seed, 0x2000 + stage * 1009 + static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = m; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

            double loss_sum = 0.0;
            for (std::size_t begin = 0; begin < m; begin += batch) {
                const std::size_t count = std::min(batch, m - begin);
                const Matrix x = gather_rows(current, order, begin, count);
                std::vector<Polarity> flags(count);
                for (std::size_t i = 0; i < count; ++i) flags[i] = training.polarity[order[begin + i]];
                const double loss = ff_layer_step(layer, opt, x, flags);
                if (!std::isfinite(loss)) {
                    throw NumericError("pretrain_stack: non-finite loss at stage " +
                                       std::to_string(stage) + " epoch " + std::to_string(epoch));
                }
                loss_sum += loss * static_cast<double>(count);
            }
            if (telemetry) telemetry(stage, epoch, loss_sum / static_cast<double>(m));
        }

        // Feed the next shallow model with this layer's deep-network output.
        current = activate(matmul(current, layer.weights), Activation::Relu);
        if (cfg.normalize_between_layers) current = layer_normalize(current);
        trained.push_back(std::move(layer.weights));
    }
    return trained;
}

}  // namespace meud
