#include "meud/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "meud/errors.hpp"

namespace meud {

double mse_cost(const Matrix& x, const Matrix& xhat) {
    if (x.rows() != xhat.rows() || x.cols() != xhat.cols()) {
        throw DimensionError("mse_cost: shape mismatch " + x.shape_str() + " vs " +
                             xhat.shape_str());
    }
    const auto a = x.values();
    const auto b = xhat.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / (2.0 * static_cast<double>(x.rows()) * static_cast<double>(x.cols()));
}

namespace {

// Parameter arrays in a fixed traversal order: dense matrices at their weight
// slots, band arrays (diag, sub, sup) at the coop slot.
std::vector<std::span<double>> param_arrays(ModelParams& params) {
    std::vector<std::span<double>> arrays;
    for (std::size_t k = 0; k < params.weight_count(); ++k) {
        if (params.is_coop_position(k)) {
            arrays.emplace_back(params.coop->diag);
            arrays.emplace_back(params.coop->sub);
            arrays.emplace_back(params.coop->sup);
        } else {
            arrays.push_back(params.dense_at(k).values());
        }
    }
    return arrays;
}

std::vector<std::span<const double>> grad_arrays(const ModelParams& params,
                                                 const Gradients& grads) {
    std::vector<std::span<const double>> arrays;
    for (std::size_t k = 0; k < params.weight_count(); ++k) {
        if (params.is_coop_position(k)) {
            arrays.emplace_back(grads.coop->diag);
            arrays.emplace_back(grads.coop->sub);
            arrays.emplace_back(grads.coop->sup);
        } else {
            const auto cp = params.config.coop_position();
            arrays.push_back(grads.dense_weights[cp && k > *cp ? k - 1 : k].values());
        }
    }
    return arrays;
}

void adam_update_slot(AdamState& state, std::size_t slot, std::span<double> p,
                      std::span<const double> g) {
    if (p.size() != g.size() || p.size() != state.first_moment[slot].size()) {
        throw DimensionError("adam: moment/parameter/gradient size mismatch at slot " +
                             std::to_string(slot));
    }
    auto& m = state.first_moment[slot];
    auto& v = state.second_moment[slot];
    const double corr1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double corr2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        const double m_hat = m[i] / corr1;
        const double v_hat = v[i] / corr2;
        p[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
}

}  // namespace

AdamState AdamState::for_params(const ModelParams& params, double learning_rate) {
    AdamState state;
    state.learning_rate = learning_rate;
    for (std::size_t k = 0; k < params.weight_count(); ++k) {
        if (params.is_coop_position(k)) {
            state.first_moment.emplace_back(params.coop->diag.size(), 0.0);
            state.first_moment.emplace_back(params.coop->sub.size(), 0.0);
            state.first_moment.emplace_back(params.coop->sup.size(), 0.0);
        } else {
            state.first_moment.emplace_back(params.dense_at(k).size(), 0.0);
        }
    }
    state.second_moment = state.first_moment;
    return state;
}

AdamState AdamState::for_array(std::size_t size, double learning_rate) {
    AdamState state;
    state.learning_rate = learning_rate;
    state.first_moment.emplace_back(size, 0.0);
    state.second_moment.emplace_back(size, 0.0);
    return state;
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
    ++state.t;
    adam_update_slot(state, 0, params, grads);
}

void adam_step(AdamState& state, ModelParams& params, const Gradients& grads) {
    const auto p = param_arrays(params);
    const auto g = grad_arrays(params, grads);
    if (p.size() != state.first_moment.size()) {
        throw DimensionError("adam: state built for a different parameter layout");
    }
    ++state.t;
    for (std::size_t slot = 0; slot < p.size(); ++slot) adam_update_slot(state, slot, p[slot], g[slot]);
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
}

namespace {

bool params_finite(const ModelParams& params) {
    for (const auto& w : params.dense_weights) {
        if (!all_finite(w)) return false;
    }
    if (params.coop) {
        for (double v : params.coop->diag)
            if (!std::isfinite(v)) return false;
        for (double v : params.coop->sub)
            if (!std::isfinite(v)) return false;
        for (double v : params.coop->sup)
            if (!std::isfinite(v)) return false;
    }
    return true;
}

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

TrainReport train(ModelParams& params, const EncodedMatrix& training, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    params.config.validate();
    const std::size_t m = training.data.rows();
    if (m == 0) throw ConfigError("train: empty training matrix");
    if (training.data.cols() != params.config.widths[0]) {
        throw DimensionError("train: data width " + std::to_string(training.data.cols()) +
                             " vs input layer " + std::to_string(params.config.widths[0]));
    }

    AdamState opt = AdamState::for_params(params, cfg.learning_rate);
    const std::size_t batch = std::min<std::size_t>(cfg.batch_size, m);

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);

    TrainReport report;
    report.epoch_loss.reserve(cfg.epochs);
    report.epoch_seconds.reserve(cfg.epochs);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg.shuffle) {
            std::mt19937_64 rng(mix_seed(cfg.seed, 0x500 + static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = m; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        }

        double loss_sum = 0.0;
        int batch_index = 0;
        for (std::size_t begin = 0; begin < m; begin += batch, ++batch_index) {
            const std::size_t count = std::min(batch, m - begin);
            const Matrix x = gather_rows(training.data, order, begin, count);
            const ActivationCache cache = forward(params, x);
            const double loss = mse_cost(x, cache.post.back());
            if (!std::isfinite(loss)) {
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(batch_index));
            }
            loss_sum += loss * static_cast<double>(count);
            const Gradients grads = backward(params, cache, x);
            adam_step(opt, params, grads);
        }
        if (!params_finite(params)) {
            throw NumericError("train: non-finite parameters after epoch " +
                               std::to_string(epoch));
        }

        const auto t1 = std::chrono::steady_clock::now();
        const double seconds = std::chrono::duration<double>(t1 - t0).count();
        const double mean_loss = loss_sum / static_cast<double>(m);
        report.epoch_loss.push_back(mean_loss);
        report.epoch_seconds.push_back(seconds);
        if (on_epoch) on_epoch(epoch, mean_loss, seconds);
    }
    return report;
}

}  // namespace meud
