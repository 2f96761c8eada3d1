#include "meud/network.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include "meud/errors.hpp"

namespace meud {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::BaselineAE: return "ae";
        case Variant::MEUD: return "meud";
        case Variant::MEUD_FF: return "meud-ff";
        case Variant::MEUD_Coop: return "meud-coop";
        case Variant::MEUD_FF_Coop: return "meud-ff-coop";
    }
    return "unknown";
}

std::optional<Variant> variant_from_name(const std::string& name) {
    std::string key;
    for (char c : name) key += c == '_' ? '-' : static_cast<char>(std::tolower(c));
    if (key == "ae" || key == "baseline" || key == "baselineae") return Variant::BaselineAE;
    if (key == "meud") return Variant::MEUD;
    if (key == "meud-ff") return Variant::MEUD_FF;
    if (key == "meud-coop") return Variant::MEUD_Coop;
    if (key == "meud-ff-coop") return Variant::MEUD_FF_Coop;
    return std::nullopt;
}

bool variant_uses_ff(Variant v) { return v == Variant::MEUD_FF || v == Variant::MEUD_FF_Coop; }

bool variant_uses_coop(Variant v) {
    return v == Variant::MEUD_Coop || v == Variant::MEUD_FF_Coop;
}

void NetworkConfig::validate() const {
    for (std::size_t w : widths) {
        if (w == 0) throw ConfigError("network: zero-width layer");
    }
    if (variant == Variant::BaselineAE) {
        if (widths.size() < 3 || widths.size() % 2 == 0) {
            throw ConfigError("baseline: width list must be palindromic with odd length >= 3");
        }
        const std::size_t mid = widths.size() / 2;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            if (widths[i] != widths[widths.size() - 1 - i]) {
                throw ConfigError("baseline: width list must be palindromic");
            }
        }
        for (std::size_t i = 0; i < mid; ++i) {
            if (widths[i] <= widths[i + 1]) {
                throw ConfigError("baseline: encoder widths must strictly decrease");
            }
        }
        return;
    }
    if (widths.size() < 4) {
        throw ConfigError("meud: need at least 4 layers (input, bottleneck, latent, output)");
    }
    const std::size_t s = depth_s();
    if (widths.front() != widths.back()) {
        throw ConfigError("meud: output width must equal input width");
    }
    for (std::size_t i = 0; i + 1 < s; ++i) {
        if (widths[i] <= widths[i + 1]) {
            throw ConfigError("meud: encoder widths must strictly decrease (layer " +
                              std::to_string(i) + ")");
        }
    }
    if (widths[s] != widths[s - 1]) {
        throw ConfigError("meud: latent width must equal bottleneck width");
    }
}

std::size_t NetworkConfig::latent_index() const {
    return variant == Variant::BaselineAE ? widths.size() / 2 : widths.size() - 2;
}

std::optional<std::size_t> NetworkConfig::coop_position() const {
    if (!variant_uses_coop(variant)) return std::nullopt;
    return widths.size() - 3;  // bottleneck (s-1) -> latent (s)
}

std::vector<std::size_t> NetworkConfig::encoder_widths(std::size_t n, std::size_t r,
                                                       std::size_t s) {
    if (s < 2) throw ConfigError("encoder_widths: depth s must be at least 2");
    if (r >= n) throw ConfigError("encoder_widths: target dimension must be below n");
    const std::size_t steps = s - 1;
    if (n - r < steps) throw ConfigError("encoder_widths: not enough room for strict decrease");
    std::vector<std::size_t> widths(s);
    widths[0] = n;
    widths[s - 1] = r;
    const double ratio = static_cast<double>(r) / static_cast<double>(n);
    for (std::size_t k = 1; k + 1 < s; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(steps);
        auto w = static_cast<std::size_t>(std::llround(static_cast<double>(n) * std::pow(ratio, t)));
        w = std::min(w, widths[k - 1] - 1);
        w = std::max(w, r + (steps - k));
        widths[k] = w;
    }
    return widths;
}

NetworkConfig NetworkConfig::make(Variant v, std::size_t n, std::size_t r, std::size_t s,
                                  std::uint64_t seed) {
    NetworkConfig cfg;
    cfg.variant = v;
    cfg.seed = seed;
    const auto enc = encoder_widths(n, r, s);
    if (v == Variant::BaselineAE) {
        cfg.widths = enc;
        for (std::size_t i = enc.size() - 1; i-- > 0;) cfg.widths.push_back(enc[i]);
    } else {
        cfg.widths = enc;
        cfg.widths.push_back(r);  // latent
        cfg.widths.push_back(n);  // output
    }
    cfg.validate();
    return cfg;
}

void BandWeights::validate() const {
    const std::size_t r = diag.size();
    const std::size_t expect = ring ? r : (r > 0 ? r - 1 : 0);
    if (sub.size() != expect || sup.size() != expect) {
        throw DimensionError("band: neighbor weight lengths do not match size " +
                             std::to_string(r));
    }
}

Matrix BandWeights::dense() const {
    validate();
    const std::size_t r = size();
    Matrix w(r, r);
    for (std::size_t j = 0; j < r; ++j) w(j, j) = diag[j];
    for (std::size_t a = 0; a + 1 < r; ++a) {
        w(a, a + 1) = sub[a];  // source a feeds node a+1
        w(a + 1, a) = sup[a];  // source a+1 feeds node a
    }
    if (ring && r > 1) {
        w(r - 1, 0) = sub[r - 1];
        w(0, r - 1) = sup[r - 1];
    }
    return w;
}

Matrix band_apply(const BandWeights& band, const Matrix& y) {
    band.validate();
    const std::size_t r = band.size();
    if (y.cols() != r) {
        throw DimensionError("band_apply: input width " + std::to_string(y.cols()) +
                             " vs band size " + std::to_string(r));
    }
    Matrix out(y.rows(), r);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        const auto yi = y.row(i);
        auto oi = out.row(i);
        for (std::size_t j = 0; j < r; ++j) {
            double acc = band.diag[j] * yi[j];
            if (j > 0) acc += band.sub[j - 1] * yi[j - 1];
            if (j + 1 < r) acc += band.sup[j] * yi[j + 1];
            if (band.ring && r > 1) {
                if (j == 0) acc += band.sub[r - 1] * yi[r - 1];
                if (j == r - 1) acc += band.sup[r - 1] * yi[0];
            }
            oi[j] = acc;
        }
    }
    return out;
}

Matrix band_apply_transpose(const BandWeights& band, const Matrix& g) {
    band.validate();
    const std::size_t r = band.size();
    if (g.cols() != r) {
        throw DimensionError("band_apply_transpose: input width " + std::to_string(g.cols()) +
                             " vs band size " + std::to_string(r));
    }
    Matrix out(g.rows(), r);
    for (std::size_t i = 0; i < g.rows(); ++i) {
        const auto gi = g.row(i);
        auto oi = out.row(i);
        for (std::size_t c = 0; c < r; ++c) {
            double acc = band.diag[c] * gi[c];
            if (c + 1 < r) acc += band.sub[c] * gi[c + 1];
            if (c > 0) acc += band.sup[c - 1] * gi[c - 1];
            if (band.ring && r > 1) {
                if (c == r - 1) acc += band.sub[r - 1] * gi[0];
                if (c == 0) acc += band.sup[r - 1] * gi[r - 1];
            }
            oi[c] = acc;
        }
    }
    return out;
}

BandWeights band_gradient(const BandWeights& band, const Matrix& y, const Matrix& g) {
    band.validate();
    const std::size_t r = band.size();
    if (y.cols() != r || g.cols() != r || y.rows() != g.rows()) {
        throw DimensionError("band_gradient: shape mismatch " + y.shape_str() + " vs " +
                             g.shape_str());
    }
    BandWeights grad;
    grad.ring = band.ring;
    grad.diag.assign(r, 0.0);
    grad.sub.assign(band.sub.size(), 0.0);
    grad.sup.assign(band.sup.size(), 0.0);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        const auto yi = y.row(i);
        const auto gi = g.row(i);
        for (std::size_t j = 0; j < r; ++j) grad.diag[j] += yi[j] * gi[j];
        for (std::size_t a = 0; a + 1 < r; ++a) {
            grad.sub[a] += yi[a] * gi[a + 1];
            grad.sup[a] += yi[a + 1] * gi[a];
        }
        if (band.ring && r > 1) {
            grad.sub[r - 1] += yi[r - 1] * gi[0];
            grad.sup[r - 1] += yi[0] * gi[r - 1];
        }
    }
    return grad;
}

bool ModelParams::is_coop_position(std::size_t k) const {
    const auto cp = config.coop_position();
    return cp && *cp == k;
}

const Matrix& ModelParams::dense_at(std::size_t k) const {
    const auto cp = config.coop_position();
    return dense_weights[cp && k > *cp ? k - 1 : k];
}

Matrix& ModelParams::dense_at(std::size_t k) {
    const auto cp = config.coop_position();
    return dense_weights[cp && k > *cp ? k - 1 : k];
}

ModelParams init_params(const NetworkConfig& cfg, std::span<const Matrix> ff_weights) {
    cfg.validate();
    if (!ff_weights.empty() && !variant_uses_ff(cfg.variant)) {
        throw ConfigError("init_params: pre-trained weights passed to a non-FF variant");
    }
    if (variant_uses_ff(cfg.variant)) {
        if (ff_weights.empty()) {
            throw ConfigError("init_params: FF variant requires pre-trained weights");
        }
        const std::size_t max_slots = cfg.depth_s() - 1;  // W^(0) .. W^(s-2)
        if (ff_weights.size() > max_slots) {
            throw ConfigError("init_params: " + std::to_string(ff_weights.size()) +
                              " FF matrices but only " + std::to_string(max_slots) +
                              " encoder slots accept them");
        }
        for (std::size_t k = 0; k < ff_weights.size(); ++k) {
            if (ff_weights[k].rows() != cfg.widths[k] || ff_weights[k].cols() != cfg.widths[k + 1]) {
                throw DimensionError("init_params: FF matrix " + std::to_string(k) + " is " +
                                     ff_weights[k].shape_str() + ", expected " +
                                     std::to_string(cfg.widths[k]) + "x" +
                                     std::to_string(cfg.widths[k + 1]));
            }
        }
    }

    ModelParams params;
    params.config = cfg;
    const auto coop = cfg.coop_position();
    for (std::size_t k = 0; k + 1 < cfg.widths.size(); ++k) {
        const std::size_t rows = cfg.widths[k];
        const std::size_t cols = cfg.widths[k + 1];
        if (coop && *coop == k) {
            const std::size_t r = rows;
            const std::size_t edge = cfg.coop_ring ? r : r - 1;
            const Matrix draws = randn_matrix(1, r + 2 * edge, 0.0, 0.1, mix_seed(cfg.seed, k));
            BandWeights band;
            band.ring = cfg.coop_ring;
            band.diag.assign(draws.data(), draws.data() + r);
            band.sub.assign(draws.data() + r, draws.data() + r + edge);
            band.sup.assign(draws.data() + r + edge, draws.data() + r + 2 * edge);
            params.coop = std::move(band);
            continue;
        }
        if (variant_uses_ff(cfg.variant) && k < ff_weights.size()) {
            params.dense_weights.push_back(ff_weights[k]);
            continue;
        }
        params.dense_weights.push_back(randn_matrix(rows, cols, 0.0, 0.1, mix_seed(cfg.seed, k)));
    }
    return params;
}

namespace {

void check_cache(const ModelParams& params, const ActivationCache& cache, const Matrix& x) {
    const auto& widths = params.config.widths;
    if (cache.pre.size() != widths.size() || cache.post.size() != widths.size()) {
        throw DimensionError("backward: stale cache (layer count mismatch)");
    }
    for (std::size_t k = 0; k < widths.size(); ++k) {
        if (cache.post[k].cols() != widths[k] || cache.post[k].rows() != x.rows()) {
            throw DimensionError("backward: stale cache at layer " + std::to_string(k));
        }
    }
}

}  // namespace

ActivationCache forward(const ModelParams& params, const Matrix& x) {
    const auto& widths = params.config.widths;
    if (x.cols() != widths[0]) {
        throw DimensionError("forward: input width " + std::to_string(x.cols()) +
                             " vs layer width " + std::to_string(widths[0]));
    }
    const std::size_t latent = params.config.latent_index();
    ActivationCache cache;
    cache.pre.reserve(widths.size());
    cache.post.reserve(widths.size());
    cache.pre.push_back(x);
    cache.post.push_back(x);  // identity input layer
    for (std::size_t k = 1; k < widths.size(); ++k) {
        Matrix pre = params.is_coop_position(k - 1)
                         ? band_apply(*params.coop, cache.post[k - 1])
                         : matmul(cache.post[k - 1], params.dense_at(k - 1));
        cache.post.push_back(
            activate(pre, k == latent ? Activation::Sigmoid : Activation::Relu));
        cache.pre.push_back(std::move(pre));
    }
    return cache;
}

Gradients backward(const ModelParams& params, const ActivationCache& cache, const Matrix& x) {
    check_cache(params, cache, x);
    const auto& widths = params.config.widths;
    const std::size_t layers = widths.size();
    const std::size_t latent = params.config.latent_index();
    const double inv_mn = 1.0 / (static_cast<double>(x.rows()) * static_cast<double>(x.cols()));

    Gradients grads;
    grads.dense_weights.resize(params.dense_weights.size());

    // dC/dY at the output layer for C = (1/2mn) * sum of squared residuals.
    Matrix g_post = scale(subtract(cache.post[layers - 1], x), inv_mn);
    for (std::size_t k = layers - 1; k >= 1; --k) {
        const Matrix act_grad = activate(
            cache.pre[k], k == latent ? Activation::SigmoidGrad : Activation::ReluGrad);
        const Matrix g_pre = hadamard(g_post, act_grad);
        const Matrix& below = cache.post[k - 1];
        if (params.is_coop_position(k - 1)) {
            grads.coop = band_gradient(*params.coop, below, g_pre);
            if (k > 1) g_post = band_apply_transpose(*params.coop, g_pre);
        } else {
            const auto cp = params.config.coop_position();
            const std::size_t idx = cp && (k - 1) > *cp ? k - 2 : k - 1;
            grads.dense_weights[idx] = matmul(transpose(below), g_pre);
            if (k > 1) g_post = matmul(g_pre, transpose(params.dense_at(k - 1)));
        }
    }
    return grads;
}

Matrix extract_embedding(const ModelParams& params, const Matrix& x) {
    return forward(params, x).post[params.config.latent_index()];
}

// ---- checkpoint container ----------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'E', 'U', 'D'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
    const std::uint8_t* p;
    std::size_t left;

    void need(std::size_t n) const {
        if (left < n) throw ParseError(ParseError::Kind::Truncated, "checkpoint: truncated");
    }
    std::uint8_t u8() {
        need(1);
        --left;
        return *p++;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(*p++) << (8 * i);
        left -= 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(*p++) << (8 * i);
        left -= 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::string blob;
    blob.append(kMagic, 4);
    put_u32(blob, kCheckpointVersion);
    blob.push_back(static_cast<char>(params.config.variant));
    put_u64(blob, params.config.seed);
    put_u32(blob, static_cast<std::uint32_t>(params.config.widths.size()));
    for (std::size_t w : params.config.widths) put_u64(blob, w);

    for (std::size_t k = 0; k < params.weight_count(); ++k) {
        if (params.is_coop_position(k)) {
            const BandWeights& band = *params.coop;
            blob.push_back(1);
            put_u64(blob, band.size());
            blob.push_back(band.ring ? 1 : 0);
            for (double v : band.diag) put_f64(blob, v);
            for (double v : band.sub) put_f64(blob, v);
            for (double v : band.sup) put_f64(blob, v);
        } else {
            const Matrix& w = params.dense_at(k);
            blob.push_back(0);
            put_u64(blob, w.rows());
            put_u64(blob, w.cols());
            for (double v : w.values()) put_f64(blob, v);
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Reader r{reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size()};
    r.need(4);
    if (std::memcmp(r.p, kMagic, 4) != 0) {
        throw ParseError(ParseError::Kind::BadMagic, "checkpoint: bad magic in " + path);
    }
    r.p += 4;
    r.left -= 4;
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw ParseError(ParseError::Kind::BadVersion,
                         "checkpoint: format version " + std::to_string(version) +
                             ", expected " + std::to_string(kCheckpointVersion));
    }

    ModelParams params;
    const std::uint8_t variant = r.u8();
    if (variant > static_cast<std::uint8_t>(Variant::MEUD_FF_Coop)) {
        throw ParseError(ParseError::Kind::BadVersion, "checkpoint: unknown variant tag");
    }
    params.config.variant = static_cast<Variant>(variant);
    params.config.seed = r.u64();
    const std::uint32_t layer_count = r.u32();
    params.config.widths.resize(layer_count);
    for (auto& w : params.config.widths) w = r.u64();
    params.config.validate();

    for (std::size_t k = 0; k + 1 < layer_count; ++k) {
        const std::uint8_t tag = r.u8();
        if (tag == 1) {
            BandWeights band;
            const std::uint64_t size = r.u64();
            band.ring = r.u8() != 0;
            const std::size_t edge = band.ring ? size : size - 1;
            band.diag.resize(size);
            band.sub.resize(edge);
            band.sup.resize(edge);
            for (auto& v : band.diag) v = r.f64();
            for (auto& v : band.sub) v = r.f64();
            for (auto& v : band.sup) v = r.f64();
            if (!params.is_coop_position(k)) {
                throw ParseError(ParseError::Kind::BadVersion,
                                 "checkpoint: band weights at a dense slot");
            }
            params.config.coop_ring = band.ring;
            params.coop = std::move(band);
        } else if (tag == 0) {
            const std::uint64_t rows = r.u64();
            const std::uint64_t cols = r.u64();
            Matrix w(rows, cols);
            for (auto& v : w.values()) v = r.f64();
            params.dense_weights.push_back(std::move(w));
        } else {
            throw ParseError(ParseError::Kind::BadVersion, "checkpoint: unknown weight tag");
        }
    }
    return params;
}

}  // namespace meud
