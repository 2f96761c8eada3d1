#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "meud/matrix.hpp"

namespace meud {

enum class Variant : std::uint8_t { BaselineAE, MEUD, MEUD_FF, MEUD_Coop, MEUD_FF_Coop };

const char* variant_name(Variant v);
std::optional<Variant> variant_from_name(const std::string& name);
bool variant_uses_ff(Variant v);
bool variant_uses_coop(Variant v);

/// Layer widths r_0..r_{s+1} plus the variant selector.
///
/// MEUD variants: widths[0] = widths.back() = n, a strictly narrowing encoder,
/// and equal bottleneck/latent widths r_{s-1} = r_s = r. The latent layer is
/// sigmoid-activated; every other non-input layer uses ReLU. BaselineAE takes
/// a palindromic width list with the sigmoid latent in the middle.
struct NetworkConfig {
    std::vector<std::size_t> widths;
    Variant variant = Variant::MEUD;
    std::uint64_t seed = 0;
    bool coop_ring = false;  // close the band ends (ablation; chain by default)

    void validate() const;
    std::size_t depth_s() const { return widths.size() - 2; }
    std::size_t latent_index() const;
    /// Weight slot carrying the lateral band (bottleneck -> latent), when the
    /// variant cooperates.
    std::optional<std::size_t> coop_position() const;

    /// Geometric width schedule from n down to r over s-1 encoder steps,
    /// rounded and forced strictly decreasing. Returns [n, ..., r], length s.
    static std::vector<std::size_t> encoder_widths(std::size_t n, std::size_t r, std::size_t s);
    static NetworkConfig make(Variant v, std::size_t n, std::size_t r, std::size_t s,
                              std::uint64_t seed);
};

/// Tridiagonal lateral connectivity: node j couples to itself and to nodes
/// j-1 / j+1. Chain by default (no wrap-around); ring mode closes the ends and
/// extends sub/sup by one entry each.
struct BandWeights {
    std::vector<double> diag;  // self connection of node j
    std::vector<double> sub;   // weight into node j from node j-1 (source-indexed)
    std::vector<double> sup;   // weight into node j from node j+1 (destination-indexed)
    bool ring = false;

    std::size_t size() const { return diag.size(); }
    void validate() const;
    /// Dense r x r expansion; zero strictly outside the band positions.
    Matrix dense() const;
};

/// y * W for the band's dense expansion W, computed directly on the band.
Matrix band_apply(const BandWeights& band, const Matrix& y);
/// g * W^T, the data-path half of backpropagation through the band.
Matrix band_apply_transpose(const BandWeights& band, const Matrix& g);
/// Dense weight gradient Y^T G projected onto the band positions.
BandWeights band_gradient(const BandWeights& band, const Matrix& y, const Matrix& g);

struct ModelParams {
    NetworkConfig config;
    std::vector<Matrix> dense_weights;  // every inter-layer weight except the coop slot
    std::optional<BandWeights> coop;

    std::size_t weight_count() const { return config.widths.size() - 1; }
    bool is_coop_position(std::size_t k) const;
    const Matrix& dense_at(std::size_t k) const;
    Matrix& dense_at(std::size_t k);
};

/// Same shapes as the ModelParams they differentiate.
struct Gradients {
    std::vector<Matrix> dense_weights;
    std::optional<BandWeights> coop;
};

/// X^(k) (pre) and Y^(k) (post) for k = 0..s+1; pre[0] = post[0] = input.
struct ActivationCache {
    std::vector<Matrix> pre;
    std::vector<Matrix> post;
};

/// Weight initialization. All weights are Normal(0, 0.1) draws seeded from
/// cfg.seed, except that FF variants adopt the supplied pre-trained matrices
/// for the leading encoder slots; the bottleneck->latent weights (band or
/// dense) and the decoder weights are always fresh random draws.
ModelParams init_params(const NetworkConfig& cfg, std::span<const Matrix> ff_weights = {});

ActivationCache forward(const ModelParams& params, const Matrix& x);
Gradients backward(const ModelParams& params, const ActivationCache& cache, const Matrix& x);
/// Latent-layer output Y^(s): the m x r low-rank embedding, entries in (0,1).
Matrix extract_embedding(const ModelParams& params, const Matrix& x);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Self-describing binary container; load(save(p)) is bitwise idempotent.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace meud
