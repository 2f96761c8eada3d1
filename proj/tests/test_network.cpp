#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "meud/errors.hpp"
#include "meud/network.hpp"
#include "meud/training.hpp"

using namespace meud;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    Matrix m(rows, cols);
    std::mt19937_64 rng(seed);
    for (auto& v : m.values()) v = lo + (hi - lo) * ((rng() >> 11) * (1.0 / 9007199254740992.0));
    return m;
}

BandWeights random_band(std::size_t r, std::uint64_t seed, bool ring = false) {
    const std::size_t edge = ring ? r : r - 1;
    const Matrix draws = randn_matrix(1, r + 2 * edge, 0.0, 0.5, seed);
    BandWeights band;
    band.ring = ring;
    band.diag.assign(draws.data(), draws.data() + r);
    band.sub.assign(draws.data() + r, draws.data() + r + edge);
    band.sup.assign(draws.data() + r + edge, draws.data() + r + 2 * edge);
    return band;
}

// Every trainable scalar of the model, in the optimizer's traversal order.
std::vector<double*> parameter_scalars(ModelParams& params) {
    std::vector<double*> out;
    for (std::size_t k = 0; k < params.weight_count(); ++k) {
        if (params.is_coop_position(k)) {
            for (auto& v : params.coop->diag) out.push_back(&v);
            for (auto& v : params.coop->sub) out.push_back(&v);
            for (auto& v : params.coop->sup) out.push_back(&v);
        } else {
            for (auto& v : params.dense_at(k).values()) out.push_back(&v);
        }
    }
    return out;
}

std::vector<double> gradient_scalars(const ModelParams& params, const Gradients& grads) {
    std::vector<double> out;
    for (std::size_t k = 0; k < params.weight_count(); ++k) {
        if (params.is_coop_position(k)) {
            out.insert(out.end(), grads.coop->diag.begin(), grads.coop->diag.end());
            out.insert(out.end(), grads.coop->sub.begin(), grads.coop->sub.end());
            out.insert(out.end(), grads.coop->sup.begin(), grads.coop->sup.end());
        } else {
            const auto cp = params.config.coop_position();
            const auto& g = grads.dense_weights[cp && k > *cp ? k - 1 : k];
            out.insert(out.end(), g.values().begin(), g.values().end());
        }
    }
    return out;
}

double cost_of(const ModelParams& params, const Matrix& x) {
    return mse_cost(x, forward(params, x).post.back());
}

// Central finite differences vs analytic gradient over every parameter.
void check_gradients(ModelParams& params, const Matrix& x, double h = 1e-5) {
    const ActivationCache cache = forward(params, x);
    const Gradients grads = backward(params, cache, x);
    const std::vector<double> analytic = gradient_scalars(params, grads);
    const std::vector<double*> scalars = parameter_scalars(params);
    REQUIRE(analytic.size() == scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        const double saved = *scalars[i];
        *scalars[i] = saved + h;
        const double up = cost_of(params, x);
        *scalars[i] = saved - h;
        const double down = cost_of(params, x);
        *scalars[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        const double diff = std::abs(fd - analytic[i]);
        // near-zero components are compared absolutely: central differences
        // cannot resolve them below the roundoff of the cost evaluation
        if (diff <= 1e-8) continue;
        CHECK(diff / std::max(std::abs(fd), std::abs(analytic[i])) <= 1e-5);
    }
}

}  // namespace

TEST_CASE("NetworkConfig: construction and invariants") {
    const NetworkConfig meud = NetworkConfig::make(Variant::MEUD, 784, 50, 4, 1);
    REQUIRE(meud.widths.size() == 6);
    CHECK(meud.widths.front() == 784);
    CHECK(meud.widths.back() == 784);
    CHECK(meud.widths[3] == 50);
    CHECK(meud.widths[4] == 50);
    for (std::size_t i = 0; i + 1 < 3; ++i) CHECK(meud.widths[i] > meud.widths[i + 1]);
    CHECK(meud.latent_index() == 4);
    CHECK_FALSE(meud.coop_position().has_value());

    const NetworkConfig coop = NetworkConfig::make(Variant::MEUD_FF_Coop, 32, 6, 3, 1);
    CHECK(coop.coop_position() == coop.widths.size() - 3);

    const NetworkConfig ae = NetworkConfig::make(Variant::BaselineAE, 784, 50, 4, 1);
    REQUIRE(ae.widths.size() == 7);
    CHECK(ae.widths[3] == 50);
    CHECK(ae.latent_index() == 3);
    for (std::size_t i = 0; i < ae.widths.size(); ++i) {
        CHECK(ae.widths[i] == ae.widths[ae.widths.size() - 1 - i]);
    }

    NetworkConfig bad = meud;
    bad.widths[1] = 900;  // encoder must narrow
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = meud;
    bad.widths.back() = 10;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = meud;
    bad.widths[4] = 49;  // latent must match bottleneck
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("variant names round-trip") {
    for (Variant v : {Variant::BaselineAE, Variant::MEUD, Variant::MEUD_FF, Variant::MEUD_Coop,
                      Variant::MEUD_FF_Coop}) {
        CHECK(variant_from_name(variant_name(v)) == v);
    }
    CHECK(variant_from_name("MEUD_FF_COOP") == Variant::MEUD_FF_Coop);
    CHECK_FALSE(variant_from_name("nope").has_value());
}

TEST_CASE("band_apply: identity band passes rows through unchanged") {
    BandWeights band;
    band.diag.assign(5, 1.0);
    band.sub.assign(4, 0.0);
    band.sup.assign(4, 0.0);
    const Matrix y = random_matrix(3, 5, 4);
    CHECK(band_apply(band, y) == y);
}

TEST_CASE("band_apply: three-term hand sum") {
    BandWeights band;
    band.diag = {1.0, 1.0, 1.0};
    band.sub = {1.0, 1.0};
    band.sup = {1.0, 1.0};
    const Matrix y = Matrix::from_rows({{1, 2, 3}});
    const Matrix out = band_apply(band, y);
    CHECK(out(0, 0) == 3.0);
    CHECK(out(0, 1) == 6.0);
    CHECK(out(0, 2) == 5.0);
}

TEST_CASE("band operations agree with the dense expansion") {
    for (bool ring : {false, true}) {
        const BandWeights band = random_band(7, ring ? 21 : 20, ring);
        const Matrix dense = band.dense();
        // off-band entries of the expansion are exactly zero
        for (std::size_t a = 0; a < 7; ++a) {
            for (std::size_t b = 0; b < 7; ++b) {
                const bool on_band = (a == b) || (a + 1 == b) || (b + 1 == a) ||
                                     (ring && ((a == 6 && b == 0) || (a == 0 && b == 6)));
                if (!on_band) CHECK(dense(a, b) == 0.0);
            }
        }

        const Matrix y = random_matrix(6, 7, 33);
        const Matrix via_band = band_apply(band, y);
        const Matrix via_dense = matmul(y, dense);
        for (std::size_t i = 0; i < via_band.size(); ++i) {
            CHECK(std::abs(via_band.values()[i] - via_dense.values()[i]) <= 1e-12);
        }

        const Matrix g = random_matrix(6, 7, 34);
        const Matrix bt = band_apply_transpose(band, g);
        const Matrix bt_dense = matmul(g, transpose(dense));
        for (std::size_t i = 0; i < bt.size(); ++i) {
            CHECK(std::abs(bt.values()[i] - bt_dense.values()[i]) <= 1e-12);
        }

        const BandWeights grad = band_gradient(band, y, g);
        const Matrix dense_grad = matmul(transpose(y), g);
        for (std::size_t j = 0; j < 7; ++j) {
            CHECK(std::abs(grad.diag[j] - dense_grad(j, j)) <= 1e-12);
        }
        for (std::size_t a = 0; a + 1 < 7; ++a) {
            CHECK(std::abs(grad.sub[a] - dense_grad(a, a + 1)) <= 1e-12);
            CHECK(std::abs(grad.sup[a] - dense_grad(a + 1, a)) <= 1e-12);
        }
        if (ring) {
            CHECK(std::abs(grad.sub[6] - dense_grad(6, 0)) <= 1e-12);
            CHECK(std::abs(grad.sup[6] - dense_grad(0, 6)) <= 1e-12);
        }
    }
}

TEST_CASE("init_params: seeded draws and FF adoption rules") {
    const NetworkConfig cfg = NetworkConfig::make(Variant::MEUD, 16, 4, 3, 9);
    const ModelParams a = init_params(cfg);
    const ModelParams b = init_params(cfg);
    REQUIRE(a.dense_weights.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.dense_weights[k] == b.dense_weights[k]);

    // FF variants adopt the supplied encoder matrices verbatim
    NetworkConfig ff_cfg = NetworkConfig::make(Variant::MEUD_FF_Coop, 16, 4, 3, 9);
    REQUIRE(ff_cfg.widths[1] == 8);
    std::vector<Matrix> ff = {random_matrix(16, 8, 1)};
    const ModelParams ffp = init_params(ff_cfg, ff);
    CHECK(ffp.dense_weights[0] == ff[0]);
    REQUIRE(ffp.coop.has_value());
    CHECK(ffp.coop->size() == 4);
    double band_mag = 0.0;
    for (double v : ffp.coop->diag) band_mag += std::abs(v);
    CHECK(band_mag > 0.0);  // freshly drawn, not copied from anywhere

    std::vector<Matrix> wrong = {random_matrix(16, 7, 1)};
    CHECK_THROWS_AS(init_params(ff_cfg, wrong), DimensionError);
    CHECK_THROWS_AS(init_params(ff_cfg), ConfigError);
    CHECK_THROWS_AS(init_params(cfg, ff), ConfigError);

    // too many FF matrices would spill into the bottleneck->latent slot
    std::vector<Matrix> too_many = {random_matrix(16, 8, 1), random_matrix(8, 4, 2),
                                    random_matrix(4, 4, 3)};
    CHECK_THROWS_AS(init_params(ff_cfg, too_many), ConfigError);
}

TEST_CASE("forward: hand-computed 2-2-2-2 pass") {
    ModelParams params;
    params.config.widths = {2, 2, 2, 2};
    params.config.variant = Variant::MEUD;  // latent at index 2
    params.dense_weights = {Matrix::from_rows({{0.2, 0.3}, {-0.4, 0.1}}),
                            Matrix::from_rows({{1.0, -2.0}, {0.5, 0.8}}),
                            Matrix::from_rows({{0.6, -0.5}, {1.2, 0.4}})};
    const Matrix x = Matrix::from_rows({{0.5, -1.0}});
    const ActivationCache cache = forward(params, x);

    // scalar arithmetic, no Matrix code involved
    const double x1_0 = 0.5 * 0.2 + (-1.0) * (-0.4);
    const double x1_1 = 0.5 * 0.3 + (-1.0) * 0.1;
    const double y1_0 = x1_0 > 0 ? x1_0 : 0.0;
    const double y1_1 = x1_1 > 0 ? x1_1 : 0.0;
    const double x2_0 = y1_0 * 1.0 + y1_1 * 0.5;
    const double x2_1 = y1_0 * -2.0 + y1_1 * 0.8;
    const double y2_0 = 1.0 / (1.0 + std::exp(-x2_0));
    const double y2_1 = 1.0 / (1.0 + std::exp(-x2_1));
    const double x3_0 = y2_0 * 0.6 + y2_1 * 1.2;
    const double x3_1 = y2_0 * -0.5 + y2_1 * 0.4;
    const double y3_0 = x3_0 > 0 ? x3_0 : 0.0;
    const double y3_1 = x3_1 > 0 ? x3_1 : 0.0;

    CHECK(std::abs(cache.post[1](0, 0) - y1_0) <= 1e-12);
    CHECK(std::abs(cache.post[1](0, 1) - y1_1) <= 1e-12);
    CHECK(std::abs(cache.post[2](0, 0) - y2_0) <= 1e-12);
    CHECK(std::abs(cache.post[2](0, 1) - y2_1) <= 1e-12);
    CHECK(std::abs(cache.post[3](0, 0) - y3_0) <= 1e-12);
    CHECK(std::abs(cache.post[3](0, 1) - y3_1) <= 1e-12);
}

TEST_CASE("forward: zero input, zero weights") {
    NetworkConfig cfg = NetworkConfig::make(Variant::MEUD, 4, 2, 3, 0);
    ModelParams params = init_params(cfg);
    for (auto& w : params.dense_weights) w = Matrix(w.rows(), w.cols(), 0.0);
    const Matrix x(2, 4, 0.0);
    const ActivationCache cache = forward(params, x);
    for (double v : cache.post[cfg.latent_index()].values()) CHECK(v == 0.5);
    for (double v : cache.post.back().values()) CHECK(v == 0.0);
    // latent is 0.5 for zero input regardless of the decoder weights
    ModelParams rnd = init_params(cfg);
    const ActivationCache rnd_cache = forward(rnd, x);
    for (double v : rnd_cache.post[cfg.latent_index()].values()) CHECK(v == 0.5);
}

TEST_CASE("forward: cache shapes, purity and latent bounds") {
    const NetworkConfig cfg = NetworkConfig::make(Variant::MEUD_Coop, 12, 3, 3, 2);
    const ModelParams params = init_params(cfg);
    const Matrix x = random_matrix(5, 12, 6, 0.0, 1.0);
    const ActivationCache a = forward(params, x);
    const ActivationCache b = forward(params, x);
    REQUIRE(a.pre.size() == cfg.widths.size());
    for (std::size_t k = 0; k < cfg.widths.size(); ++k) {
        CHECK(a.post[k].cols() == cfg.widths[k]);
        CHECK(a.post[k] == b.post[k]);
    }
    const Matrix emb = extract_embedding(params, x);
    CHECK(emb == a.post[cfg.latent_index()]);
    CHECK(emb.cols() == 3);
    for (double v : emb.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("backward: zero residual means zero gradients") {
    ModelParams params;
    params.config.widths = {1, 1, 1};
    params.config.variant = Variant::MEUD;  // latent at index 1
    const double a = 0.7;
    const double sig = 1.0 / (1.0 + std::exp(-a));
    params.dense_weights = {Matrix::from_rows({{a}}), Matrix::from_rows({{1.0 / sig}})};
    const Matrix x = Matrix::from_rows({{1.0}});
    const ActivationCache cache = forward(params, x);
    REQUIRE(std::abs(cache.post.back()(0, 0) - 1.0) <= 1e-15);
    const Gradients grads = backward(params, cache, x);
    for (const auto& g : grads.dense_weights) {
        for (double v : g.values()) CHECK(v == 0.0);
    }
}

TEST_CASE("backward: finite differences across all five variants") {
    const Matrix x = random_matrix(5, 10, 77, 0.0, 1.0);
    for (Variant v : {Variant::MEUD, Variant::MEUD_FF, Variant::MEUD_Coop, Variant::MEUD_FF_Coop,
                      Variant::BaselineAE}) {
        NetworkConfig cfg = NetworkConfig::make(v, 10, 3, 3, 5);
        ModelParams params;
        if (variant_uses_ff(v)) {
            const std::vector<Matrix> ff = {randn_matrix(10, cfg.widths[1], 0.0, 0.1, 8)};
            params = init_params(cfg, ff);
        } else {
            params = init_params(cfg);
        }
        INFO("variant ", std::string(variant_name(v)));
        check_gradients(params, x);
    }
}

TEST_CASE("backward: ring band gradient is also exact") {
    NetworkConfig cfg = NetworkConfig::make(Variant::MEUD_Coop, 10, 3, 3, 5);
    cfg.coop_ring = true;
    ModelParams params = init_params(cfg);
    REQUIRE(params.coop->ring);
    REQUIRE(params.coop->sub.size() == 3);
    const Matrix x = random_matrix(4, 10, 78, 0.0, 1.0);
    check_gradients(params, x);
}

TEST_CASE("backward: off-band positions receive no gradient") {
    const NetworkConfig cfg = NetworkConfig::make(Variant::MEUD_FF_Coop, 12, 4, 3, 3);
    const std::vector<Matrix> ff = {randn_matrix(12, cfg.widths[1], 0.0, 0.1, 4)};
    const ModelParams params = init_params(cfg, ff);
    const Matrix x = random_matrix(6, 12, 9, 0.0, 1.0);
    const Gradients grads = backward(params, forward(params, x), x);
    REQUIRE(grads.coop.has_value());
    const Matrix dense_grad = grads.coop->dense();
    for (std::size_t a = 0; a < 4; ++a) {
        for (std::size_t b = 0; b < 4; ++b) {
            if (a != b && a + 1 != b && b + 1 != a) CHECK(dense_grad(a, b) == 0.0);
        }
    }
}

TEST_CASE("backward: stale cache is rejected") {
    const NetworkConfig cfg = NetworkConfig::make(Variant::MEUD, 8, 2, 3, 1);
    const ModelParams params = init_params(cfg);
    const Matrix x = random_matrix(3, 8, 2, 0.0, 1.0);
    ActivationCache cache = forward(params, x);
    cache.post.pop_back();
    CHECK_THROWS_AS(backward(params, cache, x), DimensionError);
}

TEST_CASE("checkpoint: save/load is bitwise idempotent") {
    const auto dir = std::filesystem::temp_directory_path() / "meud_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string p1 = (dir / "model.ckpt").string();
    const std::string p2 = (dir / "model2.ckpt").string();

    const NetworkConfig cfg = NetworkConfig::make(Variant::MEUD_FF_Coop, 14, 4, 3, 123);
    const std::vector<Matrix> ff = {randn_matrix(14, cfg.widths[1], 0.0, 0.1, 5)};
    const ModelParams params = init_params(cfg, ff);
    save_checkpoint(params, p1);
    const ModelParams loaded = load_checkpoint(p1);

    CHECK(loaded.config.widths == params.config.widths);
    CHECK(loaded.config.variant == params.config.variant);
    CHECK(loaded.config.seed == params.config.seed);
    REQUIRE(loaded.dense_weights.size() == params.dense_weights.size());
    for (std::size_t k = 0; k < params.dense_weights.size(); ++k) {
        CHECK(loaded.dense_weights[k] == params.dense_weights[k]);
    }
    CHECK(loaded.coop->diag == params.coop->diag);
    CHECK(loaded.coop->sub == params.coop->sub);
    CHECK(loaded.coop->sup == params.coop->sup);

    save_checkpoint(loaded, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("checkpoint: version and magic are enforced") {
    const auto dir = std::filesystem::temp_directory_path() / "meud_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "bad.ckpt").string();

    const NetworkConfig cfg = NetworkConfig::make(Variant::MEUD, 8, 2, 3, 1);
    save_checkpoint(init_params(cfg), path);

    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const char wrong_version = 9;
    f.write(&wrong_version, 1);
    f.close();
    try {
        load_checkpoint(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.kind == ParseError::Kind::BadVersion);
    }

    std::fstream g(path, std::ios::binary | std::ios::in | std::ios::out);
    g.seekp(0);
    g.write("XXXX", 4);
    g.close();
    try {
        load_checkpoint(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.kind == ParseError::Kind::BadMagic);
    }
}
