#include "meud/matrix.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "meud/errors.hpp"

namespace meud {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
// Serial kernel is used below this many multiply-adds.
constexpr std::size_t kThreadedWorkThreshold = 1u << 21;

std::atomic<unsigned> g_matmul_threads{0};  // 0 = not resolved yet

unsigned default_threads() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    return std::min(hw, 8u);
}

// C[i,:] = sum_k A[i,k] * B[k,:], row-sequential so the summation order per
// output element never depends on how rows are partitioned.
void matmul_rows(const double* a, const double* b, double* c, std::size_t m, std::size_t inner,
                 std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        std::fill(ci, ci + n, 0.0);
        const double* ai = a + i * inner;
        for (std::size_t k = 0; k < inner; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b + k * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

}  // namespace

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix out(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("from_rows: ragged row lengths");
        std::size_t j = 0;
        for (double v : row) out(i, j++) = v;
        ++i;
    }
    return out;
}

Matrix Matrix::identity(std::size_t n) {
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
    return out;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

double sigmoid(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    // exp saturates for |x| > ~37; keep the contract that outputs stay
    // strictly inside (0,1).
    if (s >= 1.0) return 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    if (s <= 0.0) return std::numeric_limits<double>::min();
    return s;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: dimension mismatch " + a.shape_str() + " x " +
                             b.shape_str());
    }
    Matrix c(a.rows(), b.cols());
    const std::size_t m = a.rows(), inner = a.cols(), n = b.cols();
    if (m == 0 || n == 0) return c;

    const unsigned threads = matmul_threads();
    const std::size_t work = m * inner * n;
    if (threads <= 1 || work < kThreadedWorkThreshold || m < 2 * threads) {
        matmul_rows(a.data(), b.data(), c.data(), m, inner, n);
        return c;
    }

    std::vector<std::thread> pool;
    const std::size_t chunk = (m + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(m, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            matmul_rows(a.data() + lo * inner, b.data(), c.data() + lo * n, hi - lo, inner, n);
        });
    }
    for (auto& t : pool) t.join();
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    return out;
}

Matrix activate(const Matrix& m, Activation kind) {
    Matrix out(m.rows(), m.cols());
    const auto in = m.values();
    auto dst = out.values();
    switch (kind) {
        case Activation::Identity:
            std::copy(in.begin(), in.end(), dst.begin());
            break;
        case Activation::Relu:
            for (std::size_t i = 0; i < in.size(); ++i) dst[i] = relu(in[i]);
            break;
        case Activation::Sigmoid:
            for (std::size_t i = 0; i < in.size(); ++i) dst[i] = sigmoid(in[i]);
            break;
        case Activation::ReluGrad:
            for (std::size_t i = 0; i < in.size(); ++i) dst[i] = in[i] > 0.0 ? 1.0 : 0.0;
            break;
        case Activation::SigmoidGrad:
            for (std::size_t i = 0; i < in.size(); ++i) {
                const double s = sigmoid(in[i]);
                dst[i] = s * (1.0 - s);
            }
            break;
    }
    return out;
}

namespace {

Matrix zip(const Matrix& a, const Matrix& b, const char* op, double (*f)(double, double)) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
    }
    Matrix out(a.rows(), a.cols());
    const auto av = a.values();
    const auto bv = b.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) dst[i] = f(av[i], bv[i]);
    return out;
}

}  // namespace

Matrix add(const Matrix& a, const Matrix& b) {
    return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    return zip(a, b, "subtract", [](double x, double y) { return x - y; });
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    return zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}

Matrix scale(const Matrix& m, double factor) {
    Matrix out(m.rows(), m.cols());
    const auto in = m.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < in.size(); ++i) dst[i] = in[i] * factor;
    return out;
}

Matrix randn_matrix(std::size_t rows, std::size_t cols, double mean, double stddev,
                    std::uint64_t seed) {
    if (stddev < 0.0) throw ConfigError("randn_matrix: negative stddev");
    Matrix out(rows, cols);
    auto dst = out.values();
    std::mt19937_64 rng(seed);
    // 53-bit uniform in (0,1]; log never sees zero.
    auto unit = [&rng] { return ((rng() >> 11) + 1) * (1.0 / 9007199254740992.0); };
    std::size_t i = 0;
    while (i < dst.size()) {
        const double u1 = unit();
        const double u2 = unit();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        dst[i++] = mean + stddev * (radius * std::cos(kTwoPi * u2));
        if (i < dst.size()) dst[i++] = mean + stddev * (radius * std::sin(kTwoPi * u2));
    }
    return out;
}

bool all_finite(const Matrix& m) {
    for (double v : m.values())
        if (!std::isfinite(v)) return false;
    return true;
}

void set_matmul_threads(unsigned n) { g_matmul_threads.store(n == 0 ? 1 : n); }

unsigned matmul_threads() {
    unsigned n = g_matmul_threads.load();
    if (n == 0) {
        n = default_threads();
        g_matmul_threads.store(n);
    }
    return n;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace meud
