#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace meud {

/// Dense row-major matrix of doubles. Samples are rows throughout the library.
/// Values are plain storage; the free functions below never mutate their inputs.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return values_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    std::span<double> row(std::size_t i) { return {values_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {values_.data() + i * cols_, cols_}; }

    std::string shape_str() const;  // e.g. "7x5"

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

enum class Activation { Identity, Relu, Sigmoid, ReluGrad, SigmoidGrad };

double relu(double x);
/// Logistic function, clamped to the open interval (0,1) at double precision.
double sigmoid(double x);

/// Standard product; throws DimensionError naming both shapes on mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

/// Elementwise map. ReluGrad/SigmoidGrad evaluate the derivative at the
/// pre-activation value.
Matrix activate(const Matrix& m, Activation kind);

Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double factor);

/// Normal(mean, stddev) entries via Box-Muller over mt19937_64. The same
/// (rows, cols, mean, stddev, seed) always reproduces the matrix bit for bit.
Matrix randn_matrix(std::size_t rows, std::size_t cols, double mean, double stddev,
                    std::uint64_t seed);

bool all_finite(const Matrix& m);

/// Worker threads for large products. Rows are partitioned across threads and
/// each row is summed in the same order as the serial kernel, so the result is
/// bitwise independent of the thread count.
void set_matmul_threads(unsigned n);
unsigned matmul_threads();

/// Stable derivation of per-purpose seeds from one experiment seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace meud
