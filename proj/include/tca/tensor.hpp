#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tca {

using Vector = std::vector<float>;

// Dense row-major 32-bit matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    Vector row_vector(std::size_t r) const;

    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

    Matrix transposed() const;

    // Keeps the listed rows, in the given order.
    Matrix select_rows(std::span<const std::size_t> ids) const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

// Plain product a * b. Each output element sums left to right in double.
Matrix matmul(const Matrix& a, const Matrix& b);

// x * w^T (+ bias). Weights are stored out x in, the layout used by the
// archive for every projection.
Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias = {});
Vector linear(std::span<const float> x, const Matrix& w, std::span<const float> bias = {});

// softmax(v * scale) with max subtraction.
Vector softmax(std::span<const float> v, double scale = 1.0);

double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> v);

// Throws DegenerateVectorError on a zero-norm input.
double cosine(std::span<const float> a, std::span<const float> b);

// Same as cosine but yields 0 when either side has zero norm. Used where a
// degenerate token must not abort a whole sample.
double cosine_or_zero(std::span<const float> a, std::span<const float> b);

Vector layernorm(std::span<const float> v, std::span<const float> gain,
                 std::span<const float> bias, double eps = 1e-5);
Matrix layernorm_rows(const Matrix& x, std::span<const float> gain,
                      std::span<const float> bias, double eps = 1e-5);

float gelu(float x);
Vector gelu(std::span<const float> v);
void gelu_inplace(Matrix& m);

bool all_finite(std::span<const float> v);

std::size_t argmax(std::span<const float> v);

}  // namespace tca
