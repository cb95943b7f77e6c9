#include "tca/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tca/errors.hpp"

namespace tca {

namespace {

std::string dims(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix " + dims(rows_, cols_) + " given " +
                         std::to_string(data_.size()) + " values");
    }
}

Vector Matrix::row_vector(std::size_t r) const {
    auto s = row(r);
    return Vector(s.begin(), s.end());
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            t(c, r) = (*this)(r, c);
        }
    }
    return t;
}

Matrix Matrix::select_rows(std::span<const std::size_t> ids) const {
    Matrix out(ids.size(), cols_);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= rows_) {
            throw ShapeError("row " + std::to_string(ids[i]) + " out of range for " +
                             dims(rows_, cols_));
        }
        std::copy_n(row(ids[i]).begin(), cols_, out.row(i).begin());
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul " + dims(a.rows(), a.cols()) + " * " +
                         dims(b.rows(), b.cols()));
    }
    // b^T has the same layout as a linear weight, so reuse that path.
    return linear(a, b.transposed());
}

Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias) {
    if (x.cols() != w.cols()) {
        throw ShapeError("linear input " + dims(x.rows(), x.cols()) + " vs weight " +
                         dims(w.rows(), w.cols()));
    }
    if (!bias.empty() && bias.size() != w.rows()) {
        throw ShapeError("linear bias has " + std::to_string(bias.size()) +
                         " values, expected " + std::to_string(w.rows()));
    }
    const std::size_t m = x.rows();
    const std::size_t n = w.rows();
    const std::size_t k = x.cols();
    Matrix out(m, n);
    const float* xd = x.data().data();
    const float* wd = w.data().data();
    float* od = out.data().data();
    // Rows are independent; each element keeps a fixed summation order.
#pragma omp parallel for schedule(static) if (m * n * k > (1u << 18))
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const float* xr = xd + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const float* wr = wd + j * k;
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) {
                acc += static_cast<double>(xr[t]) * static_cast<double>(wr[t]);
            }
            if (!bias.empty()) acc += bias[j];
            od[i * n + j] = static_cast<float>(acc);
        }
    }
    return out;
}

Vector linear(std::span<const float> x, const Matrix& w, std::span<const float> bias) {
    Matrix in(1, x.size(), std::vector<float>(x.begin(), x.end()));
    return linear(in, w, bias).data();
}

Vector softmax(std::span<const float> v, double scale) {
    Vector out(v.size());
    if (v.empty()) return out;
    double mx = -std::numeric_limits<double>::infinity();
    for (float x : v) mx = std::max(mx, scale * x);
    std::vector<double> e(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        e[i] = std::exp(scale * v[i] - mx);
        sum += e[i];
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<float>(e[i] / sum);
    }
    return out;
}

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot of lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<double>(a[i]) * b[i];
    }
    return acc;
}

double norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

double cosine(std::span<const float> a, std::span<const float> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw DegenerateVectorError("cosine of a zero-norm vector");
    }
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double cosine_or_zero(std::span<const float> a, std::span<const float> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Vector layernorm(std::span<const float> v, std::span<const float> gain,
                 std::span<const float> bias, double eps) {
    if (gain.size() != v.size() || bias.size() != v.size()) {
        throw ShapeError("layernorm width " + std::to_string(v.size()) + " with gain " +
                         std::to_string(gain.size()) + " and bias " +
                         std::to_string(bias.size()));
    }
    if (!(eps > 0.0)) throw DomainError("layernorm eps must be positive");
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (float x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (float x : v) var += (x - mean) * (x - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<float>((v[i] - mean) * inv * gain[i] + bias[i]);
    }
    return out;
}

Matrix layernorm_rows(const Matrix& x, std::span<const float> gain,
                      std::span<const float> bias, double eps) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        Vector y = layernorm(x.row(r), gain, bias, eps);
        std::copy(y.begin(), y.end(), out.row(r).begin());
    }
    return out;
}

float gelu(float x) {
    const double xd = x;
    return static_cast<float>(0.5 * xd * (1.0 + std::erf(xd / std::sqrt(2.0))));
}

Vector gelu(std::span<const float> v) {
    Vector out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [](float x) { return gelu(x); });
    return out;
}

void gelu_inplace(Matrix& m) {
    for (float& x : m.data()) x = gelu(x);
}

bool all_finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

std::size_t argmax(std::span<const float> v) {
    if (v.empty()) throw ShapeError("argmax of an empty vector");
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace tca
