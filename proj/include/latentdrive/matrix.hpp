#pragma once

#include <cassert>
#include <span>
#include <vector>

namespace ld {

/// Dense row-major float matrix. Products accumulate in double.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(int r, int c, float fill = 0.0f) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    float& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    float operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    std::span<float> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const float> row(int r) const {
        return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }

    bool operator==(const Matrix&) const = default;
};

/// a (n×k) · b (k×m).
Matrix matmul(const Matrix& a, const Matrix& b);
/// a (n×k) · bᵀ where b is (m×k).
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

} // namespace ld
