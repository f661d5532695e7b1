#include "latentdrive/matrix.hpp"

#include "latentdrive/common.hpp"

namespace ld {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw DimensionError("matmul: inner dimensions differ");
    Matrix out(a.rows, b.cols);
    std::vector<double> acc(static_cast<std::size_t>(b.cols));
    for (int i = 0; i < a.rows; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            const float* brow = b.data.data() + static_cast<std::size_t>(k) * b.cols;
            for (int j = 0; j < b.cols; ++j) acc[j] += aik * brow[j];
        }
        for (int j = 0; j < b.cols; ++j) out(i, j) = static_cast<float>(acc[j]);
    }
    return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw DimensionError("matmul_transposed: inner dimensions differ");
    Matrix out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const auto arow = a.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const auto brow = b.row(j);
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += static_cast<double>(arow[k]) * brow[k];
            out(i, j) = static_cast<float>(s);
        }
    }
    return out;
}

} // namespace ld
