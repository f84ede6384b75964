#ifndef MIPL_MATRIX_HPP
#define MIPL_MATRIX_HPP

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "mipl/errors.hpp"

namespace mipl {

// Dense row-major matrix of 64-bit doubles. Vectors are 1xN or Nx1; scalars
// that participate in differentiation are 1x1.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;

    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c) {
        if (r < 1 || c < 1)
            throw dim_error("matrix dimensions must be positive, got " +
                            std::to_string(r) + "x" + std::to_string(c));
        data.assign(static_cast<std::size_t>(r) * c, fill);
    }

    static Matrix from(int r, int c, std::initializer_list<double> vals) {
        Matrix m(r, c);
        if (vals.size() != m.data.size())
            throw dim_error("matrix literal size does not match shape");
        std::size_t i = 0;
        for (double v : vals) m.data[i++] = v;
        return m;
    }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) {
        for (double& x : data) x = v;
    }
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b))
        throw dim_error(std::string(op) + ": shape mismatch " + a.shape_str() +
                        " vs " + b.shape_str());
}

} // namespace mipl

#endif
