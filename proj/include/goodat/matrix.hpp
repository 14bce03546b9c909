#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "goodat/errors.hpp"

namespace goodat {

// Dense row-major matrix of doubles. Deliberately minimal: graphs at this
// scale (n <= ~200) never justify sparse storage.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> m) {
        rows = m.size();
        cols = rows ? m.begin()->size() : 0;
        data.reserve(rows * cols);
        for (const auto& row : m) {
            if (row.size() != cols)
                throw DimensionError("Matrix initializer rows have uneven lengths");
            data.insert(data.end(), row.begin(), row.end());
        }
    }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }

    bool operator==(const Matrix& other) const {
        return rows == other.rows && cols == other.cols && data == other.data;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

}  // namespace goodat
