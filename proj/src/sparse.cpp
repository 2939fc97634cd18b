#include "pifem/sparse.hpp"

#include <algorithm>
#include <string>

namespace pifem {

SparseMatrix SparseMatrix::from_triplets(int rows, int cols, std::vector<Triplet> triplets) {
    for (const auto& t : triplets)
        if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
            throw ShapeError("triplet (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                             ") outside " + std::to_string(rows) + "x" + std::to_string(cols));

    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });

    SparseMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.row_ptr.assign(rows + 1, 0);
    m.col_idx.reserve(triplets.size());
    m.values.reserve(triplets.size());

    size_t i = 0;
    for (int r = 0; r < rows; ++r) {
        while (i < triplets.size() && triplets[i].row == r) {
            const int c = triplets[i].col;
            double sum = 0.0;
            while (i < triplets.size() && triplets[i].row == r && triplets[i].col == c)
                sum += triplets[i++].value;
            if (sum != 0.0) {
                m.col_idx.push_back(c);
                m.values.push_back(sum);
            }
        }
        m.row_ptr[r + 1] = static_cast<int>(m.values.size());
    }
    return m;
}

Vec SparseMatrix::apply(const Vec& u) const {
    if (u.size() != cols)
        throw ShapeError("apply: vector length " + std::to_string(u.size()) + " != cols " +
                         std::to_string(cols));
    Vec out = Vec::Zero(rows);
    for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) acc += values[k] * u[col_idx[k]];
        out[r] = acc;
    }
    return out;
}

Vec SparseMatrix::apply_adjoint(const Vec& v) const {
    if (v.size() != rows)
        throw ShapeError("apply_adjoint: vector length " + std::to_string(v.size()) + " != rows " +
                         std::to_string(rows));
    Vec out = Vec::Zero(cols);
    for (int r = 0; r < rows; ++r) {
        const double vr = v[r];
        if (vr == 0.0) continue;
        for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) out[col_idx[k]] += values[k] * vr;
    }
    return out;
}

Eigen::MatrixXd SparseMatrix::dense() const {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) d(r, col_idx[k]) = values[k];
    return d;
}

}  // namespace pifem
