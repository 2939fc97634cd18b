#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <vector>

namespace pifem {

using Vec = Eigen::VectorXd;

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Compressed sparse row matrix.
/// Invariants after finalization: column indices strictly increasing within
/// each row, row_ptr monotone with row_ptr.back() == values.size(), and no
/// explicitly stored zeros.
struct SparseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<int> row_ptr;  // size rows + 1
    std::vector<int> col_idx;
    std::vector<double> values;

    struct Triplet {
        int row, col;
        double value;
    };

    /// Sums duplicate entries, sorts columns within rows, drops exact zeros.
    static SparseMatrix from_triplets(int rows, int cols, std::vector<Triplet> triplets);

    int nnz() const { return static_cast<int>(values.size()); }

    Vec apply(const Vec& u) const;          // A u
    Vec apply_adjoint(const Vec& v) const;  // A^T v

    Eigen::MatrixXd dense() const;
};

inline Vec apply_operator(const SparseMatrix& a, const Vec& u) { return a.apply(u); }
inline Vec apply_adjoint(const SparseMatrix& a, const Vec& v) { return a.apply_adjoint(v); }

}  // namespace pifem
