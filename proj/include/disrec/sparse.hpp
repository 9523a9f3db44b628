#pragma once

#include <algorithm>
#include <tuple>
#include <vector>

#include "disrec/common.hpp"
#include "disrec/tensor.hpp"

namespace disrec {

// Compressed sparse row matrix. Column indices are strictly increasing
// within each row; duplicates are rejected at construction.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_offsets;  // length rows + 1
  std::vector<std::size_t> col_indices;
  std::vector<double> values;

  SparseMatrix() : row_offsets(1, 0) {}

  SparseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), row_offsets(r + 1, 0) {}

  std::size_t nnz() const { return values.size(); }

  using Triplet = std::tuple<std::size_t, std::size_t, double>;

  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<Triplet> triplets) {
    std::sort(triplets.begin(), triplets.end(),
              [](const Triplet& a, const Triplet& b) {
                if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
                return std::get<1>(a) < std::get<1>(b);
              });
    SparseMatrix m(rows, cols);
    m.col_indices.reserve(triplets.size());
    m.values.reserve(triplets.size());
    for (std::size_t i = 0; i < triplets.size(); ++i) {
      const auto& [r, c, v] = triplets[i];
      require(r < rows && c < cols, "SparseMatrix: triplet index out of range");
      if (i > 0 && r == std::get<0>(triplets[i - 1]) && c == std::get<1>(triplets[i - 1])) {
        throw ContractViolation("SparseMatrix: duplicate entry");
      }
      m.row_offsets[r + 1] += 1;
      m.col_indices.push_back(c);
      m.values.push_back(v);
    }
    for (std::size_t r = 0; r < rows; ++r) m.row_offsets[r + 1] += m.row_offsets[r];
    m.validate();
    return m;
  }

  void validate() const {
    require(row_offsets.size() == rows + 1, "SparseMatrix: bad row offset length");
    require(row_offsets.front() == 0, "SparseMatrix: offsets must start at 0");
    require(row_offsets.back() == values.size(), "SparseMatrix: nnz mismatch");
    require(col_indices.size() == values.size(), "SparseMatrix: index/value mismatch");
    for (std::size_t r = 0; r < rows; ++r) {
      require(row_offsets[r] <= row_offsets[r + 1], "SparseMatrix: offsets decrease");
      for (std::size_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
        require(col_indices[k] < cols, "SparseMatrix: column index out of range");
        if (k > row_offsets[r]) {
          require(col_indices[k - 1] < col_indices[k],
                  "SparseMatrix: columns not strictly increasing");
        }
      }
    }
  }

  SparseMatrix transposed() const {
    std::vector<Triplet> t;
    t.reserve(nnz());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
        t.emplace_back(col_indices[k], r, values[k]);
      }
    }
    return from_triplets(cols, rows, std::move(t));
  }

  // Plain (non-differentiable) sparse x dense product.
  Tensor multiply(const Tensor& dense) const {
    require(dense.rank() == 2, "spmm: dense operand must be a matrix");
    require(dense.rows() == cols, "spmm: dimension mismatch");
    const std::size_t c = dense.cols();
    Tensor out = Tensor::zeros({rows, c});
    for (std::size_t r = 0; r < rows; ++r) {
      double* out_row = out.data() + r * c;
      for (std::size_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
        const double v = values[k];
        const double* in_row = dense.data() + col_indices[k] * c;
        for (std::size_t j = 0; j < c; ++j) out_row[j] += v * in_row[j];
      }
    }
    return out;
  }

  Tensor to_dense() const {
    Tensor d = Tensor::zeros({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
        d.at(r, col_indices[k]) = values[k];
      }
    }
    return d;
  }
};

}  // namespace disrec
