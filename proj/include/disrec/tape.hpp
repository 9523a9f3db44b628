#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "disrec/common.hpp"
#include "disrec/sparse.hpp"
#include "disrec/tensor.hpp"

namespace disrec {

// Handle to a node on a tape.
struct Var {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

// Reverse-mode differentiation tape. Operations execute eagerly and record
// a backward closure; backward() sweeps the nodes once in reverse order,
// which is a valid topological order because inputs always precede their
// consumers. Gradients accumulate, so reusing a node is safe.
//
// Sparse matrices passed by reference must outlive the tape; the graph
// structures owning them live for the whole training run.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t node_count() const { return nodes_.size(); }

  const Tensor& value(Var v) const { return node(v).t; }

  // Gradient of a node after backward(). Only nodes that require gradients
  // carry a slot.
  Tensor grad_tensor(Var v) const {
    const Node& n = node(v);
    require(n.t.has_grad(), "Tape::grad_tensor: node has no gradient slot");
    Tensor g = Tensor::zeros(n.t.shape());
    for (std::size_t i = 0; i < n.t.size(); ++i) g[i] = n.t.grad_at(i);
    return g;
  }

  // --- leaves ---

  Var input(Tensor t, bool needs_grad = false) {
    return push(std::move(t), needs_grad, nullptr);
  }

  Var constant(Tensor t) { return input(std::move(t), false); }

  // Registers a learnable parameter. After backward() the node gradient is
  // accumulated into the parameter's own grad slot.
  Var param(Parameter& p) {
    Var v = push(p.value, true, nullptr);
    bound_.emplace_back(&p, v.id);
    return v;
  }

  // --- primitives ---

  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.rank() == 2 && B.rank() == 2, "matmul: operands must be matrices");
    require(A.cols() == B.rows(), "matmul: dimension mismatch " + A.shape_string() +
                                      " x " + B.shape_string());
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A.at(i, p);
        if (av == 0.0) continue;
        const double* brow = B.data() + p * n;
        double* crow = C.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
    bool ng = needs_grad(a) || needs_grad(b);
    return push(std::move(C), ng, [a, b, m, k, n](Tape& tp, std::size_t self) {
      const Tensor& G = tp.nodes_[self].t;
      const Tensor& A = tp.value(a);
      const Tensor& B = tp.value(b);
      if (tp.needs_grad(a)) {
        Tensor& Ag = tp.nodes_[a.id].t;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += G.grad_at(i * n + j) * B.at(p, j);
            Ag.grad_at(i * k + p) += s;
          }
      }
      if (tp.needs_grad(b)) {
        Tensor& Bg = tp.nodes_[b.id].t;
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i) s += A.at(i, p) * G.grad_at(i * n + j);
            Bg.grad_at(p * n + j) += s;
          }
      }
    });
  }

  // Sparse x dense with a constant sparse operand.
  Var spmm(const SparseMatrix& s, Var d) {
    const Tensor& D = value(d);
    require(D.rank() == 2, "spmm: dense operand must be a matrix");
    require(s.cols == D.rows(), "spmm: dimension mismatch");
    Tensor out = s.multiply(D);
    bool ng = needs_grad(d);
    const SparseMatrix* sp = &s;
    return push(std::move(out), ng, [sp, d](Tape& tp, std::size_t self) {
      if (!tp.needs_grad(d)) return;
      const Tensor& G = tp.nodes_[self].t;
      Tensor& Dg = tp.nodes_[d.id].t;
      const std::size_t c = tp.value(d).cols();
      // dD[j] += sum_i s[i,j] * dOut[i]
      for (std::size_t r = 0; r < sp->rows; ++r) {
        const double* grow = G.grad() + r * c;
        for (std::size_t k = sp->row_offsets[r]; k < sp->row_offsets[r + 1]; ++k) {
          const double v = sp->values[k];
          double* drow = Dg.grad() + sp->col_indices[k] * c;
          for (std::size_t j = 0; j < c; ++j) drow[j] += v * grow[j];
        }
      }
    });
  }

  // Sparse x dense where the nonzero values themselves are learnable.
  // `pattern` supplies the sparsity structure; `vals` is a vector of nnz values.
  Var spmm_values(Var vals, const SparseMatrix& pattern, Var d) {
    const Tensor& V = value(vals);
    const Tensor& D = value(d);
    require(V.rank() == 1 && V.size() == pattern.nnz(), "spmm_values: value count mismatch");
    require(D.rank() == 2 && pattern.cols == D.rows(), "spmm_values: dimension mismatch");
    const std::size_t c = D.cols();
    Tensor out = Tensor::zeros({pattern.rows, c});
    for (std::size_t r = 0; r < pattern.rows; ++r) {
      double* orow = out.data() + r * c;
      for (std::size_t k = pattern.row_offsets[r]; k < pattern.row_offsets[r + 1]; ++k) {
        const double v = V[k];
        const double* drow = D.data() + pattern.col_indices[k] * c;
        for (std::size_t j = 0; j < c; ++j) orow[j] += v * drow[j];
      }
    }
    bool ng = needs_grad(vals) || needs_grad(d);
    const SparseMatrix* sp = &pattern;
    return push(std::move(out), ng, [sp, vals, d, c](Tape& tp, std::size_t self) {
      const Tensor& G = tp.nodes_[self].t;
      const Tensor& V = tp.value(vals);
      const Tensor& D = tp.value(d);
      for (std::size_t r = 0; r < sp->rows; ++r) {
        const double* grow = G.grad() + r * c;
        for (std::size_t k = sp->row_offsets[r]; k < sp->row_offsets[r + 1]; ++k) {
          const std::size_t col = sp->col_indices[k];
          if (tp.needs_grad(vals)) {
            double s = 0.0;
            const double* drow = D.data() + col * c;
            for (std::size_t j = 0; j < c; ++j) s += grow[j] * drow[j];
            tp.nodes_[vals.id].t.grad_at(k) += s;
          }
          if (tp.needs_grad(d)) {
            double* dgrow = tp.nodes_[d.id].t.grad() + col * c;
            for (std::size_t j = 0; j < c; ++j) dgrow[j] += V[k] * grow[j];
          }
        }
      }
    });
  }

  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B), "add: shape mismatch");
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    bool ng = needs_grad(a) || needs_grad(b);
    return push(std::move(out), ng, [a, b](Tape& tp, std::size_t self) {
      const Tensor& G = tp.nodes_[self].t;
      for (Var v : {a, b}) {
        if (!tp.needs_grad(v)) continue;
        Tensor& vg = tp.nodes_[v.id].t;
        for (std::size_t i = 0; i < vg.size(); ++i) vg.grad_at(i) += G.grad_at(i);
      }
    });
  }

  Var sub(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B), "sub: shape mismatch");
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
    bool ng = needs_grad(a) || needs_grad(b);
    return push(std::move(out), ng, [a, b](Tape& tp, std::size_t self) {
      const Tensor& G = tp.nodes_[self].t;
      if (tp.needs_grad(a)) {
        Tensor& ag = tp.nodes_[a.id].t;
        for (std::size_t i = 0; i < ag.size(); ++i) ag.grad_at(i) += G.grad_at(i);
      }
      if (tp.needs_grad(b)) {
        Tensor& bg = tp.nodes_[b.id].t;
        for (std::size_t i = 0; i < bg.size(); ++i) bg.grad_at(i) -= G.grad_at(i);
      }
    });
  }

  Var mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B), "mul: shape mismatch");
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    bool ng = needs_grad(a) || needs_grad(b);
    return push(std::move(out), ng, [a, b](Tape& tp, std::size_t self) {
      const Tensor& G = tp.nodes_[self].t;
      const Tensor& A = tp.value(a);
      const Tensor& B = tp.value(b);
      if (tp.needs_grad(a)) {
        Tensor& ag = tp.nodes_[a.id].t;
        for (std::size_t i = 0; i < ag.size(); ++i) ag.grad_at(i) += G.grad_at(i) * B[i];
      }
      if (tp.needs_grad(b)) {
        Tensor& bg = tp.nodes_[b.id].t;
        for (std::size_t i = 0; i < bg.size(); ++i) bg.grad_at(i) += G.grad_at(i) * A[i];
      }
    });
  }

  // out = scale * a + shift, elementwise.
  Var affine(Var a, double scale, double shift) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * out[i] + shift;
    return push(std::move(out), needs_grad(a), [a, scale](Tape& tp, std::size_t self) {
      if (!tp.needs_grad(a)) return;
      const Tensor& G = tp.nodes_[self].t;
      Tensor& ag = tp.nodes_[a.id].t;
      for (std::size_t i = 0; i < ag.size(); ++i) ag.grad_at(i) += scale * G.grad_at(i);
    });
  }

  Var scale(Var a, double s) { return affine(a, s, 0.0); }

  // Adds a row vector to every row of a matrix.
  Var add_rowvec(Var a, Var v) {
    const Tensor& A = value(a);
    const Tensor& Vv = value(v);
    require(A.rank() == 2 && Vv.rank() == 1 && Vv.size() == A.cols(),
            "add_rowvec: shape mismatch");
    Tensor out = A;
    const std::size_t r = A.rows(), c = A.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) += Vv[j];
    bool ng = needs_grad(a) || needs_grad(v);
    return push(std::move(out), ng, [a, v, r, c](Tape& tp, std::size_t self) {
      const Tensor& G = tp.nodes_[self].t;
      if (tp.needs_grad(a)) {
        Tensor& ag = tp.nodes_[a.id].t;
        for (std::size_t i = 0; i < r * c; ++i) ag.grad_at(i) += G.grad_at(i);
      }
      if (tp.needs_grad(v)) {
        Tensor& vg = tp.nodes_[v.id].t;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) vg.grad_at(j) += G.grad_at(i * c + j);
      }
    });
  }

  // Scales row i of a matrix by s[i].
  Var scale_rows(Var a, Var s) {
    const Tensor& A = value(a);
    const Tensor& S = value(s);
    require(A.rank() == 2 && S.rank() == 1 && S.size() == A.rows(),
            "scale_rows: shape mismatch");
    const std::size_t r = A.rows(), c = A.cols();
    Tensor out = A;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) *= S[i];
    bool ng = needs_grad(a) || needs_grad(s);
    return push(std::move(out), ng, [a, s, r, c](Tape& tp, std::size_t self) {
      const Tensor& G = tp.nodes_[self].t;
      const Tensor& A = tp.value(a);
      const Tensor& S = tp.value(s);
      if (tp.needs_grad(a)) {
        Tensor& ag = tp.nodes_[a.id].t;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ag.grad_at(i * c + j) += G.grad_at(i * c + j) * S[i];
      }
      if (tp.needs_grad(s)) {
        Tensor& sg = tp.nodes_[s.id].t;
        for (std::size_t i = 0; i < r; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j) acc += G.grad_at(i * c + j) * A.at(i, j);
          sg.grad_at(i) += acc;
        }
      }
    });
  }

  Var sigmoid(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(out[i]);
    return push(std::move(out), needs_grad(a), [a](Tape& tp, std::size_t self) {
      if (!tp.needs_grad(a)) return;
      const Tensor& Y = tp.nodes_[self].t;
      Tensor& ag = tp.nodes_[a.id].t;
      for (std::size_t i = 0; i < ag.size(); ++i) {
        ag.grad_at(i) += Y.grad_at(i) * Y[i] * (1.0 - Y[i]);
      }
    });
  }

  Var log(Var a) {
    const Tensor& A = value(a);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) {
      // negative finite input is a usage bug; zero and NaN propagate as
      // non-finite values so the caller's loss check reports them
      require(!(out[i] < 0.0), "log: negative input");
      out[i] = std::log(out[i]);
    }
    return push(std::move(out), needs_grad(a), [a](Tape& tp, std::size_t self) {
      if (!tp.needs_grad(a)) return;
      const Tensor& G = tp.nodes_[self].t;
      const Tensor& A = tp.value(a);
      Tensor& ag = tp.nodes_[a.id].t;
      for (std::size_t i = 0; i < ag.size(); ++i) ag.grad_at(i) += G.grad_at(i) / A[i];
    });
  }

  // Softmax over a rank-1 tensor, computed with max subtraction.
  Var softmax(Var a) {
    const Tensor& A = value(a);
    require(A.rank() == 1, "softmax: expects a vector");
    Tensor out = Tensor::from_vector(softmax_values(A.data(), A.size()));
    return push(std::move(out), needs_grad(a), [a](Tape& tp, std::size_t self) {
      if (!tp.needs_grad(a)) return;
      const Tensor& Y = tp.nodes_[self].t;
      Tensor& ag = tp.nodes_[a.id].t;
      double dot = 0.0;
      for (std::size_t i = 0; i < Y.size(); ++i) dot += Y.grad_at(i) * Y[i];
      for (std::size_t i = 0; i < Y.size(); ++i) {
        ag.grad_at(i) += Y[i] * (Y.grad_at(i) - dot);
      }
    });
  }

  Var concat_rows(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.cols(),
            "concat_rows: column mismatch");
    const std::size_t c = A.cols();
    Tensor out = Tensor::zeros({A.rows() + B.rows(), c});
    std::copy(A.data(), A.data() + A.size(), out.data());
    std::copy(B.data(), B.data() + B.size(), out.data() + A.size());
    bool ng = needs_grad(a) || needs_grad(b);
    return push(std::move(out), ng, [a, b](Tape& tp, std::size_t self) {
      const Tensor& G = tp.nodes_[self].t;
      const std::size_t an = tp.value(a).size();
      if (tp.needs_grad(a)) {
        Tensor& ag = tp.nodes_[a.id].t;
        for (std::size_t i = 0; i < an; ++i) ag.grad_at(i) += G.grad_at(i);
      }
      if (tp.needs_grad(b)) {
        Tensor& bg = tp.nodes_[b.id].t;
        for (std::size_t i = 0; i < bg.size(); ++i) bg.grad_at(i) += G.grad_at(an + i);
      }
    });
  }

  Var concat_cols(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.rank() == 2 && B.rank() == 2 && A.rows() == B.rows(),
            "concat_cols: row mismatch");
    const std::size_t r = A.rows(), ca = A.cols(), cb = B.cols();
    Tensor out = Tensor::zeros({r, ca + cb});
    for (std::size_t i = 0; i < r; ++i) {
      std::copy(A.data() + i * ca, A.data() + (i + 1) * ca, out.data() + i * (ca + cb));
      std::copy(B.data() + i * cb, B.data() + (i + 1) * cb,
                out.data() + i * (ca + cb) + ca);
    }
    bool ng = needs_grad(a) || needs_grad(b);
    return push(std::move(out), ng, [a, b, r, ca, cb](Tape& tp, std::size_t self) {
      const Tensor& G = tp.nodes_[self].t;
      for (std::size_t i = 0; i < r; ++i) {
        if (tp.needs_grad(a)) {
          Tensor& ag = tp.nodes_[a.id].t;
          for (std::size_t j = 0; j < ca; ++j)
            ag.grad_at(i * ca + j) += G.grad_at(i * (ca + cb) + j);
        }
        if (tp.needs_grad(b)) {
          Tensor& bg = tp.nodes_[b.id].t;
          for (std::size_t j = 0; j < cb; ++j)
            bg.grad_at(i * cb + j) += G.grad_at(i * (ca + cb) + ca + j);
        }
      }
    });
  }

  Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    const Tensor& A = value(a);
    require(A.rank() == 2 && begin <= end && end <= A.rows(), "slice_rows: bad range");
    const std::size_t c = A.cols();
    Tensor out = Tensor::zeros({end - begin, c});
    std::copy(A.data() + begin * c, A.data() + end * c, out.data());
    return push(std::move(out), needs_grad(a), [a, begin, c](Tape& tp, std::size_t self) {
      if (!tp.needs_grad(a)) return;
      const Tensor& G = tp.nodes_[self].t;
      Tensor& ag = tp.nodes_[a.id].t;
      for (std::size_t i = 0; i < G.size(); ++i) ag.grad_at(begin * c + i) += G.grad_at(i);
    });
  }

  Var gather_rows(Var a, std::vector<std::size_t> indices) {
    const Tensor& A = value(a);
    require(A.rank() == 2, "gather_rows: expects a matrix");
    const std::size_t c = A.cols();
    Tensor out = Tensor::zeros({indices.size(), c});
    for (std::size_t i = 0; i < indices.size(); ++i) {
      require(indices[i] < A.rows(), "gather_rows: index out of range");
      std::copy(A.data() + indices[i] * c, A.data() + (indices[i] + 1) * c,
                out.data() + i * c);
    }
    return push(std::move(out), needs_grad(a),
                [a, idx = std::move(indices), c](Tape& tp, std::size_t self) {
                  if (!tp.needs_grad(a)) return;
                  const Tensor& G = tp.nodes_[self].t;
                  Tensor& ag = tp.nodes_[a.id].t;
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t j = 0; j < c; ++j)
                      ag.grad_at(idx[i] * c + j) += G.grad_at(i * c + j);
                });
  }

  // Row-wise inner products of two equally shaped matrices -> vector.
  Var dot_rows(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.rank() == 2 && A.same_shape(B), "dot_rows: shape mismatch");
    const std::size_t r = A.rows(), c = A.cols();
    Tensor out = Tensor::zeros({r});
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += A.at(i, j) * B.at(i, j);
      out[i] = s;
    }
    bool ng = needs_grad(a) || needs_grad(b);
    return push(std::move(out), ng, [a, b, r, c](Tape& tp, std::size_t self) {
      const Tensor& G = tp.nodes_[self].t;
      const Tensor& A = tp.value(a);
      const Tensor& B = tp.value(b);
      if (tp.needs_grad(a)) {
        Tensor& ag = tp.nodes_[a.id].t;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            ag.grad_at(i * c + j) += G.grad_at(i) * B.at(i, j);
      }
      if (tp.needs_grad(b)) {
        Tensor& bg = tp.nodes_[b.id].t;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            bg.grad_at(i * c + j) += G.grad_at(i) * A.at(i, j);
      }
    });
  }

  Var reshape(Var a, std::vector<std::size_t> shape) {
    const Tensor& A = value(a);
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    require(n == A.size(), "reshape: element count mismatch");
    Tensor out = Tensor::zeros(shape);
    std::copy(A.data(), A.data() + A.size(), out.data());
    return push(std::move(out), needs_grad(a), [a](Tape& tp, std::size_t self) {
      if (!tp.needs_grad(a)) return;
      const Tensor& G = tp.nodes_[self].t;
      Tensor& ag = tp.nodes_[a.id].t;
      for (std::size_t i = 0; i < ag.size(); ++i) ag.grad_at(i) += G.grad_at(i);
    });
  }

  Var sum(Var a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
    return push(Tensor::scalar(s), needs_grad(a), [a](Tape& tp, std::size_t self) {
      if (!tp.needs_grad(a)) return;
      const double g = tp.nodes_[self].t.grad_at(0);
      Tensor& ag = tp.nodes_[a.id].t;
      for (std::size_t i = 0; i < ag.size(); ++i) ag.grad_at(i) += g;
    });
  }

  Var mean(Var a) {
    const Tensor& A = value(a);
    require(A.size() > 0, "mean: empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
    const double inv = 1.0 / static_cast<double>(A.size());
    return push(Tensor::scalar(s * inv), needs_grad(a), [a, inv](Tape& tp, std::size_t self) {
      if (!tp.needs_grad(a)) return;
      const double g = tp.nodes_[self].t.grad_at(0) * inv;
      Tensor& ag = tp.nodes_[a.id].t;
      for (std::size_t i = 0; i < ag.size(); ++i) ag.grad_at(i) += g;
    });
  }

  // Scalar sum of squared differences.
  Var squared_error(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B), "squared_error: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) {
      const double d = A[i] - B[i];
      s += d * d;
    }
    bool ng = needs_grad(a) || needs_grad(b);
    return push(Tensor::scalar(s), ng, [a, b](Tape& tp, std::size_t self) {
      const double g = tp.nodes_[self].t.grad_at(0);
      const Tensor& A = tp.value(a);
      const Tensor& B = tp.value(b);
      if (tp.needs_grad(a)) {
        Tensor& ag = tp.nodes_[a.id].t;
        for (std::size_t i = 0; i < A.size(); ++i)
          ag.grad_at(i) += 2.0 * g * (A[i] - B[i]);
      }
      if (tp.needs_grad(b)) {
        Tensor& bg = tp.nodes_[b.id].t;
        for (std::size_t i = 0; i < B.size(); ++i)
          bg.grad_at(i) -= 2.0 * g * (A[i] - B[i]);
      }
    });
  }

  // For each segment, softmax the scores of its entries and emit the
  // weighted sum of the corresponding value rows. Empty segments produce a
  // zero row; the per-segment weights can optionally be exported.
  Var segment_attention(Var scores, Var values,
                        const std::vector<std::vector<std::size_t>>& segments,
                        std::vector<std::vector<double>>* weights_out = nullptr) {
    const Tensor& S = value(scores);
    const Tensor& V = value(values);
    require(S.rank() == 1 && V.rank() == 2 && S.size() == V.rows(),
            "segment_attention: shape mismatch");
    const std::size_t c = V.cols();
    Tensor out = Tensor::zeros({segments.size(), c});
    auto weights = std::make_shared<std::vector<std::vector<double>>>();
    weights->reserve(segments.size());
    for (std::size_t r = 0; r < segments.size(); ++r) {
      const auto& seg = segments[r];
      std::vector<double> logits(seg.size());
      for (std::size_t j = 0; j < seg.size(); ++j) {
        require(seg[j] < S.size(), "segment_attention: index out of range");
        logits[j] = S[seg[j]];
      }
      std::vector<double> alpha =
          seg.empty() ? std::vector<double>{} : softmax_values(logits.data(), logits.size());
      for (std::size_t j = 0; j < seg.size(); ++j) {
        const double* vrow = V.data() + seg[j] * c;
        double* orow = out.data() + r * c;
        for (std::size_t p = 0; p < c; ++p) orow[p] += alpha[j] * vrow[p];
      }
      weights->push_back(std::move(alpha));
    }
    if (weights_out) *weights_out = *weights;
    bool ng = needs_grad(scores) || needs_grad(values);
    auto segs = std::make_shared<std::vector<std::vector<std::size_t>>>(segments);
    return push(std::move(out), ng, [scores, values, segs, weights, c](Tape& tp,
                                                                       std::size_t self) {
      const Tensor& G = tp.nodes_[self].t;
      const Tensor& V = tp.value(values);
      for (std::size_t r = 0; r < segs->size(); ++r) {
        const auto& seg = (*segs)[r];
        const auto& alpha = (*weights)[r];
        if (seg.empty()) continue;
        const double* grow = G.grad() + r * c;
        // d(value rows) and d(alpha)
        std::vector<double> dalpha(seg.size(), 0.0);
        for (std::size_t j = 0; j < seg.size(); ++j) {
          const double* vrow = V.data() + seg[j] * c;
          double dot = 0.0;
          for (std::size_t p = 0; p < c; ++p) dot += grow[p] * vrow[p];
          dalpha[j] = dot;
          if (tp.needs_grad(values)) {
            double* vg = tp.nodes_[values.id].t.grad() + seg[j] * c;
            for (std::size_t p = 0; p < c; ++p) vg[p] += alpha[j] * grow[p];
          }
        }
        if (tp.needs_grad(scores)) {
          double inner = 0.0;
          for (std::size_t j = 0; j < seg.size(); ++j) inner += alpha[j] * dalpha[j];
          Tensor& sg = tp.nodes_[scores.id].t;
          for (std::size_t j = 0; j < seg.size(); ++j) {
            sg.grad_at(seg[j]) += alpha[j] * (dalpha[j] - inner);
          }
        }
      }
    });
  }

  // --- backward ---

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse. Gradients
  // of registered parameters are accumulated into their grad slots.
  void backward(Var loss) {
    require(loss.valid() && loss.id < nodes_.size(), "backward: invalid node");
    require(value(loss).is_scalar(), "backward: loss must be a scalar");
    for (Node& n : nodes_) {
      if (n.needs_grad) n.t.zero_grad();
    }
    // A loss that depends on no differentiable input has zero gradient
    // everywhere; nothing to propagate.
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].t.grad_at(0) = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].needs_grad && nodes_[i].back) nodes_[i].back(*this, i);
    }
    for (auto& [p, id] : bound_) {
      const Tensor& n = nodes_[id].t;
      for (std::size_t i = 0; i < n.size(); ++i) p->value.grad_at(i) += n.grad_at(i);
    }
  }

  static double stable_sigmoid(double x) {
    if (x >= 0.0) {
      const double e = std::exp(-x);
      return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

  static std::vector<double> softmax_values(const double* logits, std::size_t n) {
    std::vector<double> out(n);
    double mx = logits[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = std::exp(logits[i] - mx);
      z += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= z;
    return out;
  }

 private:
  struct Node {
    Tensor t;
    std::function<void(Tape&, std::size_t)> back;
    bool needs_grad = false;
  };

  const Node& node(Var v) const {
    require(v.valid() && v.id < nodes_.size(), "Tape: invalid var");
    return nodes_[v.id];
  }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  Var push(Tensor t, bool needs_grad, std::function<void(Tape&, std::size_t)> back) {
    Node n;
    n.t = std::move(t);
    n.needs_grad = needs_grad;
    if (needs_grad) n.t.alloc_grad();
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<Parameter*, std::size_t>> bound_;
};

}  // namespace disrec
