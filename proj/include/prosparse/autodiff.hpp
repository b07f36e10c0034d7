#pragma once

// Reverse-mode differentiation over a dynamically recorded list of
// operations. Every op checks shapes, computes its forward value eagerly and
// registers an exact backward rule.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "prosparse/parameters.hpp"
#include "prosparse/tensor.hpp"

namespace prosparse {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

template <typename Real>
class Graph {
 public:
  using TensorT = Tensor<Real>;
  using Backward = std::function<void(Graph&, const TensorT& out_grad)>;

  explicit Graph(bool training = false, std::uint64_t seed = 0) : training_(training), rng_(seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const { return training_; }
  std::mt19937_64& rng() { return rng_; }

  Var constant(TensorT value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  // References `value` without copying; it must outlive the graph.
  Var constant_ref(const TensorT& value) {
    Node n;
    n.ext_value = &value;
    return push(std::move(n));
  }

  Var param(Parameter<Real>& p) {
    Node n;
    n.ext_value = &p.value;
    if (p.trainable) {
      n.ext_grad = &p.grad;
      n.requires_grad = true;
    }
    return push(std::move(n));
  }

  const TensorT& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ext_value ? *n.ext_value : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  TensorT& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.ext_grad) return *n.ext_grad;
    if (n.grad.size() != value(v).size() || n.grad.shape() != value(v).shape()) {
      n.grad = TensorT(value(v).shape(), Real(0));
    }
    return n.grad;
  }

  Var record(TensorT value, std::initializer_list<Var> inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    for (Var in : inputs) n.requires_grad = n.requires_grad || requires_grad(in);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  Var record(TensorT value, const std::vector<Var>& inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    for (Var in : inputs) n.requires_grad = n.requires_grad || requires_grad(in);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule in
  // reverse order. Parameter gradients accumulate into Parameter::grad.
  void backward(Var loss) {
    if (value(loss).size() != 1) {
      fail(ErrorKind::kShape, "backward: loss must be a scalar, got " + shape_string(value(loss).shape()));
    }
    if (!requires_grad(loss)) return;
    grad(loss).fill(Real(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  // Discrete decisions (relu masks, pooling argmax, decoded trees) are hashed
  // so callers can detect when a perturbation crosses a non-smooth point.
  void mark_branch(std::uint64_t h) {
    signature_ ^= h + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2);
  }
  std::uint64_t branch_signature() const { return signature_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    TensorT value;
    const TensorT* ext_value = nullptr;
    TensorT grad;
    TensorT* ext_grad = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool training_;
  std::mt19937_64 rng_;
  std::deque<Node> nodes_;
  std::uint64_t signature_ = 0;
};

namespace ad {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
Eigen::Map<const RowMat<Real>> view(const Tensor<Real>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename Real>
Eigen::Map<RowMat<Real>> view(Tensor<Real>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

inline std::uint64_t hash_bits(const std::vector<bool>& bits) {
  std::uint64_t h = 1469598103934665603ULL;
  for (bool b : bits) h = (h ^ (b ? 0x9bu : 0x35u)) * 1099511628211ULL;
  return h;
}

template <typename Real>
void require_matrix(const Tensor<Real>& t, const char* op) {
  if (t.rank() != 2) fail(ErrorKind::kShape, std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

template <typename Real>
void require_same(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

template <typename Real>
Var matmul(Graph<Real>& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.cols() != B.rows()) {
    fail(ErrorKind::kShape, "matmul: shape mismatch " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  auto C = Tensor<Real>::matrix(A.rows(), B.cols());
  view(C).noalias() = view(A) * view(B);
  return g.record(std::move(C), {a, b}, [a, b](Graph<Real>& g, const Tensor<Real>& dC) {
    if (g.requires_grad(a)) view(g.grad(a)).noalias() += view(dC) * view(g.value(b)).transpose();
    if (g.requires_grad(b)) view(g.grad(b)).noalias() += view(g.value(a)).transpose() * view(dC);
  });
}

template <typename Real>
Var transpose(Graph<Real>& g, Var a) {
  const auto& A = g.value(a);
  require_matrix(A, "transpose");
  auto C = Tensor<Real>::matrix(A.cols(), A.rows());
  view(C) = view(A).transpose();
  return g.record(std::move(C), {a}, [a](Graph<Real>& g, const Tensor<Real>& dC) {
    view(g.grad(a)) += view(dC).transpose();
  });
}

template <typename Real>
Var add(Graph<Real>& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  require_same(A, B, "add");
  Tensor<Real> C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  return g.record(std::move(C), {a, b}, [a, b](Graph<Real>& g, const Tensor<Real>& dC) {
    for (Var v : {a, b}) {
      if (!g.requires_grad(v)) continue;
      auto& G = g.grad(v);
      for (std::size_t i = 0; i < G.size(); ++i) G[i] += dC[i];
    }
  });
}

template <typename Real>
Var sub(Graph<Real>& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  require_same(A, B, "sub");
  Tensor<Real> C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  return g.record(std::move(C), {a, b}, [a, b](Graph<Real>& g, const Tensor<Real>& dC) {
    if (g.requires_grad(a)) {
      auto& G = g.grad(a);
      for (std::size_t i = 0; i < G.size(); ++i) G[i] += dC[i];
    }
    if (g.requires_grad(b)) {
      auto& G = g.grad(b);
      for (std::size_t i = 0; i < G.size(); ++i) G[i] -= dC[i];
    }
  });
}

// a [n x m] + bias [1 x m] broadcast over rows.
template <typename Real>
Var add_bias(Graph<Real>& g, Var a, Var bias) {
  const auto& A = g.value(a);
  const auto& B = g.value(bias);
  require_matrix(A, "add_bias");
  if (B.size() != A.cols()) {
    fail(ErrorKind::kShape, "add_bias: shape mismatch " + shape_string(A.shape()) + " + " + shape_string(B.shape()));
  }
  Tensor<Real> C = A;
  for (std::size_t r = 0; r < C.rows(); ++r)
    for (std::size_t c = 0; c < C.cols(); ++c) C(r, c) += B[c];
  return g.record(std::move(C), {a, bias}, [a, bias](Graph<Real>& g, const Tensor<Real>& dC) {
    if (g.requires_grad(a)) {
      auto& G = g.grad(a);
      for (std::size_t i = 0; i < G.size(); ++i) G[i] += dC[i];
    }
    if (g.requires_grad(bias)) {
      auto& G = g.grad(bias);
      for (std::size_t r = 0; r < dC.rows(); ++r)
        for (std::size_t c = 0; c < dC.cols(); ++c) G[c] += dC(r, c);
    }
  });
}

// a [n x m] scaled column-wise by gain [1 x m].
template <typename Real>
Var mul_row(Graph<Real>& g, Var a, Var gain) {
  const auto& A = g.value(a);
  const auto& W = g.value(gain);
  require_matrix(A, "mul_row");
  if (W.size() != A.cols()) {
    fail(ErrorKind::kShape, "mul_row: shape mismatch " + shape_string(A.shape()) + " * " + shape_string(W.shape()));
  }
  Tensor<Real> C = A;
  for (std::size_t r = 0; r < C.rows(); ++r)
    for (std::size_t c = 0; c < C.cols(); ++c) C(r, c) *= W[c];
  return g.record(std::move(C), {a, gain}, [a, gain](Graph<Real>& g, const Tensor<Real>& dC) {
    const auto& A = g.value(a);
    const auto& W = g.value(gain);
    if (g.requires_grad(a)) {
      auto& G = g.grad(a);
      for (std::size_t r = 0; r < dC.rows(); ++r)
        for (std::size_t c = 0; c < dC.cols(); ++c) G(r, c) += dC(r, c) * W[c];
    }
    if (g.requires_grad(gain)) {
      auto& G = g.grad(gain);
      for (std::size_t r = 0; r < dC.rows(); ++r)
        for (std::size_t c = 0; c < dC.cols(); ++c) G[c] += dC(r, c) * A(r, c);
    }
  });
}

template <typename Real>
Var scale(Graph<Real>& g, Var a, Real s) {
  Tensor<Real> C = g.value(a);
  for (auto& v : C.values()) v *= s;
  return g.record(std::move(C), {a}, [a, s](Graph<Real>& g, const Tensor<Real>& dC) {
    auto& G = g.grad(a);
    for (std::size_t i = 0; i < G.size(); ++i) G[i] += s * dC[i];
  });
}

template <typename Real>
Var relu(Graph<Real>& g, Var a) {
  Tensor<Real> C = g.value(a);
  std::vector<bool> mask(C.size());
  for (std::size_t i = 0; i < C.size(); ++i) {
    mask[i] = C[i] > Real(0);
    if (!mask[i]) C[i] = Real(0);
  }
  g.mark_branch(hash_bits(mask));
  return g.record(std::move(C), {a}, [a, mask = std::move(mask)](Graph<Real>& g, const Tensor<Real>& dC) {
    auto& G = g.grad(a);
    for (std::size_t i = 0; i < G.size(); ++i)
      if (mask[i]) G[i] += dC[i];
  });
}

// Softmax along axis 1 (each row) or axis 0 (each column); reductions in
// double precision.
template <typename Real>
Var softmax(Graph<Real>& g, Var a, int axis = 1) {
  const auto& A = g.value(a);
  require_matrix(A, "softmax");
  if (axis != 0 && axis != 1) fail(ErrorKind::kShape, "softmax: axis must be 0 or 1");
  const std::size_t R = A.rows(), Cn = A.cols();
  const std::size_t groups = axis == 1 ? R : Cn;
  const std::size_t len = axis == 1 ? Cn : R;
  auto at = [axis, Cn](std::size_t grp, std::size_t k) { return axis == 1 ? grp * Cn + k : k * Cn + grp; };
  Tensor<Real> Y(A.shape());
  for (std::size_t grp = 0; grp < groups; ++grp) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, static_cast<double>(A[at(grp, k)]));
    double sum = 0;
    for (std::size_t k = 0; k < len; ++k) sum += std::exp(static_cast<double>(A[at(grp, k)]) - mx);
    for (std::size_t k = 0; k < len; ++k)
      Y[at(grp, k)] = static_cast<Real>(std::exp(static_cast<double>(A[at(grp, k)]) - mx) / sum);
  }
  Tensor<Real> Ycopy = Y;
  return g.record(std::move(Y), {a}, [a, Y = std::move(Ycopy), groups, len, at](Graph<Real>& g, const Tensor<Real>& dY) {
    auto& G = g.grad(a);
    for (std::size_t grp = 0; grp < groups; ++grp) {
      double dot = 0;
      for (std::size_t k = 0; k < len; ++k) dot += static_cast<double>(dY[at(grp, k)]) * Y[at(grp, k)];
      for (std::size_t k = 0; k < len; ++k) {
        auto i = at(grp, k);
        G[i] += static_cast<Real>(Y[i] * (static_cast<double>(dY[i]) - dot));
      }
    }
  });
}

// Row-wise normalization to zero mean / unit variance, no affine part.
template <typename Real>
Var layer_norm(Graph<Real>& g, Var a, double eps = 1e-5) {
  const auto& A = g.value(a);
  require_matrix(A, "layer_norm");
  const std::size_t R = A.rows(), Cn = A.cols();
  Tensor<Real> Y(A.shape());
  std::vector<double> inv_sd(R);
  for (std::size_t r = 0; r < R; ++r) {
    double mean = 0;
    for (std::size_t c = 0; c < Cn; ++c) mean += A(r, c);
    mean /= static_cast<double>(Cn);
    double var = 0;
    for (std::size_t c = 0; c < Cn; ++c) var += (A(r, c) - mean) * (A(r, c) - mean);
    var /= static_cast<double>(Cn);
    inv_sd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < Cn; ++c) Y(r, c) = static_cast<Real>((A(r, c) - mean) * inv_sd[r]);
  }
  Tensor<Real> Ycopy = Y;
  return g.record(std::move(Y), {a}, [a, Y = std::move(Ycopy), inv_sd = std::move(inv_sd)](Graph<Real>& g, const Tensor<Real>& dY) {
    auto& G = g.grad(a);
    const std::size_t R = Y.rows(), Cn = Y.cols();
    for (std::size_t r = 0; r < R; ++r) {
      double mdy = 0, mdyy = 0;
      for (std::size_t c = 0; c < Cn; ++c) {
        mdy += dY(r, c);
        mdyy += static_cast<double>(dY(r, c)) * Y(r, c);
      }
      mdy /= static_cast<double>(Cn);
      mdyy /= static_cast<double>(Cn);
      for (std::size_t c = 0; c < Cn; ++c)
        G(r, c) += static_cast<Real>(inv_sd[r] * (dY(r, c) - mdy - Y(r, c) * mdyy));
    }
  });
}

// Inverted dropout; identity outside training mode.
template <typename Real>
Var dropout(Graph<Real>& g, Var a, double rate) {
  if (!g.training() || rate <= 0) return a;
  if (rate >= 1) fail(ErrorKind::kConfig, "dropout rate must be < 1");
  Tensor<Real> C = g.value(a);
  std::bernoulli_distribution keep(1.0 - rate);
  const Real s = static_cast<Real>(1.0 / (1.0 - rate));
  std::vector<Real> mask(C.size());
  for (std::size_t i = 0; i < C.size(); ++i) {
    mask[i] = keep(g.rng()) ? s : Real(0);
    C[i] *= mask[i];
  }
  return g.record(std::move(C), {a}, [a, mask = std::move(mask)](Graph<Real>& g, const Tensor<Real>& dC) {
    auto& G = g.grad(a);
    for (std::size_t i = 0; i < G.size(); ++i) G[i] += mask[i] * dC[i];
  });
}

// Same-padded 1-D convolution over time. x: [T x C_in],
// w: [(width * C_in) x C_out] with rows ordered (offset, channel), bias: [1 x C_out].
template <typename Real>
Var conv1d(Graph<Real>& g, Var x, Var w, Var bias, std::size_t width) {
  const auto& X = g.value(x);
  const auto& W = g.value(w);
  const auto& B = g.value(bias);
  require_matrix(X, "conv1d");
  require_matrix(W, "conv1d");
  const std::size_t T = X.rows(), Cin = X.cols(), Cout = W.cols();
  if (width == 0 || W.rows() != width * Cin || B.size() != Cout) {
    fail(ErrorKind::kShape, "conv1d: shape mismatch input " + shape_string(X.shape()) + " filters " +
                                shape_string(W.shape()) + " width " + std::to_string(width));
  }
  const long left = static_cast<long>((width - 1) / 2);
  auto cols = Tensor<Real>::matrix(T, width * Cin);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < width; ++j) {
      long src = static_cast<long>(t + j) - left;
      if (src < 0 || src >= static_cast<long>(T)) continue;
      for (std::size_t c = 0; c < Cin; ++c) cols(t, j * Cin + c) = X(src, c);
    }
  }
  auto Y = Tensor<Real>::matrix(T, Cout);
  view(Y).noalias() = view(cols) * view(W);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t o = 0; o < Cout; ++o) Y(t, o) += B[o];
  return g.record(std::move(Y), {x, w, bias},
                  [x, w, bias, width, left, cols = std::move(cols)](Graph<Real>& g, const Tensor<Real>& dY) {
                    const std::size_t T = dY.rows(), Cout = dY.cols();
                    if (g.requires_grad(w)) view(g.grad(w)).noalias() += view(cols).transpose() * view(dY);
                    if (g.requires_grad(bias)) {
                      auto& G = g.grad(bias);
                      for (std::size_t t = 0; t < T; ++t)
                        for (std::size_t o = 0; o < Cout; ++o) G[o] += dY(t, o);
                    }
                    if (g.requires_grad(x)) {
                      auto dcols = Tensor<Real>::matrix(cols.rows(), cols.cols());
                      view(dcols).noalias() = view(dY) * view(g.value(w)).transpose();
                      auto& G = g.grad(x);
                      const std::size_t Cin = G.cols();
                      for (std::size_t t = 0; t < T; ++t) {
                        for (std::size_t j = 0; j < width; ++j) {
                          long src = static_cast<long>(t + j) - left;
                          if (src < 0 || src >= static_cast<long>(T)) continue;
                          for (std::size_t c = 0; c < Cin; ++c) G(src, c) += dcols(t, j * Cin + c);
                        }
                      }
                    }
                  });
}

// [T x C] -> [1 x C]; ties go to the earliest frame.
template <typename Real>
Var max_pool_over_time(Graph<Real>& g, Var x) {
  const auto& X = g.value(x);
  require_matrix(X, "max_pool_over_time");
  if (X.rows() == 0) fail(ErrorKind::kShape, "max_pool_over_time: empty input");
  auto Y = Tensor<Real>::matrix(1, X.cols());
  std::vector<std::size_t> arg(X.cols(), 0);
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t c = 0; c < X.cols(); ++c) {
    Real best = X(0, c);
    for (std::size_t t = 1; t < X.rows(); ++t) {
      if (X(t, c) > best) {
        best = X(t, c);
        arg[c] = t;
      }
    }
    Y[c] = best;
    h = (h ^ arg[c]) * 1099511628211ULL;
  }
  g.mark_branch(h);
  return g.record(std::move(Y), {x}, [x, arg = std::move(arg)](Graph<Real>& g, const Tensor<Real>& dY) {
    auto& G = g.grad(x);
    for (std::size_t c = 0; c < arg.size(); ++c) G(arg[c], c) += dY[c];
  });
}

// Rows of `table` selected by `ids`; also serves as embedding lookup.
template <typename Real>
Var gather_rows(Graph<Real>& g, Var table, std::vector<std::size_t> ids) {
  const auto& Tb = g.value(table);
  require_matrix(Tb, "gather_rows");
  auto Y = Tensor<Real>::matrix(ids.size(), Tb.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= Tb.rows()) {
      fail(ErrorKind::kShape, "gather_rows: index " + std::to_string(ids[i]) + " out of range for " +
                                  shape_string(Tb.shape()));
    }
    std::copy_n(Tb.data() + ids[i] * Tb.cols(), Tb.cols(), Y.data() + i * Tb.cols());
  }
  return g.record(std::move(Y), {table}, [table, ids = std::move(ids)](Graph<Real>& g, const Tensor<Real>& dY) {
    auto& G = g.grad(table);
    const std::size_t d = G.cols();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) G(ids[i], c) += dY(i, c);
  });
}

template <typename Real>
Var embedding_lookup(Graph<Real>& g, Var table, std::vector<std::size_t> ids) {
  return gather_rows(g, table, std::move(ids));
}

// axis 0 stacks rows, axis 1 joins columns.
template <typename Real>
Var concat(Graph<Real>& g, const std::vector<Var>& parts, int axis) {
  if (parts.empty()) fail(ErrorKind::kShape, "concat: no inputs");
  if (parts.size() == 1) return parts[0];
  std::size_t rows = 0, cols = 0;
  for (Var p : parts) {
    const auto& P = g.value(p);
    require_matrix(P, "concat");
    if (axis == 0) {
      if (rows && cols != P.cols()) {
        fail(ErrorKind::kShape, "concat: column mismatch " + shape_string(g.value(parts[0]).shape()) + " vs " +
                                    shape_string(P.shape()));
      }
      cols = P.cols();
      rows += P.rows();
    } else {
      if (cols && rows != P.rows()) {
        fail(ErrorKind::kShape, "concat: row mismatch " + shape_string(g.value(parts[0]).shape()) + " vs " +
                                    shape_string(P.shape()));
      }
      rows = P.rows();
      cols += P.cols();
    }
  }
  auto Y = Tensor<Real>::matrix(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var p : parts) {
    const auto& P = g.value(p);
    offsets.push_back(off);
    if (axis == 0) {
      std::copy(P.values().begin(), P.values().end(), Y.data() + off * cols);
      off += P.rows();
    } else {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < P.cols(); ++c) Y(r, off + c) = P(r, c);
      off += P.cols();
    }
  }
  return g.record(std::move(Y), parts, [parts, offsets, axis](Graph<Real>& g, const Tensor<Real>& dY) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!g.requires_grad(parts[k])) continue;
      auto& G = g.grad(parts[k]);
      if (axis == 0) {
        const Real* src = dY.data() + offsets[k] * dY.cols();
        for (std::size_t i = 0; i < G.size(); ++i) G[i] += src[i];
      } else {
        for (std::size_t r = 0; r < G.rows(); ++r)
          for (std::size_t c = 0; c < G.cols(); ++c) G(r, c) += dY(r, offsets[k] + c);
      }
    }
  });
}

template <typename Real>
Var slice_cols(Graph<Real>& g, Var a, std::size_t start, std::size_t len) {
  const auto& A = g.value(a);
  require_matrix(A, "slice_cols");
  if (start + len > A.cols()) {
    fail(ErrorKind::kShape, "slice_cols: [" + std::to_string(start) + "," + std::to_string(start + len) +
                                ") out of range for " + shape_string(A.shape()));
  }
  auto Y = Tensor<Real>::matrix(A.rows(), len);
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < len; ++c) Y(r, c) = A(r, start + c);
  return g.record(std::move(Y), {a}, [a, start](Graph<Real>& g, const Tensor<Real>& dY) {
    auto& G = g.grad(a);
    for (std::size_t r = 0; r < dY.rows(); ++r)
      for (std::size_t c = 0; c < dY.cols(); ++c) G(r, start + c) += dY(r, c);
  });
}

template <typename Real>
Var slice_rows(Graph<Real>& g, Var a, std::size_t start, std::size_t len) {
  const auto& A = g.value(a);
  require_matrix(A, "slice_rows");
  if (start + len > A.rows()) {
    fail(ErrorKind::kShape, "slice_rows: [" + std::to_string(start) + "," + std::to_string(start + len) +
                                ") out of range for " + shape_string(A.shape()));
  }
  auto Y = Tensor<Real>::matrix(len, A.cols());
  std::copy_n(A.data() + start * A.cols(), len * A.cols(), Y.data());
  return g.record(std::move(Y), {a}, [a, start](Graph<Real>& g, const Tensor<Real>& dY) {
    auto& G = g.grad(a);
    Real* dst = G.data() + start * G.cols();
    for (std::size_t i = 0; i < dY.size(); ++i) dst[i] += dY[i];
  });
}

template <typename Real>
Var sum(Graph<Real>& g, Var a) {
  const auto& A = g.value(a);
  double s = 0;
  for (Real v : A.values()) s += v;
  auto Y = Tensor<Real>::matrix(1, 1, static_cast<Real>(s));
  return g.record(std::move(Y), {a}, [a](Graph<Real>& g, const Tensor<Real>& dY) {
    auto& G = g.grad(a);
    for (auto& v : G.values()) v += dY[0];
  });
}

// Scalar sum of coeff * a[flat index] over the given entries plus `offset`.
template <typename Real>
Var weighted_entries(Graph<Real>& g, Var a, std::vector<std::pair<std::size_t, Real>> entries, Real offset = Real(0)) {
  const auto& A = g.value(a);
  double s = offset;
  for (const auto& [i, w] : entries) {
    if (i >= A.size()) fail(ErrorKind::kShape, "weighted_entries: index out of range");
    s += static_cast<double>(w) * A[i];
  }
  auto Y = Tensor<Real>::matrix(1, 1, static_cast<Real>(s));
  return g.record(std::move(Y), {a}, [a, entries = std::move(entries)](Graph<Real>& g, const Tensor<Real>& dY) {
    auto& G = g.grad(a);
    for (const auto& [i, w] : entries) G[i] += w * dY[0];
  });
}

}  // namespace ad
}  // namespace prosparse
