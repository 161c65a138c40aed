#include "avemo/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace avemo {

namespace {
constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluC = 0.044715;
}  // namespace

// GELU, tanh form: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
double gelu_scalar(double x) {
  double inner = kSqrt2OverPi * (x + kGeluC * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_grad_scalar(double x) {
  double inner = kSqrt2OverPi * (x + kGeluC * x * x * x);
  double t = std::tanh(inner);
  double dinner = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

void Tape::check_finite(const Tensor& t, const char* op) const {
  if (!t.finite())
    throw std::runtime_error(std::string("non-finite value out of op ") + op);
}

int Tape::push(Tensor value, bool requires_grad,
               std::function<void(Tape&, int)> backfn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backfn = std::move(backfn);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_ref(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad_alloc) {
    n.grad = Tensor(n.value.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  check_finite(value, "leaf");
  return Var{this, push(std::move(value), requires_grad, nullptr)};
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  if (!n.grad_alloc) throw std::logic_error("grad: not populated; run backward");
  return n.grad;
}

bool Tape::has_grad(Var v) const {
  return nodes_[static_cast<size_t>(v.id)].grad_alloc;
}

void Tape::backward(Var loss) {
  Node& root = nodes_[static_cast<size_t>(loss.id)];
  if (root.value.numel() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  grad_ref(loss.id).data[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.grad_alloc || !n.requires_grad || !n.backfn) continue;
    n.backfn(*this, i);
  }
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
  Tensor out(A.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] + B.data[i];
  check_finite(out, "add");
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  int ai = a.id, bi = b.id;
  return Var{this, push(std::move(out), req, [ai, bi](Tape& t, int self) {
               const Tensor& g = t.nodes_[self].grad;
               if (t.nodes_[ai].requires_grad) {
                 Tensor& ga = t.grad_ref(ai);
                 for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
               }
               if (t.nodes_[bi].requires_grad) {
                 Tensor& gb = t.grad_ref(bi);
                 for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
               }
             })};
}

Var Tape::sub(Var a, Var b) {
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (!A.same_shape(B)) throw std::invalid_argument("sub: shape mismatch");
  Tensor out(A.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] - B.data[i];
  check_finite(out, "sub");
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  int ai = a.id, bi = b.id;
  return Var{this, push(std::move(out), req, [ai, bi](Tape& t, int self) {
               const Tensor& g = t.nodes_[self].grad;
               if (t.nodes_[ai].requires_grad) {
                 Tensor& ga = t.grad_ref(ai);
                 for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
               }
               if (t.nodes_[bi].requires_grad) {
                 Tensor& gb = t.grad_ref(bi);
                 for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
               }
             })};
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (!A.same_shape(B)) throw std::invalid_argument("mul: shape mismatch");
  Tensor out(A.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] * B.data[i];
  check_finite(out, "mul");
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  int ai = a.id, bi = b.id;
  return Var{this, push(std::move(out), req, [ai, bi](Tape& t, int self) {
               const Tensor& g = t.nodes_[self].grad;
               const Tensor& A = t.nodes_[ai].value;
               const Tensor& B = t.nodes_[bi].value;
               if (t.nodes_[ai].requires_grad) {
                 Tensor& ga = t.grad_ref(ai);
                 for (size_t i = 0; i < g.data.size(); ++i)
                   ga.data[i] += g.data[i] * B.data[i];
               }
               if (t.nodes_[bi].requires_grad) {
                 Tensor& gb = t.grad_ref(bi);
                 for (size_t i = 0; i < g.data.size(); ++i)
                   gb.data[i] += g.data[i] * A.data[i];
               }
             })};
}

Var Tape::scale(Var a, double c) {
  const Tensor& A = a.val();
  Tensor out(A.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] * c;
  check_finite(out, "scale");
  int ai = a.id;
  return Var{this, push(std::move(out), nodes_[a.id].requires_grad,
                        [ai, c](Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& ga = t.grad_ref(ai);
                          for (size_t i = 0; i < g.data.size(); ++i)
                            ga.data[i] += g.data[i] * c;
                        })};
}

Var Tape::add_const(Var a, const Tensor& c) {
  const Tensor& A = a.val();
  if (!A.same_shape(c)) throw std::invalid_argument("add_const: shape mismatch");
  Tensor out(A.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] + c.data[i];
  int ai = a.id;
  return Var{this, push(std::move(out), nodes_[a.id].requires_grad,
                        [ai](Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& ga = t.grad_ref(ai);
                          for (size_t i = 0; i < g.data.size(); ++i)
                            ga.data[i] += g.data[i];
                        })};
}

Var Tape::add_rowvec(Var x, Var b) {
  const Tensor& X = x.val();
  const Tensor& B = b.val();
  if (X.rank() != 2 || B.rank() != 1 || X.cols() != B.shape[0])
    throw std::invalid_argument("add_rowvec: shape mismatch");
  Tensor out(X.shape);
  int n = X.rows(), d = X.cols();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = X.at(i, j) + B.at(j);
  check_finite(out, "add_rowvec");
  bool req = nodes_[x.id].requires_grad || nodes_[b.id].requires_grad;
  int xi = x.id, bi = b.id;
  return Var{this, push(std::move(out), req, [xi, bi, n, d](Tape& t, int self) {
               const Tensor& g = t.nodes_[self].grad;
               if (t.nodes_[xi].requires_grad) {
                 Tensor& gx = t.grad_ref(xi);
                 for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
               }
               if (t.nodes_[bi].requires_grad) {
                 Tensor& gb = t.grad_ref(bi);
                 for (int i = 0; i < n; ++i)
                   for (int j = 0; j < d; ++j) gb.at(j) += g.at(i, j);
               }
             })};
}

Var Tape::transpose(Var a) {
  const Tensor& A = a.val();
  if (A.rank() != 2) throw std::invalid_argument("transpose: rank != 2");
  int n = A.rows(), m = A.cols();
  Tensor out({m, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.at(j, i) = A.at(i, j);
  int ai = a.id;
  return Var{this, push(std::move(out), nodes_[a.id].requires_grad,
                        [ai, n, m](Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& ga = t.grad_ref(ai);
                          for (int i = 0; i < n; ++i)
                            for (int j = 0; j < m; ++j) ga.at(i, j) += g.at(j, i);
                        })};
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
    throw std::invalid_argument("matmul: inner dimensions differ (" +
                                A.shape_str() + " x " + B.shape_str() + ")");
  int m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  // ikj order keeps the inner loop contiguous
  for (int i = 0; i < m; ++i) {
    const double* arow = &A.data[static_cast<size_t>(i) * k];
    double* orow = &out.data[static_cast<size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = &B.data[static_cast<size_t>(p) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  check_finite(out, "matmul");
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  int ai = a.id, bi = b.id;
  return Var{this, push(std::move(out), req, [ai, bi, m, k, n](Tape& t, int self) {
               const Tensor& g = t.nodes_[self].grad;
               const Tensor& A = t.nodes_[ai].value;
               const Tensor& B = t.nodes_[bi].value;
               if (t.nodes_[ai].requires_grad) {
                 // dA = g . B^T
                 Tensor& ga = t.grad_ref(ai);
                 for (int i = 0; i < m; ++i)
                   for (int p = 0; p < k; ++p) {
                     double s = 0.0;
                     const double* grow = &g.data[static_cast<size_t>(i) * n];
                     const double* brow = &B.data[static_cast<size_t>(p) * n];
                     for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                     ga.at(i, p) += s;
                   }
               }
               if (t.nodes_[bi].requires_grad) {
                 // dB = A^T . g
                 Tensor& gb = t.grad_ref(bi);
                 for (int i = 0; i < m; ++i) {
                   const double* arow = &A.data[static_cast<size_t>(i) * k];
                   const double* grow = &g.data[static_cast<size_t>(i) * n];
                   for (int p = 0; p < k; ++p) {
                     double av = arow[p];
                     double* gbrow = &gb.data[static_cast<size_t>(p) * n];
                     for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                   }
                 }
               }
             })};
}

Var Tape::slice_cols(Var a, int c0, int c1) {
  const Tensor& A = a.val();
  if (A.rank() != 2 || c0 < 0 || c1 > A.cols() || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range");
  int n = A.rows(), w = c1 - c0;
  Tensor out({n, w});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j) out.at(i, j) = A.at(i, c0 + j);
  int ai = a.id;
  return Var{this, push(std::move(out), nodes_[a.id].requires_grad,
                        [ai, c0, n, w](Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& ga = t.grad_ref(ai);
                          for (int i = 0; i < n; ++i)
                            for (int j = 0; j < w; ++j)
                              ga.at(i, c0 + j) += g.at(i, j);
                        })};
}

Var Tape::slice_rows(Var a, int r0, int r1) {
  const Tensor& A = a.val();
  if (A.rank() != 2 || r0 < 0 || r1 > A.rows() || r0 >= r1)
    throw std::invalid_argument("slice_rows: bad range");
  int h = r1 - r0, d = A.cols();
  Tensor out({h, d});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = A.at(r0 + i, j);
  int ai = a.id;
  return Var{this, push(std::move(out), nodes_[a.id].requires_grad,
                        [ai, r0, h, d](Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& ga = t.grad_ref(ai);
                          for (int i = 0; i < h; ++i)
                            for (int j = 0; j < d; ++j)
                              ga.at(r0 + i, j) += g.at(i, j);
                        })};
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  int n = parts[0].val().rows();
  int total = 0;
  bool req = false;
  for (const Var& p : parts) {
    if (p.val().rank() != 2 || p.val().rows() != n)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += p.val().cols();
    req = req || nodes_[p.id].requires_grad;
  }
  Tensor out({n, total});
  int off = 0;
  std::vector<std::pair<int, int>> spans;  // (id, col offset)
  for (const Var& p : parts) {
    const Tensor& P = p.val();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < P.cols(); ++j) out.at(i, off + j) = P.at(i, j);
    spans.emplace_back(p.id, off);
    off += P.cols();
  }
  return Var{this, push(std::move(out), req, [spans, n](Tape& t, int self) {
               const Tensor& g = t.nodes_[self].grad;
               for (auto [pid, off] : spans) {
                 if (!t.nodes_[pid].requires_grad) continue;
                 Tensor& gp = t.grad_ref(pid);
                 int w = gp.cols();
                 for (int i = 0; i < n; ++i)
                   for (int j = 0; j < w; ++j) gp.at(i, j) += g.at(i, off + j);
               }
             })};
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  int d = parts[0].val().cols();
  int total = 0;
  bool req = false;
  for (const Var& p : parts) {
    if (p.val().rank() != 2 || p.val().cols() != d)
      throw std::invalid_argument("concat_rows: column mismatch");
    total += p.val().rows();
    req = req || nodes_[p.id].requires_grad;
  }
  Tensor out({total, d});
  int off = 0;
  std::vector<std::pair<int, int>> spans;
  for (const Var& p : parts) {
    const Tensor& P = p.val();
    for (int i = 0; i < P.rows(); ++i)
      for (int j = 0; j < d; ++j) out.at(off + i, j) = P.at(i, j);
    spans.emplace_back(p.id, off);
    off += P.rows();
  }
  return Var{this, push(std::move(out), req, [spans, d](Tape& t, int self) {
               const Tensor& g = t.nodes_[self].grad;
               for (auto [pid, off] : spans) {
                 if (!t.nodes_[pid].requires_grad) continue;
                 Tensor& gp = t.grad_ref(pid);
                 int h = gp.rows();
                 for (int i = 0; i < h; ++i)
                   for (int j = 0; j < d; ++j) gp.at(i, j) += g.at(off + i, j);
               }
             })};
}

Var Tape::gather_rows(Var table, std::vector<int> idx) {
  const Tensor& T = table.val();
  if (T.rank() != 2) throw std::invalid_argument("gather_rows: table rank != 2");
  for (int i : idx)
    if (i < 0 || i >= T.rows())
      throw std::invalid_argument("gather_rows: index out of range");
  int n = static_cast<int>(idx.size()), d = T.cols();
  if (n == 0) throw std::invalid_argument("gather_rows: empty index list");
  Tensor out({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = T.at(idx[static_cast<size_t>(i)], j);
  int ti = table.id;
  return Var{this, push(std::move(out), nodes_[table.id].requires_grad,
                        [ti, idx = std::move(idx), d](Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& gt = t.grad_ref(ti);
                          for (size_t i = 0; i < idx.size(); ++i)
                            for (int j = 0; j < d; ++j)
                              gt.at(idx[i], j) += g.at(static_cast<int>(i), j);
                        })};
}

Var Tape::reshape(Var a, std::vector<int> shape) {
  const Tensor& A = a.val();
  if (Tensor::numel_of(shape) != A.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(std::move(shape));
  out.data = A.data;
  int ai = a.id;
  return Var{this, push(std::move(out), nodes_[a.id].requires_grad,
                        [ai](Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& ga = t.grad_ref(ai);
                          for (size_t i = 0; i < g.data.size(); ++i)
                            ga.data[i] += g.data[i];
                        })};
}

Var Tape::gelu(Var x) {
  const Tensor& X = x.val();
  Tensor out(X.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = gelu_scalar(X.data[i]);
  check_finite(out, "gelu");
  int xi = x.id;
  return Var{this, push(std::move(out), nodes_[x.id].requires_grad,
                        [xi](Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          const Tensor& X = t.nodes_[xi].value;
                          Tensor& gx = t.grad_ref(xi);
                          for (size_t i = 0; i < g.data.size(); ++i)
                            gx.data[i] += g.data[i] * gelu_grad_scalar(X.data[i]);
                        })};
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = x.val();
  const Tensor& G = gamma.val();
  const Tensor& B = beta.val();
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be > 0");
  if (X.rank() != 2 || G.rank() != 1 || B.rank() != 1 || G.shape[0] != X.cols() ||
      B.shape[0] != X.cols())
    throw std::invalid_argument("layer_norm: shape mismatch");
  int n = X.rows(), d = X.cols();
  Tensor out({n, d});
  Tensor xhat({n, d});
  std::vector<double> inv_std(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += X.at(i, j);
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = X.at(i, j) - mu;
      var += c * c;
    }
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      double h = (X.at(i, j) - mu) * is;
      xhat.at(i, j) = h;
      out.at(i, j) = G.at(j) * h + B.at(j);
    }
  }
  check_finite(out, "layer_norm");
  bool req = nodes_[x.id].requires_grad || nodes_[gamma.id].requires_grad ||
             nodes_[beta.id].requires_grad;
  int xi = x.id, gi = gamma.id, bi = beta.id;
  return Var{this, push(std::move(out), req,
                        [xi, gi, bi, n, d, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)](Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          const Tensor& G = t.nodes_[gi].value;
                          if (t.nodes_[gi].requires_grad) {
                            Tensor& gg = t.grad_ref(gi);
                            for (int i = 0; i < n; ++i)
                              for (int j = 0; j < d; ++j)
                                gg.at(j) += g.at(i, j) * xhat.at(i, j);
                          }
                          if (t.nodes_[bi].requires_grad) {
                            Tensor& gb = t.grad_ref(bi);
                            for (int i = 0; i < n; ++i)
                              for (int j = 0; j < d; ++j) gb.at(j) += g.at(i, j);
                          }
                          if (t.nodes_[xi].requires_grad) {
                            Tensor& gx = t.grad_ref(xi);
                            for (int i = 0; i < n; ++i) {
                              double m1 = 0.0, m2 = 0.0;
                              for (int j = 0; j < d; ++j) {
                                double gy = g.at(i, j) * G.at(j);
                                m1 += gy;
                                m2 += gy * xhat.at(i, j);
                              }
                              m1 /= d;
                              m2 /= d;
                              double is = inv_std[static_cast<size_t>(i)];
                              for (int j = 0; j < d; ++j) {
                                double gy = g.at(i, j) * G.at(j);
                                gx.at(i, j) +=
                                    (gy - m1 - xhat.at(i, j) * m2) * is;
                              }
                            }
                          }
                        })};
}

Var Tape::softmax_rows(Var x, double temperature) {
  if (temperature <= 0.0)
    throw std::invalid_argument("softmax: temperature must be > 0");
  const Tensor& X = x.val();
  if (X.rank() != 2) throw std::invalid_argument("softmax: rank != 2");
  int n = X.rows(), d = X.cols();
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int j = 0; j < d; ++j) mx = std::max(mx, X.at(i, j) / temperature);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      double e = std::exp(X.at(i, j) / temperature - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < d; ++j) out.at(i, j) /= z;
  }
  check_finite(out, "softmax");
  int xi = x.id;
  Tensor probs = out;  // kept for backward
  return Var{this, push(std::move(out), nodes_[x.id].requires_grad,
                        [xi, n, d, temperature, probs = std::move(probs)](
                            Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& gx = t.grad_ref(xi);
                          for (int i = 0; i < n; ++i) {
                            double dot = 0.0;
                            for (int j = 0; j < d; ++j)
                              dot += g.at(i, j) * probs.at(i, j);
                            for (int j = 0; j < d; ++j)
                              gx.at(i, j) += probs.at(i, j) *
                                             (g.at(i, j) - dot) / temperature;
                          }
                        })};
}

Var Tape::rope(Var x, const std::vector<int>& positions, int n_heads,
               double base) {
  const Tensor& X = x.val();
  if (X.rank() != 2) throw std::invalid_argument("rope: rank != 2");
  int n = X.rows(), d = X.cols();
  if (static_cast<int>(positions.size()) != n)
    throw std::invalid_argument("rope: positions length mismatch");
  if (d % n_heads != 0) throw std::invalid_argument("rope: d % n_heads != 0");
  int dh = d / n_heads;
  if (dh % 2 != 0) throw std::invalid_argument("rope: head dim must be even");
  Tensor cs({n, dh / 2}), sn({n, dh / 2});
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < dh / 2; ++p) {
      double theta = positions[static_cast<size_t>(i)] *
                     std::pow(base, -2.0 * p / dh);
      cs.at(i, p) = std::cos(theta);
      sn.at(i, p) = std::sin(theta);
    }
  Tensor out({n, d});
  for (int i = 0; i < n; ++i)
    for (int h = 0; h < n_heads; ++h)
      for (int p = 0; p < dh / 2; ++p) {
        int j0 = h * dh + 2 * p, j1 = j0 + 1;
        double c = cs.at(i, p), s = sn.at(i, p);
        out.at(i, j0) = X.at(i, j0) * c - X.at(i, j1) * s;
        out.at(i, j1) = X.at(i, j0) * s + X.at(i, j1) * c;
      }
  check_finite(out, "rope");
  int xi = x.id;
  return Var{this, push(std::move(out), nodes_[x.id].requires_grad,
                        [xi, n, n_heads, dh, cs = std::move(cs),
                         sn = std::move(sn)](Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& gx = t.grad_ref(xi);
                          for (int i = 0; i < n; ++i)
                            for (int h = 0; h < n_heads; ++h)
                              for (int p = 0; p < dh / 2; ++p) {
                                int j0 = h * dh + 2 * p, j1 = j0 + 1;
                                double c = cs.at(i, p), s = sn.at(i, p);
                                // inverse rotation on the gradient
                                gx.at(i, j0) += g.at(i, j0) * c + g.at(i, j1) * s;
                                gx.at(i, j1) += -g.at(i, j0) * s + g.at(i, j1) * c;
                              }
                        })};
}

Var Tape::sum(Var a) {
  const Tensor& A = a.val();
  double s = 0.0;
  for (double v : A.data) s += v;
  int ai = a.id;
  return Var{this, push(Tensor::scalar(s), nodes_[a.id].requires_grad,
                        [ai](Tape& t, int self) {
                          double g = t.nodes_[self].grad.data[0];
                          Tensor& ga = t.grad_ref(ai);
                          for (auto& v : ga.data) v += g;
                        })};
}

Var Tape::mean_pool(Var x) {
  const Tensor& X = x.val();
  if (X.rank() != 2 || X.rows() < 1)
    throw std::invalid_argument("mean_pool: need non-empty [L,d]");
  int L = X.rows(), d = X.cols();
  Tensor out({d});
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < d; ++j) out.at(j) += X.at(i, j) / L;
  int xi = x.id;
  return Var{this, push(std::move(out), nodes_[x.id].requires_grad,
                        [xi, L, d](Tape& t, int self) {
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& gx = t.grad_ref(xi);
                          for (int i = 0; i < L; ++i)
                            for (int j = 0; j < d; ++j)
                              gx.at(i, j) += g.at(j) / L;
                        })};
}

Var Tape::sum_sq(Var a) {
  const Tensor& A = a.val();
  double s = 0.0;
  for (double v : A.data) s += v * v;
  int ai = a.id;
  return Var{this, push(Tensor::scalar(s), nodes_[a.id].requires_grad,
                        [ai](Tape& t, int self) {
                          double g = t.nodes_[self].grad.data[0];
                          const Tensor& A = t.nodes_[ai].value;
                          Tensor& ga = t.grad_ref(ai);
                          for (size_t i = 0; i < ga.data.size(); ++i)
                            ga.data[i] += 2.0 * g * A.data[i];
                        })};
}

Var Tape::soft_cross_entropy(const Tensor& target_probs, Var logits,
                             double temperature) {
  if (temperature <= 0.0)
    throw std::invalid_argument("soft_cross_entropy: temperature must be > 0");
  const Tensor& L = logits.val();
  if (L.numel() != target_probs.numel())
    throw std::invalid_argument("soft_cross_entropy: size mismatch");
  double psum = 0.0;
  for (double p : target_probs.data) psum += p;
  if (std::abs(psum - 1.0) > 1e-9)
    throw std::invalid_argument("soft_cross_entropy: target is not a distribution");
  int V = static_cast<int>(L.numel());
  // stable: loss = sum_i p_i * (logsumexp(l/tau) - l_i/tau)
  double mx = -1e300;
  for (double v : L.data) mx = std::max(mx, v / temperature);
  double z = 0.0;
  for (double v : L.data) z += std::exp(v / temperature - mx);
  double lse = mx + std::log(z);
  double loss = 0.0;
  Tensor q(L.shape);
  for (int i = 0; i < V; ++i) {
    double li = L.data[static_cast<size_t>(i)] / temperature;
    q.data[static_cast<size_t>(i)] = std::exp(li - lse);
    loss += target_probs.data[static_cast<size_t>(i)] * (lse - li);
  }
  int lid = logits.id;
  Tensor p = target_probs;
  return Var{this, push(Tensor::scalar(loss), nodes_[logits.id].requires_grad,
                        [lid, temperature, q = std::move(q), p = std::move(p)](
                            Tape& t, int self) {
                          double g = t.nodes_[self].grad.data[0];
                          Tensor& gl = t.grad_ref(lid);
                          for (size_t i = 0; i < gl.data.size(); ++i)
                            gl.data[i] +=
                                g * (q.data[i] - p.data[i]) / temperature;
                        })};
}

Var Tape::cross_entropy_rows(Var logits, const std::vector<int>& targets) {
  const Tensor& L = logits.val();
  if (L.rank() != 2 || static_cast<int>(targets.size()) != L.rows())
    throw std::invalid_argument("cross_entropy_rows: shape mismatch");
  int n = L.rows(), V = L.cols();
  for (int tgt : targets)
    if (tgt < 0 || tgt >= V)
      throw std::invalid_argument("cross_entropy_rows: target out of range");
  Tensor q({n, V});
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int j = 0; j < V; ++j) mx = std::max(mx, L.at(i, j));
    double z = 0.0;
    for (int j = 0; j < V; ++j) z += std::exp(L.at(i, j) - mx);
    double lse = mx + std::log(z);
    for (int j = 0; j < V; ++j) q.at(i, j) = std::exp(L.at(i, j) - lse);
    loss += lse - L.at(i, targets[static_cast<size_t>(i)]);
  }
  loss /= n;
  int lid = logits.id;
  return Var{this, push(Tensor::scalar(loss), nodes_[logits.id].requires_grad,
                        [lid, targets, n, V, q = std::move(q)](Tape& t,
                                                               int self) {
                          double g = t.nodes_[self].grad.data[0] / n;
                          Tensor& gl = t.grad_ref(lid);
                          for (int i = 0; i < n; ++i) {
                            for (int j = 0; j < V; ++j)
                              gl.at(i, j) += g * q.at(i, j);
                            gl.at(i, targets[static_cast<size_t>(i)]) -= g;
                          }
                        })};
}

}  // namespace avemo
