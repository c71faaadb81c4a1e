#include "langseg/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "langseg/kernels.hpp"

namespace langseg::nn {

std::string shape_str(const Tensor& t) {
  std::string s = "(";
  for (std::size_t i = 0; i < t.shape().size(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.shape()[i]);
  }
  return s + ")";
}

// ---- ParamStore ----------------------------------------------------------

Param& ParamStore::add(std::string name, Tensor init, bool backbone) {
  if (by_name_.count(name)) throw std::invalid_argument("duplicate param: " + name);
  auto p = std::make_unique<Param>();
  p->name = std::move(name);
  p->grad = Tensor::zeros(init.shape());
  p->value = std::move(init);
  p->backbone = backbone;
  Param& ref = *p;
  by_name_[ref.name] = &ref;
  params_.push_back(std::move(p));
  return ref;
}

Param* ParamStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

std::int64_t ParamStore::total_size() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

// ---- Tape internals ------------------------------------------------------

Tape::Ref Tape::push(Tensor value, bool needs_grad,
                     std::function<void(Tape&, Node&)> back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return static_cast<Ref>(nodes_.size() - 1);
}

Tensor& Tape::grad_buf(Ref r) {
  Node& n = nodes_[r];
  if (n.grad.empty() && n.value.size() > 0) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

Tape::Ref Tape::constant(Tensor value) { return push(std::move(value), false); }

Tape::Ref Tape::leaf(Param& p) {
  auto it = leaf_memo_.find(&p);
  if (it != leaf_memo_.end()) return it->second;
  Ref r = push(p.value, true);
  nodes_[r].param = &p;
  leaf_memo_[&p] = r;
  return r;
}

void Tape::backward(Ref loss, double seed) {
  if (nodes_[loss].value.size() != 1)
    throw std::logic_error("backward: loss must be a scalar node");
  grad_buf(loss)[0] = seed;
  for (Ref r = static_cast<Ref>(nodes_.size()) - 1; r >= 0; --r) {
    Node& n = nodes_[r];
    if (!n.needs_grad || n.grad.empty() || !n.back) continue;
    n.back(*this, n);
  }
}

void Tape::accumulate_param_grads(double scale) {
  for (const auto& [p, r] : leaf_memo_) {
    const Tensor& g = nodes_[r].grad;
    if (g.empty()) continue;
    Param* param = nodes_[r].param;
    kernels::axpy(static_cast<std::size_t>(g.size()), scale, g.data(),
                  param->grad.data());
  }
}

// ---- ops ------------------------------------------------------------------

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
}
}  // namespace

Tape::Ref Tape::matmul(Ref a, Ref b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.cols() != B.rows()) throw std::invalid_argument("matmul: inner dims");
  const int m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C({m, n});
  kernels::gemm_nn(m, n, k, A.data(), B.data(), C.data(), false);
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(C), ng, [a, b, m, k, n](Tape& t, Node& self) {
    const double* g = self.grad.data();
    if (t.nodes_[a].needs_grad)
      kernels::gemm_nt(m, k, n, g, t.val(b).data(), t.grad_buf(a).data(), true);
    if (t.nodes_[b].needs_grad)
      kernels::gemm_tn(k, n, m, t.val(a).data(), g, t.grad_buf(b).data(), true);
  });
}

Tape::Ref Tape::matmul_nt(Ref a, Ref b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.cols() != B.cols()) throw std::invalid_argument("matmul_nt: inner dims");
  const int m = A.rows(), k = A.cols(), n = B.rows();
  Tensor C({m, n});
  kernels::gemm_nt(m, n, k, A.data(), B.data(), C.data(), false);
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(C), ng, [a, b, m, k, n](Tape& t, Node& self) {
    const double* g = self.grad.data();
    if (t.nodes_[a].needs_grad)
      kernels::gemm_nn(m, k, n, g, t.val(b).data(), t.grad_buf(a).data(), true);
    if (t.nodes_[b].needs_grad)
      kernels::gemm_tn(n, k, m, g, t.val(a).data(), t.grad_buf(b).data(), true);
  });
}

Tape::Ref Tape::add(Ref a, Ref b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  check_same_shape(A, B, "add");
  Tensor C(A.shape());
  kernels::vadd(A.size(), A.data(), B.data(), C.data());
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(C), ng, [a, b](Tape& t, Node& self) {
    const std::size_t n = self.grad.size();
    if (t.nodes_[a].needs_grad)
      kernels::axpy(n, 1.0, self.grad.data(), t.grad_buf(a).data());
    if (t.nodes_[b].needs_grad)
      kernels::axpy(n, 1.0, self.grad.data(), t.grad_buf(b).data());
  });
}

Tape::Ref Tape::sub(Ref a, Ref b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  check_same_shape(A, B, "sub");
  Tensor C(A.shape());
  for (std::int64_t i = 0; i < A.size(); ++i) C[i] = A[i] - B[i];
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(C), ng, [a, b](Tape& t, Node& self) {
    const std::size_t n = self.grad.size();
    if (t.nodes_[a].needs_grad)
      kernels::axpy(n, 1.0, self.grad.data(), t.grad_buf(a).data());
    if (t.nodes_[b].needs_grad)
      kernels::axpy(n, -1.0, self.grad.data(), t.grad_buf(b).data());
  });
}

Tape::Ref Tape::add_row(Ref a, Ref row) {
  const Tensor& A = val(a);
  const Tensor& R = val(row);
  if (R.rows() != 1 || R.cols() != A.cols())
    throw std::invalid_argument("add_row: row must be (1, cols)");
  const int m = A.rows(), n = A.cols();
  Tensor C({m, n});
  for (int i = 0; i < m; ++i)
    kernels::vadd(n, A.data() + std::int64_t(i) * n, R.data(),
                  C.data() + std::int64_t(i) * n);
  bool ng = nodes_[a].needs_grad || nodes_[row].needs_grad;
  return push(std::move(C), ng, [a, row, m, n](Tape& t, Node& self) {
    if (t.nodes_[a].needs_grad)
      kernels::axpy(std::size_t(m) * n, 1.0, self.grad.data(), t.grad_buf(a).data());
    if (t.nodes_[row].needs_grad) {
      double* dr = t.grad_buf(row).data();
      for (int i = 0; i < m; ++i)
        kernels::axpy(n, 1.0, self.grad.data() + std::int64_t(i) * n, dr);
    }
  });
}

Tape::Ref Tape::scale(Ref a, double s) {
  Tensor C = val(a);
  kernels::scal(C.size(), s, C.data());
  return push(std::move(C), nodes_[a].needs_grad, [a, s](Tape& t, Node& self) {
    kernels::axpy(self.grad.size(), s, self.grad.data(), t.grad_buf(a).data());
  });
}

Tape::Ref Tape::add_scalar(Ref a, double c) {
  Tensor C = val(a);
  for (std::int64_t i = 0; i < C.size(); ++i) C[i] += c;
  return push(std::move(C), nodes_[a].needs_grad, [a](Tape& t, Node& self) {
    kernels::axpy(self.grad.size(), 1.0, self.grad.data(), t.grad_buf(a).data());
  });
}

Tape::Ref Tape::mul(Ref a, Ref b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  check_same_shape(A, B, "mul");
  Tensor C(A.shape());
  kernels::vmul(A.size(), A.data(), B.data(), C.data());
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(C), ng, [a, b](Tape& t, Node& self) {
    const std::int64_t n = self.grad.size();
    if (t.nodes_[a].needs_grad) {
      double* da = t.grad_buf(a).data();
      const double* g = self.grad.data();
      const double* vb = t.val(b).data();
      for (std::int64_t i = 0; i < n; ++i) da[i] += g[i] * vb[i];
    }
    if (t.nodes_[b].needs_grad) {
      double* db = t.grad_buf(b).data();
      const double* g = self.grad.data();
      const double* va = t.val(a).data();
      for (std::int64_t i = 0; i < n; ++i) db[i] += g[i] * va[i];
    }
  });
}

Tape::Ref Tape::div(Ref a, Ref b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  check_same_shape(A, B, "div");
  Tensor C(A.shape());
  for (std::int64_t i = 0; i < A.size(); ++i) C[i] = A[i] / B[i];
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(C), ng, [a, b](Tape& t, Node& self) {
    const std::int64_t n = self.grad.size();
    const double* g = self.grad.data();
    const double* vb = t.val(b).data();
    if (t.nodes_[a].needs_grad) {
      double* da = t.grad_buf(a).data();
      for (std::int64_t i = 0; i < n; ++i) da[i] += g[i] / vb[i];
    }
    if (t.nodes_[b].needs_grad) {
      double* db = t.grad_buf(b).data();
      const double* c = self.value.data();
      for (std::int64_t i = 0; i < n; ++i) db[i] -= g[i] * c[i] / vb[i];
    }
  });
}

Tape::Ref Tape::softmax_rows(Ref scores, const std::vector<std::uint8_t>* col_mask) {
  const Tensor& S = val(scores);
  const int m = S.rows(), n = S.cols();
  std::vector<std::uint8_t> mask;
  if (col_mask) {
    if (static_cast<int>(col_mask->size()) != n)
      throw std::invalid_argument("softmax_rows: mask length != cols");
    mask = *col_mask;
    bool any = false;
    for (auto v : mask) any = any || (v != 0);
    if (!any) throw std::invalid_argument("softmax_rows: all columns masked");
  }
  Tensor Y({m, n});
  for (int i = 0; i < m; ++i) {
    const double* x = S.data() + std::int64_t(i) * n;
    double* y = Y.data() + std::int64_t(i) * n;
    double mx = -1e300;
    for (int j = 0; j < n; ++j)
      if (mask.empty() || mask[j]) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      if (mask.empty() || mask[j]) {
        y[j] = std::exp(x[j] - mx);
        z += y[j];
      } else {
        y[j] = 0.0;
      }
    }
    for (int j = 0; j < n; ++j) y[j] /= z;
  }
  return push(std::move(Y), nodes_[scores].needs_grad,
              [scores, m, n](Tape& t, Node& self) {
    double* dx = t.grad_buf(scores).data();
    const double* g = self.grad.data();
    const double* y = self.value.data();
    for (int i = 0; i < m; ++i) {
      const std::int64_t off = std::int64_t(i) * n;
      const double s = kernels::dot(n, g + off, y + off);
      for (int j = 0; j < n; ++j) dx[off + j] += y[off + j] * (g[off + j] - s);
    }
  });
}

Tape::Ref Tape::layernorm(Ref a, Ref gamma, Ref beta, double eps) {
  const Tensor& X = val(a);
  const Tensor& G = val(gamma);
  const Tensor& B = val(beta);
  const int m = X.rows(), n = X.cols();
  if (G.cols() != n || B.cols() != n || G.rows() != 1 || B.rows() != 1)
    throw std::invalid_argument("layernorm: affine params must be (1, cols)");
  Tensor Y({m, n});
  Tensor xhat({m, n});
  Tensor inv_sigma({m, 1});
  for (int i = 0; i < m; ++i) {
    const double* x = X.data() + std::int64_t(i) * n;
    double mu = kernels::sum(n, x) / n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (int j = 0; j < n; ++j) {
      const double xh = (x[j] - mu) * is;
      xhat.at(i, j) = xh;
      Y.at(i, j) = xh * G[j] + B[j];
    }
  }
  bool ng = nodes_[a].needs_grad || nodes_[gamma].needs_grad || nodes_[beta].needs_grad;
  return push(std::move(Y), ng,
              [a, gamma, beta, m, n, xh = std::move(xhat),
               is = std::move(inv_sigma)](Tape& t, Node& self) {
    const double* g = self.grad.data();
    if (t.nodes_[beta].needs_grad) {
      double* db = t.grad_buf(beta).data();
      for (int i = 0; i < m; ++i)
        kernels::axpy(n, 1.0, g + std::int64_t(i) * n, db);
    }
    if (t.nodes_[gamma].needs_grad) {
      double* dg = t.grad_buf(gamma).data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) dg[j] += g[std::int64_t(i) * n + j] * xh.at(i, j);
    }
    if (t.nodes_[a].needs_grad) {
      double* dx = t.grad_buf(a).data();
      const double* gv = t.val(gamma).data();
      for (int i = 0; i < m; ++i) {
        const std::int64_t off = std::int64_t(i) * n;
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int j = 0; j < n; ++j) {
          const double dxh = g[off + j] * gv[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xh[off + j];
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        for (int j = 0; j < n; ++j) {
          const double dxh = g[off + j] * gv[j];
          dx[off + j] += is[i] * (dxh - mean_dxhat - xh[off + j] * mean_dxhat_xhat);
        }
      }
    }
  });
}

Tape::Ref Tape::gelu(Ref a) {
  static const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
  static const double kInvSqrt2Pi = 0.39894228040143267794;  // 1/sqrt(2*pi)
  const Tensor& X = val(a);
  Tensor Y(X.shape());
  for (std::int64_t i = 0; i < X.size(); ++i)
    Y[i] = 0.5 * X[i] * (1.0 + std::erf(X[i] * kInvSqrt2));
  return push(std::move(Y), nodes_[a].needs_grad, [a](Tape& t, Node& self) {
    const Tensor& X = t.val(a);
    double* dx = t.grad_buf(a).data();
    const double* g = self.grad.data();
    for (std::int64_t i = 0; i < X.size(); ++i) {
      const double x = X[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      dx[i] += g[i] * (cdf + x * pdf);
    }
  });
}

Tape::Ref Tape::sigmoid(Ref a) {
  const Tensor& X = val(a);
  Tensor Y(X.shape());
  for (std::int64_t i = 0; i < X.size(); ++i) {
    const double x = X[i];
    Y[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
  }
  return push(std::move(Y), nodes_[a].needs_grad, [a](Tape& t, Node& self) {
    double* dx = t.grad_buf(a).data();
    const double* g = self.grad.data();
    const double* y = self.value.data();
    for (std::int64_t i = 0; i < self.value.size(); ++i)
      dx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Tape::Ref Tape::log(Ref a) {
  const Tensor& X = val(a);
  Tensor Y(X.shape());
  for (std::int64_t i = 0; i < X.size(); ++i) Y[i] = std::log(X[i]);
  return push(std::move(Y), nodes_[a].needs_grad, [a](Tape& t, Node& self) {
    double* dx = t.grad_buf(a).data();
    const double* g = self.grad.data();
    const double* x = t.val(a).data();
    for (std::int64_t i = 0; i < self.value.size(); ++i) dx[i] += g[i] / x[i];
  });
}

Tape::Ref Tape::clamp(Ref a, double lo, double hi) {
  const Tensor& X = val(a);
  Tensor Y(X.shape());
  for (std::int64_t i = 0; i < X.size(); ++i) Y[i] = std::min(std::max(X[i], lo), hi);
  return push(std::move(Y), nodes_[a].needs_grad, [a, lo, hi](Tape& t, Node& self) {
    double* dx = t.grad_buf(a).data();
    const double* g = self.grad.data();
    const double* x = t.val(a).data();
    for (std::int64_t i = 0; i < self.value.size(); ++i)
      if (x[i] > lo && x[i] < hi) dx[i] += g[i];
  });
}

Tape::Ref Tape::sum_all(Ref a) {
  const Tensor& X = val(a);
  Tensor Y = Tensor::scalar(kernels::sum(X.size(), X.data()));
  return push(std::move(Y), nodes_[a].needs_grad, [a](Tape& t, Node& self) {
    const double g = self.grad[0];
    Tensor& da = t.grad_buf(a);
    for (std::int64_t i = 0; i < da.size(); ++i) da[i] += g;
  });
}

Tape::Ref Tape::mean_all(Ref a) {
  const Tensor& X = val(a);
  const double inv = 1.0 / static_cast<double>(X.size());
  Tensor Y = Tensor::scalar(kernels::sum(X.size(), X.data()) * inv);
  return push(std::move(Y), nodes_[a].needs_grad, [a, inv](Tape& t, Node& self) {
    const double g = self.grad[0] * inv;
    Tensor& da = t.grad_buf(a);
    for (std::int64_t i = 0; i < da.size(); ++i) da[i] += g;
  });
}

Tape::Ref Tape::reshape(Ref a, std::vector<int> shape) {
  const Tensor& X = val(a);
  if (Tensor::count(shape) != X.size())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor Y(std::move(shape));
  std::memcpy(Y.data(), X.data(), X.size() * sizeof(double));
  return push(std::move(Y), nodes_[a].needs_grad, [a](Tape& t, Node& self) {
    kernels::axpy(self.grad.size(), 1.0, self.grad.data(), t.grad_buf(a).data());
  });
}

Tape::Ref Tape::concat_rows(const std::vector<Ref>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  const int n = val(parts[0]).cols();
  int m = 0;
  bool ng = false;
  for (Ref p : parts) {
    if (val(p).cols() != n) throw std::invalid_argument("concat_rows: col mismatch");
    m += val(p).rows();
    ng = ng || nodes_[p].needs_grad;
  }
  Tensor Y({m, n});
  int r = 0;
  for (Ref p : parts) {
    const Tensor& X = val(p);
    std::memcpy(Y.data() + std::int64_t(r) * n, X.data(), X.size() * sizeof(double));
    r += X.rows();
  }
  return push(std::move(Y), ng, [parts, n](Tape& t, Node& self) {
    int r = 0;
    for (Ref p : parts) {
      const int pr = t.val(p).rows();
      if (t.nodes_[p].needs_grad)
        kernels::axpy(std::size_t(pr) * n, 1.0,
                      self.grad.data() + std::int64_t(r) * n, t.grad_buf(p).data());
      r += pr;
    }
  });
}

Tape::Ref Tape::slice_rows(Ref a, int r0, int r1) {
  const Tensor& X = val(a);
  const int n = X.cols();
  if (r0 < 0 || r1 > X.rows() || r0 >= r1)
    throw std::invalid_argument("slice_rows: bad range");
  Tensor Y({r1 - r0, n});
  std::memcpy(Y.data(), X.data() + std::int64_t(r0) * n, Y.size() * sizeof(double));
  return push(std::move(Y), nodes_[a].needs_grad, [a, r0, n](Tape& t, Node& self) {
    kernels::axpy(self.grad.size(), 1.0, self.grad.data(),
                  t.grad_buf(a).data() + std::int64_t(r0) * n);
  });
}

Tape::Ref Tape::concat_cols(const std::vector<Ref>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const int m = val(parts[0]).rows();
  int n = 0;
  bool ng = false;
  for (Ref p : parts) {
    if (val(p).rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
    n += val(p).cols();
    ng = ng || nodes_[p].needs_grad;
  }
  Tensor Y({m, n});
  int c = 0;
  for (Ref p : parts) {
    const Tensor& X = val(p);
    const int pc = X.cols();
    for (int i = 0; i < m; ++i)
      std::memcpy(Y.data() + std::int64_t(i) * n + c,
                  X.data() + std::int64_t(i) * pc, pc * sizeof(double));
    c += pc;
  }
  return push(std::move(Y), ng, [parts, m, n](Tape& t, Node& self) {
    int c = 0;
    for (Ref p : parts) {
      const int pc = t.val(p).cols();
      if (t.nodes_[p].needs_grad) {
        double* dp = t.grad_buf(p).data();
        for (int i = 0; i < m; ++i)
          kernels::axpy(pc, 1.0, self.grad.data() + std::int64_t(i) * n + c,
                        dp + std::int64_t(i) * pc);
      }
      c += pc;
    }
  });
}

Tape::Ref Tape::slice_cols(Ref a, int c0, int c1) {
  const Tensor& X = val(a);
  const int m = X.rows(), n = X.cols();
  if (c0 < 0 || c1 > n || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  const int w = c1 - c0;
  Tensor Y({m, w});
  for (int i = 0; i < m; ++i)
    std::memcpy(Y.data() + std::int64_t(i) * w, X.data() + std::int64_t(i) * n + c0,
                w * sizeof(double));
  return push(std::move(Y), nodes_[a].needs_grad, [a, c0, w, n, m](Tape& t, Node& self) {
    double* da = t.grad_buf(a).data();
    for (int i = 0; i < m; ++i)
      kernels::axpy(w, 1.0, self.grad.data() + std::int64_t(i) * w,
                    da + std::int64_t(i) * n + c0);
  });
}

Tape::Ref Tape::embed_rows(Ref table, std::vector<int> ids) {
  const Tensor& T = val(table);
  const int n = T.cols();
  Tensor Y({static_cast<int>(ids.size()), n});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= T.rows())
      throw std::invalid_argument("embed_rows: id out of range");
    std::memcpy(Y.data() + std::int64_t(i) * n, T.data() + std::int64_t(ids[i]) * n,
                n * sizeof(double));
  }
  return push(std::move(Y), nodes_[table].needs_grad,
              [table, ids = std::move(ids), n](Tape& t, Node& self) {
    double* dt = t.grad_buf(table).data();
    for (std::size_t i = 0; i < ids.size(); ++i)
      kernels::axpy(n, 1.0, self.grad.data() + std::int64_t(i) * n,
                    dt + std::int64_t(ids[i]) * n);
  });
}

Tape::Ref Tape::im2col3x3(Ref a, int h, int w) {
  const Tensor& X = val(a);
  if (X.rows() != h * w) throw std::invalid_argument("im2col3x3: grid mismatch");
  const int c = X.cols();
  Tensor Y({h * w, 9 * c});
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      double* out = Y.data() + (std::int64_t(r) * w + col) * 9 * c;
      int k = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc, ++k) {
          const int sr = r + dr, sc = col + dc;
          if (sr >= 0 && sr < h && sc >= 0 && sc < w)
            std::memcpy(out + std::int64_t(k) * c,
                        X.data() + (std::int64_t(sr) * w + sc) * c, c * sizeof(double));
        }
      }
    }
  }
  return push(std::move(Y), nodes_[a].needs_grad, [a, h, w, c](Tape& t, Node& self) {
    double* dx = t.grad_buf(a).data();
    const double* g = self.grad.data();
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        const double* gout = g + (std::int64_t(r) * w + col) * 9 * c;
        int k = 0;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc, ++k) {
            const int sr = r + dr, sc = col + dc;
            if (sr >= 0 && sr < h && sc >= 0 && sc < w)
              kernels::axpy(c, 1.0, gout + std::int64_t(k) * c,
                            dx + (std::int64_t(sr) * w + sc) * c);
          }
        }
      }
    }
  });
}

Tape::Ref Tape::space_to_depth(Ref a, int h, int w, int p) {
  const Tensor& X = val(a);
  if (X.rows() != h * w || h % p != 0 || w % p != 0)
    throw std::invalid_argument("space_to_depth: grid not divisible");
  const int c = X.cols();
  const int oh = h / p, ow = w / p;
  Tensor Y({oh * ow, p * p * c});
  for (int r = 0; r < oh; ++r)
    for (int col = 0; col < ow; ++col) {
      double* out = Y.data() + (std::int64_t(r) * ow + col) * p * p * c;
      for (int pr = 0; pr < p; ++pr)
        for (int pc = 0; pc < p; ++pc)
          std::memcpy(out + (std::int64_t(pr) * p + pc) * c,
                      X.data() + (std::int64_t(r * p + pr) * w + col * p + pc) * c,
                      c * sizeof(double));
    }
  return push(std::move(Y), nodes_[a].needs_grad, [a, h, w, p, c](Tape& t, Node& self) {
    double* dx = t.grad_buf(a).data();
    const double* g = self.grad.data();
    const int oh = h / p, ow = w / p;
    for (int r = 0; r < oh; ++r)
      for (int col = 0; col < ow; ++col) {
        const double* gout = g + (std::int64_t(r) * ow + col) * p * p * c;
        for (int pr = 0; pr < p; ++pr)
          for (int pc = 0; pc < p; ++pc)
            kernels::axpy(c, 1.0, gout + (std::int64_t(pr) * p + pc) * c,
                          dx + (std::int64_t(r * p + pr) * w + col * p + pc) * c);
      }
  });
}

Tape::Ref Tape::upsample_nearest2x(Ref a, int h, int w) {
  const Tensor& X = val(a);
  if (X.rows() != h * w) throw std::invalid_argument("upsample_nearest2x: grid mismatch");
  const int c = X.cols();
  Tensor Y({4 * h * w, c});
  for (int r = 0; r < 2 * h; ++r)
    for (int col = 0; col < 2 * w; ++col)
      std::memcpy(Y.data() + (std::int64_t(r) * 2 * w + col) * c,
                  X.data() + (std::int64_t(r / 2) * w + col / 2) * c, c * sizeof(double));
  return push(std::move(Y), nodes_[a].needs_grad, [a, h, w, c](Tape& t, Node& self) {
    double* dx = t.grad_buf(a).data();
    const double* g = self.grad.data();
    for (int r = 0; r < 2 * h; ++r)
      for (int col = 0; col < 2 * w; ++col)
        kernels::axpy(c, 1.0, g + (std::int64_t(r) * 2 * w + col) * c,
                      dx + (std::int64_t(r / 2) * w + col / 2) * c);
  });
}

namespace {
// Half-pixel-center source coordinate for bilinear resize.
inline void bilinear_coord(int out_i, int in_n, int out_n, int& i0, int& i1, double& f) {
  double s = (out_i + 0.5) * static_cast<double>(in_n) / out_n - 0.5;
  if (s < 0) s = 0;
  if (s > in_n - 1) s = in_n - 1;
  i0 = static_cast<int>(std::floor(s));
  i1 = std::min(i0 + 1, in_n - 1);
  f = s - i0;
}
}  // namespace

Tape::Ref Tape::upsample_bilinear(Ref a, int h, int w, int oh, int ow) {
  const Tensor& X = val(a);
  if (X.rows() != h * w) throw std::invalid_argument("upsample_bilinear: grid mismatch");
  const int c = X.cols();
  Tensor Y({oh * ow, c});
  for (int r = 0; r < oh; ++r) {
    int r0, r1;
    double fr;
    bilinear_coord(r, h, oh, r0, r1, fr);
    for (int col = 0; col < ow; ++col) {
      int c0, c1;
      double fc;
      bilinear_coord(col, w, ow, c0, c1, fc);
      const double w00 = (1 - fr) * (1 - fc), w01 = (1 - fr) * fc;
      const double w10 = fr * (1 - fc), w11 = fr * fc;
      double* out = Y.data() + (std::int64_t(r) * ow + col) * c;
      const double* x00 = X.data() + (std::int64_t(r0) * w + c0) * c;
      const double* x01 = X.data() + (std::int64_t(r0) * w + c1) * c;
      const double* x10 = X.data() + (std::int64_t(r1) * w + c0) * c;
      const double* x11 = X.data() + (std::int64_t(r1) * w + c1) * c;
      for (int k = 0; k < c; ++k)
        out[k] = w00 * x00[k] + w01 * x01[k] + w10 * x10[k] + w11 * x11[k];
    }
  }
  return push(std::move(Y), nodes_[a].needs_grad,
              [a, h, w, oh, ow, c](Tape& t, Node& self) {
    double* dx = t.grad_buf(a).data();
    const double* g = self.grad.data();
    for (int r = 0; r < oh; ++r) {
      int r0, r1;
      double fr;
      bilinear_coord(r, h, oh, r0, r1, fr);
      for (int col = 0; col < ow; ++col) {
        int c0, c1;
        double fc;
        bilinear_coord(col, w, ow, c0, c1, fc);
        const double w00 = (1 - fr) * (1 - fc), w01 = (1 - fr) * fc;
        const double w10 = fr * (1 - fc), w11 = fr * fc;
        const double* gout = g + (std::int64_t(r) * ow + col) * c;
        for (int k = 0; k < c; ++k) {
          dx[(std::int64_t(r0) * w + c0) * c + k] += w00 * gout[k];
          dx[(std::int64_t(r0) * w + c1) * c + k] += w01 * gout[k];
          dx[(std::int64_t(r1) * w + c0) * c + k] += w10 * gout[k];
          dx[(std::int64_t(r1) * w + c1) * c + k] += w11 * gout[k];
        }
      }
    }
  });
}

// ---- helpers ---------------------------------------------------------------

Tensor sinusoidal_pos_2d(int h, int w, int channels) {
  if (channels % 4 != 0)
    throw std::invalid_argument("sinusoidal_pos_2d: channels must be divisible by 4");
  const int half = channels / 2;
  const int pairs = half / 2;
  Tensor pos({h * w, channels});
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double* out = pos.data() + (std::int64_t(r) * w + c) * channels;
      for (int i = 0; i < pairs; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / half);
        out[2 * i] = std::sin(r * freq);
        out[2 * i + 1] = std::cos(r * freq);
        out[half + 2 * i] = std::sin(c * freq);
        out[half + 2 * i + 1] = std::cos(c * freq);
      }
    }
  }
  return pos;
}

double fd_check_param(Param& p, const Tensor& analytic,
                      const std::function<double()>& loss_fn,
                      int max_coords, std::mt19937_64& rng, double h) {
  std::vector<std::int64_t> coords;
  const std::int64_t n = p.value.size();
  if (n <= max_coords) {
    for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
  } else {
    std::set<std::int64_t> seen;
    std::uniform_int_distribution<std::int64_t> d(0, n - 1);
    while (static_cast<int>(seen.size()) < max_coords) seen.insert(d(rng));
    coords.assign(seen.begin(), seen.end());
  }
  double worst = 0.0;
  for (std::int64_t i : coords) {
    const double saved = p.value[i];
    const double step = h * std::max(1.0, std::abs(saved));
    p.value[i] = saved + step;
    const double lp = loss_fn();
    p.value[i] = saved - step;
    const double lm = loss_fn();
    p.value[i] = saved;
    const double numeric = (lp - lm) / (2.0 * step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace langseg::nn
