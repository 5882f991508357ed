#include "emscat/autodiff.hpp"

#include <cmath>

namespace emscat::ad {

namespace {

using RowM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowM>;
using CMapM = Eigen::Map<const RowM>;
using MapA = Eigen::Map<Eigen::ArrayXd>;
using CMapA = Eigen::Map<const Eigen::ArrayXd>;

std::shared_ptr<std::vector<double>> alloc(Index n) {
  return std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0);
}

// Reductions over raw buffers run as plain sequential loops: Eigen's SIMD
// redux peels to the packet boundary of the actual address, which makes the
// summation order (and hence the rounding) depend on where the allocator put
// the buffer. Elementwise expressions are safe; reductions are not.
double seq_sum(const double* p, Index n) {
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) acc += p[i];
  return acc;
}

double seq_sumsq(const double* p, Index n, Index stride = 1) {
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) acc += p[i * stride] * p[i * stride];
  return acc;
}

double seq_dot(const double* a, const double* b, Index n) {
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void require(bool cond, const char* msg) {
  if (!cond) throw ValidationError(msg);
}

double act_apply(Act act, double z) {
  switch (act) {
    case Act::Identity: return z;
    case Act::Relu: return z > 0.0 ? z : 0.0;
    case Act::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// derivative expressed through the activation output
double act_deriv_from_out(Act act, double y) {
  switch (act) {
    case Act::Identity: return 1.0;
    case Act::Relu: return y > 0.0 ? 1.0 : 0.0;  // relu'(0) = 0
    case Act::Sigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

}  // namespace

Tensor constant(std::vector<Index> shape, std::vector<double> values) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  require(static_cast<Index>(t.data->size()) == t.size(),
          "constant: data length does not match shape");
  return t;
}

Tensor scalar_const(double v) { return constant({1}, {v}); }

int Tape::push_node(Index size, bool is_leaf, std::function<void()> back) {
  nodes_.push_back({size, is_leaf, {}, std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_buf(int node) {
  auto& g = nodes_[static_cast<size_t>(node)].grad;
  if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].size), 0.0);
  return g;
}

Tensor Tape::leaf(std::vector<Index> shape, std::shared_ptr<std::vector<double>> storage) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(storage);
  require(static_cast<Index>(t.data->size()) == t.size(),
          "leaf: storage length does not match shape");
  const void* key = t.data->data();
  auto it = leaf_by_storage_.find(key);
  if (it != leaf_by_storage_.end()) {
    t.node = it->second;
  } else {
    t.node = push_node(t.size(), true, {});
    leaf_by_storage_.emplace(key, t.node);
  }
  return t;
}

namespace {

// GEMM for row-major buffers. Matrix-matrix products go through Eigen (its
// packed kernels are address-independent); matrix-vector shapes would take
// Eigen's alignment-peeled GEMV path, so they run as sequential dot loops.
void gemm_rm(double* c, const double* a, const double* b, Index m, Index k, Index n,
             bool accumulate) {
  if (n <= 4) {
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < n; ++j) {
        double acc = 0.0;
        for (Index kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
        c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
      }
    return;
  }
  if (m == 1 || k <= 8) {
    // thin inner dimension: stream row-sized axpy updates
    for (Index i = 0; i < m; ++i) {
      double* crow = c + i * n;
      if (!accumulate) std::fill(crow, crow + n, 0.0);
      for (Index kk = 0; kk < k; ++kk) {
        const double av = a[i * k + kk];
        const double* brow = b + kk * n;
        for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
    return;
  }
  CMapM am(a, m, k), bm(b, k, n);
  if (accumulate)
    MapM(c, m, n).noalias() += am * bm;
  else
    MapM(c, m, n).noalias() = am * bm;
}

void gemm_rm_at_b(double* c, const double* a, const double* b, Index m, Index k,
                  Index n, bool accumulate) {
  // c[k x n] (+)= a^T [k x m] * b [m x n]
  if (n <= 4 || k <= 8) {
    if (!accumulate) std::fill(c, c + k * n, 0.0);
    for (Index r = 0; r < m; ++r)
      for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < n; ++j) c[i * n + j] += a[r * k + i] * b[r * n + j];
    return;
  }
  CMapM am(a, m, k), bm(b, m, n);
  if (accumulate)
    MapM(c, k, n).noalias() += am.transpose() * bm;
  else
    MapM(c, k, n).noalias() = am.transpose() * bm;
}

void gemm_rm_a_bt(double* c, const double* a, const double* b, Index m, Index k,
                  Index n, bool accumulate) {
  // c[m x n] (+)= a [m x k] * b^T with b [n x k]
  if (k <= 4 || m == 1 || n == 1) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < n; ++j) {
        double acc = 0.0;
        for (Index kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[j * k + kk];
        c[i * n + j] += acc;
      }
    return;
  }
  CMapM am(a, m, k), bm(b, n, k);
  if (accumulate)
    MapM(c, m, n).noalias() += am * bm.transpose();
  else
    MapM(c, m, n).noalias() = am * bm.transpose();
}

}  // namespace

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require(a.shape.size() <= 2 && b.shape.size() <= 2, "matmul: rank must be <= 2");
  const Index M = a.rows(), K = a.cols(), K2 = b.rows(), N = b.cols();
  require(K == K2, "matmul: inner dimensions do not match");
  auto out = alloc(M * N);
  gemm_rm(out->data(), a.ptr(), b.ptr(), M, K, N, false);
  if (!a.tracked() && !b.tracked()) {
    Tensor t;
    t.shape = {M, N};
    t.data = out;
    return t;
  }
  Tensor t;
  t.shape = {M, N};
  t.data = out;
  const int id = push_node(M * N, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, a, b, M, K, N]() {
    const double* g = nodes_[static_cast<size_t>(id)].grad.data();
    if (a.tracked()) gemm_rm_a_bt(grad_buf(a.node).data(), g, b.ptr(), M, N, K, true);
    if (b.tracked()) gemm_rm_at_b(grad_buf(b.node).data(), a.ptr(), g, M, K, N, true);
  };
  return t;
}

Tensor Tape::linear(const Tensor& x, const Tensor& w, const Tensor& b, Act act) {
  const Index R = x.rows(), In = x.cols(), Out = w.cols();
  require(w.rows() == In, "linear: weight rows must equal input width");
  require(b.size() == Out, "linear: bias length must equal output width");
  auto out = alloc(R * Out);
  {
    gemm_rm(out->data(), x.ptr(), w.ptr(), R, In, Out, false);
    // bias + activation fused into one pass over the batch
    double* p = out->data();
    const double* bp = b.ptr();
    if (act == Act::Identity) {
      for (Index r = 0; r < R; ++r, p += Out)
        for (Index c = 0; c < Out; ++c) p[c] += bp[c];
    } else if (act == Act::Relu) {
      for (Index r = 0; r < R; ++r, p += Out)
        for (Index c = 0; c < Out; ++c) {
          const double z = p[c] + bp[c];
          p[c] = z > 0.0 ? z : 0.0;
        }
    } else {
      for (Index r = 0; r < R; ++r, p += Out)
        for (Index c = 0; c < Out; ++c) p[c] = 1.0 / (1.0 + std::exp(-(p[c] + bp[c])));
    }
  }
  if (!x.tracked() && !w.tracked() && !b.tracked()) {
    Tensor t;
    t.shape = {R, Out};
    t.data = out;
    return t;
  }
  Tensor t;
  t.shape = {R, Out};
  t.data = out;
  const int id = push_node(R * Out, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, w, b, act, R, In, Out, out]() {
    const auto& gvec = nodes_[static_cast<size_t>(id)].grad;
    // dz = g .* act'(y); identity avoids the copy
    std::vector<double> dz_store;
    const double* dz_ptr = gvec.data();
    if (act != Act::Identity) {
      dz_store.resize(static_cast<size_t>(R * Out));
      const double* y = out->data();
      for (Index i = 0; i < R * Out; ++i)
        dz_store[static_cast<size_t>(i)] = gvec[static_cast<size_t>(i)] * act_deriv_from_out(act, y[i]);
      dz_ptr = dz_store.data();
    }
    if (w.tracked())
      gemm_rm_at_b(grad_buf(w.node).data(), x.ptr(), dz_ptr, R, In, Out, true);
    if (b.tracked()) {
      auto& db = grad_buf(b.node);
      for (Index r = 0; r < R; ++r)
        for (Index c = 0; c < Out; ++c) db[static_cast<size_t>(c)] += dz_ptr[r * Out + c];
    }
    if (x.tracked())
      gemm_rm_a_bt(grad_buf(x.node).data(), dz_ptr, w.ptr(), R, Out, In, true);
  };
  return t;
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) throw ValidationError(std::string(op) + ": shape mismatch");
}
}  // namespace

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const Index n = a.size();
  auto out = alloc(n);
  MapA(out->data(), n) = CMapA(a.ptr(), n) + CMapA(b.ptr(), n);
  if (!a.tracked() && !b.tracked()) return Tensor{a.shape, out, -1};
  Tensor t{a.shape, out, -1};
  const int id = push_node(n, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, a, b, n]() {
    CMapA g(nodes_[static_cast<size_t>(id)].grad.data(), n);
    if (a.tracked()) MapA(grad_buf(a.node).data(), n) += g;
    if (b.tracked()) MapA(grad_buf(b.node).data(), n) += g;
  };
  return t;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const Index n = a.size();
  auto out = alloc(n);
  MapA(out->data(), n) = CMapA(a.ptr(), n) - CMapA(b.ptr(), n);
  if (!a.tracked() && !b.tracked()) return Tensor{a.shape, out, -1};
  Tensor t{a.shape, out, -1};
  const int id = push_node(n, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, a, b, n]() {
    CMapA g(nodes_[static_cast<size_t>(id)].grad.data(), n);
    if (a.tracked()) MapA(grad_buf(a.node).data(), n) += g;
    if (b.tracked()) MapA(grad_buf(b.node).data(), n) -= g;
  };
  return t;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const Index n = a.size();
  auto out = alloc(n);
  MapA(out->data(), n) = CMapA(a.ptr(), n) * CMapA(b.ptr(), n);
  if (!a.tracked() && !b.tracked()) return Tensor{a.shape, out, -1};
  Tensor t{a.shape, out, -1};
  const int id = push_node(n, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, a, b, n]() {
    CMapA g(nodes_[static_cast<size_t>(id)].grad.data(), n);
    if (a.tracked()) MapA(grad_buf(a.node).data(), n) += g * CMapA(b.ptr(), n);
    if (b.tracked()) MapA(grad_buf(b.node).data(), n) += g * CMapA(a.ptr(), n);
  };
  return t;
}

Tensor Tape::affine(const Tensor& x, double k, double c) {
  const Index n = x.size();
  auto out = alloc(n);
  MapA(out->data(), n) = k * CMapA(x.ptr(), n) + c;
  if (!x.tracked()) return Tensor{x.shape, out, -1};
  Tensor t{x.shape, out, -1};
  const int id = push_node(n, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, k, n]() {
    CMapA g(nodes_[static_cast<size_t>(id)].grad.data(), n);
    MapA(grad_buf(x.node).data(), n) += k * g;
  };
  return t;
}

Tensor Tape::add_rowvec(const Tensor& x, const Tensor& b) {
  const Index R = x.rows(), C = x.cols();
  require(b.size() == C, "add_rowvec: vector length must equal column count");
  auto out = alloc(R * C);
  {
    CMapM xm(x.ptr(), R, C);
    MapM y(out->data(), R, C);
    y = xm;
    CMapA bv(b.ptr(), C);
    for (Index r = 0; r < R; ++r) y.row(r).array() += bv.transpose();
  }
  if (!x.tracked() && !b.tracked()) return Tensor{x.shape, out, -1};
  Tensor t{x.shape, out, -1};
  const int id = push_node(R * C, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, b, R, C]() {
    const auto& g = nodes_[static_cast<size_t>(id)].grad;
    if (x.tracked())
      MapA(grad_buf(x.node).data(), R * C) += CMapA(g.data(), R * C);
    if (b.tracked()) {
      auto& gb = grad_buf(b.node);
      for (Index r = 0; r < R; ++r)
        for (Index c = 0; c < C; ++c) gb[static_cast<size_t>(c)] += g[static_cast<size_t>(r * C + c)];
    }
  };
  return t;
}

Tensor Tape::colvec_mul(const Tensor& x, const Tensor& v) {
  const Index R = x.rows(), C = x.cols();
  require(v.size() == R, "colvec_mul: vector length must equal row count");
  auto out = alloc(R * C);
  {
    CMapM xm(x.ptr(), R, C);
    CMapA vv(v.ptr(), R);
    MapM y(out->data(), R, C);
    for (Index r = 0; r < R; ++r) y.row(r) = xm.row(r) * vv(r);
  }
  if (!x.tracked() && !v.tracked()) return Tensor{x.shape, out, -1};
  Tensor t{x.shape, out, -1};
  const int id = push_node(R * C, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, v, R, C]() {
    CMapM g(nodes_[static_cast<size_t>(id)].grad.data(), R, C);
    CMapA vv(v.ptr(), R);
    if (x.tracked()) {
      MapM gx(grad_buf(x.node).data(), R, C);
      for (Index r = 0; r < R; ++r) gx.row(r) += g.row(r) * vv(r);
    }
    if (v.tracked()) {
      auto& gv = grad_buf(v.node);
      const double* gp = nodes_[static_cast<size_t>(id)].grad.data();
      const double* xp = x.ptr();
      for (Index r = 0; r < R; ++r)
        gv[static_cast<size_t>(r)] += seq_dot(gp + r * C, xp + r * C, C);
    }
  };
  return t;
}

Tensor Tape::relu(const Tensor& x) {
  const Index n = x.size();
  auto out = alloc(n);
  const double* xp = x.ptr();
  double* op = out->data();
  for (Index i = 0; i < n; ++i) op[i] = xp[i] > 0.0 ? xp[i] : 0.0;
  if (!x.tracked()) return Tensor{x.shape, out, -1};
  Tensor t{x.shape, out, -1};
  const int id = push_node(n, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, out, n]() {
    const auto& g = nodes_[static_cast<size_t>(id)].grad;
    auto& gx = grad_buf(x.node);
    const double* y = out->data();
    for (Index i = 0; i < n; ++i)
      if (y[i] > 0.0) gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
  };
  return t;
}

Tensor Tape::sigmoid(const Tensor& x) {
  const Index n = x.size();
  auto out = alloc(n);
  const double* xp = x.ptr();
  double* op = out->data();
  for (Index i = 0; i < n; ++i) op[i] = 1.0 / (1.0 + std::exp(-xp[i]));
  if (!x.tracked()) return Tensor{x.shape, out, -1};
  Tensor t{x.shape, out, -1};
  const int id = push_node(n, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, out, n]() {
    const auto& g = nodes_[static_cast<size_t>(id)].grad;
    auto& gx = grad_buf(x.node);
    const double* y = out->data();
    for (Index i = 0; i < n; ++i)
      gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * y[i] * (1.0 - y[i]);
  };
  return t;
}

Tensor Tape::square(const Tensor& x) {
  const Index n = x.size();
  auto out = alloc(n);
  const double* xp = x.ptr();
  double* op = out->data();
  for (Index i = 0; i < n; ++i) op[i] = xp[i] * xp[i];
  if (!x.tracked()) return Tensor{x.shape, out, -1};
  Tensor t{x.shape, out, -1};
  const int id = push_node(n, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, n]() {
    CMapA g(nodes_[static_cast<size_t>(id)].grad.data(), n);
    MapA(grad_buf(x.node).data(), n) += 2.0 * g * CMapA(x.ptr(), n);
  };
  return t;
}

Tensor Tape::sqrt(const Tensor& x) {
  const Index n = x.size();
  auto out = alloc(n);
  const double* xp = x.ptr();
  double* op = out->data();
  for (Index i = 0; i < n; ++i) {
    require(xp[i] >= 0.0, "sqrt: negative input");
    op[i] = std::sqrt(xp[i]);
  }
  if (!x.tracked()) return Tensor{x.shape, out, -1};
  Tensor t{x.shape, out, -1};
  const int id = push_node(n, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, out, n]() {
    const auto& g = nodes_[static_cast<size_t>(id)].grad;
    auto& gx = grad_buf(x.node);
    const double* y = out->data();
    for (Index i = 0; i < n; ++i)
      if (y[i] > 0.0) gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * 0.5 / y[i];
  };
  return t;
}

Tensor Tape::hypot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hypot");
  const Index n = a.size();
  auto out = alloc(n);
  const double* ap = a.ptr();
  const double* bp = b.ptr();
  double* op = out->data();
  for (Index i = 0; i < n; ++i) op[i] = std::hypot(ap[i], bp[i]);
  if (!a.tracked() && !b.tracked()) return Tensor{a.shape, out, -1};
  Tensor t{a.shape, out, -1};
  const int id = push_node(n, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, a, b, out, n]() {
    const auto& g = nodes_[static_cast<size_t>(id)].grad;
    const double* y = out->data();
    const double* ap = a.ptr();
    const double* bp = b.ptr();
    if (a.tracked()) {
      auto& ga = grad_buf(a.node);
      for (Index i = 0; i < n; ++i)
        if (y[i] > 0.0) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * ap[i] / y[i];
    }
    if (b.tracked()) {
      auto& gb = grad_buf(b.node);
      for (Index i = 0; i < n; ++i)
        if (y[i] > 0.0) gb[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * bp[i] / y[i];
    }
  };
  return t;
}

Tensor Tape::sum(const Tensor& x) {
  const Index n = x.size();
  auto out = alloc(1);
  (*out)[0] = seq_sum(x.ptr(), n);
  if (!x.tracked()) return Tensor{{1}, out, -1};
  Tensor t{{1}, out, -1};
  const int id = push_node(1, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, n]() {
    const double g = nodes_[static_cast<size_t>(id)].grad[0];
    MapA(grad_buf(x.node).data(), n) += g;
  };
  return t;
}

Tensor Tape::mean(const Tensor& x) {
  const Index n = x.size();
  auto out = alloc(1);
  (*out)[0] = seq_sum(x.ptr(), n) / static_cast<double>(n);
  if (!x.tracked()) return Tensor{{1}, out, -1};
  Tensor t{{1}, out, -1};
  const int id = push_node(1, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, n]() {
    const double g = nodes_[static_cast<size_t>(id)].grad[0] / static_cast<double>(n);
    MapA(grad_buf(x.node).data(), n) += g;
  };
  return t;
}

Tensor Tape::block_mean(const Tensor& x, Index s_blocks) {
  require(s_blocks >= 1, "block_mean: need at least one block");
  const Index total_rows = x.rows(), C = x.cols();
  require(total_rows % s_blocks == 0, "block_mean: rows not divisible by block count");
  const Index R = total_rows / s_blocks;
  auto out = alloc(R * C);
  {
    MapM y(out->data(), R, C);
    y.setZero();
    for (Index s = 0; s < s_blocks; ++s)
      y += CMapM(x.ptr() + s * R * C, R, C);
    y /= static_cast<double>(s_blocks);
  }
  if (!x.tracked()) return Tensor{{R, C}, out, -1};
  Tensor t{{R, C}, out, -1};
  const int id = push_node(R * C, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, s_blocks, R, C]() {
    CMapM g(nodes_[static_cast<size_t>(id)].grad.data(), R, C);
    auto& gx = grad_buf(x.node);
    const double inv = 1.0 / static_cast<double>(s_blocks);
    for (Index s = 0; s < s_blocks; ++s)
      MapM(gx.data() + s * R * C, R, C) += inv * g;
  };
  return t;
}

Tensor Tape::l2norm(const Tensor& x) {
  const Index n = x.size();
  auto out = alloc(1);
  (*out)[0] = std::sqrt(seq_sumsq(x.ptr(), n));
  if (!x.tracked()) return Tensor{{1}, out, -1};
  Tensor t{{1}, out, -1};
  const int id = push_node(1, false, {});
  t.node = id;
  const double norm = (*out)[0];
  nodes_[static_cast<size_t>(id)].back = [this, id, x, n, norm]() {
    if (norm <= 0.0) return;  // subgradient 0 at the origin
    const double g = nodes_[static_cast<size_t>(id)].grad[0] / norm;
    MapA(grad_buf(x.node).data(), n) += g * CMapA(x.ptr(), n);
  };
  return t;
}

Tensor Tape::sum_col_norms(const Tensor& a) {
  const Index R = a.rows(), C = a.cols();
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(C), 0.0);
  double total = 0.0;
  for (Index c = 0; c < C; ++c) {
    (*norms)[static_cast<size_t>(c)] = std::sqrt(seq_sumsq(a.ptr() + c, R, C));
    total += (*norms)[static_cast<size_t>(c)];
  }
  auto out = alloc(1);
  (*out)[0] = total;
  if (!a.tracked()) return Tensor{{1}, out, -1};
  Tensor t{{1}, out, -1};
  const int id = push_node(1, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, a, norms, R, C]() {
    const double g = nodes_[static_cast<size_t>(id)].grad[0];
    CMapM am(a.ptr(), R, C);
    MapM ga(grad_buf(a.node).data(), R, C);
    for (Index c = 0; c < C; ++c) {
      const double nc = (*norms)[static_cast<size_t>(c)];
      if (nc > 0.0) ga.col(c) += (g / nc) * am.col(c);
    }
  };
  return t;
}

Tensor Tape::sum_col_norms(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sum_col_norms");
  const Index R = a.rows(), C = a.cols();
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(C), 0.0);
  double total = 0.0;
  for (Index c = 0; c < C; ++c) {
    (*norms)[static_cast<size_t>(c)] =
        std::sqrt(seq_sumsq(a.ptr() + c, R, C) + seq_sumsq(b.ptr() + c, R, C));
    total += (*norms)[static_cast<size_t>(c)];
  }
  auto out = alloc(1);
  (*out)[0] = total;
  if (!a.tracked() && !b.tracked()) return Tensor{{1}, out, -1};
  Tensor t{{1}, out, -1};
  const int id = push_node(1, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, a, b, norms, R, C]() {
    const double g = nodes_[static_cast<size_t>(id)].grad[0];
    CMapM am(a.ptr(), R, C), bm(b.ptr(), R, C);
    for (Index c = 0; c < C; ++c) {
      const double nc = (*norms)[static_cast<size_t>(c)];
      if (nc <= 0.0) continue;
      if (a.tracked()) MapM(grad_buf(a.node).data(), R, C).col(c) += (g / nc) * am.col(c);
      if (b.tracked()) MapM(grad_buf(b.node).data(), R, C).col(c) += (g / nc) * bm.col(c);
    }
  };
  return t;
}

Tensor Tape::regroup_cols(const Tensor& x, Index m, Index n, Index ch) {
  const Index n_ch = x.cols();
  require(x.rows() == m * n, "regroup_cols: row count must equal m*n");
  require(ch >= 0 && ch < n_ch, "regroup_cols: channel out of range");
  auto out = alloc(n * m);
  {
    const double* xp = x.ptr();
    double* op = out->data();
    for (Index p = 0; p < m; ++p)
      for (Index i = 0; i < n; ++i)
        op[i * m + p] = xp[(p * n + i) * n_ch + ch];
  }
  if (!x.tracked()) return Tensor{{n, m}, out, -1};
  Tensor t{{n, m}, out, -1};
  const int id = push_node(n * m, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, m, n, ch, n_ch]() {
    const auto& g = nodes_[static_cast<size_t>(id)].grad;
    auto& gx = grad_buf(x.node);
    for (Index p = 0; p < m; ++p)
      for (Index i = 0; i < n; ++i)
        gx[static_cast<size_t>((p * n + i) * n_ch + ch)] +=
            g[static_cast<size_t>(i * m + p)];
  };
  return t;
}

Tensor Tape::reshape(const Tensor& x, std::vector<Index> shape) {
  Index prod = 1;
  for (Index d : shape) prod *= d;
  require(prod == x.size(), "reshape: element count must be preserved");
  if (!x.tracked()) return Tensor{std::move(shape), x.data, -1};
  Tensor t{std::move(shape), x.data, -1};
  const Index n = x.size();
  const int id = push_node(n, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, n]() {
    CMapA g(nodes_[static_cast<size_t>(id)].grad.data(), n);
    MapA(grad_buf(x.node).data(), n) += g;
  };
  return t;
}

Tensor Tape::tv2d(const Tensor& x, Index n_side) {
  require(n_side >= 1 && x.size() == n_side * n_side,
          "tv2d: tensor must hold n_side^2 values");
  const double scale = 1.0 / static_cast<double>(n_side * n_side);
  double total = 0.0;
  const double* xp = x.ptr();
  for (Index i = 0; i + 1 < n_side; ++i)
    for (Index j = 0; j < n_side; ++j)
      total += std::abs(xp[(i + 1) * n_side + j] - xp[i * n_side + j]);
  for (Index i = 0; i < n_side; ++i)
    for (Index j = 0; j + 1 < n_side; ++j)
      total += std::abs(xp[i * n_side + j + 1] - xp[i * n_side + j]);
  auto out = alloc(1);
  (*out)[0] = total * scale;
  if (!x.tracked()) return Tensor{{1}, out, -1};
  Tensor t{{1}, out, -1};
  const int id = push_node(1, false, {});
  t.node = id;
  nodes_[static_cast<size_t>(id)].back = [this, id, x, n_side, scale]() {
    const double g = nodes_[static_cast<size_t>(id)].grad[0] * scale;
    const double* xp = x.ptr();
    auto& gx = grad_buf(x.node);
    auto push_pair = [&](Index hi, Index lo) {
      const double d = xp[hi] - xp[lo];
      if (d > 0.0) {
        gx[static_cast<size_t>(hi)] += g;
        gx[static_cast<size_t>(lo)] -= g;
      } else if (d < 0.0) {
        gx[static_cast<size_t>(hi)] -= g;
        gx[static_cast<size_t>(lo)] += g;
      }  // subgradient 0 on flat pairs
    };
    for (Index i = 0; i + 1 < n_side; ++i)
      for (Index j = 0; j < n_side; ++j)
        push_pair((i + 1) * n_side + j, i * n_side + j);
    for (Index i = 0; i < n_side; ++i)
      for (Index j = 0; j + 1 < n_side; ++j)
        push_pair(i * n_side + j + 1, i * n_side + j);
  };
  return t;
}

void Tape::backward(const Tensor& out) {
  if (backward_done_)
    throw ValidationError("Tape::backward: tape already used; call reset() first");
  if (!out.tracked()) throw ValidationError("Tape::backward: output is not tracked");
  if (out.size() != 1) throw ValidationError("Tape::backward: output must be scalar");
  backward_done_ = true;
  grad_buf(out.node)[0] = 1.0;
  for (int k = out.node; k >= 0; --k) {
    auto& node = nodes_[static_cast<size_t>(k)];
    if (node.grad.empty()) continue;  // not on the path to the output
    if (node.back) {
      node.back();
      std::vector<double>().swap(node.grad);  // consumed; release the buffer
    }
  }
}

const std::vector<double>& Tape::grad(const Tensor& t) {
  if (!t.tracked()) throw ValidationError("Tape::grad: tensor is not tracked");
  if (!backward_done_)
    throw ValidationError("Tape::grad: backward has not run");
  auto& node = nodes_[static_cast<size_t>(t.node)];
  if (node.grad.empty()) {
    // an off-path leaf has gradient zero; consumed intermediates are gone
    if (!node.is_leaf)
      throw ValidationError("Tape::grad: gradient unavailable (non-leaf, already consumed)");
    node.grad.assign(static_cast<size_t>(node.size), 0.0);
  }
  return node.grad;
}

const std::vector<double>* Tape::grad_by_storage(const void* data_ptr) const {
  auto it = leaf_by_storage_.find(data_ptr);
  if (it == leaf_by_storage_.end()) return nullptr;
  const auto& g = nodes_[static_cast<size_t>(it->second)].grad;
  return g.empty() ? nullptr : &g;
}

void Tape::reset() {
  nodes_.clear();
  leaf_by_storage_.clear();
  backward_done_ = false;
}

double grad_check(const Program& program,
                  const std::vector<std::vector<Index>>& leaf_shapes,
                  const std::vector<std::vector<double>>& leaf_values, double h) {
  if (leaf_shapes.size() != leaf_values.size())
    throw ValidationError("grad_check: shapes/values count mismatch");

  auto eval = [&](const std::vector<std::vector<double>>& vals,
                  std::vector<std::vector<double>>* grads_out) -> double {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(vals.size());
    for (size_t i = 0; i < vals.size(); ++i) {
      auto storage = std::make_shared<std::vector<double>>(vals[i]);
      leaves.push_back(tape.leaf(leaf_shapes[i], storage));
    }
    Tensor out = program(tape, leaves);
    const double value = out.scalar();
    if (grads_out) {
      tape.backward(out);
      grads_out->clear();
      for (const auto& leaf : leaves) grads_out->push_back(tape.grad(leaf));
    }
    return value;
  };

  std::vector<std::vector<double>> analytic;
  eval(leaf_values, &analytic);

  double max_rel = 0.0;
  std::vector<std::vector<double>> perturbed = leaf_values;
  for (size_t li = 0; li < leaf_values.size(); ++li) {
    for (size_t i = 0; i < leaf_values[li].size(); ++i) {
      const double orig = perturbed[li][i];
      perturbed[li][i] = orig + h;
      const double fp = eval(perturbed, nullptr);
      perturbed[li][i] = orig - h;
      const double fm = eval(perturbed, nullptr);
      perturbed[li][i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[li][i];
      // the 1e-4 floor keeps the comparison above the difference quotient's
      // own roundoff noise (~eps*|f|/h) for near-zero components
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-4});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace emscat::ad
