#include "patchdef/autodiff.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_set>

namespace patchdef::nn {

namespace {

Var make_node(Tensor value, std::vector<NodePtr> inputs, const char* op,
              std::function<void(Node&)> backward_fn) {
  Var out(std::move(value));
  Node& n = *out.node();
  n.op = op;
  bool rg = false;
  for (const auto& in : inputs)
    if (in && in->requires_grad) rg = true;
  n.requires_grad = rg;
  if (rg) {
    n.inputs = std::move(inputs);
    n.backward_fn = std::move(backward_fn);
  }
  return out;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                Tensor::shape_str(a.shape()) + " vs " +
                                Tensor::shape_str(b.shape()));
}

// Left-pad a shape with 1s to the given rank.
std::vector<int> pad_shape(const std::vector<int>& s, int rank) {
  std::vector<int> out(static_cast<size_t>(rank), 1);
  std::copy(s.begin(), s.end(), out.begin() + (rank - static_cast<int>(s.size())));
  return out;
}

struct BcastPlan {
  std::vector<int> out_shape;   // padded rank
  std::vector<int> out_orig;    // original (unpadded) output shape
  std::vector<int64_t> sa, sb;  // strides into a and b (0 where broadcast)
  bool same = false;
};

BcastPlan broadcast_plan(const std::vector<int>& a, const std::vector<int>& b, const char* op) {
  BcastPlan p;
  if (a == b) {
    p.same = true;
    p.out_shape = a;
    p.out_orig = a;
    return p;
  }
  int rank = std::max(a.size(), b.size());
  auto pa = pad_shape(a, rank), pb = pad_shape(b, rank);
  p.out_shape.resize(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    if (pa[i] == pb[i])
      p.out_shape[i] = pa[i];
    else if (pa[i] == 1)
      p.out_shape[i] = pb[i];
    else if (pb[i] == 1)
      p.out_shape[i] = pa[i];
    else
      throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                  Tensor::shape_str(a) + " vs " + Tensor::shape_str(b));
  }
  auto strides = [rank](const std::vector<int>& s) {
    std::vector<int64_t> st(static_cast<size_t>(rank));
    int64_t acc = 1;
    for (int i = rank - 1; i >= 0; --i) {
      st[i] = (s[i] == 1) ? 0 : acc;  // stride 0 on broadcast dims
      acc *= s[i];
    }
    return st;
  };
  p.sa = strides(pa);
  p.sb = strides(pb);
  p.out_orig = (a.size() >= b.size()) ? a : b;
  if (pad_shape(p.out_orig, rank) != p.out_shape) p.out_orig = p.out_shape;
  return p;
}

// Iterate the broadcast output space (rank <= 4 in practice, generic fallback).
template <typename F>
void bcast_foreach(const BcastPlan& p, F&& f) {
  const auto& os = p.out_shape;
  int rank = static_cast<int>(os.size());
  std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
  int64_t total = 1;
  for (int d : os) total *= d;
  int64_t oi = 0;
  while (oi < total) {
    int64_t ia = 0, ib = 0;
    for (int i = 0; i < rank; ++i) {
      ia += idx[static_cast<size_t>(i)] * p.sa[static_cast<size_t>(i)];
      ib += idx[static_cast<size_t>(i)] * p.sb[static_cast<size_t>(i)];
    }
    f(oi, ia, ib);
    ++oi;
    for (int i = rank - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < os[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
}

using BinFwd = float (*)(float, float);
using BinBwdA = float (*)(float, float, float);  // (ga contribution)(a, b, gout)
using BinBwdB = float (*)(float, float, float);

Var binary_op(const Var& a, const Var& b, const char* op, BinFwd f, BinBwdA dfa, BinBwdB dfb) {
  BcastPlan plan = broadcast_plan(a.shape(), b.shape(), op);
  Tensor out(plan.out_orig);
  const float* pa = a.value().data();
  const float* pb = b.value().data();
  float* po = out.data();
  if (plan.same) {
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  } else {
    bcast_foreach(plan, [&](int64_t oi, int64_t ia, int64_t ib) { po[oi] = f(pa[ia], pb[ib]); });
  }
  NodePtr na = a.node(), nb = b.node();
  return make_node(std::move(out), {na, nb}, op, [na, nb, plan, dfa, dfb](Node& n) {
    const float* go = n.grad.data();
    const float* pa2 = na->value.data();
    const float* pb2 = nb->value.data();
    float* ga = na->requires_grad ? na->ensure_grad().data() : nullptr;
    float* gb = nb->requires_grad ? nb->ensure_grad().data() : nullptr;
    if (plan.same) {
      int64_t cnt = n.value.numel();
      for (int64_t i = 0; i < cnt; ++i) {
        if (ga) ga[i] += dfa(pa2[i], pb2[i], go[i]);
        if (gb) gb[i] += dfb(pa2[i], pb2[i], go[i]);
      }
    } else {
      bcast_foreach(plan, [&](int64_t oi, int64_t ia, int64_t ib) {
        if (ga) ga[ia] += dfa(pa2[ia], pb2[ib], go[oi]);
        if (gb) gb[ib] += dfb(pa2[ia], pb2[ib], go[oi]);
      });
    }
  });
}

using UnFwd = float (*)(float);
using UnBwd = float (*)(float, float, float);  // (x, y, gout) -> gx contribution

Var unary_op(const Var& x, const char* op, UnFwd f, UnBwd df) {
  Tensor out(x.shape());
  const float* px = x.value().data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(px[i]);
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, op, [nx, df](Node& nd) {
    const float* go = nd.grad.data();
    const float* px2 = nx->value.data();
    const float* py = nd.value.data();
    float* gx = nx->ensure_grad().data();
    int64_t cnt = nd.value.numel();
    for (int64_t i = 0; i < cnt; ++i) gx[i] += df(px2[i], py[i], go[i]);
  });
}

// im2col for one sample into a strided batch buffer: row r of the patch
// matrix starts at col + r*row_stride + col_offset and holds Ho*Wo values.
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            float* col, int64_t row_stride, int64_t col_offset) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* dst =
            col + ((static_cast<int64_t>(c) * k + ki) * k + kj) * row_stride + col_offset;
        for (int oi = 0; oi < Ho; ++oi) {
          const int ii = oi * stride - pad + ki;
          float* drow = dst + static_cast<int64_t>(oi) * Wo;
          if (ii < 0 || ii >= H) {
            std::memset(drow, 0, sizeof(float) * Wo);
            continue;
          }
          const float* src_row = x + (static_cast<int64_t>(c) * H + ii) * W;
          if (stride == 1) {
            // contiguous span [lo, hi) maps straight onto the source row
            const int shift = kj - pad;
            const int lo = std::max(0, -shift);
            const int hi = std::min(Wo, W - shift);
            if (lo > 0) std::memset(drow, 0, sizeof(float) * lo);
            if (hi > lo) std::memcpy(drow + lo, src_row + lo + shift, sizeof(float) * (hi - lo));
            if (hi < Wo) std::memset(drow + hi, 0, sizeof(float) * (Wo - hi));
          } else {
            for (int oj = 0; oj < Wo; ++oj) {
              const int jj = oj * stride - pad + kj;
              drow[oj] = (jj >= 0 && jj < W) ? src_row[jj] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im(const float* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            float* x, int64_t row_stride, int64_t col_offset) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* src =
            col + ((static_cast<int64_t>(c) * k + ki) * k + kj) * row_stride + col_offset;
        for (int oi = 0; oi < Ho; ++oi) {
          const int ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= H) continue;
          float* dst_row = x + (static_cast<int64_t>(c) * H + ii) * W;
          const float* srow = src + static_cast<int64_t>(oi) * Wo;
          if (stride == 1) {
            const int shift = kj - pad;
            const int lo = std::max(0, -shift);
            const int hi = std::min(Wo, W - shift);
            for (int oj = lo; oj < hi; ++oj) dst_row[oj + shift] += srow[oj];
          } else {
            for (int oj = 0; oj < Wo; ++oj) {
              const int jj = oj * stride - pad + kj;
              if (jj >= 0 && jj < W) dst_row[jj] += srow[oj];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var constant(Tensor t) { return Var(std::move(t), false); }

Var add(const Var& a, const Var& b) {
  return binary_op(
      a, b, "add", [](float x, float y) { return x + y; },
      [](float, float, float g) { return g; }, [](float, float, float g) { return g; });
}

Var sub(const Var& a, const Var& b) {
  return binary_op(
      a, b, "sub", [](float x, float y) { return x - y; },
      [](float, float, float g) { return g; }, [](float, float, float g) { return -g; });
}

Var mul(const Var& a, const Var& b) {
  return binary_op(
      a, b, "mul", [](float x, float y) { return x * y; },
      [](float, float y, float g) { return g * y; },
      [](float x, float, float g) { return g * x; });
}

Var div(const Var& a, const Var& b) {
  return binary_op(
      a, b, "div", [](float x, float y) { return x / y; },
      [](float, float y, float g) { return g / y; },
      [](float x, float y, float g) { return -g * x / (y * y); });
}

Var add_scalar(const Var& a, float s) {
  Tensor out(a.shape());
  const float* pa = a.value().data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + s;
  NodePtr na = a.node();
  return make_node(std::move(out), {na}, "add_scalar", [na](Node& nd) {
    float* ga = na->ensure_grad().data();
    const float* go = nd.grad.data();
    int64_t cnt = nd.value.numel();
    for (int64_t i = 0; i < cnt; ++i) ga[i] += go[i];
  });
}

Var mul_scalar(const Var& a, float s) {
  Tensor out(a.shape());
  const float* pa = a.value().data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  NodePtr na = a.node();
  return make_node(std::move(out), {na}, "mul_scalar", [na, s](Node& nd) {
    float* ga = na->ensure_grad().data();
    const float* go = nd.grad.data();
    int64_t cnt = nd.value.numel();
    for (int64_t i = 0; i < cnt; ++i) ga[i] += go[i] * s;
  });
}

Var relu(const Var& x) {
  return unary_op(
      x, "relu", [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float, float g) { return v > 0.0f ? g : 0.0f; });
}

Var elu(const Var& x) {
  return unary_op(
      x, "elu", [](float v) { return v > 0.0f ? v : std::expm1(v); },
      [](float v, float y, float g) { return v > 0.0f ? g : g * (y + 1.0f); });
}

Var leaky_relu(const Var& x, float slope) {
  Tensor out(x.shape());
  const float* px = x.value().data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0f ? px[i] : slope * px[i];
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "leaky_relu", [nx, slope](Node& nd) {
    const float* go = nd.grad.data();
    const float* px2 = nx->value.data();
    float* gx = nx->ensure_grad().data();
    int64_t cnt = nd.value.numel();
    for (int64_t i = 0; i < cnt; ++i) gx[i] += px2[i] > 0.0f ? go[i] : slope * go[i];
  });
}

Var sigmoid(const Var& x) {
  return unary_op(
      x, "sigmoid", [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
      [](float, float y, float g) { return g * y * (1.0f - y); });
}

Var tanh_act(const Var& x) {
  return unary_op(
      x, "tanh", [](float v) { return std::tanh(v); },
      [](float, float y, float g) { return g * (1.0f - y * y); });
}

Var softplus(const Var& x) {
  return unary_op(
      x, "softplus",
      [](float v) { return v > 20.0f ? v : std::log1p(std::exp(std::min(v, 20.0f))); },
      [](float v, float, float g) { return g / (1.0f + std::exp(-v)); });
}

Var log_op(const Var& x) {
  return unary_op(
      x, "log", [](float v) { return std::log(v); },
      [](float v, float, float g) { return g / v; });
}

Var sqrt_op(const Var& x) {
  return unary_op(
      x, "sqrt", [](float v) { return std::sqrt(v); },
      [](float, float y, float g) { return y > 0.0f ? g / (2.0f * y) : 0.0f; });
}

Var abs_op(const Var& x) {
  return unary_op(
      x, "abs", [](float v) { return std::fabs(v); },
      [](float v, float, float g) { return v > 0.0f ? g : (v < 0.0f ? -g : 0.0f); });
}

Var clamp_min(const Var& x, float lo) {
  Tensor out(x.shape());
  const float* px = x.value().data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = std::max(px[i], lo);
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "clamp_min", [nx, lo](Node& nd) {
    const float* go = nd.grad.data();
    const float* px2 = nx->value.data();
    float* gx = nx->ensure_grad().data();
    int64_t cnt = nd.value.numel();
    for (int64_t i = 0; i < cnt; ++i)
      if (px2[i] > lo) gx[i] += go[i];
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4)
    throw std::invalid_argument("conv2d: expects rank-4 input and weight");
  if (xs[1] != ws[1])
    throw std::invalid_argument("conv2d: channel mismatch input " + Tensor::shape_str(xs) +
                                " weight " + Tensor::shape_str(ws));
  if (ws[2] != ws[3]) throw std::invalid_argument("conv2d: only square kernels supported");
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int M = ws[0], k = ws[2];
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: output would be empty");
  const int K = C * k * k;
  const int64_t plane = static_cast<int64_t>(Ho) * Wo;
  const int64_t bcols = static_cast<int64_t>(N) * plane;

  // one batched patch matrix (K x N*plane); kept alive for the backward pass
  auto col = std::make_shared<std::vector<float>>(static_cast<size_t>(K) * bcols);
  for (int n = 0; n < N; ++n)
    im2col(x.value().data() + static_cast<int64_t>(n) * C * H * W, C, H, W, k, stride, pad, Ho,
           Wo, col->data(), bcols, static_cast<int64_t>(n) * plane);

  std::vector<float> out_flat(static_cast<size_t>(M) * bcols);
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, M, static_cast<int>(bcols), K, 1.0f,
              w.value().data(), K, col->data(), static_cast<int>(bcols), 0.0f, out_flat.data(),
              static_cast<int>(bcols));

  Tensor out({N, M, Ho, Wo});
  const bool has_bias = b.defined();
  const float* pb = has_bias ? b.value().data() : nullptr;
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n) {
      const float* src = out_flat.data() + m * bcols + static_cast<int64_t>(n) * plane;
      float* dst = out.data() + (static_cast<int64_t>(n) * M + m) * plane;
      if (has_bias) {
        const float bias = pb[m];
        for (int64_t i = 0; i < plane; ++i) dst[i] = src[i] + bias;
      } else {
        std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(plane));
      }
    }

  NodePtr nx = x.node(), nw = w.node(), nb = has_bias ? b.node() : nullptr;
  const bool keep_col = (nw->requires_grad);
  if (!keep_col && !nx->requires_grad) col.reset();  // no backward, release early
  return make_node(
      std::move(out), {nx, nw, nb}, "conv2d",
      [nx, nw, nb, col, stride, pad, N, C, H, W, M, k, Ho, Wo, K, plane, bcols](Node& nd) mutable {
        const float* go = nd.grad.data();
        // flatten the incoming gradient to (M x N*plane)
        std::vector<float> go_flat(static_cast<size_t>(M) * bcols);
#pragma omp parallel for schedule(static)
        for (int m = 0; m < M; ++m)
          for (int n = 0; n < N; ++n)
            std::memcpy(go_flat.data() + m * bcols + static_cast<int64_t>(n) * plane,
                        go + (static_cast<int64_t>(n) * M + m) * plane,
                        sizeof(float) * static_cast<size_t>(plane));
        if (nw->requires_grad && col) {
          // gw += go_flat (M x bcols) * col^T (bcols x K)
          cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, M, K, static_cast<int>(bcols),
                      1.0f, go_flat.data(), static_cast<int>(bcols), col->data(),
                      static_cast<int>(bcols), 1.0f, nw->ensure_grad().data(), K);
        }
        if (nx->requires_grad) {
          std::vector<float> dcol(static_cast<size_t>(K) * bcols);
          cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, static_cast<int>(bcols), M,
                      1.0f, nw->value.data(), K, go_flat.data(), static_cast<int>(bcols), 0.0f,
                      dcol.data(), static_cast<int>(bcols));
          float* gx = nx->ensure_grad().data();
          for (int n = 0; n < N; ++n)
            col2im(dcol.data(), C, H, W, k, stride, pad, Ho, Wo,
                   gx + static_cast<int64_t>(n) * C * H * W, bcols,
                   static_cast<int64_t>(n) * plane);
        }
        if (nb && nb->requires_grad) {
          float* gb = nb->ensure_grad().data();
          for (int m = 0; m < M; ++m) {
            const float* row = go_flat.data() + m * bcols;
            double s = 0.0;
            for (int64_t i = 0; i < bcols; ++i) s += row[i];
            gb[m] += static_cast<float>(s);
          }
        }
        col.reset();  // patch matrix no longer needed once this node ran
      });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw std::invalid_argument("linear: shape mismatch " + Tensor::shape_str(xs) + " vs " +
                                Tensor::shape_str(ws));
  const int N = xs[0], K = xs[1], M = ws[0];
  Tensor out({N, M});
  // out = x (N x K) * w^T (K x M)
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, N, M, K, 1.0f, x.value().data(), K,
              w.value().data(), K, 0.0f, out.data(), M);
  const bool has_bias = b.defined();
  if (has_bias) {
    const float* pb = b.value().data();
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < M; ++m) out.data()[static_cast<int64_t>(n) * M + m] += pb[m];
  }
  NodePtr nx = x.node(), nw = w.node(), nb = has_bias ? b.node() : nullptr;
  return make_node(std::move(out), {nx, nw, nb}, "linear", [nx, nw, nb, N, K, M](Node& nd) {
    const float* go = nd.grad.data();
    if (nx->requires_grad)  // gx = go (N x M) * w (M x K)
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, N, K, M, 1.0f, go, M,
                  nw->value.data(), K, 1.0f, nx->ensure_grad().data(), K);
    if (nw->requires_grad)  // gw = go^T (M x N) * x (N x K)
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, M, K, N, 1.0f, go, M, nx->value.data(),
                  K, 1.0f, nw->ensure_grad().data(), K);
    if (nb && nb->requires_grad) {
      float* gb = nb->ensure_grad().data();
      for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) gb[m] += go[static_cast<int64_t>(n) * M + m];
    }
  });
}

Var upsample_nearest2(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample_nearest2: expects rank-4");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  Tensor out({N, C, H * 2, W * 2});
  const float* px = x.value().data();
  float* po = out.data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const float* src = px + nc * H * W;
    float* dst = po + nc * H * W * 4;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        float v = src[static_cast<int64_t>(i) * W + j];
        float* d = dst + (static_cast<int64_t>(2 * i) * (2 * W)) + 2 * j;
        d[0] = v;
        d[1] = v;
        d[2 * W] = v;
        d[2 * W + 1] = v;
      }
  }
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "upsample_nearest2", [nx, N, C, H, W](Node& nd) {
    const float* go = nd.grad.data();
    float* gx = nx->ensure_grad().data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
      const float* g = go + nc * H * W * 4;
      float* d = gx + nc * H * W;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          const float* s4 = g + (static_cast<int64_t>(2 * i) * (2 * W)) + 2 * j;
          d[static_cast<int64_t>(i) * W + j] += s4[0] + s4[1] + s4[2 * W] + s4[2 * W + 1];
        }
    }
  });
}

Var maxpool2(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0)
    throw std::invalid_argument("maxpool2: expects rank-4 with even H,W, got " +
                                Tensor::shape_str(s));
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  const int Ho = H / 2, Wo = W / 2;
  Tensor out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.numel());
  const float* px = x.value().data();
  float* po = out.data();
  int64_t oi = 0;
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const float* src = px + nc * H * W;
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j, ++oi) {
        int64_t base = static_cast<int64_t>(2 * i) * W + 2 * j;
        int64_t best = base;
        float bv = src[base];
        for (int64_t cand : {base + 1, base + W, base + W + 1})
          if (src[cand] > bv) {
            bv = src[cand];
            best = cand;
          }
        po[oi] = bv;
        (*argmax)[oi] = nc * H * W + best;
      }
  }
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "maxpool2", [nx, argmax](Node& nd) {
    const float* go = nd.grad.data();
    float* gx = nx->ensure_grad().data();
    int64_t cnt = nd.value.numel();
    for (int64_t i = 0; i < cnt; ++i) gx[(*argmax)[i]] += go[i];
  });
}

Var global_avg_pool(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("global_avg_pool: expects rank-4");
  const int N = s[0], C = s[1];
  const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
  Tensor out({N, C, 1, 1});
  const float* px = x.value().data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    double acc = 0.0;
    const float* src = px + nc * plane;
    for (int64_t i = 0; i < plane; ++i) acc += src[i];
    out.data()[nc] = static_cast<float>(acc / static_cast<double>(plane));
  }
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "global_avg_pool", [nx, N, C, plane](Node& nd) {
    const float* go = nd.grad.data();
    float* gx = nx->ensure_grad().data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
      float g = go[nc] / static_cast<float>(plane);
      float* dst = gx + nc * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] += g;
    }
  });
}

Var global_max_pool(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("global_max_pool: expects rank-4");
  const int N = s[0], C = s[1];
  const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
  Tensor out({N, C, 1, 1});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(N) * C);
  const float* px = x.value().data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const float* src = px + nc * plane;
    int64_t best = 0;
    for (int64_t i = 1; i < plane; ++i)
      if (src[i] > src[best]) best = i;
    out.data()[nc] = src[best];
    (*argmax)[static_cast<size_t>(nc)] = nc * plane + best;
  }
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "global_max_pool", [nx, N, C, argmax](Node& nd) {
    const float* go = nd.grad.data();
    float* gx = nx->ensure_grad().data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc)
      gx[(*argmax)[static_cast<size_t>(nc)]] += go[nc];
  });
}

Var channel_mean(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("channel_mean: expects rank-4");
  const int N = s[0], C = s[1];
  const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
  Tensor out({N, 1, s[2], s[3]});
  const float* px = x.value().data();
  float* po = out.data();
  for (int n = 0; n < N; ++n) {
    const float* xn = px + static_cast<int64_t>(n) * C * plane;
    float* on = po + static_cast<int64_t>(n) * plane;
    for (int64_t i = 0; i < plane; ++i) {
      double acc = 0.0;
      for (int c = 0; c < C; ++c) acc += xn[static_cast<int64_t>(c) * plane + i];
      on[i] = static_cast<float>(acc / C);
    }
  }
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "channel_mean", [nx, N, C, plane](Node& nd) {
    const float* go = nd.grad.data();
    float* gx = nx->ensure_grad().data();
    for (int n = 0; n < N; ++n) {
      const float* gn = go + static_cast<int64_t>(n) * plane;
      float* dn = gx + static_cast<int64_t>(n) * C * plane;
      for (int64_t i = 0; i < plane; ++i) {
        float g = gn[i] / static_cast<float>(C);
        for (int c = 0; c < C; ++c) dn[static_cast<int64_t>(c) * plane + i] += g;
      }
    }
  });
}

Var channel_max(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("channel_max: expects rank-4");
  const int N = s[0], C = s[1];
  const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
  Tensor out({N, 1, s[2], s[3]});
  auto argmax = std::make_shared<std::vector<int>>(out.numel());
  const float* px = x.value().data();
  float* po = out.data();
  for (int n = 0; n < N; ++n) {
    const float* xn = px + static_cast<int64_t>(n) * C * plane;
    float* on = po + static_cast<int64_t>(n) * plane;
    int* am = argmax->data() + static_cast<int64_t>(n) * plane;
    for (int64_t i = 0; i < plane; ++i) {
      int best = 0;
      float bv = xn[i];
      for (int c = 1; c < C; ++c) {
        float v = xn[static_cast<int64_t>(c) * plane + i];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      on[i] = bv;
      am[i] = best;
    }
  }
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "channel_max", [nx, N, plane, argmax](Node& nd) {
    const float* go = nd.grad.data();
    float* gx = nx->ensure_grad().data();
    const int C = nx->value.shape()[1];
    for (int n = 0; n < N; ++n) {
      const float* gn = go + static_cast<int64_t>(n) * plane;
      const int* am = argmax->data() + static_cast<int64_t>(n) * plane;
      float* dn = gx + static_cast<int64_t>(n) * C * plane;
      for (int64_t i = 0; i < plane; ++i) dn[static_cast<int64_t>(am[i]) * plane + i] += gn[i];
    }
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
  const auto& s0 = xs[0].shape();
  if (s0.size() != 4) throw std::invalid_argument("concat_channels: expects rank-4");
  int Ctot = 0;
  for (const auto& x : xs) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
      throw std::invalid_argument("concat_channels: incompatible shapes");
    Ctot += s[1];
  }
  const int N = s0[0];
  const int64_t plane = static_cast<int64_t>(s0[2]) * s0[3];
  Tensor out({N, Ctot, s0[2], s0[3]});
  float* po = out.data();
  for (int n = 0; n < N; ++n) {
    int64_t coff = 0;
    for (const auto& x : xs) {
      const int c = x.shape()[1];
      std::memcpy(po + (static_cast<int64_t>(n) * Ctot + coff) * plane,
                  x.value().data() + static_cast<int64_t>(n) * c * plane,
                  sizeof(float) * static_cast<size_t>(c) * plane);
      coff += c;
    }
  }
  std::vector<NodePtr> nodes;
  for (const auto& x : xs) nodes.push_back(x.node());
  return make_node(std::move(out), nodes, "concat_channels", [nodes, N, Ctot, plane](Node& nd) {
    const float* go = nd.grad.data();
    for (int n = 0; n < N; ++n) {
      int64_t coff = 0;
      for (const auto& in : nodes) {
        const int c = in->value.shape()[1];
        if (in->requires_grad) {
          float* gx = in->ensure_grad().data() + static_cast<int64_t>(n) * c * plane;
          const float* g = go + (static_cast<int64_t>(n) * Ctot + coff) * plane;
          for (int64_t i = 0; i < static_cast<int64_t>(c) * plane; ++i) gx[i] += g[i];
        }
        coff += c;
      }
    }
  });
}

Var flatten2(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("flatten2: expects rank-4");
  Tensor out({s[0], s[1] * s[2] * s[3]}, std::vector<float>(x.value().data(),
                                                            x.value().data() + x.value().numel()));
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "flatten2", [nx](Node& nd) {
    float* gx = nx->ensure_grad().data();
    const float* go = nd.grad.data();
    int64_t cnt = nd.value.numel();
    for (int64_t i = 0; i < cnt; ++i) gx[i] += go[i];
  });
}

Var reshape(const Var& x, std::vector<int> new_shape) {
  if (Tensor::count(new_shape) != x.value().numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(std::move(new_shape),
             std::vector<float>(x.value().data(), x.value().data() + x.value().numel()));
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "reshape", [nx](Node& nd) {
    float* gx = nx->ensure_grad().data();
    const float* go = nd.grad.data();
    int64_t cnt = nd.value.numel();
    for (int64_t i = 0; i < cnt; ++i) gx[i] += go[i];
  });
}

Var sum_all(const Var& x) {
  double acc = 0.0;
  const float* px = x.value().data();
  int64_t n = x.value().numel();
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  NodePtr nx = x.node();
  return make_node(Tensor::scalar(static_cast<float>(acc)), {nx}, "sum_all", [nx](Node& nd) {
    float g = nd.grad.data()[0];
    float* gx = nx->ensure_grad().data();
    int64_t cnt = nx->value.numel();
    for (int64_t i = 0; i < cnt; ++i) gx[i] += g;
  });
}

Var mean_all(const Var& x) {
  int64_t n = x.value().numel();
  return mul_scalar(sum_all(x), 1.0f / static_cast<float>(n));
}

Var sum_spatial(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("sum_spatial: expects rank-4");
  const int N = s[0], C = s[1];
  const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
  Tensor out({N, C, 1, 1});
  const float* px = x.value().data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    double acc = 0.0;
    const float* src = px + nc * plane;
    for (int64_t i = 0; i < plane; ++i) acc += src[i];
    out.data()[nc] = static_cast<float>(acc);
  }
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "sum_spatial", [nx, N, C, plane](Node& nd) {
    const float* go = nd.grad.data();
    float* gx = nx->ensure_grad().data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
      float g = go[nc];
      float* dst = gx + nc * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] += g;
    }
  });
}

Var log_softmax_rows(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 2) throw std::invalid_argument("log_softmax_rows: expects rank-2");
  const int N = s[0], K = s[1];
  Tensor out({N, K});
  const float* px = x.value().data();
  float* po = out.data();
  for (int n = 0; n < N; ++n) {
    const float* row = px + static_cast<int64_t>(n) * K;
    float* orow = po + static_cast<int64_t>(n) * K;
    float mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k] - mx));
    float lz = static_cast<float>(std::log(z)) + mx;
    for (int k = 0; k < K; ++k) orow[k] = row[k] - lz;
  }
  NodePtr nx = x.node();
  return make_node(std::move(out), {nx}, "log_softmax_rows", [nx, N, K](Node& nd) {
    const float* go = nd.grad.data();
    const float* logp = nd.value.data();
    float* gx = nx->ensure_grad().data();
    for (int n = 0; n < N; ++n) {
      const float* grow = go + static_cast<int64_t>(n) * K;
      const float* lrow = logp + static_cast<int64_t>(n) * K;
      float* xrow = gx + static_cast<int64_t>(n) * K;
      double gsum = 0.0;
      for (int k = 0; k < K; ++k) gsum += grow[k];
      for (int k = 0; k < K; ++k)
        xrow[k] += grow[k] - static_cast<float>(gsum) * std::exp(lrow[k]);
    }
  });
}

Var gather_rows_mean(const Var& logp, const std::vector<int>& labels) {
  const auto& s = logp.shape();
  if (s.size() != 2 || static_cast<size_t>(s[0]) != labels.size())
    throw std::invalid_argument("gather_rows_mean: shape/label mismatch");
  const int N = s[0], K = s[1];
  for (int y : labels)
    if (y < 0 || y >= K) throw std::invalid_argument("gather_rows_mean: label out of range");
  double acc = 0.0;
  const float* p = logp.value().data();
  for (int n = 0; n < N; ++n) acc += p[static_cast<int64_t>(n) * K + labels[n]];
  NodePtr nx = logp.node();
  auto lab = std::make_shared<std::vector<int>>(labels);
  return make_node(Tensor::scalar(static_cast<float>(acc / N)), {nx}, "gather_rows_mean",
                   [nx, lab, N, K](Node& nd) {
                     float g = nd.grad.data()[0] / static_cast<float>(N);
                     float* gx = nx->ensure_grad().data();
                     for (int n = 0; n < N; ++n)
                       gx[static_cast<int64_t>(n) * K + (*lab)[static_cast<size_t>(n)]] += g;
                   });
}

Var detach(const Var& x) { return Var(x.value(), false); }

void backward(const Var& root) {
  if (root.value().numel() != 1) throw std::logic_error("backward: root must be scalar");
  if (!root.requires_grad()) return;
  // Topological order by iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->inputs.size()) {
      Node* child = n->inputs[i].get();
      ++i;
      if (child && child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad().data()[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.defined()) n->backward_fn(*n);
  }
}

}  // namespace patchdef::nn
