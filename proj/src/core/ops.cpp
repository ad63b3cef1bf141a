#include "naslab/core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "naslab/core/error.hpp"

namespace naslab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const char* op, const std::string& why) {
  if (!ok) throw InputError(std::string(op) + ": " + why);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), op, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Output columns ow whose input column ow * stride + offset lies in [0, width).
std::pair<int, int> valid_range(int offset, int stride, int width, int out_width) {
  int lo = std::max(0, ceil_div(-offset, stride));
  int hi = std::min(out_width - 1, floor_div(width - 1 - offset, stride));
  return {lo, hi};
}

struct ConvDims {
  int n, cin, h, w, cout, cin_g, kh, kw, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& weight, const Conv2dGeometry& g) {
  require(x.rank() == 4, "conv2d", "input must be NCHW, got " + shape_string(x.shape()));
  require(weight.rank() == 4, "conv2d", "weight must be rank 4");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3), 0, 0};
  require(g.groups >= 1 && d.cin == d.cin_g * g.groups, "conv2d",
          "channel mismatch: input " + std::to_string(d.cin) + " vs weight " + shape_string(weight.shape()));
  require(d.cout % g.groups == 0, "conv2d", "output channels not divisible by groups");
  require(d.kh == g.kernel_h && d.kw == g.kernel_w, "conv2d", "kernel size does not match geometry");
  d.ho = g.out_h(d.h);
  d.wo = g.out_w(d.w);
  require(d.ho > 0 && d.wo > 0, "conv2d", "empty output for input " + shape_string(x.shape()));
  return d;
}

bool is_depthwise(const ConvDims& d, const Conv2dGeometry& g) {
  return g.groups == d.cin && d.cin_g == 1 && d.cout == d.cin;
}

bool is_pointwise(const ConvDims& d, const Conv2dGeometry& g) {
  return d.kh == 1 && d.kw == 1 && g.stride_h == 1 && g.stride_w == 1 && g.pad_h == 0 && g.pad_w == 0;
}

void im2col(const double* x, const ConvDims& d, const Conv2dGeometry& g, int c0, double* col) {
  const int plane = d.ho * d.wo;
  for (int c = 0; c < d.cin_g; ++c) {
    const double* xc = x + static_cast<std::size_t>(c0 + c) * d.h * d.w;
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        double* row = col + static_cast<std::size_t>((c * d.kh + i) * d.kw + j) * plane;
        std::fill(row, row + plane, 0.0);
        const int off_w = j * g.dilation - g.pad_w;
        auto [lo, hi] = valid_range(off_w, g.stride_w, d.w, d.wo);
        for (int oh = 0; oh < d.ho; ++oh) {
          const int ih = oh * g.stride_h - g.pad_h + i * g.dilation;
          if (ih < 0 || ih >= d.h) continue;
          const double* xr = xc + static_cast<std::size_t>(ih) * d.w;
          double* rr = row + static_cast<std::size_t>(oh) * d.wo;
          for (int ow = lo; ow <= hi; ++ow) rr[ow] = xr[ow * g.stride_w + off_w];
        }
      }
    }
  }
}

void col2im(const double* col, const ConvDims& d, const Conv2dGeometry& g, int c0, double* dx) {
  const int plane = d.ho * d.wo;
  for (int c = 0; c < d.cin_g; ++c) {
    double* xc = dx + static_cast<std::size_t>(c0 + c) * d.h * d.w;
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        const double* row = col + static_cast<std::size_t>((c * d.kh + i) * d.kw + j) * plane;
        const int off_w = j * g.dilation - g.pad_w;
        auto [lo, hi] = valid_range(off_w, g.stride_w, d.w, d.wo);
        for (int oh = 0; oh < d.ho; ++oh) {
          const int ih = oh * g.stride_h - g.pad_h + i * g.dilation;
          if (ih < 0 || ih >= d.h) continue;
          double* xr = xc + static_cast<std::size_t>(ih) * d.w;
          const double* rr = row + static_cast<std::size_t>(oh) * d.wo;
          for (int ow = lo; ow <= hi; ++ow) xr[ow * g.stride_w + off_w] += rr[ow];
        }
      }
    }
  }
}

// Small products run as row-wise axpy/dot loops; Eigen's per-call setup dominates at these sizes.
bool small_product(int m, int k) { return m * k <= 2048; }

// c[M,P] (+)= a[M,K] * b[K,P]
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int p, bool accumulate) {
  if (!small_product(m, k)) {
    MapMat cm(c, m, p);
    if (accumulate) cm.noalias() += ConstMapMat(a, m, k) * ConstMapMat(b, k, p);
    else cm.noalias() = ConstMapMat(a, m, k) * ConstMapMat(b, k, p);
    return;
  }
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * p;
    if (!accumulate) std::fill(crow, crow + p, 0.0);
    for (int q = 0; q < k; ++q) {
      const double av = a[static_cast<std::size_t>(i) * k + q];
      const double* brow = b + static_cast<std::size_t>(q) * p;
      for (int e = 0; e < p; ++e) crow[e] += av * brow[e];
    }
  }
}

// c[M,K] += g[M,P] * b[K,P]^T
void gemm_nt_acc(const double* g, const double* b, double* c, int m, int k, int p) {
  if (!small_product(m, k)) {
    MapMat(c, m, k).noalias() += ConstMapMat(g, m, p) * ConstMapMat(b, k, p).transpose();
    return;
  }
  for (int i = 0; i < m; ++i) {
    Eigen::Map<const Eigen::VectorXd> grow(g + static_cast<std::size_t>(i) * p, p);
    for (int q = 0; q < k; ++q)
      c[static_cast<std::size_t>(i) * k + q] += grow.dot(Eigen::Map<const Eigen::VectorXd>(b + static_cast<std::size_t>(q) * p, p));
  }
}

// c[K,P] (+)= a[M,K]^T * g[M,P]
void gemm_tn(const double* a, const double* g, double* c, int m, int k, int p, bool accumulate) {
  if (!small_product(m, k)) {
    MapMat cm(c, k, p);
    if (accumulate) cm.noalias() += ConstMapMat(a, m, k).transpose() * ConstMapMat(g, m, p);
    else cm.noalias() = ConstMapMat(a, m, k).transpose() * ConstMapMat(g, m, p);
    return;
  }
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(k) * p, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* grow = g + static_cast<std::size_t>(i) * p;
    for (int q = 0; q < k; ++q) {
      const double av = a[static_cast<std::size_t>(i) * k + q];
      double* crow = c + static_cast<std::size_t>(q) * p;
      for (int e = 0; e < p; ++e) crow[e] += av * grow[e];
    }
  }
}

// Copies one plane into a zero-padded tile.
void pad_plane(const double* src, int h, int w, int ph, int pw, double* dst) {
  const int wp = w + 2 * pw;
  std::fill(dst, dst + static_cast<std::size_t>(h + 2 * ph) * wp, 0.0);
  for (int r = 0; r < h; ++r) std::copy_n(src + static_cast<std::size_t>(r) * w, w, dst + static_cast<std::size_t>(r + ph) * wp + pw);
}

bool unit_stride(const Conv2dGeometry& g) { return g.stride_h == 1 && g.stride_w == 1; }

// Unit-stride depthwise conv computed over rows of the padded width, so each tap is one long contiguous loop.
void depthwise_forward_unit(const double* x, const double* w, double* out, const ConvDims& d,
                            const Conv2dGeometry& g) {
  const int hp = d.h + 2 * g.pad_h, wp = d.w + 2 * g.pad_w;
  const std::size_t span = static_cast<std::size_t>(d.ho - 1) * wp + d.wo;
  std::vector<double> tile(static_cast<std::size_t>(hp) * wp), wide(span);
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.cin; ++c) {
      pad_plane(x + (static_cast<std::size_t>(n) * d.cin + c) * d.h * d.w, d.h, d.w, g.pad_h, g.pad_w, tile.data());
      std::fill(wide.begin(), wide.end(), 0.0);
      const double* wc = w + static_cast<std::size_t>(c) * d.kh * d.kw;
      for (int i = 0; i < d.kh; ++i)
        for (int j = 0; j < d.kw; ++j) {
          const double wv = wc[i * d.kw + j];
          const double* src = tile.data() + static_cast<std::size_t>(i * g.dilation) * wp + j * g.dilation;
          double* dst = wide.data();
          for (std::size_t e = 0; e < span; ++e) dst[e] += wv * src[e];
        }
      double* op = out + (static_cast<std::size_t>(n) * d.cout + c) * d.ho * d.wo;
      for (int oh = 0; oh < d.ho; ++oh)
        std::copy_n(wide.data() + static_cast<std::size_t>(oh) * wp, d.wo, op + static_cast<std::size_t>(oh) * d.wo);
    }
  }
}

void depthwise_backward_unit(const double* x, const double* w, const double* dout, double* dx, double* dw,
                             const ConvDims& d, const Conv2dGeometry& g) {
  const int hp = d.h + 2 * g.pad_h, wp = d.w + 2 * g.pad_w;
  const std::size_t span = static_cast<std::size_t>(d.ho - 1) * wp + d.wo;
  std::vector<double> tile(static_cast<std::size_t>(hp) * wp), dtile(tile.size()), wide(span, 0.0);
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.cin; ++c) {
      const std::size_t in_off = (static_cast<std::size_t>(n) * d.cin + c) * d.h * d.w;
      if (dw) pad_plane(x + in_off, d.h, d.w, g.pad_h, g.pad_w, tile.data());
      if (dx) std::fill(dtile.begin(), dtile.end(), 0.0);
      // Upstream gradient laid out at the padded width; the gap columns stay zero.
      const double* dop = dout + (static_cast<std::size_t>(n) * d.cout + c) * d.ho * d.wo;
      for (int oh = 0; oh < d.ho; ++oh)
        std::copy_n(dop + static_cast<std::size_t>(oh) * d.wo, d.wo, wide.data() + static_cast<std::size_t>(oh) * wp);
      const double* wc = w + static_cast<std::size_t>(c) * d.kh * d.kw;
      for (int i = 0; i < d.kh; ++i)
        for (int j = 0; j < d.kw; ++j) {
          const std::size_t off = static_cast<std::size_t>(i * g.dilation) * wp + j * g.dilation;
          if (dw) {
            const double* src = tile.data() + off;
            dw[static_cast<std::size_t>(c) * d.kh * d.kw + i * d.kw + j] +=
                Eigen::Map<const Eigen::VectorXd>(wide.data(), static_cast<Eigen::Index>(span))
                    .dot(Eigen::Map<const Eigen::VectorXd>(src, static_cast<Eigen::Index>(span)));
          }
          if (dx) {
            const double wv = wc[i * d.kw + j];
            double* dst = dtile.data() + off;
            for (std::size_t e = 0; e < span; ++e) dst[e] += wv * wide[e];
          }
        }
      if (dx) {
        double* dxp = dx + in_off;
        for (int r = 0; r < d.h; ++r) {
          const double* src = dtile.data() + static_cast<std::size_t>(r + g.pad_h) * wp + g.pad_w;
          double* dst = dxp + static_cast<std::size_t>(r) * d.w;
          for (int q = 0; q < d.w; ++q) dst[q] += src[q];
        }
      }
    }
  }
}

void depthwise_forward(const double* x, const double* w, double* out, const ConvDims& d, const Conv2dGeometry& g) {
  if (unit_stride(g)) return depthwise_forward_unit(x, w, out, d, g);
  const int hp = d.h + 2 * g.pad_h, wp = d.w + 2 * g.pad_w;
  std::vector<double> tile(static_cast<std::size_t>(hp) * wp);
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.cin; ++c) {
      pad_plane(x + (static_cast<std::size_t>(n) * d.cin + c) * d.h * d.w, d.h, d.w, g.pad_h, g.pad_w, tile.data());
      double* op = out + (static_cast<std::size_t>(n) * d.cout + c) * d.ho * d.wo;
      const double* wc = w + static_cast<std::size_t>(c) * d.kh * d.kw;
      for (int oh = 0; oh < d.ho; ++oh) {
        double* orow = op + static_cast<std::size_t>(oh) * d.wo;
        std::fill(orow, orow + d.wo, 0.0);
        for (int i = 0; i < d.kh; ++i) {
          const double* trow = tile.data() + static_cast<std::size_t>(oh * g.stride_h + i * g.dilation) * wp;
          for (int j = 0; j < d.kw; ++j) {
            const double wv = wc[i * d.kw + j];
            const double* src = trow + j * g.dilation;
            if (g.stride_w == 1) {
              for (int ow = 0; ow < d.wo; ++ow) orow[ow] += wv * src[ow];
            } else {
              for (int ow = 0; ow < d.wo; ++ow) orow[ow] += wv * src[ow * g.stride_w];
            }
          }
        }
      }
    }
  }
}

void depthwise_backward(const double* x, const double* w, const double* dout, double* dx, double* dw,
                        const ConvDims& d, const Conv2dGeometry& g) {
  if (unit_stride(g)) return depthwise_backward_unit(x, w, dout, dx, dw, d, g);
  const int hp = d.h + 2 * g.pad_h, wp = d.w + 2 * g.pad_w;
  const int sw = g.stride_w;
  std::vector<double> tile(static_cast<std::size_t>(hp) * wp), dtile(tile.size()), acc(static_cast<std::size_t>(d.wo));
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.cin; ++c) {
      const std::size_t in_off = (static_cast<std::size_t>(n) * d.cin + c) * d.h * d.w;
      if (dw) pad_plane(x + in_off, d.h, d.w, g.pad_h, g.pad_w, tile.data());
      if (dx) std::fill(dtile.begin(), dtile.end(), 0.0);
      const double* dop = dout + (static_cast<std::size_t>(n) * d.cout + c) * d.ho * d.wo;
      const double* wc = w + static_cast<std::size_t>(c) * d.kh * d.kw;
      for (int i = 0; i < d.kh; ++i) {
        for (int j = 0; j < d.kw; ++j) {
          const double wv = wc[i * d.kw + j];
          // Elementwise partial sums keep the inner loop free of a serial reduction.
          if (dw) std::fill(acc.begin(), acc.end(), 0.0);
          for (int oh = 0; oh < d.ho; ++oh) {
            const double* dorow = dop + static_cast<std::size_t>(oh) * d.wo;
            const std::size_t off = static_cast<std::size_t>(oh * g.stride_h + i * g.dilation) * wp +
                                    static_cast<std::size_t>(j * g.dilation);
            if (dw) {
              const double* src = tile.data() + off;
              if (sw == 1) {
                for (int ow = 0; ow < d.wo; ++ow) acc[static_cast<std::size_t>(ow)] += dorow[ow] * src[ow];
              } else {
                for (int ow = 0; ow < d.wo; ++ow) acc[static_cast<std::size_t>(ow)] += dorow[ow] * src[ow * sw];
              }
            }
            if (dx) {
              double* dst = dtile.data() + off;
              if (sw == 1) {
                for (int ow = 0; ow < d.wo; ++ow) dst[ow] += wv * dorow[ow];
              } else {
                for (int ow = 0; ow < d.wo; ++ow) dst[ow * sw] += wv * dorow[ow];
              }
            }
          }
          if (dw) {
            double total = 0.0;
            for (double v : acc) total += v;
            dw[static_cast<std::size_t>(c) * d.kh * d.kw + i * d.kw + j] += total;
          }
        }
      }
      if (dx) {
        double* dxp = dx + in_off;
        for (int r = 0; r < d.h; ++r) {
          const double* src = dtile.data() + static_cast<std::size_t>(r + g.pad_h) * wp + g.pad_w;
          double* dst = dxp + static_cast<std::size_t>(r) * d.w;
          for (int q = 0; q < d.w; ++q) dst[q] += src[q];
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  axpy(1.0, b.value().values(), out.values());
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.out_grad(self);
    if (Tensor* da = t.grad_sink(ia)) axpy(1.0, g.values(), da->values());
    if (Tensor* db = t.grad_sink(ib)) axpy(1.0, g.values(), db->values());
  });
}

Var add_n(std::span<const Var> terms) {
  require(!terms.empty(), "add_n", "no terms");
  Tensor out = terms[0].value();
  std::vector<int> ids{terms[0].id()};
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require_same_shape(terms[0], terms[i], "add_n");
    axpy(1.0, terms[i].value().values(), out.values());
    ids.push_back(terms[i].id());
  }
  return terms[0].tape().record(std::move(out), ids, [ids](Tape& t, int self) {
    const Tensor& g = t.out_grad(self);
    for (int id : ids)
      if (Tensor* d = t.grad_sink(id)) axpy(1.0, g.values(), d->values());
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, factor](Tape& t, int self) {
    if (Tensor* d = t.grad_sink(ia)) axpy(factor, t.out_grad(self).values(), d->values());
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.out_grad(self);
    if (Tensor* da = t.grad_sink(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * t.value(ib)[i];
    if (Tensor* db = t.grad_sink(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i] * t.value(ia)[i];
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const int ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](Tape& t, int self) {
    Tensor* d = t.grad_sink(ix);
    if (!d) return;
    const Tensor& g = t.out_grad(self);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (y[i] > 0.0) (*d)[i] += g[i];
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dGeometry& geom) {
  const ConvDims d = conv_dims(x.value(), weight.value(), geom);
  if (bias.valid()) require(bias.value().size() == static_cast<std::size_t>(d.cout), "conv2d", "bias length mismatch");
  Tensor out({d.n, d.cout, d.ho, d.wo});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const int plane = d.ho * d.wo;
  const int kdim = d.cin_g * d.kh * d.kw;
  const int cout_g = d.cout / geom.groups;

  if (is_depthwise(d, geom)) {
    depthwise_forward(xv.data(), wv.data(), out.data(), d, geom);
  } else {
    std::vector<double> col;
    if (!is_pointwise(d, geom)) col.resize(static_cast<std::size_t>(kdim) * plane);
    for (int n = 0; n < d.n; ++n) {
      const double* xs = xv.data() + static_cast<std::size_t>(n) * d.cin * d.h * d.w;
      double* os = out.data() + static_cast<std::size_t>(n) * d.cout * plane;
      for (int grp = 0; grp < geom.groups; ++grp) {
        const double* src = xs + static_cast<std::size_t>(grp) * d.cin_g * d.h * d.w;
        if (!col.empty()) {
          im2col(xs, d, geom, grp * d.cin_g, col.data());
          src = col.data();
        }
        gemm_nn(wv.data() + static_cast<std::size_t>(grp) * cout_g * kdim, src,
                os + static_cast<std::size_t>(grp) * cout_g * plane, cout_g, kdim, plane, false);
      }
    }
  }
  if (bias.valid()) {
    const Tensor& b = bias.value();
    for (int n = 0; n < d.n; ++n)
      for (int c = 0; c < d.cout; ++c) {
        double* p = out.data() + (static_cast<std::size_t>(n) * d.cout + c) * plane;
        for (int i = 0; i < plane; ++i) p[i] += b[static_cast<std::size_t>(c)];
      }
  }

  const int ix = x.id(), iw = weight.id(), ib = bias.valid() ? bias.id() : -1;
  std::vector<int> inputs{ix, iw};
  if (ib >= 0) inputs.push_back(ib);
  return x.tape().record(std::move(out), inputs, [ix, iw, ib, d, geom](Tape& t, int self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& xv = t.value(ix);
    const Tensor& wv = t.value(iw);
    Tensor* dx = t.grad_sink(ix);
    Tensor* dw = t.grad_sink(iw);
    const int plane = d.ho * d.wo;
    if (ib >= 0) {
      if (Tensor* db = t.grad_sink(ib)) {
        for (int n = 0; n < d.n; ++n)
          for (int c = 0; c < d.cout; ++c) {
            const double* p = g.data() + (static_cast<std::size_t>(n) * d.cout + c) * plane;
            double s = 0.0;
            for (int i = 0; i < plane; ++i) s += p[i];
            (*db)[static_cast<std::size_t>(c)] += s;
          }
      }
    }
    if (!dx && !dw) return;
    if (is_depthwise(d, geom)) {
      depthwise_backward(xv.data(), wv.data(), g.data(), dx ? dx->data() : nullptr, dw ? dw->data() : nullptr, d, geom);
      return;
    }
    const int kdim = d.cin_g * d.kh * d.kw;
    const int cout_g = d.cout / geom.groups;
    const bool pointwise = is_pointwise(d, geom);
    std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * plane);
    std::vector<double> dcol(static_cast<std::size_t>(kdim) * plane);
    for (int n = 0; n < d.n; ++n) {
      const double* xs = xv.data() + static_cast<std::size_t>(n) * d.cin * d.h * d.w;
      const double* gs = g.data() + static_cast<std::size_t>(n) * d.cout * plane;
      for (int grp = 0; grp < geom.groups; ++grp) {
        const double* gp = gs + static_cast<std::size_t>(grp) * cout_g * plane;
        const double* wp = wv.data() + static_cast<std::size_t>(grp) * cout_g * kdim;
        if (dw) {
          const double* src = xs + static_cast<std::size_t>(grp) * d.cin_g * d.h * d.w;
          if (!pointwise) {
            im2col(xs, d, geom, grp * d.cin_g, col.data());
            src = col.data();
          }
          gemm_nt_acc(gp, src, dw->data() + static_cast<std::size_t>(grp) * cout_g * kdim, cout_g, kdim, plane);
        }
        if (dx) {
          double* dxs = dx->data() + static_cast<std::size_t>(n) * d.cin * d.h * d.w;
          if (pointwise) {
            gemm_tn(wp, gp, dxs + static_cast<std::size_t>(grp) * d.cin_g * d.h * d.w, cout_g, kdim, plane, true);
          } else {
            gemm_tn(wp, gp, dcol.data(), cout_g, kdim, plane, false);
            col2im(dcol.data(), d, geom, grp * d.cin_g, dxs);
          }
        }
      }
    }
  });
}

Var batch_norm(const Var& x, const Var& scale_p, const Var& shift_p, const Tensor& running_mean,
               const Tensor& running_var, Mode mode, Tensor* update_mean, Tensor* update_var, double momentum,
               double eps) {
  const Tensor& xv = x.value();
  require(xv.rank() == 4, "batch_norm", "input must be NCHW");
  const int n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  require(running_mean.size() == static_cast<std::size_t>(c) && running_var.size() == static_cast<std::size_t>(c),
          "batch_norm", "running statistics length mismatch");
  const std::size_t count = static_cast<std::size_t>(n) * plane;
  std::vector<double> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  const bool batch_stats = mode == Mode::train;
  if (batch_stats) require(count > 1, "batch_norm", "train mode needs more than one value per channel");
  for (int ch = 0; ch < c; ++ch) {
    double m, var;
    if (batch_stats) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = xv.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (int k = 0; k < plane; ++k) s += p[k];
      }
      m = s / static_cast<double>(count);
      double ss = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = xv.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (int k = 0; k < plane; ++k) ss += (p[k] - m) * (p[k] - m);
      }
      var = ss / static_cast<double>(count);
      if (update_mean && update_var) {
        (*update_mean)[static_cast<std::size_t>(ch)] =
            (1.0 - momentum) * (*update_mean)[static_cast<std::size_t>(ch)] + momentum * m;
        (*update_var)[static_cast<std::size_t>(ch)] =
            (1.0 - momentum) * (*update_var)[static_cast<std::size_t>(ch)] +
            momentum * ss / static_cast<double>(count - 1);
      }
    } else {
      m = running_mean[static_cast<std::size_t>(ch)];
      var = running_var[static_cast<std::size_t>(ch)];
    }
    mean[static_cast<std::size_t>(ch)] = m;
    inv_std[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(var + eps);
  }
  Tensor out(xv.shape());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double g = scale_p.valid() ? scale_p.value()[static_cast<std::size_t>(ch)] : 1.0;
      const double b = shift_p.valid() ? shift_p.value()[static_cast<std::size_t>(ch)] : 0.0;
      const double m = mean[static_cast<std::size_t>(ch)], is = inv_std[static_cast<std::size_t>(ch)];
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * plane;
      for (int k = 0; k < plane; ++k) out[base + k] = g * (xv[base + k] - m) * is + b;
    }

  const int ix = x.id(), ig = scale_p.valid() ? scale_p.id() : -1, ib = shift_p.valid() ? shift_p.id() : -1;
  std::vector<int> inputs{ix};
  if (ig >= 0) inputs.push_back(ig);
  if (ib >= 0) inputs.push_back(ib);
  return x.tape().record(
      std::move(out), inputs,
      [ix, ig, ib, n, c, plane, batch_stats, mean = std::move(mean), inv_std = std::move(inv_std)](Tape& t, int self) {
        const Tensor& dy = t.out_grad(self);
        const Tensor& xv = t.value(ix);
        Tensor* dx = t.grad_sink(ix);
        Tensor* dg = ig >= 0 ? t.grad_sink(ig) : nullptr;
        Tensor* db = ib >= 0 ? t.grad_sink(ib) : nullptr;
        const double cnt = static_cast<double>(n) * plane;
        for (int ch = 0; ch < c; ++ch) {
          const double m = mean[static_cast<std::size_t>(ch)], is = inv_std[static_cast<std::size_t>(ch)];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int i = 0; i < n; ++i) {
            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * plane;
            for (int k = 0; k < plane; ++k) {
              sum_dy += dy[base + k];
              sum_dy_xhat += dy[base + k] * (xv[base + k] - m) * is;
            }
          }
          if (dg) (*dg)[static_cast<std::size_t>(ch)] += sum_dy_xhat;
          if (db) (*db)[static_cast<std::size_t>(ch)] += sum_dy;
          if (!dx) continue;
          const double g = ig >= 0 ? t.value(ig)[static_cast<std::size_t>(ch)] : 1.0;
          const double mdy = sum_dy / cnt, mdyx = sum_dy_xhat / cnt;
          for (int i = 0; i < n; ++i) {
            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * plane;
            for (int k = 0; k < plane; ++k) {
              if (batch_stats) {
                const double xhat = (xv[base + k] - m) * is;
                (*dx)[base + k] += g * is * (dy[base + k] - mdy - xhat * mdyx);
              } else {
                (*dx)[base + k] += g * is * dy[base + k];
              }
            }
          }
        }
      });
}

Var max_pool2d(const Var& x, const Pool2dGeometry& geom) {
  const Tensor& xv = x.value();
  require(xv.rank() == 4, "max_pool2d", "input must be NCHW");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int ho = geom.out_size(h), wo = geom.out_size(w);
  require(ho > 0 && wo > 0, "max_pool2d", "empty output");
  Tensor out({n, c, ho, wo});
  std::vector<int> arg(out.size());
  for (int p = 0; p < n * c; ++p) {
    const double* xp = xv.data() + static_cast<std::size_t>(p) * h * w;
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        int best_i = -1;
        for (int i = 0; i < geom.kernel; ++i) {
          const int ih = oh * geom.stride - geom.pad + i;
          if (ih < 0 || ih >= h) continue;
          for (int j = 0; j < geom.kernel; ++j) {
            const int iw = ow * geom.stride - geom.pad + j;
            if (iw < 0 || iw >= w) continue;
            const double v = xp[ih * w + iw];
            if (v > best) {
              best = v;
              best_i = ih * w + iw;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(p) * ho + oh) * wo + ow;
        out[o] = best;
        arg[o] = best_i;
      }
  }
  const int ix = x.id();
  const int in_plane = h * w, out_plane = ho * wo;
  return x.tape().record(std::move(out), {ix}, [ix, arg = std::move(arg), in_plane, out_plane](Tape& t, int self) {
    Tensor* dx = t.grad_sink(ix);
    if (!dx) return;
    const Tensor& g = t.out_grad(self);
    for (std::size_t o = 0; o < g.size(); ++o) {
      const std::size_t p = o / static_cast<std::size_t>(out_plane);
      (*dx)[p * static_cast<std::size_t>(in_plane) + static_cast<std::size_t>(arg[o])] += g[o];
    }
  });
}

Var avg_pool2d(const Var& x, const Pool2dGeometry& geom) {
  const Tensor& xv = x.value();
  require(xv.rank() == 4, "avg_pool2d", "input must be NCHW");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int ho = geom.out_size(h), wo = geom.out_size(w);
  require(ho > 0 && wo > 0, "avg_pool2d", "empty output");
  Tensor out({n, c, ho, wo});
  auto window = [geom](int o, int size) {
    const int lo = std::max(0, o * geom.stride - geom.pad);
    const int hi = std::min(size, o * geom.stride - geom.pad + geom.kernel);
    return std::pair{lo, hi};
  };
  for (int p = 0; p < n * c; ++p) {
    const double* xp = xv.data() + static_cast<std::size_t>(p) * h * w;
    for (int oh = 0; oh < ho; ++oh) {
      auto [h0, h1] = window(oh, h);
      for (int ow = 0; ow < wo; ++ow) {
        auto [w0, w1] = window(ow, w);
        double s = 0.0;
        for (int ih = h0; ih < h1; ++ih)
          for (int iw = w0; iw < w1; ++iw) s += xp[ih * w + iw];
        out[(static_cast<std::size_t>(p) * ho + oh) * wo + ow] = s / static_cast<double>((h1 - h0) * (w1 - w0));
      }
    }
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, n, c, h, w, ho, wo, window](Tape& t, int self) {
    Tensor* dx = t.grad_sink(ix);
    if (!dx) return;
    const Tensor& g = t.out_grad(self);
    for (int p = 0; p < n * c; ++p) {
      double* dp = dx->data() + static_cast<std::size_t>(p) * h * w;
      for (int oh = 0; oh < ho; ++oh) {
        auto [h0, h1] = window(oh, h);
        for (int ow = 0; ow < wo; ++ow) {
          auto [w0, w1] = window(ow, w);
          const double v =
              g[(static_cast<std::size_t>(p) * ho + oh) * wo + ow] / static_cast<double>((h1 - h0) * (w1 - w0));
          for (int ih = h0; ih < h1; ++ih)
            for (int iw = w0; iw < w1; ++iw) dp[ih * w + iw] += v;
        }
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x.value();
  require(xv.rank() == 4, "global_avg_pool", "input must be NCHW");
  const int n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor out({n, c});
  for (int p = 0; p < n * c; ++p) {
    double s = 0.0;
    const double* xp = xv.data() + static_cast<std::size_t>(p) * plane;
    for (int k = 0; k < plane; ++k) s += xp[k];
    out[static_cast<std::size_t>(p)] = s / plane;
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, n, c, plane](Tape& t, int self) {
    Tensor* dx = t.grad_sink(ix);
    if (!dx) return;
    const Tensor& g = t.out_grad(self);
    for (int p = 0; p < n * c; ++p) {
      const double v = g[static_cast<std::size_t>(p)] / plane;
      double* dp = dx->data() + static_cast<std::size_t>(p) * plane;
      for (int k = 0; k < plane; ++k) dp[k] += v;
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1), "linear",
          "shape mismatch " + shape_string(xv.shape()) + " x " + shape_string(wv.shape()));
  const int n = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
  Tensor out({n, o});
  MapMat(out.data(), n, o).noalias() = ConstMapMat(xv.data(), n, f) * ConstMapMat(wv.data(), o, f).transpose();
  if (bias.valid()) {
    require(bias.value().size() == static_cast<std::size_t>(o), "linear", "bias length mismatch");
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < o; ++k) out[static_cast<std::size_t>(i) * o + k] += bias.value()[static_cast<std::size_t>(k)];
  }
  const int ix = x.id(), iw = weight.id(), ib = bias.valid() ? bias.id() : -1;
  std::vector<int> inputs{ix, iw};
  if (ib >= 0) inputs.push_back(ib);
  return x.tape().record(std::move(out), inputs, [ix, iw, ib, n, f, o](Tape& t, int self) {
    const Tensor& g = t.out_grad(self);
    ConstMapMat gm(g.data(), n, o);
    if (Tensor* dx = t.grad_sink(ix)) MapMat(dx->data(), n, f).noalias() += gm * ConstMapMat(t.value(iw).data(), o, f);
    if (Tensor* dw = t.grad_sink(iw))
      MapMat(dw->data(), o, f).noalias() += gm.transpose() * ConstMapMat(t.value(ix).data(), n, f);
    if (ib >= 0)
      if (Tensor* db = t.grad_sink(ib))
        for (int i = 0; i < n; ++i)
          for (int k = 0; k < o; ++k) (*db)[static_cast<std::size_t>(k)] += g[static_cast<std::size_t>(i) * o + k];
  });
}

Var flatten(const Var& x) {
  const Tensor& xv = x.value();
  require(xv.rank() >= 1, "flatten", "rank-0 input");
  const int n = xv.dim(0);
  const int f = n > 0 ? static_cast<int>(xv.size()) / n : 0;
  const int ix = x.id();
  return x.tape().record(xv.reshaped({n, f}), {ix}, [ix](Tape& t, int self) {
    if (Tensor* dx = t.grad_sink(ix)) axpy(1.0, t.out_grad(self).values(), dx->values());
  });
}

Var concat_channels(std::span<const Var> parts) {
  require(!parts.empty(), "concat_channels", "no inputs");
  const Tensor& first = parts[0].value();
  require(first.rank() == 4, "concat_channels", "inputs must be NCHW");
  const int n = first.dim(0), h = first.dim(2), w = first.dim(3);
  int total = 0;
  std::vector<int> ids, channels;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    require(v.rank() == 4 && v.dim(0) == n && v.dim(2) == h && v.dim(3) == w, "concat_channels",
            "incompatible part " + shape_string(v.shape()));
    ids.push_back(p.id());
    channels.push_back(v.dim(1));
    total += v.dim(1);
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({n, total, h, w});
  for (int i = 0; i < n; ++i) {
    int offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const Tensor& v = parts[k].value();
      const std::size_t len = static_cast<std::size_t>(channels[k]) * plane;
      std::copy_n(v.data() + static_cast<std::size_t>(i) * len, len,
                  out.data() + (static_cast<std::size_t>(i) * total + offset) * plane);
      offset += channels[k];
    }
  }
  return parts[0].tape().record(std::move(out), ids, [ids, channels, n, total, plane](Tape& t, int self) {
    const Tensor& g = t.out_grad(self);
    int offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t len = static_cast<std::size_t>(channels[k]) * plane;
      if (Tensor* d = t.grad_sink(ids[k]))
        for (int i = 0; i < n; ++i) {
          const double* src = g.data() + (static_cast<std::size_t>(i) * total + offset) * plane;
          double* dst = d->data() + static_cast<std::size_t>(i) * len;
          for (std::size_t e = 0; e < len; ++e) dst[e] += src[e];
        }
      offset += channels[k];
    }
  });
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw InputError("softmax_rows: expected [R, K]");
  const int r = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (int i = 0; i < r; ++i) {
    const double* z = logits.data() + static_cast<std::size_t>(i) * k;
    double* p = out.data() + static_cast<std::size_t>(i) * k;
    const double m = *std::max_element(z, z + k);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += (p[j] = std::exp(z[j] - m));
    for (int j = 0; j < k; ++j) p[j] /= s;
  }
  return out;
}

Var softmax_rows(const Var& logits, const std::vector<bool>& mask) {
  const Tensor& z = logits.value();
  require(z.rank() == 2, "softmax_rows", "expected [R, K]");
  const int r = z.dim(0), k = z.dim(1);
  const bool per_row = mask.size() == static_cast<std::size_t>(r) * k && r > 1;
  require(mask.empty() || per_row || mask.size() == static_cast<std::size_t>(k), "softmax_rows",
          "mask must have K or R*K entries");
  auto allowed = [&](int i, int j) {
    if (mask.empty()) return true;
    return per_row ? bool(mask[static_cast<std::size_t>(i) * k + j]) : bool(mask[static_cast<std::size_t>(j)]);
  };
  Tensor out(z.shape());
  for (int i = 0; i < r; ++i) {
    const double* zr = z.data() + static_cast<std::size_t>(i) * k;
    double* p = out.data() + static_cast<std::size_t>(i) * k;
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j)
      if (allowed(i, j)) m = std::max(m, zr[j]);
    require(m > -std::numeric_limits<double>::infinity(), "softmax_rows", "mask excludes every column of a row");
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      p[j] = allowed(i, j) ? std::exp(zr[j] - m) : 0.0;
      s += p[j];
    }
    for (int j = 0; j < k; ++j) p[j] /= s;
  }
  const int iz = logits.id();
  return logits.tape().record(std::move(out), {iz}, [iz, r, k](Tape& t, int self) {
    Tensor* dz = t.grad_sink(iz);
    if (!dz) return;
    const Tensor& g = t.out_grad(self);
    const Tensor& p = t.value(self);
    for (int i = 0; i < r; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * k;
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += p[base + j] * g[base + j];
      for (int j = 0; j < k; ++j) (*dz)[base + j] += p[base + j] * (g[base + j] - s);
    }
  });
}

Var weighted_sum(std::span<const Var> terms, const Var& weights, int row) {
  const Tensor& wv = weights.value();
  require(wv.rank() == 2 && wv.dim(1) == static_cast<int>(terms.size()), "weighted_sum",
          "weights must be [R, terms]");
  require(row >= 0 && row < wv.dim(0), "weighted_sum", "row out of range");
  const Var* ref = nullptr;
  for (const Var& v : terms)
    if (v.valid()) {
      if (ref) require_same_shape(*ref, v, "weighted_sum");
      ref = &v;
    }
  require(ref != nullptr, "weighted_sum", "all terms empty");
  const int k = wv.dim(1);
  Tensor out(ref->shape());
  std::vector<int> ids{weights.id()}, term_ids(static_cast<std::size_t>(k), -1);
  for (int j = 0; j < k; ++j) {
    const Var& v = terms[static_cast<std::size_t>(j)];
    if (!v.valid()) continue;
    axpy(wv[static_cast<std::size_t>(row) * k + j], v.value().values(), out.values());
    ids.push_back(v.id());
    term_ids[static_cast<std::size_t>(j)] = v.id();
  }
  const int iw = weights.id();
  return ref->tape().record(std::move(out), ids, [iw, term_ids, row, k](Tape& t, int self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& wv = t.value(iw);
    Tensor* dw = t.grad_sink(iw);
    for (int j = 0; j < k; ++j) {
      const int id = term_ids[static_cast<std::size_t>(j)];
      if (id < 0) continue;
      if (dw) (*dw)[static_cast<std::size_t>(row) * k + j] += dot(g.values(), t.value(id).values());
      if (Tensor* dt = t.grad_sink(id)) axpy(wv[static_cast<std::size_t>(row) * k + j], g.values(), dt->values());
    }
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  require(z.rank() == 2 && z.dim(0) == static_cast<int>(labels.size()), "cross_entropy",
          "logits " + shape_string(z.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  const int n = z.dim(0), k = z.dim(1);
  Tensor p = softmax_rows(z);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < k, "cross_entropy", "label out of range");
    const double* zr = z.data() + static_cast<std::size_t>(i) * k;
    const double m = *std::max_element(zr, zr + k);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += std::exp(zr[j] - m);
    loss += -(zr[y] - m - std::log(s));
  }
  const int iz = logits.id();
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape().record(Tensor::scalar(loss / n), {iz}, [iz, n, k, ys = std::move(ys), p = std::move(p)](Tape& t, int self) {
    Tensor* dz = t.grad_sink(iz);
    if (!dz) return;
    const double g = t.out_grad(self)[0] / n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        const std::size_t e = static_cast<std::size_t>(i) * k + j;
        (*dz)[e] += g * (p[e] - (j == ys[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
      }
  });
}

Var soft_cross_entropy(const Var& logits, const Tensor& target) {
  const Tensor& z = logits.value();
  require(z.rank() == 2 && target.shape() == z.shape(), "soft_cross_entropy", "target shape mismatch");
  const int n = z.dim(0), k = z.dim(1);
  Tensor p = softmax_rows(z);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* zr = z.data() + static_cast<std::size_t>(i) * k;
    const double m = *std::max_element(zr, zr + k);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += std::exp(zr[j] - m);
    const double lse = m + std::log(s);
    for (int j = 0; j < k; ++j) loss -= target[static_cast<std::size_t>(i) * k + j] * (zr[j] - lse);
  }
  const int iz = logits.id();
  return logits.tape().record(Tensor::scalar(loss / n), {iz}, [iz, n, k, target, p = std::move(p)](Tape& t, int self) {
    Tensor* dz = t.grad_sink(iz);
    if (!dz) return;
    const double g = t.out_grad(self)[0] / n;
    for (int i = 0; i < n; ++i) {
      double mass = 0.0;
      for (int j = 0; j < k; ++j) mass += target[static_cast<std::size_t>(i) * k + j];
      for (int j = 0; j < k; ++j) {
        const std::size_t e = static_cast<std::size_t>(i) * k + j;
        (*dz)[e] += g * (p[e] * mass - target[e]);
      }
    }
  });
}

Var mean_of_columns(const Var& x, std::span<const int> columns) {
  const Tensor& xv = x.value();
  require(xv.rank() == 2 && !columns.empty(), "mean_of_columns", "expected [N, F] and at least one column");
  const int n = xv.dim(0), f = xv.dim(1);
  double s = 0.0;
  for (int c : columns) require(c >= 0 && c < f, "mean_of_columns", "column out of range");
  for (int i = 0; i < n; ++i)
    for (int c : columns) s += xv[static_cast<std::size_t>(i) * f + c];
  const double denom = static_cast<double>(n) * static_cast<double>(columns.size());
  const int ix = x.id();
  std::vector<int> cols(columns.begin(), columns.end());
  return x.tape().record(Tensor::scalar(s / denom), {ix}, [ix, n, f, denom, cols = std::move(cols)](Tape& t, int self) {
    Tensor* dx = t.grad_sink(ix);
    if (!dx) return;
    const double g = t.out_grad(self)[0] / denom;
    for (int i = 0; i < n; ++i)
      for (int c : cols) (*dx)[static_cast<std::size_t>(i) * f + c] += g;
  });
}

Var blend_patch(const Var& x, const Var& patch, int row0, int col0, double keep) {
  const Tensor& xv = x.value();
  const Tensor& pv = patch.value();
  require(xv.rank() == 4 && pv.rank() == 3 && pv.dim(0) == xv.dim(1), "blend_patch", "patch must be [C, ph, pw]");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3), ph = pv.dim(1), pw = pv.dim(2);
  require(row0 >= 0 && col0 >= 0 && row0 + ph <= h && col0 + pw <= w, "blend_patch", "patch outside image bounds");
  Tensor out = xv;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int r = 0; r < ph; ++r)
        for (int q = 0; q < pw; ++q) {
          const std::size_t e = ((static_cast<std::size_t>(i) * c + ch) * h + row0 + r) * w + col0 + q;
          out[e] = keep * xv[e] + (1.0 - keep) * pv[(static_cast<std::size_t>(ch) * ph + r) * pw + q];
        }
  const int ix = x.id(), ip = patch.id();
  return x.tape().record(std::move(out), {ix, ip}, [ix, ip, n, c, h, w, ph, pw, row0, col0, keep](Tape& t, int self) {
    const Tensor& g = t.out_grad(self);
    Tensor* dx = t.grad_sink(ix);
    Tensor* dp = t.grad_sink(ip);
    if (dx) axpy(1.0, g.values(), dx->values());
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < ph; ++r)
          for (int q = 0; q < pw; ++q) {
            const std::size_t e = ((static_cast<std::size_t>(i) * c + ch) * h + row0 + r) * w + col0 + q;
            if (dx) (*dx)[e] -= (1.0 - keep) * g[e];
            if (dp) (*dp)[(static_cast<std::size_t>(ch) * ph + r) * pw + q] += (1.0 - keep) * g[e];
          }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const int ix = x.id();
  return x.tape().record(Tensor::scalar(s), {ix}, [ix](Tape& t, int self) {
    Tensor* dx = t.grad_sink(ix);
    if (!dx) return;
    const double g = t.out_grad(self)[0];
    for (double& v : dx->values()) v += g;
  });
}

std::vector<int> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw InputError("argmax_rows: expected [N, K]");
  const int n = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* r = scores.data() + static_cast<std::size_t>(i) * k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(r, r + k) - r);
  }
  return out;
}

}  // namespace naslab
