#include "rpdetect/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "rpdetect/error.hpp"
#include "rpdetect/tape.hpp"

namespace rpdetect {

namespace {

// Single-threaded BLAS keeps every product bit-reproducible; callers that
// want parallelism run independent work on their own threads.
const bool blas_pinned = [] {
  openblas_set_num_threads(1);
  return true;
}();

struct ConvGeometry {
  int n, cin, h, w;
  int cout, k, stride, pad, groups;
  int cg, og, ho, wo;
  bool direct;  // 1x1, stride 1, no padding: the input plane is the column matrix

  std::int64_t col_rows() const { return static_cast<std::int64_t>(cg) * k * k; }
  std::int64_t col_cols() const { return static_cast<std::int64_t>(ho) * wo; }
};

ConvGeometry make_geometry(const Shape& in, const ConvLayer& layer, const Shape& out) {
  ConvGeometry g{};
  g.n = in.n;
  g.cin = in.c;
  g.h = in.h;
  g.w = in.w;
  g.cout = layer.out_channels();
  g.k = layer.kernel();
  g.stride = layer.stride;
  g.pad = layer.padding;
  g.groups = layer.groups;
  g.cg = g.cin / g.groups;
  g.og = g.cout / g.groups;
  g.ho = out.h;
  g.wo = out.w;
  g.direct = g.k == 1 && g.stride == 1 && g.pad == 0;
  return g;
}

// Range of output columns whose input column lies inside [0, w).
void valid_columns(const ConvGeometry& g, int kw, int& lo, int& hi) {
  const int first = g.pad - kw;
  lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
  const int last = g.w - 1 + g.pad - kw;
  hi = last < 0 ? 0 : std::min(g.wo, last / g.stride + 1);
  if (hi < lo) hi = lo;
}

void im2col(const float* x, const ConvGeometry& g, float* col) {
  const std::int64_t plane = static_cast<std::int64_t>(g.h) * g.w;
  for (int c = 0; c < g.cg; ++c) {
    const float* xc = x + c * plane;
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw) {
        float* row = col + ((static_cast<std::int64_t>(c) * g.k + kh) * g.k + kw) * g.col_cols();
        int lo = 0, hi = 0;
        valid_columns(g, kw, lo, hi);
        for (int oh = 0; oh < g.ho; ++oh) {
          float* r = row + static_cast<std::int64_t>(oh) * g.wo;
          const int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h) {
            std::fill(r, r + g.wo, 0.0f);
            continue;
          }
          std::fill(r, r + lo, 0.0f);
          std::fill(r + hi, r + g.wo, 0.0f);
          const float* xr = xc + static_cast<std::int64_t>(ih) * g.w;
          const int iw0 = lo * g.stride - g.pad + kw;
          if (g.stride == 1) {
            std::memcpy(r + lo, xr + iw0, sizeof(float) * (hi - lo));
          } else {
            for (int ow = lo, iw = iw0; ow < hi; ++ow, iw += g.stride) r[ow] = xr[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvGeometry& g, float* dx) {
  const std::int64_t plane = static_cast<std::int64_t>(g.h) * g.w;
  for (int c = 0; c < g.cg; ++c) {
    float* dc = dx + c * plane;
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw) {
        const float* row =
            col + ((static_cast<std::int64_t>(c) * g.k + kh) * g.k + kw) * g.col_cols();
        int lo = 0, hi = 0;
        valid_columns(g, kw, lo, hi);
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h) continue;
          const float* r = row + static_cast<std::int64_t>(oh) * g.wo;
          float* dr = dc + static_cast<std::int64_t>(ih) * g.w;
          for (int ow = lo, iw = lo * g.stride - g.pad + kw; ow < hi; ++ow, iw += g.stride) {
            dr[iw] += r[ow];
          }
        }
      }
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

// exp with a Cody-Waite reduction and a degree-6 polynomial (about 2 ulp).
// Written branch-free so the activation loops vectorize; the libm call does not.
inline float fast_expf(float x) {
  x = std::min(std::max(x, -87.0f), 88.0f);
  const float n = std::floor(x * 1.44269504088896341f + 0.5f);
  const float r = x - n * 0.693359375f + n * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const std::int32_t bits = (static_cast<std::int32_t>(n) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

inline float sigmoidf(float x) { return 1.0f / (1.0f + fast_expf(-x)); }

std::vector<double> inv_std(const BNLayer& bn) {
  const int c = bn.channels();
  std::vector<double> out(c);
  auto var = bn.running_var.data();
  for (int i = 0; i < c; ++i) {
    const double denom = static_cast<double>(var[i]) + bn.eps;
    if (!(denom > 0.0)) throw ValidationError("bn: running_var + eps must be positive");
    out[i] = 1.0 / std::sqrt(denom);
  }
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvLayer& layer) {
  const Shape out_shape = layer.output_shape(input.shape());
  const ConvGeometry g = make_geometry(input.shape(), layer, out_shape);
  Tensor out(out_shape);

  const float* x = input.data().data();
  const float* wt = layer.weight.data().data();
  float* y = out.mutable_data().data();
  const std::int64_t in_plane = static_cast<std::int64_t>(g.h) * g.w;
  const std::int64_t out_plane = g.col_cols();
  const std::int64_t kdim = g.col_rows();

  std::vector<float> col(g.direct ? 0 : static_cast<std::size_t>(kdim * out_plane));
  for (int n = 0; n < g.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const float* xg = x + (static_cast<std::int64_t>(n) * g.cin + grp * g.cg) * in_plane;
      const float* colp = xg;
      if (!g.direct) {
        im2col(xg, g, col.data());
        colp = col.data();
      }
      const float* wg = wt + static_cast<std::int64_t>(grp) * g.og * kdim;
      float* yg = y + (static_cast<std::int64_t>(n) * g.cout + grp * g.og) * out_plane;
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, g.og, static_cast<int>(out_plane),
                  static_cast<int>(kdim), 1.0f, wg, static_cast<int>(kdim), colp,
                  static_cast<int>(out_plane), 0.0f, yg, static_cast<int>(out_plane));
    }
    if (layer.bias) {
      auto b = layer.bias->data();
      for (int o = 0; o < g.cout; ++o) {
        float* yo = y + (static_cast<std::int64_t>(n) * g.cout + o) * out_plane;
        const float bo = b[o];
        for (std::int64_t i = 0; i < out_plane; ++i) yo[i] += bo;
      }
    }
  }

  const double outputs = static_cast<double>(out_shape.numel());
  FlopCounter::add(2.0 * static_cast<double>(kdim) * outputs + (layer.bias ? outputs : 0.0));

  const Tensor* bias_ptr = layer.bias ? &*layer.bias : nullptr;
  if (GradTape* tape = tape_for(out, {&input, &layer.weight, bias_ptr})) {
    Tensor weight = layer.weight;
    std::optional<Tensor> bias = layer.bias;
    tape->record([input, weight, bias, out, g]() mutable {
      if (!out.has_grad()) return;
      const float* dy = out.grad().data();
      const bool need_dx = input.requires_grad();
      const bool need_dw = weight.requires_grad();
      const bool need_db = bias && bias->requires_grad();
      const std::int64_t in_plane = static_cast<std::int64_t>(g.h) * g.w;
      const std::int64_t out_plane = g.col_cols();
      const std::int64_t kdim = g.col_rows();
      const float* x = input.data().data();
      const float* wt = weight.data().data();
      float* dx = need_dx ? input.mutable_grad().data() : nullptr;
      float* dw = need_dw ? weight.mutable_grad().data() : nullptr;
      float* db = need_db ? bias->mutable_grad().data() : nullptr;
      std::vector<float> col(g.direct || !need_dw ? 0 : static_cast<std::size_t>(kdim * out_plane));
      std::vector<float> dcol(g.direct || !need_dx ? 0
                                                   : static_cast<std::size_t>(kdim * out_plane));
      for (int n = 0; n < g.n; ++n) {
        for (int grp = 0; grp < g.groups; ++grp) {
          const std::int64_t in_off =
              (static_cast<std::int64_t>(n) * g.cin + grp * g.cg) * in_plane;
          const float* dyg = dy + (static_cast<std::int64_t>(n) * g.cout + grp * g.og) * out_plane;
          const float* wg = wt + static_cast<std::int64_t>(grp) * g.og * kdim;
          if (need_dw) {
            const float* colp = x + in_off;
            if (!g.direct) {
              im2col(x + in_off, g, col.data());
              colp = col.data();
            }
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, g.og, static_cast<int>(kdim),
                        static_cast<int>(out_plane), 1.0f, dyg, static_cast<int>(out_plane),
                        colp, static_cast<int>(out_plane), 1.0f,
                        dw + static_cast<std::int64_t>(grp) * g.og * kdim,
                        static_cast<int>(kdim));
          }
          if (need_dx) {
            if (g.direct) {
              cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, g.cg,
                          static_cast<int>(out_plane), g.og, 1.0f, wg, static_cast<int>(kdim),
                          dyg, static_cast<int>(out_plane), 1.0f, dx + in_off,
                          static_cast<int>(out_plane));
            } else {
              cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(kdim),
                          static_cast<int>(out_plane), g.og, 1.0f, wg, static_cast<int>(kdim),
                          dyg, static_cast<int>(out_plane), 0.0f, dcol.data(),
                          static_cast<int>(out_plane));
              col2im_add(dcol.data(), g, dx + in_off);
            }
          }
        }
        if (need_db) {
          for (int o = 0; o < g.cout; ++o) {
            const float* dyo = dy + (static_cast<std::int64_t>(n) * g.cout + o) * out_plane;
            double s = 0.0;
            for (std::int64_t i = 0; i < out_plane; ++i) s += dyo[i];
            db[o] += static_cast<float>(s);
          }
        }
      }
    });
  }
  return out;
}

Tensor batchnorm_infer(const Tensor& input, const BNLayer& bn) {
  bn.validate();
  const Shape s = input.shape();
  if (s.c != bn.channels()) {
    throw ShapeError("batchnorm: input channels " + std::to_string(s.c) + " != bn channels " +
                     std::to_string(bn.channels()));
  }
  const std::vector<double> istd = inv_std(bn);
  std::vector<float> scale(s.c), shift(s.c);
  auto gamma = bn.gamma.data();
  auto beta = bn.beta.data();
  auto mean = bn.running_mean.data();
  for (int c = 0; c < s.c; ++c) {
    scale[c] = static_cast<float>(gamma[c] * istd[c]);
    shift[c] = static_cast<float>(beta[c] - mean[c] * gamma[c] * istd[c]);
  }
  Tensor out(s);
  const float* x = input.data().data();
  float* y = out.mutable_data().data();
  const std::int64_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) y[off + i] = x[off + i] * scale[c] + shift[c];
    }
  }
  FlopCounter::add(2.0 * static_cast<double>(s.numel()));

  if (GradTape* tape = tape_for(out, {&input, &bn.gamma, &bn.beta})) {
    Tensor gamma_t = bn.gamma, beta_t = bn.beta, mean_t = bn.running_mean;
    tape->record([input, out, gamma_t, beta_t, mean_t, istd, scale]() mutable {
      if (!out.has_grad()) return;
      const Shape s = input.shape();
      const std::int64_t plane = s.plane();
      const float* dy = out.grad().data();
      const float* x = input.data().data();
      float* dx = input.requires_grad() ? input.mutable_grad().data() : nullptr;
      float* dgamma = gamma_t.requires_grad() ? gamma_t.mutable_grad().data() : nullptr;
      float* dbeta = beta_t.requires_grad() ? beta_t.mutable_grad().data() : nullptr;
      auto mean = mean_t.data();
      for (int c = 0; c < s.c; ++c) {
        double sdy = 0.0, sdyx = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const std::int64_t off = (static_cast<std::int64_t>(n) * s.c + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const float g = dy[off + i];
            sdy += g;
            sdyx += g * (x[off + i] - mean[c]);
            if (dx) dx[off + i] += g * scale[c];
          }
        }
        if (dgamma) dgamma[c] += static_cast<float>(sdyx * istd[c]);
        if (dbeta) dbeta[c] += static_cast<float>(sdy);
      }
    });
  }
  return out;
}

Tensor batchnorm_train(const Tensor& input, BNLayer& bn) {
  bn.validate();
  const Shape s = input.shape();
  if (s.c != bn.channels()) {
    throw ShapeError("batchnorm: input channels " + std::to_string(s.c) + " != bn channels " +
                     std::to_string(bn.channels()));
  }
  const std::int64_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  if (count <= 0) throw ShapeError("batchnorm: empty input " + s.str());
  const float* x = input.data().data();
  std::vector<double> mean(s.c, 0.0), istd(s.c, 0.0);
  auto rmean = bn.running_mean.mutable_data();
  auto rvar = bn.running_var.mutable_data();
  for (int c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const float* xc = x + (static_cast<std::int64_t>(n) * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) acc += xc[i];
    }
    const double mu = acc / count;
    double sq = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const float* xc = x + (static_cast<std::int64_t>(n) * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double d = xc[i] - mu;
        sq += d * d;
      }
    }
    const double var = sq / count;
    mean[c] = mu;
    istd[c] = 1.0 / std::sqrt(var + bn.eps);
    const double unbiased = count > 1 ? var * count / (count - 1.0) : var;
    rmean[c] = static_cast<float>((1.0 - bn.momentum) * rmean[c] + bn.momentum * mu);
    rvar[c] = static_cast<float>((1.0 - bn.momentum) * rvar[c] + bn.momentum * unbiased);
  }

  Tensor out(s);
  float* y = out.mutable_data().data();
  auto gamma = bn.gamma.data();
  auto beta = bn.beta.data();
  for (int c = 0; c < s.c; ++c) {
    const float sc = static_cast<float>(gamma[c] * istd[c]);
    const float sh = static_cast<float>(beta[c] - mean[c] * gamma[c] * istd[c]);
    for (int n = 0; n < s.n; ++n) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) y[off + i] = x[off + i] * sc + sh;
    }
  }
  FlopCounter::add(2.0 * static_cast<double>(s.numel()));

  if (GradTape* tape = tape_for(out, {&input, &bn.gamma, &bn.beta})) {
    Tensor gamma_t = bn.gamma, beta_t = bn.beta;
    tape->record([input, out, gamma_t, beta_t, mean, istd]() mutable {
      if (!out.has_grad()) return;
      const Shape s = input.shape();
      const std::int64_t plane = s.plane();
      const double count = static_cast<double>(s.n) * static_cast<double>(plane);
      const float* dy = out.grad().data();
      const float* x = input.data().data();
      auto gamma = gamma_t.data();
      float* dx = input.requires_grad() ? input.mutable_grad().data() : nullptr;
      float* dgamma = gamma_t.requires_grad() ? gamma_t.mutable_grad().data() : nullptr;
      float* dbeta = beta_t.requires_grad() ? beta_t.mutable_grad().data() : nullptr;
      for (int c = 0; c < s.c; ++c) {
        double sdy = 0.0, sdyxhat = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const std::int64_t off = (static_cast<std::int64_t>(n) * s.c + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const double xhat = (x[off + i] - mean[c]) * istd[c];
            sdy += dy[off + i];
            sdyxhat += dy[off + i] * xhat;
          }
        }
        if (dgamma) dgamma[c] += static_cast<float>(sdyxhat);
        if (dbeta) dbeta[c] += static_cast<float>(sdy);
        if (dx) {
          const double k = gamma[c] * istd[c] / count;
          for (int n = 0; n < s.n; ++n) {
            const std::int64_t off = (static_cast<std::int64_t>(n) * s.c + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const double xhat = (x[off + i] - mean[c]) * istd[c];
              dx[off + i] += static_cast<float>(k * (count * dy[off + i] - sdy - xhat * sdyxhat));
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor avgpool2d(const Tensor& input, int kernel, int stride, int padding) {
  const Shape s = input.shape();
  if (kernel <= 0 || stride <= 0 || padding < 0) {
    throw ShapeError("avgpool: kernel and stride must be positive, padding non-negative");
  }
  if (s.h + 2 * padding < kernel || s.w + 2 * padding < kernel) {
    throw ShapeError("avgpool: window " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(s.h + 2 * padding) + "x" + std::to_string(s.w + 2 * padding));
  }
  const int ho = (s.h + 2 * padding - kernel) / stride + 1;
  const int wo = (s.w + 2 * padding - kernel) / stride + 1;
  Tensor out(Shape{s.n, s.c, ho, wo});
  const float inv = 1.0f / static_cast<float>(kernel * kernel);
  const float* x = input.data().data();
  float* y = out.mutable_data().data();
  for (int p = 0; p < s.n * s.c; ++p) {
    const float* xp = x + static_cast<std::int64_t>(p) * s.plane();
    float* yp = y + static_cast<std::int64_t>(p) * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow) {
        float acc = 0.0f;
        for (int kh = 0; kh < kernel; ++kh) {
          const int ih = oh * stride - padding + kh;
          if (ih < 0 || ih >= s.h) continue;
          for (int kw = 0; kw < kernel; ++kw) {
            const int iw = ow * stride - padding + kw;
            if (iw < 0 || iw >= s.w) continue;
            acc += xp[ih * s.w + iw];
          }
        }
        yp[oh * wo + ow] = acc * inv;
      }
    }
  }
  FlopCounter::add(static_cast<double>(kernel) * kernel * static_cast<double>(out.numel()));

  if (GradTape* tape = tape_for(out, {&input})) {
    tape->record([input, out, kernel, stride, padding, inv]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      const Shape s = input.shape();
      const Shape o = out.shape();
      const float* dy = out.grad().data();
      float* dx = input.mutable_grad().data();
      for (int p = 0; p < s.n * s.c; ++p) {
        float* dxp = dx + static_cast<std::int64_t>(p) * s.plane();
        const float* dyp = dy + static_cast<std::int64_t>(p) * o.plane();
        for (int oh = 0; oh < o.h; ++oh) {
          for (int ow = 0; ow < o.w; ++ow) {
            const float g = dyp[oh * o.w + ow] * inv;
            for (int kh = 0; kh < kernel; ++kh) {
              const int ih = oh * stride - padding + kh;
              if (ih < 0 || ih >= s.h) continue;
              for (int kw = 0; kw < kernel; ++kw) {
                const int iw = ow * stride - padding + kw;
                if (iw < 0 || iw >= s.w) continue;
                dxp[ih * s.w + iw] += g;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& input, int kernel, int stride) {
  const Shape s = input.shape();
  if (kernel <= 0 || stride <= 0) throw ShapeError("maxpool: kernel and stride must be positive");
  if (s.h < kernel || s.w < kernel) {
    throw ShapeError("maxpool: window " + std::to_string(kernel) + " larger than input " +
                     std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  const int ho = (s.h - kernel) / stride + 1;
  const int wo = (s.w - kernel) / stride + 1;
  Tensor out(Shape{s.n, s.c, ho, wo});
  std::vector<std::int32_t> argmax(static_cast<std::size_t>(out.numel()));
  const float* x = input.data().data();
  float* y = out.mutable_data().data();
  for (int p = 0; p < s.n * s.c; ++p) {
    const float* xp = x + static_cast<std::int64_t>(p) * s.plane();
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow) {
        float best = -std::numeric_limits<float>::infinity();
        int best_idx = (oh * stride) * s.w + ow * stride;
        for (int kh = 0; kh < kernel; ++kh) {
          for (int kw = 0; kw < kernel; ++kw) {
            const int idx = (oh * stride + kh) * s.w + (ow * stride + kw);
            if (xp[idx] > best) {
              best = xp[idx];
              best_idx = idx;
            }
          }
        }
        const std::int64_t o = static_cast<std::int64_t>(p) * ho * wo + oh * wo + ow;
        y[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  FlopCounter::add(static_cast<double>(kernel * kernel - 1) * static_cast<double>(out.numel()));

  if (GradTape* tape = tape_for(out, {&input})) {
    tape->record([input, out, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      const Shape s = input.shape();
      const std::int64_t oplane = out.shape().plane();
      const float* dy = out.grad().data();
      float* dx = input.mutable_grad().data();
      for (std::int64_t i = 0; i < out.numel(); ++i) {
        const std::int64_t p = i / oplane;
        dx[p * s.plane() + argmax[i]] += dy[i];
      }
    });
  }
  return out;
}

Tensor upsample_nearest2x(const Tensor& input) {
  const Shape s = input.shape();
  Tensor out(Shape{s.n, s.c, s.h * 2, s.w * 2});
  const float* x = input.data().data();
  float* y = out.mutable_data().data();
  const int wo = s.w * 2;
  for (int p = 0; p < s.n * s.c; ++p) {
    const float* xp = x + static_cast<std::int64_t>(p) * s.plane();
    float* yp = y + static_cast<std::int64_t>(p) * s.plane() * 4;
    for (int h = 0; h < s.h * 2; ++h) {
      const float* xr = xp + (h / 2) * s.w;
      float* yr = yp + static_cast<std::int64_t>(h) * wo;
      for (int w = 0; w < wo; ++w) yr[w] = xr[w / 2];
    }
  }
  if (GradTape* tape = tape_for(out, {&input})) {
    tape->record([input, out]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      const Shape s = input.shape();
      const int wo = s.w * 2;
      const float* dy = out.grad().data();
      float* dx = input.mutable_grad().data();
      for (int p = 0; p < s.n * s.c; ++p) {
        float* dxp = dx + static_cast<std::int64_t>(p) * s.plane();
        const float* dyp = dy + static_cast<std::int64_t>(p) * s.plane() * 4;
        for (int h = 0; h < s.h * 2; ++h) {
          for (int w = 0; w < wo; ++w) dxp[(h / 2) * s.w + w / 2] += dyp[h * wo + w];
        }
      }
    });
  }
  return out;
}

Tensor downsample_stride2(const Tensor& input) {
  const Shape s = input.shape();
  const int ho = (s.h + 1) / 2;
  const int wo = (s.w + 1) / 2;
  Tensor out(Shape{s.n, s.c, ho, wo});
  const float* x = input.data().data();
  float* y = out.mutable_data().data();
  for (int p = 0; p < s.n * s.c; ++p) {
    const float* xp = x + static_cast<std::int64_t>(p) * s.plane();
    float* yp = y + static_cast<std::int64_t>(p) * ho * wo;
    for (int h = 0; h < ho; ++h) {
      for (int w = 0; w < wo; ++w) yp[h * wo + w] = xp[(2 * h) * s.w + 2 * w];
    }
  }
  if (GradTape* tape = tape_for(out, {&input})) {
    tape->record([input, out]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      const Shape s = input.shape();
      const Shape o = out.shape();
      const float* dy = out.grad().data();
      float* dx = input.mutable_grad().data();
      for (int p = 0; p < s.n * s.c; ++p) {
        float* dxp = dx + static_cast<std::int64_t>(p) * s.plane();
        const float* dyp = dy + static_cast<std::int64_t>(p) * o.plane();
        for (int h = 0; h < o.h; ++h) {
          for (int w = 0; w < o.w; ++w) dxp[(2 * h) * s.w + 2 * w] += dyp[h * o.w + w];
        }
      }
    });
  }
  return out;
}

Tensor activation(const Tensor& input, Activation kind) {
  if (kind == Activation::identity) return input;
  Tensor out(input.shape());
  auto x = input.data();
  auto y = out.mutable_data();
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoidf(x[i]);
      break;
    case Activation::silu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoidf(x[i]);
      break;
    case Activation::identity:
      break;
  }
  FlopCounter::add(static_cast<double>(x.size()));

  if (GradTape* tape = tape_for(out, {&input})) {
    tape->record([input, out, kind]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      auto x = input.data();
      auto y = out.data();
      auto dy = out.grad();
      auto dx = input.mutable_grad();
      switch (kind) {
        case Activation::relu:
          for (std::size_t i = 0; i < x.size(); ++i) dx[i] += x[i] > 0.0f ? dy[i] : 0.0f;
          break;
        case Activation::sigmoid:
          for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * y[i] * (1.0f - y[i]);
          break;
        case Activation::silu:
          for (std::size_t i = 0; i < x.size(); ++i) {
            const float sg = sigmoidf(x[i]);
            dx[i] += dy[i] * sg * (1.0f + x[i] * (1.0f - sg));
          }
          break;
        case Activation::identity:
          break;
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto z = out.mutable_data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  FlopCounter::add(static_cast<double>(z.size()));
  if (GradTape* tape = tape_for(out, {&a, &b})) {
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto dz = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto d = t->mutable_grad();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dz[i];
      }
    });
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape first = parts.front().shape();
  int channels = 0;
  for (const Tensor& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat: operand " + s.str() + " incompatible with " + first.str());
    }
    channels += s.c;
  }
  Tensor out(Shape{first.n, channels, first.h, first.w});
  float* y = out.mutable_data().data();
  const std::int64_t plane = first.plane();
  for (int n = 0; n < first.n; ++n) {
    float* yn = y + static_cast<std::int64_t>(n) * channels * plane;
    for (const Tensor& p : parts) {
      const std::int64_t len = static_cast<std::int64_t>(p.shape().c) * plane;
      std::memcpy(yn, p.data().data() + n * len, sizeof(float) * len);
      yn += len;
    }
  }
  if (GradTape* tape = tape_for(out, parts)) {
    tape->record([parts, out]() mutable {
      if (!out.has_grad()) return;
      const Shape s = out.shape();
      const float* dy = out.grad().data();
      const std::int64_t plane = s.plane();
      for (int n = 0; n < s.n; ++n) {
        const float* dyn = dy + static_cast<std::int64_t>(n) * s.c * plane;
        for (const Tensor& p : parts) {
          const std::int64_t len = static_cast<std::int64_t>(p.shape().c) * plane;
          if (p.requires_grad()) {
            float* dx = p.mutable_grad().data() + n * len;
            for (std::int64_t i = 0; i < len; ++i) dx[i] += dyn[i];
          }
          dyn += len;
        }
      }
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& input, int begin, int count) {
  const Shape s = input.shape();
  if (begin < 0 || count <= 0 || begin + count > s.c) {
    throw ShapeError("slice: channels [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + s.str());
  }
  Tensor out(Shape{s.n, count, s.h, s.w});
  const std::int64_t plane = s.plane();
  float* y = out.mutable_data().data();
  const float* x = input.data().data();
  for (int n = 0; n < s.n; ++n) {
    std::memcpy(y + static_cast<std::int64_t>(n) * count * plane,
                x + (static_cast<std::int64_t>(n) * s.c + begin) * plane,
                sizeof(float) * count * plane);
  }
  if (GradTape* tape = tape_for(out, {&input})) {
    tape->record([input, out, begin, count]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      const Shape s = input.shape();
      const std::int64_t plane = s.plane();
      const float* dy = out.grad().data();
      float* dx = input.mutable_grad().data();
      for (int n = 0; n < s.n; ++n) {
        const float* src = dy + static_cast<std::int64_t>(n) * count * plane;
        float* dst = dx + (static_cast<std::int64_t>(n) * s.c + begin) * plane;
        for (std::int64_t i = 0; i < count * plane; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& input) {
  double acc = 0.0;
  for (float v : input.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (GradTape* tape = tape_for(out, {&input})) {
    tape->record([input, out]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      const float g = out.grad()[0];
      for (float& d : input.mutable_grad()) d += g;
    });
  }
  return out;
}

Tensor dot(const Tensor& input, const Tensor& weights) {
  require_same_shape(input, weights, "dot");
  double acc = 0.0;
  auto x = input.data();
  auto w = weights.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * w[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (GradTape* tape = tape_for(out, {&input})) {
    tape->record([input, weights, out]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      const float g = out.grad()[0];
      auto w = weights.data();
      auto d = input.mutable_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * w[i];
    });
  }
  return out;
}

}  // namespace rpdetect
