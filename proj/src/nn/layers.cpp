#include "scz/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "scz/error.hpp"

namespace scz {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

[[noreturn]] void no_forward(std::string_view kind) {
  throw Error(Errc::no_cached_forward, std::string(kind) + ": backward called before forward");
}

struct ConvGeometry {
  std::size_t batch, in_c, h, w, out_c, group_in, group_out, k, out_h, out_w, groups;
  int stride, pad;

  std::size_t patch() const { return group_in * k * k; }
  std::size_t out_plane() const { return out_h * out_w; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Accepts [C,H,W] (batch of one) or [B,C,H,W].
ConvGeometry conv_geometry(const Shape& in, const Shape& wshape, const Conv2dSpec& spec) {
  if (in.size() != 3 && in.size() != 4) {
    throw Error(Errc::shape_mismatch, "conv2d: input must be [C,H,W] or [B,C,H,W], got " + shape_str(in));
  }
  if (wshape.size() != 4 || wshape[2] != wshape[3]) {
    throw Error(Errc::shape_mismatch, "conv2d: weights must be [C_out,C_in/groups,k,k], got " + shape_str(wshape));
  }
  if (spec.stride < 1 || spec.padding < 0 || spec.groups < 1) {
    throw Error(Errc::shape_mismatch, "conv2d: stride >= 1, padding >= 0, groups >= 1 required");
  }
  const std::size_t off = in.size() == 4 ? 1 : 0;
  ConvGeometry g{};
  g.batch = off ? in[0] : 1;
  g.in_c = in[off];
  g.h = in[off + 1];
  g.w = in[off + 2];
  g.out_c = wshape[0];
  g.groups = static_cast<std::size_t>(spec.groups);
  g.k = wshape[2];
  g.stride = spec.stride;
  g.pad = spec.padding;
  if (g.in_c % g.groups != 0 || g.out_c % g.groups != 0 || wshape[1] != g.in_c / g.groups) {
    throw Error(Errc::shape_mismatch, "conv2d: channel counts " + shape_str(in) + " / " + shape_str(wshape) +
                                          " incompatible with groups=" + std::to_string(spec.groups));
  }
  g.group_in = g.in_c / g.groups;
  g.group_out = g.out_c / g.groups;
  const std::size_t ph = g.h + 2 * static_cast<std::size_t>(g.pad);
  const std::size_t pw = g.w + 2 * static_cast<std::size_t>(g.pad);
  if (ph < g.k || pw < g.k) throw Error(Errc::shape_mismatch, "conv2d: kernel larger than padded input");
  g.out_h = (ph - g.k) / static_cast<std::size_t>(g.stride) + 1;
  g.out_w = (pw - g.k) / static_cast<std::size_t>(g.stride) + 1;
  return g;
}

// Unfolds one group's [group_in,H,W] planes into a [group_in*k*k, Ho*Wo] matrix.
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const long H = static_cast<long>(g.h), W = static_cast<long>(g.w);
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.group_in; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = xc + iy * W;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
  const long H = static_cast<long>(g.h), W = static_cast<long>(g.w);
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.group_in; ++c) {
    double* dxc = dx + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= H) continue;
          const double* src = row + oy * g.out_w;
          double* dst = dxc + iy * W;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Narrow convolutions (few outputs per group, e.g. depthwise or the inception
// branches) spend more time unfolding patches than multiplying, so they are
// computed directly by accumulating shifted rows.
bool use_direct(const ConvGeometry& g) { return g.group_out <= 8 && !g.pointwise(); }

// Output columns [lo, hi) whose input column ox*stride - pad + kx is in range.
std::pair<std::size_t, std::size_t> valid_cols(const ConvGeometry& g, std::size_t kx) {
  const long s = g.stride, off = static_cast<long>(kx) - g.pad, W = static_cast<long>(g.w);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = W - 1 - off < 0 ? 0 : (W - 1 - off) / s + 1;
  hi = std::min<long>(hi, static_cast<long>(g.out_w));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// out[group_out, Ho*Wo] += W (*) x for one group of one batch item.
void direct_forward(const double* x, const double* w, const ConvGeometry& g, double* out) {
  const std::size_t plane = g.out_plane();
  for (std::size_t o = 0; o < g.group_out; ++o) {
    double* oplane = out + o * plane;
    for (std::size_t c = 0; c < g.group_in; ++c) {
      const double* xc = x + c * g.h * g.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const double wv = w[((o * g.group_in + c) * g.k + ky) * g.k + kx];
          const auto [lo, hi] = valid_cols(g, kx);
          const long xoff = static_cast<long>(kx) - g.pad;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            const double* src = xc + iy * static_cast<long>(g.w) + xoff;
            double* dst = oplane + oy * g.out_w;
            if (g.stride == 1) {
              for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox];
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox * g.stride];
            }
          }
        }
      }
    }
  }
}

// Weight and input gradients for one group of one batch item.
void direct_backward(const double* x, const double* w, const double* go, const ConvGeometry& g, double* gw,
                     double* dx) {
  const std::size_t plane = g.out_plane();
  // Per-column partial sums keep the inner loop free of a serial reduction.
  std::vector<double> acc(g.out_w);
  for (std::size_t o = 0; o < g.group_out; ++o) {
    const double* gplane = go + o * plane;
    for (std::size_t c = 0; c < g.group_in; ++c) {
      const double* xc = x + c * g.h * g.w;
      double* dxc = dx + c * g.h * g.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const std::size_t wi = ((o * g.group_in + c) * g.k + ky) * g.k + kx;
          const double wv = w[wi];
          const auto [lo, hi] = valid_cols(g, kx);
          const long xoff = static_cast<long>(kx) - g.pad;
          std::fill(acc.begin(), acc.end(), 0.0);
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            const long base = iy * static_cast<long>(g.w) + xoff;
            const double* src = xc + base;
            double* dst = dxc + base;
            const double* gr = gplane + oy * g.out_w;
            if (g.stride == 1) {
              for (std::size_t ox = lo; ox < hi; ++ox) {
                acc[ox] += gr[ox] * src[ox];
                dst[ox] += wv * gr[ox];
              }
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox) {
                acc[ox] += gr[ox] * src[ox * g.stride];
                dst[ox * g.stride] += wv * gr[ox];
              }
            }
          }
          double sum = 0.0;
          for (std::size_t ox = lo; ox < hi; ++ox) sum += acc[ox];
          gw[wi] += sum;
        }
      }
    }
  }
}

// Stride-1 variant on a zero-padded copy: with rows laid out at the padded
// width every kernel tap becomes one long contiguous axpy. The extra columns
// at the right of each output row are scratch and get dropped.
struct PaddedPlanes {
  std::size_t hp, wp, ho, n;
  std::vector<double> data;  // group_in planes of hp*wp, plus k spare zeros

  PaddedPlanes(const ConvGeometry& g)
      : hp(g.h + 2 * static_cast<std::size_t>(g.pad)),
        wp(g.w + 2 * static_cast<std::size_t>(g.pad)),
        ho(g.out_h),
        n(g.out_h * wp),
        data(g.group_in * hp * wp + g.k, 0.0) {}

  double* plane(std::size_t c) { return data.data() + c * hp * wp; }
};

using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void pad_planes(const double* x, const ConvGeometry& g, PaddedPlanes& p) {
  const std::size_t pad = static_cast<std::size_t>(g.pad);
  for (std::size_t c = 0; c < g.group_in; ++c) {
    for (std::size_t y = 0; y < g.h; ++y) {
      std::copy_n(x + (c * g.h + y) * g.w, g.w, p.plane(c) + (y + pad) * p.wp + pad);
    }
  }
}

void direct_forward_s1(const double* x, const double* w, const ConvGeometry& g, double* out) {
  PaddedPlanes p(g);
  pad_planes(x, g, p);
  Eigen::VectorXd wide(static_cast<Eigen::Index>(p.n));
  const auto n = static_cast<Eigen::Index>(p.n);
  for (std::size_t o = 0; o < g.group_out; ++o) {
    wide.setZero();
    for (std::size_t c = 0; c < g.group_in; ++c) {
      const double* xc = p.plane(c);
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const double wv = w[((o * g.group_in + c) * g.k + ky) * g.k + kx];
          wide.noalias() += wv * ConstVecMap(xc + ky * p.wp + kx, n);
        }
      }
    }
    double* oplane = out + o * g.out_plane();
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      double* dst = oplane + oy * g.out_w;
      const double* src = wide.data() + oy * p.wp;
      for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[ox] += src[ox];
    }
  }
}

void direct_backward_s1(const double* x, const double* w, const double* go, const ConvGeometry& g, double* gw,
                        double* dx) {
  PaddedPlanes p(g);
  pad_planes(x, g, p);
  PaddedPlanes dpad(g);
  const auto n = static_cast<Eigen::Index>(p.n);
  Eigen::VectorXd wide = Eigen::VectorXd::Zero(n);
  for (std::size_t o = 0; o < g.group_out; ++o) {
    const double* gplane = go + o * g.out_plane();
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      std::copy_n(gplane + oy * g.out_w, g.out_w, wide.data() + oy * p.wp);
    }
    for (std::size_t c = 0; c < g.group_in; ++c) {
      const double* xc = p.plane(c);
      double* dc = dpad.plane(c);
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const std::size_t wi = ((o * g.group_in + c) * g.k + ky) * g.k + kx;
          const std::size_t off = ky * p.wp + kx;
          gw[wi] += wide.dot(ConstVecMap(xc + off, n));
          VecMap(dc + off, n).noalias() += w[wi] * wide;
        }
      }
    }
  }
  const std::size_t pad = static_cast<std::size_t>(g.pad);
  for (std::size_t c = 0; c < g.group_in; ++c) {
    for (std::size_t y = 0; y < g.h; ++y) {
      const double* src = dpad.plane(c) + (y + pad) * p.wp + pad;
      double* dst = dx + (c * g.h + y) * g.w;
      for (std::size_t i = 0; i < g.w; ++i) dst[i] += src[i];
    }
  }
}

Shape conv_out_shape(const Shape& in, const ConvGeometry& g) {
  if (in.size() == 3) return {g.out_c, g.out_h, g.out_w};
  return {g.batch, g.out_c, g.out_h, g.out_w};
}

void require_spatial(const Shape& s, std::string_view where) {
  if (s.size() != 4) throw Error(Errc::shape_mismatch, std::string(where) + ": expected [B,C,H,W], got " + shape_str(s));
}


Tensor slice_channels(const Tensor& t, std::size_t start, std::size_t count) {
  const std::size_t B = t.dim(0), C = t.dim(1), plane = t.dim(2) * t.dim(3);
  Tensor out({B, count, t.dim(2), t.dim(3)});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(t.ptr() + (b * C + start) * plane, count * plane, out.ptr() + b * count * plane);
  }
  return out;
}

}  // namespace

void Layer::zero_grad() {
  for (auto& p : params()) p.grad->fill(0.0);
}

// -- conv2d -------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, Conv2dSpec spec) {
  const ConvGeometry g = conv_geometry(input.shape(), weights.shape(), spec);
  require_shape(bias, {g.out_c}, "conv2d bias");
  Tensor out(conv_out_shape(input.shape(), g));
  const std::size_t patch = g.patch(), plane = g.out_plane();
  const bool direct = use_direct(g);
  std::vector<double> cols(g.pointwise() || direct ? 0 : patch * plane);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t gi = 0; gi < g.groups; ++gi) {
      const double* x = input.ptr() + (b * g.in_c + gi * g.group_in) * g.h * g.w;
      if (direct && g.stride == 1) {
        direct_forward_s1(x, weights.ptr() + gi * g.group_out * patch, g,
                          out.ptr() + (b * g.out_c + gi * g.group_out) * plane);
        continue;
      }
      if (direct) {
        direct_forward(x, weights.ptr() + gi * g.group_out * patch, g,
                       out.ptr() + (b * g.out_c + gi * g.group_out) * plane);
        continue;
      }
      const double* col_ptr = x;
      if (!g.pointwise()) {
        im2col(x, g, cols.data());
        col_ptr = cols.data();
      }
      ConstMatMap wmat(weights.ptr() + gi * g.group_out * patch, static_cast<Eigen::Index>(g.group_out),
                       static_cast<Eigen::Index>(patch));
      ConstMatMap cmat(col_ptr, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
      MatMap omat(out.ptr() + (b * g.out_c + gi * g.group_out) * plane, static_cast<Eigen::Index>(g.group_out),
                  static_cast<Eigen::Index>(plane));
      omat.noalias() = wmat * cmat;
    }
    for (std::size_t c = 0; c < g.out_c; ++c) {
      double* o = out.ptr() + (b * g.out_c + c) * plane;
      const double bc = bias[c];
      for (std::size_t i = 0; i < plane; ++i) o[i] += bc;
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out, Conv2dSpec spec) {
  const ConvGeometry g = conv_geometry(input.shape(), weights.shape(), spec);
  require_shape(grad_out, conv_out_shape(input.shape(), g), "conv2d backward grad_out");
  Conv2dGrads grads{Tensor(input.shape()), Tensor(weights.shape()), Tensor({g.out_c})};
  const std::size_t patch = g.patch(), plane = g.out_plane();
  const bool direct = use_direct(g);
  std::vector<double> cols(direct || g.pointwise() ? 0 : patch * plane);
  std::vector<double> dcols(direct || g.pointwise() ? 0 : patch * plane);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t gi = 0; gi < g.groups; ++gi) {
      const double* x = input.ptr() + (b * g.in_c + gi * g.group_in) * g.h * g.w;
      double* dx = grads.input.ptr() + (b * g.in_c + gi * g.group_in) * g.h * g.w;
      if (direct && g.stride == 1) {
        direct_backward_s1(x, weights.ptr() + gi * g.group_out * patch,
                           grad_out.ptr() + (b * g.out_c + gi * g.group_out) * plane, g,
                           grads.weights.ptr() + gi * g.group_out * patch, dx);
        continue;
      }
      if (direct) {
        direct_backward(x, weights.ptr() + gi * g.group_out * patch,
                        grad_out.ptr() + (b * g.out_c + gi * g.group_out) * plane, g,
                        grads.weights.ptr() + gi * g.group_out * patch, dx);
        continue;
      }
      const double* col_ptr = x;
      if (!g.pointwise()) {
        im2col(x, g, cols.data());
        col_ptr = cols.data();
      }
      const auto rows_out = static_cast<Eigen::Index>(g.group_out);
      const auto k_dim = static_cast<Eigen::Index>(patch);
      const auto n_dim = static_cast<Eigen::Index>(plane);
      ConstMatMap wmat(weights.ptr() + gi * g.group_out * patch, rows_out, k_dim);
      ConstMatMap cmat(col_ptr, k_dim, n_dim);
      ConstMatMap gomat(grad_out.ptr() + (b * g.out_c + gi * g.group_out) * plane, rows_out, n_dim);
      MatMap gwmat(grads.weights.ptr() + gi * g.group_out * patch, rows_out, k_dim);
      gwmat.noalias() += gomat * cmat.transpose();
      if (g.pointwise()) {
        MatMap dxmat(dx, k_dim, n_dim);
        dxmat.noalias() += wmat.transpose() * gomat;
      } else {
        MatMap dcmat(dcols.data(), k_dim, n_dim);
        dcmat.noalias() = wmat.transpose() * gomat;
        col2im_add(dcols.data(), g, dx);
      }
    }
    for (std::size_t c = 0; c < g.out_c; ++c) {
      const double* go = grad_out.ptr() + (b * g.out_c + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += go[i];
      grads.bias[c] += s;
    }
  }
  return grads;
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Conv2dSpec spec)
    : spec_(spec),
      weights_({out_channels, in_channels / static_cast<std::size_t>(spec.groups), kernel, kernel}),
      bias_({out_channels}),
      grad_weights_(weights_.shape()),
      grad_bias_(bias_.shape()) {
  if (spec.groups < 1 || in_channels % static_cast<std::size_t>(spec.groups) != 0) {
    throw Error(Errc::shape_mismatch, "conv2d: in_channels not divisible by groups");
  }
}

Shape Conv2d::output_shape(const Shape& input) const {
  return conv_out_shape(input, conv_geometry(input, weights_.shape(), spec_));
}

Tensor Conv2d::infer(const Tensor& x) const {
  require_spatial(x.shape(), "conv2d");
  return conv2d(x, weights_, bias_, spec_);
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
  Tensor y = infer(x);
  input_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (!input_) no_forward(kind());
  Conv2dGrads g = conv2d_backward(*input_, weights_, grad_out, spec_);
  grad_weights_ += g.weights;
  grad_bias_ += g.bias;
  return std::move(g.input);
}

std::vector<ParamRef> Conv2d::params() {
  return {{"weight", &weights_, &grad_weights_}, {"bias", &bias_, &grad_bias_}};
}

// -- max pooling ----------------------------------------------------------------

Shape MaxPool::output_shape(const Shape& s) const {
  require_spatial(s, kind());
  if (window_ == 2 && stride_ == 2 && (s[2] % 2 != 0 || s[3] % 2 != 0)) {
    throw Error(Errc::odd_spatial_dim, "maxpool2: spatial dims must be even, got " + shape_str(s));
  }
  const auto span = static_cast<std::size_t>(window_);
  const auto pad2 = 2 * static_cast<std::size_t>(padding_);
  if (s[2] + pad2 < span || s[3] + pad2 < span) throw Error(Errc::shape_mismatch, "maxpool: input too small");
  return {s[0], s[1], (s[2] + pad2 - span) / static_cast<std::size_t>(stride_) + 1,
          (s[3] + pad2 - span) / static_cast<std::size_t>(stride_) + 1};
}

Tensor MaxPool::run(const Tensor& x, std::vector<std::size_t>* argmax) const {
  const Shape os = output_shape(x.shape());
  Tensor out(os);
  const long H = static_cast<long>(x.dim(2)), W = static_cast<long>(x.dim(3));
  const std::size_t planes = os[0] * os[1];
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * static_cast<std::size_t>(H * W);
    for (std::size_t oy = 0; oy < os[2]; ++oy) {
      for (std::size_t ox = 0; ox < os[3]; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (int wy = 0; wy < window_; ++wy) {
          const long iy = static_cast<long>(oy) * stride_ - padding_ + wy;
          if (iy < 0 || iy >= H) continue;
          for (int wx = 0; wx < window_; ++wx) {
            const long ix = static_cast<long>(ox) * stride_ - padding_ + wx;
            if (ix < 0 || ix >= W) continue;
            const std::size_t idx = base + static_cast<std::size_t>(iy * W + ix);
            // Strict comparison keeps the first maximum on ties.
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        out[o] = best;
        if (argmax) (*argmax)[o] = best_idx;
      }
    }
  }
  return out;
}

Tensor MaxPool::infer(const Tensor& x) const { return run(x, nullptr); }

Tensor MaxPool::forward(const Tensor& x, Mode) {
  Tensor y = run(x, &argmax_);
  input_shape_ = x.shape();
  return y;
}

Tensor MaxPool::backward(const Tensor& grad_out) {
  if (!input_shape_) no_forward(kind());
  require_shape(grad_out, output_shape(*input_shape_), "maxpool backward");
  Tensor dx(*input_shape_);
  for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax_[o]] += grad_out[o];
  return dx;
}

// -- relu ----------------------------------------------------------------------

Tensor Relu::infer(const Tensor& x) const {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor Relu::forward(const Tensor& x, Mode) {
  Tensor y = infer(x);
  output_ = y;
  return y;
}

Tensor Relu::backward(const Tensor& grad_out) {
  if (!output_) no_forward(kind());
  require_shape(grad_out, output_->shape(), "relu backward");
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = (*output_)[i] > 0.0 ? grad_out[i] : 0.0;
  return dx;
}

// -- dense ---------------------------------------------------------------------

Dense::Dense(std::size_t in_features, std::size_t out_features)
    : weights_({out_features, in_features}),
      bias_({out_features}),
      grad_weights_(weights_.shape()),
      grad_bias_(bias_.shape()) {}

Shape Dense::output_shape(const Shape& input) const {
  if (input.size() != 2 || input[1] != weights_.dim(1)) {
    throw Error(Errc::shape_mismatch, "dense: expected [B," + std::to_string(weights_.dim(1)) + "], got " +
                                          shape_str(input));
  }
  return {input[0], weights_.dim(0)};
}

Tensor Dense::infer(const Tensor& x) const {
  Tensor y(output_shape(x.shape()));
  const auto B = static_cast<Eigen::Index>(x.dim(0));
  const auto in = static_cast<Eigen::Index>(weights_.dim(1));
  const auto out = static_cast<Eigen::Index>(weights_.dim(0));
  ConstMatMap xm(x.ptr(), B, in);
  ConstMatMap wm(weights_.ptr(), out, in);
  MatMap ym(y.ptr(), B, out);
  ym.noalias() = xm * wm.transpose();
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index o = 0; o < out; ++o) ym(b, o) += bias_[static_cast<std::size_t>(o)];
  }
  return y;
}

Tensor Dense::forward(const Tensor& x, Mode) {
  Tensor y = infer(x);
  input_ = x;
  return y;
}

Tensor Dense::backward(const Tensor& grad_out) {
  if (!input_) no_forward(kind());
  require_shape(grad_out, output_shape(input_->shape()), "dense backward");
  const auto B = static_cast<Eigen::Index>(input_->dim(0));
  const auto in = static_cast<Eigen::Index>(weights_.dim(1));
  const auto out = static_cast<Eigen::Index>(weights_.dim(0));
  ConstMatMap xm(input_->ptr(), B, in);
  ConstMatMap wm(weights_.ptr(), out, in);
  ConstMatMap gm(grad_out.ptr(), B, out);
  MatMap gwm(grad_weights_.ptr(), out, in);
  gwm.noalias() += gm.transpose() * xm;
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index o = 0; o < out; ++o) grad_bias_[static_cast<std::size_t>(o)] += gm(b, o);
  }
  Tensor dx(input_->shape());
  MatMap dxm(dx.ptr(), B, in);
  dxm.noalias() = gm * wm;
  return dx;
}

std::vector<ParamRef> Dense::params() {
  return {{"weight", &weights_, &grad_weights_}, {"bias", &bias_, &grad_bias_}};
}

// -- flatten / global average pool ---------------------------------------------

Shape Flatten::output_shape(const Shape& input) const {
  if (input.size() < 2) throw Error(Errc::shape_mismatch, "flatten: expected a batched tensor");
  return {input[0], shape_size(input) / std::max<std::size_t>(input[0], 1)};
}

Tensor Flatten::infer(const Tensor& x) const { return x.reshaped(output_shape(x.shape())); }

Tensor Flatten::forward(const Tensor& x, Mode) {
  input_shape_ = x.shape();
  return infer(x);
}

Tensor Flatten::backward(const Tensor& grad_out) {
  if (!input_shape_) no_forward(kind());
  return grad_out.reshaped(*input_shape_);
}

Shape GlobalAvgPool::output_shape(const Shape& input) const {
  require_spatial(input, kind());
  return {input[0], input[1]};
}

Tensor GlobalAvgPool::infer(const Tensor& x) const {
  Tensor y(output_shape(x.shape()));
  const std::size_t plane = x.dim(2) * x.dim(3);
  for (std::size_t p = 0; p < y.size(); ++p) {
    const double* src = x.ptr() + p * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += src[i];
    y[p] = s / static_cast<double>(plane);
  }
  return y;
}

Tensor GlobalAvgPool::forward(const Tensor& x, Mode) {
  input_shape_ = x.shape();
  return infer(x);
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  if (!input_shape_) no_forward(kind());
  require_shape(grad_out, output_shape(*input_shape_), "global_avg_pool backward");
  Tensor dx(*input_shape_);
  const std::size_t plane = dx.dim(2) * dx.dim(3);
  for (std::size_t p = 0; p < grad_out.size(); ++p) {
    const double v = grad_out[p] / static_cast<double>(plane);
    std::fill_n(dx.ptr() + p * plane, plane, v);
  }
  return dx;
}

// -- dropout -------------------------------------------------------------------

Dropout::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(Errc::bad_config, "dropout rate must lie in [0,1)");
}

Tensor Dropout::forward(const Tensor& x, Mode mode) {
  if (mode == Mode::eval) {
    mask_.assign(x.size(), 1.0);
  } else if (!(frozen_ && has_forward_ && mask_.size() == x.size())) {
    mask_.resize(x.size());
    const double keep = 1.0 - rate_;
    for (auto& m : mask_) m = rng_.uniform() < keep ? 1.0 / keep : 0.0;
  }
  has_forward_ = true;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask_[i];
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  if (!has_forward_) no_forward(kind());
  if (grad_out.size() != mask_.size()) throw Error(Errc::shape_mismatch, "dropout backward: size mismatch");
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_out[i] * mask_[i];
  return dx;
}

// -- sigmoid gate ----------------------------------------------------------------

Tensor SigmoidGate::infer(const Tensor& x, const Tensor& s) const {
  require_spatial(x.shape(), kind());
  require_shape(s, {x.dim(0), x.dim(1)}, "sigmoid_gate gate");
  Tensor y(x.shape());
  const std::size_t plane = x.dim(2) * x.dim(3);
  for (std::size_t p = 0; p < s.size(); ++p) {
    const double gate = 1.0 / (1.0 + std::exp(-s[p]));
    const double* src = x.ptr() + p * plane;
    double* dst = y.ptr() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * gate;
  }
  return y;
}

Tensor SigmoidGate::forward(const Tensor& x, const Tensor& s) {
  Tensor y = infer(x, s);
  x_ = x;
  Tensor gate(s.shape());
  for (std::size_t p = 0; p < s.size(); ++p) gate[p] = 1.0 / (1.0 + std::exp(-s[p]));
  gate_ = std::move(gate);
  return y;
}

std::pair<Tensor, Tensor> SigmoidGate::backward(const Tensor& grad_out) {
  if (!x_) no_forward(kind());
  require_shape(grad_out, x_->shape(), "sigmoid_gate backward");
  Tensor dx(x_->shape());
  Tensor ds(gate_->shape());
  const std::size_t plane = dx.dim(2) * dx.dim(3);
  for (std::size_t p = 0; p < ds.size(); ++p) {
    const double gate = (*gate_)[p];
    const double* go = grad_out.ptr() + p * plane;
    const double* xv = x_->ptr() + p * plane;
    double* d = dx.ptr() + p * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      d[i] = go[i] * gate;
      acc += go[i] * xv[i];
    }
    ds[p] = acc * gate * (1.0 - gate);
  }
  return {std::move(dx), std::move(ds)};
}

// -- sequential ------------------------------------------------------------------

Sequential& Sequential::add(std::string name, LayerPtr layer) {
  layers_.emplace_back(std::move(name), std::move(layer));
  return *this;
}

Shape Sequential::output_shape(const Shape& input) const {
  Shape s = input;
  for (const auto& [name, layer] : layers_) s = layer->output_shape(s);
  return s;
}

Tensor Sequential::infer(const Tensor& x) const {
  Tensor h = x;
  for (const auto& [name, layer] : layers_) h = layer->infer(h);
  return h;
}

Tensor Sequential::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& [name, layer] : layers_) {
    h = layer->forward(h, mode);
    require_finite(h, name);
  }
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = it->second->backward(g);
    require_finite(g, it->first);
  }
  return g;
}

std::vector<ParamRef> Sequential::params() {
  std::vector<ParamRef> out;
  for (auto& [name, layer] : layers_) {
    for (auto& p : layer->params()) out.push_back({name + "." + p.name, p.value, p.grad});
  }
  return out;
}

void Sequential::freeze_randomness(bool frozen) {
  for (auto& [name, layer] : layers_) layer->freeze_randomness(frozen);
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error(Errc::shape_mismatch, "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  require_spatial(s0, "concat");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    require_spatial(p.shape(), "concat");
    if (p.dim(0) != s0[0] || p.dim(2) != s0[2] || p.dim(3) != s0[3]) {
      throw Error(Errc::shape_mismatch, "concat: batch/spatial dims differ");
    }
    channels += p.dim(1);
  }
  const std::size_t plane = s0[2] * s0[3];
  Tensor out({s0[0], channels, s0[2], s0[3]});
  for (std::size_t b = 0; b < s0[0]; ++b) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t n = p.dim(1) * plane;
      std::copy_n(p.ptr() + b * n, n, out.ptr() + (b * channels) * plane + offset);
      offset += n;
    }
  }
  return out;
}

// -- inception block ---------------------------------------------------------------

InceptionBlock::InceptionBlock(std::size_t in_channels, std::size_t branch_channels)
    : branch_channels_(branch_channels) {
  auto conv_relu = [&](std::size_t k, int pad) {
    Sequential s;
    s.add("conv", std::make_unique<Conv2d>(in_channels, branch_channels, k, Conv2dSpec{1, pad, 1}));
    s.add("relu", std::make_unique<Relu>());
    return s;
  };
  branches_.emplace_back("b1x1", conv_relu(1, 0));
  branches_.emplace_back("b3x3", conv_relu(3, 1));
  branches_.emplace_back("b5x5", conv_relu(5, 2));
  Sequential pool;
  pool.add("pool", std::make_unique<MaxPool>(MaxPool::same3x3()));
  pool.add("conv", std::make_unique<Conv2d>(in_channels, branch_channels, 1));
  pool.add("relu", std::make_unique<Relu>());
  branches_.emplace_back("pool_proj", std::move(pool));
}

Shape InceptionBlock::output_shape(const Shape& input) const {
  Shape s = branches_.front().second.output_shape(input);
  s[1] = out_channels();
  return s;
}

Tensor InceptionBlock::infer(const Tensor& x) const {
  std::vector<Tensor> outs;
  outs.reserve(branches_.size());
  for (const auto& [name, branch] : branches_) outs.push_back(branch.infer(x));
  return concat_channels(outs);
}

Tensor InceptionBlock::forward(const Tensor& x, Mode mode) {
  std::vector<Tensor> outs;
  outs.reserve(branches_.size());
  for (auto& [name, branch] : branches_) outs.push_back(branch.forward(x, mode));
  has_forward_ = true;
  return concat_channels(outs);
}

Tensor InceptionBlock::backward(const Tensor& grad_out) {
  if (!has_forward_) no_forward(kind());
  require_spatial(grad_out.shape(), "inception backward");
  if (grad_out.dim(1) != out_channels()) throw Error(Errc::shape_mismatch, "inception backward: channel mismatch");
  std::optional<Tensor> dx;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    Tensor g = branches_[i].second.backward(slice_channels(grad_out, i * branch_channels_, branch_channels_));
    if (dx) {
      *dx += g;
    } else {
      dx = std::move(g);
    }
  }
  return std::move(*dx);
}

std::vector<ParamRef> InceptionBlock::params() {
  std::vector<ParamRef> out;
  for (auto& [name, branch] : branches_) {
    for (auto& p : branch.params()) out.push_back({name + "." + p.name, p.value, p.grad});
  }
  return out;
}

// -- MBConv block --------------------------------------------------------------------

MBConvBlock::MBConvBlock(std::size_t in_channels, std::size_t out_channels, std::size_t expand_ratio, int stride,
                         std::size_t se_reduction)
    : residual_(stride == 1 && in_channels == out_channels) {
  const std::size_t wide = in_channels * expand_ratio;
  const std::size_t squeezed = std::max<std::size_t>(1, wide / se_reduction);
  expand_.add("conv", std::make_unique<Conv2d>(in_channels, wide, 1));
  expand_.add("relu", std::make_unique<Relu>());
  depthwise_.add("conv", std::make_unique<Conv2d>(wide, wide, 3, Conv2dSpec{stride, 1, static_cast<int>(wide)}));
  depthwise_.add("relu", std::make_unique<Relu>());
  squeeze_.add("pool", std::make_unique<GlobalAvgPool>());
  squeeze_.add("reduce", std::make_unique<Dense>(wide, squeezed));
  squeeze_.add("relu", std::make_unique<Relu>());
  squeeze_.add("expand", std::make_unique<Dense>(squeezed, wide));
  project_.add("conv", std::make_unique<Conv2d>(wide, out_channels, 1));
}

Shape MBConvBlock::output_shape(const Shape& input) const {
  return project_.output_shape(depthwise_.output_shape(expand_.output_shape(input)));
}

Tensor MBConvBlock::infer(const Tensor& x) const {
  const Tensor wide = depthwise_.infer(expand_.infer(x));
  Tensor y = project_.infer(gate_.infer(wide, squeeze_.infer(wide)));
  if (residual_) y += x;
  return y;
}

Tensor MBConvBlock::forward(const Tensor& x, Mode mode) {
  const Tensor wide = depthwise_.forward(expand_.forward(x, mode), mode);
  const Tensor gate_logits = squeeze_.forward(wide, mode);
  Tensor y = project_.forward(gate_.forward(wide, gate_logits), mode);
  if (residual_) y += x;
  has_forward_ = true;
  return y;
}

Tensor MBConvBlock::backward(const Tensor& grad_out) {
  if (!has_forward_) no_forward(kind());
  auto [d_wide, d_gate] = gate_.backward(project_.backward(grad_out));
  d_wide += squeeze_.backward(d_gate);
  Tensor dx = expand_.backward(depthwise_.backward(d_wide));
  if (residual_) dx += grad_out;
  return dx;
}

std::vector<ParamRef> MBConvBlock::params() {
  std::vector<ParamRef> out;
  auto collect = [&](const std::string& prefix, Sequential& s) {
    for (auto& p : s.params()) out.push_back({prefix + "." + p.name, p.value, p.grad});
  };
  collect("expand", expand_);
  collect("depthwise", depthwise_);
  collect("se", squeeze_);
  collect("project", project_);
  return out;
}

// -- softmax ---------------------------------------------------------------------

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax");
  Tensor p(logits.shape());
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  for (std::size_t b = 0; b < B; ++b) {
    const double* z = logits.ptr() + b * K;
    const double m = *std::max_element(z, z + K);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += std::exp(z[k] - m);
    for (std::size_t k = 0; k < K; ++k) p[b * K + k] = std::exp(z[k] - m) / total;
  }
  return p;
}

}  // namespace scz
