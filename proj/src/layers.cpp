#include "car/net/layers.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace car {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

void im2col(const double* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* cols) {
  const long lh = static_cast<long>(h), lw = static_cast<long>(w);
  const std::size_t ckk = cin * k * k;
  for (std::size_t oh = 0; oh < ho; ++oh) {
    for (std::size_t ow = 0; ow < wo; ++ow) {
      double* col = cols + (oh * wo + ow) * ckk;
      std::size_t q = 0;
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xc = x + c * h * w;
        for (std::size_t ki = 0; ki < k; ++ki) {
          const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
          for (std::size_t kj = 0; kj < k; ++kj) {
            const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
            col[q++] = (ih >= 0 && ih < lh && iw >= 0 && iw < lw) ? xc[ih * lw + iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
                std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* gx) {
  const long lh = static_cast<long>(h), lw = static_cast<long>(w);
  const std::size_t ckk = cin * k * k;
  for (std::size_t oh = 0; oh < ho; ++oh) {
    for (std::size_t ow = 0; ow < wo; ++ow) {
      const double* col = cols + (oh * wo + ow) * ckk;
      std::size_t q = 0;
      for (std::size_t c = 0; c < cin; ++c) {
        double* xc = gx + c * h * w;
        for (std::size_t ki = 0; ki < k; ++ki) {
          const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
          for (std::size_t kj = 0; kj < k; ++kj) {
            const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
            if (ih >= 0 && ih < lh && iw >= 0 && iw < lw) xc[ih * lw + iw] += col[q];
            ++q;
          }
        }
      }
    }
  }
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t ksize, std::size_t stride,
               bool has_bias)
    : w(Tensor::zeros({out_ch, in_ch, ksize, ksize})),
      b(Tensor::zeros({out_ch})),
      gw(Tensor::zeros({out_ch, in_ch, ksize, ksize})),
      gb(Tensor::zeros({out_ch})),
      in_ch_(in_ch),
      out_ch_(out_ch),
      ksize_(ksize),
      stride_(stride),
      pad_(ksize / 2),
      has_bias_(has_bias) {
  check(stride == 1 || stride == 2, "Conv2d: stride must be 1 or 2");
  check(ksize >= 1, "Conv2d: kernel size must be >= 1");
}

void Conv2d::init_kaiming(std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in_ch_ * ksize_ * ksize_);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = dist(rng);
  b.fill(0.0);
}

void Conv2d::init_zero() {
  w.fill(0.0);
  b.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x) {
  check(x.rank() == 4 && x.extent(1) == in_ch_, "Conv2d: bad input shape");
  const std::size_t n = x.extent(0), h = x.extent(2), wd = x.extent(3);
  const std::size_t ho = conv_out(h, ksize_, stride_, pad_);
  const std::size_t wo = conv_out(wd, ksize_, stride_, pad_);
  const std::size_t ckk = in_ch_ * ksize_ * ksize_;

  Tensor y({n, out_ch_, ho, wo});
  cols_.resize(ckk * ho * wo);
  Eigen::Map<const RowMat> wm(w.data(), out_ch_, ckk);
  for (std::size_t item = 0; item < n; ++item) {
    const double* xp = x.data() + item * in_ch_ * h * wd;
    im2col(xp, in_ch_, h, wd, ksize_, stride_, pad_, ho, wo, cols_.data());
    Eigen::Map<const ColMat> cm(cols_.data(), ckk, ho * wo);
    Eigen::Map<RowMat> ym(y.data() + item * out_ch_ * ho * wo, out_ch_, ho * wo);
    ym.noalias() = wm * cm;
    if (has_bias_)
      for (std::size_t c = 0; c < out_ch_; ++c) ym.row(c).array() += b[c];
  }
  x_ = x;
  has_cache_ = true;
  return y;
}

Tensor Conv2d::backward(const Tensor& gy) {
  check(has_cache_, "Conv2d: backward without a cached forward");
  const std::size_t n = x_.extent(0), h = x_.extent(2), wd = x_.extent(3);
  const std::size_t ho = conv_out(h, ksize_, stride_, pad_);
  const std::size_t wo = conv_out(wd, ksize_, stride_, pad_);
  check(gy.rank() == 4 && gy.extent(0) == n && gy.extent(1) == out_ch_ && gy.extent(2) == ho &&
            gy.extent(3) == wo,
        "Conv2d: gradient shape does not match the cached forward");
  const std::size_t ckk = in_ch_ * ksize_ * ksize_;

  Tensor gx(x_.shape());
  cols_.resize(ckk * ho * wo);
  std::vector<double> gcols(ckk * ho * wo);
  Eigen::Map<const RowMat> wm(w.data(), out_ch_, ckk);
  Eigen::Map<RowMat> gwm(gw.data(), out_ch_, ckk);
  for (std::size_t item = 0; item < n; ++item) {
    const double* xp = x_.data() + item * in_ch_ * h * wd;
    const double* gyp = gy.data() + item * out_ch_ * ho * wo;
    Eigen::Map<const RowMat> gym(gyp, out_ch_, ho * wo);

    im2col(xp, in_ch_, h, wd, ksize_, stride_, pad_, ho, wo, cols_.data());
    Eigen::Map<const ColMat> cm(cols_.data(), ckk, ho * wo);
    gwm.noalias() += gym * cm.transpose();
    if (has_bias_)
      for (std::size_t c = 0; c < out_ch_; ++c) gb[c] += gym.row(c).sum();

    Eigen::Map<ColMat> gcm(gcols.data(), ckk, ho * wo);
    gcm.noalias() = wm.transpose() * gym;
    col2im_add(gcols.data(), in_ch_, h, wd, ksize_, stride_, pad_, ho, wo,
               gx.data() + item * in_ch_ * h * wd);
  }
  has_cache_ = false;
  return gx;
}

void Conv2d::collect_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w", &w, &gw});
  if (has_bias_) out.push_back({prefix + ".b", &b, &gb});
}

Tensor LeakyReLU::forward(const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] < 0.0) y[i] *= slope_;
  x_ = x;
  has_cache_ = true;
  return y;
}

Tensor LeakyReLU::backward(const Tensor& gy) {
  check(has_cache_, "LeakyReLU: backward without a cached forward");
  check(gy.same_shape(x_), "LeakyReLU: gradient shape mismatch");
  Tensor gx = gy;
  for (std::size_t i = 0; i < gx.size(); ++i)
    if (x_[i] < 0.0) gx[i] *= slope_;
  has_cache_ = false;
  return gx;
}

ResidualBlock::ResidualBlock(std::size_t channels, double slope)
    : conv1(channels, channels, 3, 1), conv2(channels, channels, 3, 1), act_(slope) {}

void ResidualBlock::init_kaiming(std::mt19937_64& rng) {
  conv1.init_kaiming(rng);
  conv2.init_kaiming(rng);
}

Tensor ResidualBlock::forward(const Tensor& x) {
  Tensor y = conv2.forward(act_.forward(conv1.forward(x)));
  check(y.same_shape(x), "ResidualBlock: shape not preserved");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
  return y;
}

Tensor ResidualBlock::backward(const Tensor& gy) {
  Tensor gx = conv1.backward(act_.backward(conv2.backward(gy)));
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  return gx;
}

void ResidualBlock::collect_params(const std::string& prefix, std::vector<NamedParam>& out) {
  conv1.collect_params(prefix + ".c1", out);
  conv2.collect_params(prefix + ".c2", out);
}

Tensor PixelShuffle::forward(const Tensor& x) {
  check(x.rank() == 4, "PixelShuffle: expected NCHW input");
  const std::size_t n = x.extent(0), c_in = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t r2 = r_ * r_;
  check(c_in % r2 == 0, "PixelShuffle: channels not divisible by r^2");
  const std::size_t c_out = c_in / r2;

  Tensor y({n, c_out, h * r_, w * r_});
  for (std::size_t item = 0; item < n; ++item)
    for (std::size_t c = 0; c < c_out; ++c)
      for (std::size_t dr = 0; dr < r_; ++dr)
        for (std::size_t dc = 0; dc < r_; ++dc) {
          const std::size_t src_c = c * r2 + dr * r_ + dc;
          for (std::size_t ih = 0; ih < h; ++ih)
            for (std::size_t iw = 0; iw < w; ++iw)
              y.at(item, c, ih * r_ + dr, iw * r_ + dc) = x.at(item, src_c, ih, iw);
        }
  in_shape_ = x.shape();
  has_cache_ = true;
  return y;
}

Tensor PixelShuffle::backward(const Tensor& gy) {
  check(has_cache_, "PixelShuffle: backward without a cached forward");
  const std::size_t n = in_shape_[0], c_in = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  const std::size_t r2 = r_ * r_;
  const std::size_t c_out = c_in / r2;
  check(gy.rank() == 4 && gy.extent(0) == n && gy.extent(1) == c_out && gy.extent(2) == h * r_ &&
            gy.extent(3) == w * r_,
        "PixelShuffle: gradient shape mismatch");

  Tensor gx(in_shape_);
  for (std::size_t item = 0; item < n; ++item)
    for (std::size_t c = 0; c < c_out; ++c)
      for (std::size_t dr = 0; dr < r_; ++dr)
        for (std::size_t dc = 0; dc < r_; ++dc) {
          const std::size_t src_c = c * r2 + dr * r_ + dc;
          for (std::size_t ih = 0; ih < h; ++ih)
            for (std::size_t iw = 0; iw < w; ++iw)
              gx.at(item, src_c, ih, iw) = gy.at(item, c, ih * r_ + dr, iw * r_ + dc);
        }
  has_cache_ = false;
  return gx;
}

Tensor hwc_to_nchw(const Image& img) {
  const std::size_t h = img.height(), w = img.width(), c = img.channels();
  Tensor t({1, c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) t.at(0, ch, r, col) = img.at(r, col, ch);
  return t;
}

Image nchw_to_hwc(const Tensor& t, std::size_t batch_index, ColorSpace space) {
  check(t.rank() == 4 && batch_index < t.extent(0), "nchw_to_hwc: bad tensor or index");
  const std::size_t c = t.extent(1), h = t.extent(2), w = t.extent(3);
  Image img(Tensor::zeros({h, w, c}), space);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) img.at(r, col, ch) = t.at(batch_index, ch, r, col);
  return img;
}

}  // namespace car
