#include "car/net/resampler_net.hpp"

#include <cmath>

namespace car {

namespace {

bool is_pow2(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::size_t int_log2(std::size_t v) {
  std::size_t l = 0;
  while (v > 1) {
    v >>= 1;
    ++l;
  }
  return l;
}

}  // namespace

ResamplerNet::ResamplerNet(const ResamplerNetConfig& cfg)
    : cfg_(cfg),
      khead_conv_(1, 1, 1, 1),
      khead_act_(cfg.slope),
      khead_out_(1, 1, 1, 1),
      ohead_conv_(1, 1, 1, 1),
      ohead_act_(cfg.slope),
      ohead_out_(1, 1, 1, 1) {
  check(is_pow2(cfg.scale), "ResamplerNet: scale must be a power of two");
  check(cfg.base >= 1 && cfg.cap >= cfg.base, "ResamplerNet: bad channel config");
  check(cfg.m >= 1 && cfg.n >= 1, "ResamplerNet: bad kernel extents");
  check(cfg.offset_cap > 0.0, "ResamplerNet: offset cap must be positive");

  std::size_t ch = 3;
  std::size_t next = cfg.base;
  const std::size_t levels = int_log2(cfg.scale);
  if (levels == 0) {
    down_.emplace_back(ch, next, 3, 1);
    down_act_.emplace_back(cfg.slope);
    ch = next;
  } else {
    for (std::size_t l = 0; l < levels; ++l) {
      down_.emplace_back(ch, next, 3, 2);
      down_act_.emplace_back(cfg.slope);
      ch = next;
      next = std::min(next * 2, cfg.cap);
    }
  }
  for (std::size_t i = 0; i < cfg.blocks; ++i) blocks_.emplace_back(ch, cfg.slope);

  const std::size_t taps = cfg.m * cfg.n;
  khead_conv_ = Conv2d(ch, cfg.head_channels, 3, 1);
  khead_out_ = Conv2d(cfg.head_channels, taps, 1, 1);
  ohead_conv_ = Conv2d(ch, cfg.head_channels, 3, 1);
  ohead_out_ = Conv2d(cfg.head_channels, 2 * taps, 1, 1);
}

void ResamplerNet::init(std::mt19937_64& rng) {
  for (auto& c : down_) c.init_kaiming(rng);
  for (auto& b : blocks_) b.init_kaiming(rng);
  khead_conv_.init_kaiming(rng);
  khead_out_.init_kaiming(rng);
  ohead_conv_.init_kaiming(rng);
  ohead_out_.init_zero();
}

ResamplerNetOut ResamplerNet::forward(const Tensor& x) {
  check(x.rank() == 4 && x.extent(1) == 3, "ResamplerNet: expected an N x 3 x H x W input");
  check(x.extent(2) % cfg_.scale == 0 && x.extent(3) % cfg_.scale == 0,
        "ResamplerNet: input extents must be divisible by the scale");

  Tensor t = x;
  for (std::size_t i = 0; i < down_.size(); ++i) t = down_act_[i].forward(down_[i].forward(t));
  for (auto& b : blocks_) t = b.forward(t);

  ResamplerNetOut out;
  out.raw_kernels = khead_out_.forward(khead_act_.forward(khead_conv_.forward(t)));

  const std::size_t taps = cfg_.m * cfg_.n;
  const std::size_t nb = t.extent(0), hs = t.extent(2), ws = t.extent(3);
  if (cfg_.enable_offsets) {
    Tensor o = ohead_out_.forward(ohead_act_.forward(ohead_conv_.forward(t)));
    osquash_in_ = o;
    out.dx = Tensor({nb, taps, hs, ws});
    out.dy = Tensor({nb, taps, hs, ws});
    const double cap = cfg_.offset_cap;
    const std::size_t plane = hs * ws;
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t c = 0; c < taps; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t xi = (b * 2 * taps + c) * plane + p;
          const std::size_t yi = (b * 2 * taps + taps + c) * plane + p;
          out.dx[(b * taps + c) * plane + p] = cap * std::tanh(o[xi] / cap);
          out.dy[(b * taps + c) * plane + p] = cap * std::tanh(o[yi] / cap);
        }
  } else {
    out.dx = Tensor({nb, taps, hs, ws});
    out.dy = Tensor({nb, taps, hs, ws});
  }
  has_cache_ = true;
  return out;
}

Tensor ResamplerNet::backward(const Tensor& grad_raw_kernels, const Tensor& grad_dx,
                              const Tensor& grad_dy) {
  check(has_cache_, "ResamplerNet: backward without a cached forward");
  Tensor gt = khead_conv_.backward(khead_act_.backward(khead_out_.backward(grad_raw_kernels)));

  if (cfg_.enable_offsets) {
    const std::size_t taps = cfg_.m * cfg_.n;
    const std::size_t nb = grad_dx.extent(0), hs = grad_dx.extent(2), ws = grad_dx.extent(3);
    const std::size_t plane = hs * ws;
    const double cap = cfg_.offset_cap;
    Tensor go({nb, 2 * taps, hs, ws});
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t c = 0; c < taps; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t xi = (b * 2 * taps + c) * plane + p;
          const std::size_t yi = (b * 2 * taps + taps + c) * plane + p;
          const double tx = std::tanh(osquash_in_[xi] / cap);
          const double ty = std::tanh(osquash_in_[yi] / cap);
          go[xi] = grad_dx[(b * taps + c) * plane + p] * (1.0 - tx * tx);
          go[yi] = grad_dy[(b * taps + c) * plane + p] * (1.0 - ty * ty);
        }
    Tensor gto = ohead_conv_.backward(ohead_act_.backward(ohead_out_.backward(go)));
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += gto[i];
  }

  for (std::size_t i = blocks_.size(); i-- > 0;) gt = blocks_[i].backward(gt);
  for (std::size_t i = down_.size(); i-- > 0;)
    gt = down_[i].backward(down_act_[i].backward(gt));
  has_cache_ = false;
  return gt;
}

std::vector<NamedParam> ResamplerNet::params() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < down_.size(); ++i)
    down_[i].collect_params("rnet.down" + std::to_string(i), out);
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect_params("rnet.res" + std::to_string(i), out);
  khead_conv_.collect_params("rnet.khead.conv", out);
  khead_out_.collect_params("rnet.khead.out", out);
  ohead_conv_.collect_params("rnet.ohead.conv", out);
  ohead_out_.collect_params("rnet.ohead.out", out);
  return out;
}

void ResamplerNet::zero_grad() {
  for (auto& p : params()) p.grad->fill(0.0);
}

Tensor ResamplerNet::field_from_nchw(const Tensor& t, std::size_t batch_index, std::size_t m,
                                     std::size_t n) {
  check(t.rank() == 4 && t.extent(1) == m * n && batch_index < t.extent(0),
        "field_from_nchw: bad tensor");
  const std::size_t h = t.extent(2), w = t.extent(3);
  Tensor f({h, w, m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t x = 0; x < h; ++x)
        for (std::size_t y = 0; y < w; ++y)
          f.at(x, y, i, j) = t.at(batch_index, i * n + j, x, y);
  return f;
}

void ResamplerNet::field_grad_to_nchw(const Tensor& field_grad, std::size_t batch_index,
                                      Tensor& out) {
  const std::size_t h = field_grad.extent(0), w = field_grad.extent(1);
  const std::size_t m = field_grad.extent(2), n = field_grad.extent(3);
  check(out.rank() == 4 && out.extent(1) == m * n && out.extent(2) == h && out.extent(3) == w,
        "field_grad_to_nchw: bad output tensor");
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t x = 0; x < h; ++x)
        for (std::size_t y = 0; y < w; ++y)
          out.at(batch_index, i * n + j, x, y) = field_grad.at(x, y, i, j);
}

}  // namespace car
