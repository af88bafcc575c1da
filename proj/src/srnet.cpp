#include "car/net/srnet.hpp"

namespace car {

SRNet::SRNet(const SRNetConfig& cfg)
    : cfg_(cfg),
      head_(3, cfg.features, 3, 1),
      tail_(cfg.features, cfg.scale * cfg.scale * 3, 3, 1, /*has_bias=*/false),
      shuffle_(cfg.scale) {
  check(cfg.scale >= 1, "SRNet: scale must be >= 1");
  check(cfg.features >= 1, "SRNet: features must be >= 1");
  for (std::size_t i = 0; i < cfg.blocks; ++i) blocks_.emplace_back(cfg.features, cfg.slope);
}

void SRNet::init(std::mt19937_64& rng) {
  head_.init_kaiming(rng);
  for (auto& b : blocks_) b.init_kaiming(rng);
  tail_.init_kaiming(rng);
}

Tensor SRNet::forward(const Tensor& x) {
  Tensor h = head_.forward(x);
  Tensor t = h;
  for (auto& b : blocks_) t = b.forward(t);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += h[i];  // global skip
  return shuffle_.forward(tail_.forward(t));
}

Tensor SRNet::backward(const Tensor& gy) {
  Tensor gt = tail_.backward(shuffle_.backward(gy));
  Tensor gh = gt;  // skip branch
  for (std::size_t i = blocks_.size(); i-- > 0;) gt = blocks_[i].backward(gt);
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += gh[i];
  return head_.backward(gt);
}

std::vector<NamedParam> SRNet::params() {
  std::vector<NamedParam> out;
  head_.collect_params("srnet.head", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect_params("srnet.res" + std::to_string(i), out);
  tail_.collect_params("srnet.tail", out);
  return out;
}

void SRNet::zero_grad() {
  for (auto& p : params()) p.grad->fill(0.0);
}

}  // namespace car
