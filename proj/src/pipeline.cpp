#include "car/pipeline.hpp"

#include "car/common.hpp"
#include "car/net/bicubic.hpp"
#include "car/net/layers.hpp"
#include "car/quantizer.hpp"

namespace car {

KernelNorm kernel_norm_from_string(const std::string& s) {
  if (s == "softmax") return KernelNorm::Softmax;
  if (s == "sum") return KernelNorm::SumEpsilon;
  fail("unknown kernel norm '" + s + "' (expected 'softmax' or 'sum')");
}

FieldPrediction predict_fields(ResamplerNet& net, const Image& hr,
                               const std::array<double, 3>& mean, const ResampleGeometry& geom,
                               KernelNorm norm) {
  check(hr.channels() == 3, "field prediction expects an RGB input");
  Tensor x = hwc_to_nchw(hr);
  const std::size_t plane = hr.height() * hr.width();
  for (std::size_t c = 0; c < 3; ++c) {
    double* p = x.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] -= mean[c];
  }
  ResamplerNetOut out = net.forward(x);
  FieldPrediction fp;
  Tensor raw = ResamplerNet::field_from_nchw(out.raw_kernels, 0, geom.m, geom.n);
  fp.kernels.k = std::move(normalize_kernels(raw, norm).field().k);
  fp.offsets.dx = ResamplerNet::field_from_nchw(out.dx, 0, geom.m, geom.n);
  fp.offsets.dy = ResamplerNet::field_from_nchw(out.dy, 0, geom.m, geom.n);
  return fp;
}

Image net_downscale(ResamplerNet& net, const Image& hr, const std::array<double, 3>& mean,
                    const ResampleGeometry& geom, KernelNorm norm, bool quantize) {
  FieldPrediction fp = predict_fields(net, hr, mean, geom, norm);
  DownscaleResult res = downscale_forward(hr, fp.kernels, fp.offsets, geom, /*record_tape=*/false);
  if (!quantize) return res.lr;
  QuantizerConfig qc;
  qc.enabled = true;
  return quantize_forward(res.lr, qc);
}

ResamplerNetConfig rnet_config_from(const Checkpoint& ckpt) {
  ResamplerNetConfig c;
  c.scale = ckpt.geom.scale;
  c.base = ckpt.topology.base;
  c.cap = ckpt.topology.cap;
  c.blocks = ckpt.topology.blocks;
  c.head_channels = ckpt.topology.head_channels;
  c.m = ckpt.geom.m;
  c.n = ckpt.geom.n;
  c.offset_cap = ckpt.topology.offset_cap;
  c.enable_offsets = ckpt.topology.enable_offsets;
  return c;
}

SRNetConfig srnet_config_from(const Checkpoint& ckpt) {
  SRNetConfig c;
  c.scale = ckpt.geom.scale;
  c.features = ckpt.topology.sr_features;
  c.blocks = ckpt.topology.sr_blocks;
  return c;
}

void import_params(const std::vector<NamedParam>& params, const Checkpoint& ckpt) {
  for (const NamedParam& p : params) {
    const Tensor* t = ckpt.find(p.name);
    if (t == nullptr) fail("checkpoint is missing tensor '" + p.name + "'");
    if (t->shape() != p.value->shape())
      fail("checkpoint tensor '" + p.name + "' has the wrong shape");
    *p.value = *t;
  }
}

Pipeline::Pipeline(const Checkpoint& ckpt, const std::string& upscaler_override)
    : geom_(ckpt.geom),
      mean_(ckpt.rgb_mean),
      norm_(kernel_norm_from_string(ckpt.topology.kernel_norm)),
      upscaler_(upscaler_override.empty() ? ckpt.topology.upscaler : upscaler_override),
      rnet_(rnet_config_from(ckpt)) {
  geom_.validate();
  check(upscaler_ == "bicubic" || upscaler_ == "learned",
        "unknown upscaler '" + upscaler_ + "' (expected 'bicubic' or 'learned')");
  import_params(rnet_.params(), ckpt);
  if (upscaler_ == "learned") {
    if (ckpt.find("srnet.head.w") == nullptr)
      fail("checkpoint has no learned upscaler tensors; use the bicubic upscaler");
    srnet_.emplace(srnet_config_from(ckpt));
    import_params(srnet_->params(), ckpt);
  }
}

Image Pipeline::downscale(const Image& hr, bool quantize) {
  return net_downscale(rnet_, hr, mean_, geom_, norm_, quantize);
}

Image Pipeline::upscale(const Image& lr) {
  check(lr.channels() == 3, "upscale expects an RGB input");
  if (!srnet_) return bicubic_upscale(lr, geom_.scale);
  Tensor x = hwc_to_nchw(lr);
  Tensor y = srnet_->forward(x);
  return nchw_to_hwc(y, 0, ColorSpace::RGB);
}

FieldPrediction Pipeline::fields(const Image& hr) {
  return predict_fields(rnet_, hr, mean_, geom_, norm_);
}

Checkpoint delta_checkpoint() {
  Checkpoint ckpt;
  ckpt.geom.scale = 1;
  ckpt.geom.m = 2;
  ckpt.geom.n = 2;
  ckpt.geom.offset_unit = 1.0;
  ckpt.topology.base = 8;
  ckpt.topology.cap = 8;
  ckpt.topology.blocks = 1;
  ckpt.topology.head_channels = 8;
  ckpt.topology.upscaler = "bicubic";
  ckpt.topology.offset_cap = 3.0;
  ckpt.topology.enable_offsets = true;
  ckpt.topology.kernel_norm = "softmax";

  ResamplerNet net(rnet_config_from(ckpt));
  // all-zero weights leave only the kernel head bias; a single large logit on
  // the centered tap (i=1, j=1 of the 2x2 window) makes its softmax weight 1
  // to double precision
  for (const NamedParam& p : net.params()) {
    p.value->fill(0.0);
    if (p.name == "rnet.khead.out.b") p.value->at(1 * 2 + 1) = 40.0;
    ckpt.tensors.push_back({p.name, *p.value});
  }
  ckpt.rgb_mean = {0.0, 0.0, 0.0};
  ckpt.config = nlohmann::json::object();
  return ckpt;
}

}  // namespace car
