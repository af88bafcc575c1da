#include "car/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <set>

#include "car/adam.hpp"
#include "car/color.hpp"
#include "car/common.hpp"
#include "car/image_io.hpp"
#include "car/losses.hpp"
#include "car/metrics.hpp"
#include "car/net/bicubic.hpp"
#include "car/net/resampler_net.hpp"
#include "car/net/srnet.hpp"
#include "car/pipeline.hpp"
#include "car/quantizer.hpp"

namespace car {
namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

bool power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

// splitmix64-style mix; every training step derives its RNG from (seed, step)
// so a resumed run replays the exact step stream without serialized RNG state
std::uint64_t step_seed(std::uint64_t seed, std::uint64_t step) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (step + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor hwc_grad_to_nchw(const Tensor& g) {
  const std::size_t h = g.extent(0), w = g.extent(1), c = g.extent(2);
  Tensor out({1, c, h, w});
  for (std::size_t x = 0; x < h; ++x)
    for (std::size_t y = 0; y < w; ++y)
      for (std::size_t ch = 0; ch < c; ++ch) out.at(0, ch, x, y) = g.at(x, y, ch);
  return out;
}

Tensor nchw_grad_to_hwc(const Tensor& g) {
  const std::size_t c = g.extent(1), h = g.extent(2), w = g.extent(3);
  Tensor out({h, w, c});
  for (std::size_t x = 0; x < h; ++x)
    for (std::size_t y = 0; y < w; ++y)
      for (std::size_t ch = 0; ch < c; ++ch) out.at(x, y, ch) = g.at(0, ch, x, y);
  return out;
}

ResamplerNetConfig rnet_config(const TrainConfig& cfg) {
  ResamplerNetConfig c;
  c.scale = cfg.scale;
  c.base = cfg.net_base;
  c.cap = cfg.net_cap;
  c.blocks = cfg.net_blocks;
  c.head_channels = cfg.net_head;
  c.m = cfg.effective_span();
  c.n = cfg.effective_span();
  c.offset_cap = cfg.offset_cap;
  c.enable_offsets = cfg.enable_offsets;
  return c;
}

SRNetConfig srnet_config(const TrainConfig& cfg) {
  SRNetConfig c;
  c.scale = cfg.scale;
  c.features = cfg.sr_features;
  c.blocks = cfg.sr_blocks;
  return c;
}

std::array<double, 3> dataset_mean(const Dataset& ds) {
  std::array<double, 3> mean{};
  double count = 0.0;
  for (const Image& im : ds.images) {
    for (std::size_t x = 0; x < im.height(); ++x)
      for (std::size_t y = 0; y < im.width(); ++y)
        for (std::size_t c = 0; c < 3; ++c) mean[c] += im.at(x, y, c);
    count += static_cast<double>(im.height() * im.width());
  }
  for (double& m : mean) m /= count;
  return mean;
}

}  // namespace

void TrainConfig::validate() const {
  require(power_of_two(scale), "config 'scale' must be a power of two");
  require(effective_patch() % scale == 0, "config 'patch' must be divisible by 'scale'");
  require(batch >= 1, "config 'batch' must be at least 1");
  require(lr > 0.0, "config 'lr' must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, "config 'beta1' must be in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "config 'beta2' must be in [0, 1)");
  require(eps > 0.0, "config 'eps' must be positive");
  require(patience >= 1, "config 'patience' must be at least 1");
  require(lr_factor > 0.0 && lr_factor <= 1.0, "config 'lr_factor' must be in (0, 1]");
  require(lambda >= 0.0, "config 'lambda' must be non-negative");
  require(gamma >= 0.0, "config 'gamma' must be non-negative");
  require(eta >= 0.0, "config 'eta' must be non-negative");
  require(eta_mode == "additive" || eta_mode == "inside-sqrt",
          "config 'eta_mode' must be 'additive' or 'inside-sqrt'");
  require(alpha >= 0.0 && alpha <= 1.0, "config 'alpha' must be in [0, 1]");
  require(upscaler == "bicubic" || upscaler == "learned",
          "config 'upscaler' must be 'bicubic' or 'learned'");
  require(offset_cap > 0.0, "config 'offset_cap' must be positive");
  require(kernel_norm == "softmax" || kernel_norm == "sum",
          "config 'kernel_norm' must be 'softmax' or 'sum'");
  require(effective_span() >= 2, "config 'kernel_span' must be at least 2");
  require(net_base >= 1 && net_cap >= net_base, "config 'net_cap' must be at least 'net_base'");
  require(net_head >= 1, "config 'net_head' must be at least 1");
  require(sr_features >= 1, "config 'sr_features' must be at least 1");
  require(val_interval >= 1, "config 'val_interval' must be at least 1");
}

ResampleGeometry TrainConfig::geometry() const {
  ResampleGeometry g;
  g.scale = scale;
  g.m = effective_span();
  g.n = effective_span();
  g.offset_unit = static_cast<double>(scale);
  return g;
}

NetTopology TrainConfig::topology() const {
  NetTopology t;
  t.base = net_base;
  t.cap = net_cap;
  t.blocks = net_blocks;
  t.head_channels = net_head;
  t.upscaler = upscaler;
  t.sr_features = sr_features;
  t.sr_blocks = sr_blocks;
  t.offset_cap = offset_cap;
  t.enable_offsets = enable_offsets;
  t.kernel_norm = kernel_norm;
  return t;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), "config must be a JSON object");
  static const std::set<std::string> known = {
      "scale",      "patch",          "batch",       "epochs",     "lr",
      "beta1",      "beta2",          "eps",         "patience",   "lr_factor",
      "lambda",     "gamma",          "eta",         "eta_mode",   "alpha",
      "quantize",   "upscaler",       "seed",        "enable_offsets",
      "offset_cap", "kernel_norm",    "kernel_span", "net_base",   "net_cap",
      "net_blocks", "net_head",       "sr_features", "sr_blocks",  "val_interval"};
  for (const auto& item : j.items())
    require(known.count(item.key()) != 0, "unknown config key '" + item.key() + "'");
  for (const char* key : {"scale", "lambda", "gamma"})
    require(j.contains(key), std::string("missing config key '") + key + "'");

  TrainConfig c;
  try {
    auto get = [&j](const char* key, auto& slot) {
      if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
    };
    get("scale", c.scale);
    get("patch", c.patch);
    get("batch", c.batch);
    get("epochs", c.epochs);
    get("lr", c.lr);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("eps", c.eps);
    get("patience", c.patience);
    get("lr_factor", c.lr_factor);
    get("lambda", c.lambda);
    get("gamma", c.gamma);
    get("eta", c.eta);
    get("eta_mode", c.eta_mode);
    get("alpha", c.alpha);
    get("quantize", c.quantize);
    get("upscaler", c.upscaler);
    get("seed", c.seed);
    get("enable_offsets", c.enable_offsets);
    get("offset_cap", c.offset_cap);
    get("kernel_norm", c.kernel_norm);
    get("kernel_span", c.kernel_span);
    get("net_base", c.net_base);
    get("net_cap", c.net_cap);
    get("net_blocks", c.net_blocks);
    get("net_head", c.net_head);
    get("sr_features", c.sr_features);
    get("sr_blocks", c.sr_blocks);
    get("val_interval", c.val_interval);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"scale", cfg.scale},
          {"patch", cfg.effective_patch()},
          {"batch", cfg.batch},
          {"epochs", cfg.epochs},
          {"lr", cfg.lr},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"eps", cfg.eps},
          {"patience", cfg.patience},
          {"lr_factor", cfg.lr_factor},
          {"lambda", cfg.lambda},
          {"gamma", cfg.gamma},
          {"eta", cfg.eta},
          {"eta_mode", cfg.eta_mode},
          {"alpha", cfg.alpha},
          {"quantize", cfg.quantize},
          {"upscaler", cfg.upscaler},
          {"seed", cfg.seed},
          {"enable_offsets", cfg.enable_offsets},
          {"offset_cap", cfg.offset_cap},
          {"kernel_norm", cfg.kernel_norm},
          {"kernel_span", cfg.effective_span()},
          {"net_base", cfg.net_base},
          {"net_cap", cfg.net_cap},
          {"net_blocks", cfg.net_blocks},
          {"net_head", cfg.net_head},
          {"sr_features", cfg.sr_features},
          {"sr_blocks", cfg.sr_blocks},
          {"val_interval", cfg.val_interval}};
}

Dataset load_dataset_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  check(fs::is_directory(dir), "dataset path '" + dir + "' is not a directory");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (ext == ".png") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) fail("no PNG images found in '" + dir + "'");

  Dataset ds;
  for (const fs::path& p : paths) {
    Image im = load_png(p.string(), /*strip_alpha=*/true);
    if (im.channels() != 3) fail("dataset image '" + p.string() + "' must be RGB");
    ds.images.push_back(std::move(im));
    ds.names.push_back(p.filename().string());
  }
  return ds;
}

std::vector<Image> sample_minibatch(const Dataset& ds, std::size_t patch, std::size_t batch,
                                    std::mt19937_64& rng) {
  check(!ds.images.empty(), "cannot sample from an empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, ds.images.size() - 1);
  std::bernoulli_distribution coin(0.5);
  std::vector<Image> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t idx = pick(rng);
    const Image& im = ds.images[idx];
    if (im.height() < patch || im.width() < patch)
      fail("image '" + ds.names[idx] + "' is smaller than the training patch");
    std::uniform_int_distribution<std::size_t> rows(0, im.height() - patch);
    std::uniform_int_distribution<std::size_t> cols(0, im.width() - patch);
    const std::size_t r0 = rows(rng);
    const std::size_t c0 = cols(rng);
    Image p = crop_patch(im, r0, c0, patch, patch);
    if (coin(rng)) p = flip(p, FlipAxis::Horizontal);
    if (coin(rng)) p = flip(p, FlipAxis::Vertical);
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

struct SampleLosses {
  double l1 = 0.0;
  double reg = 0.0;
  double tv = 0.0;
};

// forward + backward for one patch; parameter gradients accumulate scaled by inv_b
SampleLosses train_sample(const Image& patch, const TrainConfig& cfg,
                          const ResampleGeometry& geom, const std::array<double, 3>& mean,
                          KernelNorm norm, ResamplerNet& rnet, SRNet* srnet, double inv_b) {
  const std::size_t mn = geom.m * geom.n;

  Tensor x = hwc_to_nchw(patch);
  const std::size_t plane = patch.height() * patch.width();
  for (std::size_t c = 0; c < 3; ++c) {
    double* p = x.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] -= mean[c];
  }
  ResamplerNetOut out = rnet.forward(x);
  Tensor raw = ResamplerNet::field_from_nchw(out.raw_kernels, 0, geom.m, geom.n);
  NormalizedKernels nk = normalize_kernels(raw, norm);
  OffsetField off{ResamplerNet::field_from_nchw(out.dx, 0, geom.m, geom.n),
                  ResamplerNet::field_from_nchw(out.dy, 0, geom.m, geom.n)};

  DownscaleResult down = downscale_forward(patch, nk.field(), off, geom, /*record_tape=*/true);
  QuantizerConfig qc{cfg.alpha, cfg.quantize};
  QuantizeResult q = quantize_with_tape(down.lr, qc);

  Image sr;
  if (srnet != nullptr) {
    Tensor lrn = hwc_to_nchw(q.out);
    sr = nchw_to_hwc(srnet->forward(lrn), 0, ColorSpace::RGB);
  } else {
    sr = bicubic_upscale(q.out, geom.scale);
  }

  L1Loss l1 = l1_loss(sr, patch);
  OffsetRegConfig rc{cfg.eta, cfg.eta_mode == "additive" ? EtaMode::Additive : EtaMode::InsideSqrt};
  OffsetRegResult reg = offset_reg(off, geom, rc);
  PartialTvResult tv = partial_tv(off, nk.field());

  Tensor grad_sr = std::move(l1.grad);
  for (std::size_t i = 0; i < grad_sr.size(); ++i) grad_sr[i] *= inv_b;

  Tensor grad_lr_q;
  if (srnet != nullptr) {
    Tensor gs = hwc_grad_to_nchw(grad_sr);
    grad_lr_q = nchw_grad_to_hwc(srnet->backward(gs));
  } else {
    grad_lr_q = bicubic_upscale_backward(grad_sr, q.out.height(), q.out.width(), geom.scale);
  }
  Tensor grad_lr = quantize_backward(grad_lr_q, q.pre, qc);
  DownscaleGrads dg = downscale_backward(grad_lr, down.tape);

  const double wl = inv_b * cfg.lambda, wg = inv_b * cfg.gamma;
  for (std::size_t i = 0; i < dg.dx.size(); ++i) {
    dg.dx[i] += wl * reg.grad_dx[i] + wg * tv.grad_dx[i];
    dg.dy[i] += wl * reg.grad_dy[i] + wg * tv.grad_dy[i];
    dg.k[i] += wg * tv.grad_k[i];
  }
  Tensor grad_raw = nk.backward(dg.k);

  const std::size_t lh = patch.height() / geom.scale, lw = patch.width() / geom.scale;
  Tensor gk({1, mn, lh, lw}), gdx({1, mn, lh, lw}), gdy({1, mn, lh, lw});
  ResamplerNet::field_grad_to_nchw(grad_raw, 0, gk);
  ResamplerNet::field_grad_to_nchw(dg.dx, 0, gdx);
  ResamplerNet::field_grad_to_nchw(dg.dy, 0, gdy);
  rnet.backward(gk, gdx, gdy);

  return {l1.value, reg.value, tv.value};
}

double validation_psnr_y(const Dataset& val, const ResampleGeometry& geom,
                         const std::array<double, 3>& mean, KernelNorm norm, ResamplerNet& rnet,
                         SRNet* srnet) {
  double acc = 0.0;
  for (const Image& im : val.images) {
    Image hr = center_crop_divisible(im, geom.scale);
    Image lr = net_downscale(rnet, hr, mean, geom, norm, /*quantize=*/true);
    Image sr;
    if (srnet != nullptr) {
      Tensor lrn = hwc_to_nchw(lr);
      sr = nchw_to_hwc(srnet->forward(lrn), 0, ColorSpace::RGB);
    } else {
      sr = bicubic_upscale(lr, geom.scale);
    }
    acc += psnr(rgb_to_y(sr), rgb_to_y(hr), geom.scale);
  }
  return acc / static_cast<double>(val.images.size());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const Checkpoint* resume, const RecordHook& hook) {
  cfg.validate();
  check(!train_set.images.empty(), "training set is empty");
  const ResampleGeometry geom = cfg.geometry();
  const std::size_t patch = cfg.effective_patch();
  for (std::size_t i = 0; i < train_set.images.size(); ++i) {
    const Image& im = train_set.images[i];
    if (im.height() < patch || im.width() < patch)
      fail("image '" + train_set.names[i] + "' is smaller than the training patch");
  }
  for (std::size_t i = 0; i < val_set.images.size(); ++i) {
    const Image& im = val_set.images[i];
    if (im.height() < 3 * geom.scale || im.width() < 3 * geom.scale)
      fail("validation image '" + val_set.names[i] + "' is too small for the scale");
  }

  const KernelNorm norm = kernel_norm_from_string(cfg.kernel_norm);
  ResamplerNet rnet(rnet_config(cfg));
  std::optional<SRNet> srnet;
  if (cfg.upscaler == "learned") srnet.emplace(srnet_config(cfg));

  std::array<double, 3> mean{};
  TrainerState state;
  state.lr = cfg.lr;
  {
    std::mt19937_64 init_rng(step_seed(cfg.seed, 0));
    rnet.init(init_rng);
    if (srnet) srnet->init(init_rng);
  }

  std::vector<NamedParam> params = rnet.params();
  if (srnet) {
    std::vector<NamedParam> sp = srnet->params();
    params.insert(params.end(), sp.begin(), sp.end());
  }
  Adam adam(params, {cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});

  if (resume != nullptr) {
    check(resume->geom.scale == geom.scale && resume->geom.m == geom.m &&
              resume->geom.n == geom.n && resume->geom.offset_unit == geom.offset_unit,
          "resume checkpoint geometry does not match the config");
    check(resume->topology.upscaler == cfg.upscaler,
          "resume checkpoint upscaler does not match the config");
    import_params(params, *resume);
    import_params(adam.moments(), *resume);
    state = resume->state;
    adam.set_t(state.adam_t);
    adam.set_lr(state.lr);
    mean = resume->rgb_mean;
  } else {
    mean = dataset_mean(train_set);
  }

  auto snapshot = [&]() {
    Checkpoint c;
    c.geom = geom;
    c.topology = cfg.topology();
    c.rgb_mean = mean;
    c.config = train_config_to_json(cfg);
    c.state = state;
    c.state.adam_t = adam.t();
    for (const NamedParam& p : params) c.tensors.push_back({p.name, *p.value});
    for (const NamedParam& m : adam.moments()) c.tensors.push_back({m.name, *m.value});
    return c;
  };
  auto emit = [&hook](const nlohmann::json& rec) {
    if (hook) hook(rec);
  };

  TrainResult result;
  result.best = snapshot();
  bool have_val_best = false;
  const double inv_b = 1.0 / static_cast<double>(cfg.batch);
  const std::size_t steps_per_epoch =
      (train_set.images.size() + cfg.batch - 1) / cfg.batch;
  const LossWeights weights{cfg.lambda, cfg.gamma};

  for (std::uint64_t epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t k = 0; k < steps_per_epoch; ++k) {
      ++state.step;
      std::mt19937_64 rng(step_seed(cfg.seed, state.step));
      std::vector<Image> batch = sample_minibatch(train_set, patch, cfg.batch, rng);

      rnet.zero_grad();
      if (srnet) srnet->zero_grad();
      SampleLosses sums;
      for (const Image& p : batch) {
        SampleLosses s = train_sample(p, cfg, geom, mean, norm, rnet,
                                      srnet ? &*srnet : nullptr, inv_b);
        sums.l1 += s.l1;
        sums.reg += s.reg;
        sums.tv += s.tv;
      }
      const double l1 = sums.l1 * inv_b, reg = sums.reg * inv_b, tv = sums.tv * inv_b;
      const double total = total_objective(l1, reg, tv, weights);
      if (!std::isfinite(total)) {
        emit({{"type", "divergence"}, {"step", state.step}, {"epoch", epoch}});
        result.diverged = true;
        state.epoch = epoch;
        result.last = snapshot();
        if (!have_val_best) result.best = result.last;
        return result;
      }
      const bool accepted = adam.step();
      state.adam_t = adam.t();
      emit({{"type", "step"},
            {"step", state.step},
            {"epoch", epoch},
            {"l1", l1},
            {"reg", reg},
            {"tv", tv},
            {"total", total},
            {"lr", adam.lr()},
            {"rejected", !accepted}});
    }
    state.epoch = epoch;

    if (!val_set.images.empty() && epoch % cfg.val_interval == 0) {
      const double v = validation_psnr_y(val_set, geom, mean, norm, rnet,
                                         srnet ? &*srnet : nullptr);
      const bool improved = v > state.best_val_psnr;
      if (improved) {
        state.best_val_psnr = v;
        state.epochs_since_improve = 0;
        result.best = snapshot();
        have_val_best = true;
        result.improved_best = true;
      } else {
        ++state.epochs_since_improve;
        if (state.epochs_since_improve >= cfg.patience) {
          state.lr *= cfg.lr_factor;
          adam.set_lr(state.lr);
          state.epochs_since_improve = 0;
        }
      }
      auto enc = [](double x) -> nlohmann::json {
        if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
        return x;
      };
      emit({{"type", "val"},
            {"epoch", epoch},
            {"psnr_y", enc(v)},
            {"best_psnr_y", enc(state.best_val_psnr)},
            {"lr", state.lr},
            {"improved", improved}});
    }
  }

  result.last = snapshot();
  if (!have_val_best) result.best = result.last;
  return result;
}

}  // namespace car
