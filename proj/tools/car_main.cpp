#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "car/checkpoint.hpp"
#include "car/common.hpp"
#include "car/gradcheck.hpp"
#include "car/image_io.hpp"
#include "car/metrics.hpp"
#include "car/net/bicubic.hpp"
#include "car/pipeline.hpp"
#include "car/trainer.hpp"
#include "car/viz.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw car::ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw car::ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

// pulls a path-valued key (train_dir/val_dir/out) out of the config object so
// the remaining keys parse as a plain TrainConfig
std::string take_path_key(json& j, const char* key) {
  if (!j.contains(key)) return "";
  if (!j.at(key).is_string()) throw car::ConfigError(std::string("config key '") + key +
                                                     "' must be a string");
  std::string v = j.at(key).get<std::string>();
  j.erase(key);
  return v;
}

struct TrainArgs {
  std::string config;
  std::string train_dir;
  std::string val_dir;
  std::string out;
  std::string resume;
  std::int64_t epochs = -1;
  std::int64_t seed = -1;
};

int cmd_train(const TrainArgs& a) {
  json raw = read_json_file(a.config);
  if (!raw.is_object()) throw car::ConfigError("config must be a JSON object");
  std::string train_dir = take_path_key(raw, "train_dir");
  std::string val_dir = take_path_key(raw, "val_dir");
  std::string out_dir = take_path_key(raw, "out");
  if (!a.train_dir.empty()) train_dir = a.train_dir;
  if (!a.val_dir.empty()) val_dir = a.val_dir;
  if (!a.out.empty()) out_dir = a.out;

  car::TrainConfig cfg = car::train_config_from_json(raw);
  if (a.epochs >= 0) cfg.epochs = static_cast<std::size_t>(a.epochs);
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (train_dir.empty()) throw car::ConfigError("missing config key 'train_dir'");
  if (out_dir.empty()) throw car::ConfigError("missing config key 'out'");

  car::Dataset train_set = car::load_dataset_dir(train_dir);
  car::Dataset val_set;
  if (!val_dir.empty()) val_set = car::load_dataset_dir(val_dir);

  fs::create_directories(out_dir);
  {
    json echo = car::train_config_to_json(cfg);
    echo["train_dir"] = train_dir;
    echo["val_dir"] = val_dir;
    echo["out"] = out_dir;
    std::ofstream cf(fs::path(out_dir) / "config.json");
    cf << echo.dump(2) << "\n";
  }

  car::Checkpoint resume_ckpt;
  const bool resuming = !a.resume.empty();
  if (resuming) resume_ckpt = car::load_checkpoint(a.resume);

  std::ofstream log(fs::path(out_dir) / "log.jsonl",
                    resuming ? std::ios::app : std::ios::trunc);
  auto hook = [&log](const json& rec) {
    log << rec.dump() << "\n";
    if (rec.at("type") != "step") std::cout << rec.dump() << "\n";
  };

  car::TrainResult result =
      car::train(cfg, train_set, val_set, resuming ? &resume_ckpt : nullptr, hook);
  log.flush();

  const std::string best_path = (fs::path(out_dir) / "best.ckpt").string();
  const std::string last_path = (fs::path(out_dir) / "last.ckpt").string();
  car::save_checkpoint(result.last, last_path);
  if (result.improved_best || !resuming || !fs::exists(best_path))
    car::save_checkpoint(result.best, best_path);

  if (result.diverged) {
    std::cerr << "error: training diverged (non-finite objective); best and last "
                 "checkpoints were saved\n";
    return 1;
  }
  std::cout << json{{"type", "done"},
                    {"steps", result.last.state.step},
                    {"epochs", result.last.state.epoch},
                    {"best", best_path},
                    {"last", last_path}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_downscale(const std::string& ckpt_path, const std::string& in_path,
                  const std::string& out_path) {
  car::Checkpoint ckpt = car::load_checkpoint(ckpt_path);
  car::Pipeline pipe(ckpt);
  car::Image hr = car::load_png(in_path, /*strip_alpha=*/true);
  const std::size_t s = pipe.scale();
  if (hr.height() % s != 0 || hr.width() % s != 0)
    car::fail("input extents " + std::to_string(hr.height()) + "x" +
              std::to_string(hr.width()) + " are not divisible by the scale factor " +
              std::to_string(s) + "; crop the image first");
  car::save_png(pipe.downscale(hr, /*quantize=*/true), out_path);
  return 0;
}

int cmd_upscale(const std::string& ckpt_path, bool bicubic, std::size_t scale,
                const std::string& in_path, const std::string& out_path) {
  car::Image lr = car::load_png(in_path, /*strip_alpha=*/true);
  if (bicubic) {
    car::save_png(car::bicubic_upscale(lr, scale), out_path);
    return 0;
  }
  if (ckpt_path.empty())
    throw car::ConfigError("upscale needs either --ckpt or --bicubic with --scale");
  car::Checkpoint ckpt = car::load_checkpoint(ckpt_path);
  car::Pipeline pipe(ckpt, "learned");
  car::save_png(pipe.upscale(lr), out_path);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& hr_dir,
             const std::string& upscaler, const std::string& out_path) {
  car::Checkpoint ckpt = car::load_checkpoint(ckpt_path);
  car::Dataset set = car::load_dataset_dir(hr_dir);
  std::ofstream out;
  if (!out_path.empty()) out.open(out_path, std::ios::trunc);
  auto emit = [&](const json& rec) {
    std::cout << rec.dump() << "\n";
    if (out.is_open()) out << rec.dump() << "\n";
  };

  double sum_py = 0.0, sum_ssim = 0.0, sum_prgb = 0.0;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    car::Image hr = car::center_crop_divisible(set.images[i], ckpt.geom.scale);
    car::MetricReport r = car::evaluate_pair(hr, ckpt, upscaler);
    r.name = set.names[i];
    emit(car::metric_report_to_json(r));
    sum_py += r.psnr_y;
    sum_ssim += r.ssim_y;
    sum_prgb += r.psnr_rgb;
  }
  const double n = static_cast<double>(set.images.size());
  car::MetricReport mean;
  mean.name = "mean";
  mean.psnr_y = sum_py / n;
  mean.ssim_y = sum_ssim / n;
  mean.psnr_rgb = sum_prgb / n;
  mean.border = ckpt.geom.scale;
  emit(car::metric_report_to_json(mean));
  return 0;
}

int cmd_gradcheck(const car::GradCheckOptions& opt) {
  std::vector<car::GradCheckResult> results = car::run_gradient_checks(opt);
  for (const car::GradCheckResult& r : results)
    std::printf("%-22s max_rel_err=%.3e checks=%zu %s\n", r.name.c_str(), r.max_rel_err,
                r.checks, r.pass ? "pass" : "FAIL");
  return car::all_passed(results) ? 0 : 1;
}

int cmd_viz(const std::string& ckpt_path, const std::string& in_path, const std::string& out_dir,
            const std::string& stem) {
  car::Checkpoint ckpt = car::load_checkpoint(ckpt_path);
  car::Image hr = car::center_crop_divisible(car::load_png(in_path, /*strip_alpha=*/true),
                                             ckpt.geom.scale);
  for (const std::string& f : car::write_viz(ckpt, hr, out_dir, stem)) std::cout << f << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"content-adaptive image downscaler"};
  app.require_subcommand(1);

  TrainArgs targs;
  CLI::App* train = app.add_subcommand("train", "train the downscaler on a PNG directory");
  train->add_option("--config", targs.config, "JSON config file")->required();
  train->add_option("--train-dir", targs.train_dir, "training PNG directory (overrides config)");
  train->add_option("--val-dir", targs.val_dir, "validation PNG directory (overrides config)");
  train->add_option("--out", targs.out, "output directory (overrides config)");
  train->add_option("--resume", targs.resume, "checkpoint to resume from");
  train->add_option("--epochs", targs.epochs, "override config epochs");
  train->add_option("--seed", targs.seed, "override config seed");

  std::string d_ckpt, d_in, d_out;
  CLI::App* down = app.add_subcommand("downscale", "downscale one PNG with a checkpoint");
  down->add_option("--ckpt", d_ckpt, "checkpoint path")->required();
  down->add_option("--in", d_in, "input PNG")->required();
  down->add_option("--out", d_out, "output PNG")->required();

  std::string u_ckpt, u_in, u_out;
  bool u_bicubic = false;
  std::size_t u_scale = 2;
  CLI::App* up = app.add_subcommand("upscale", "upscale one PNG (learned head or bicubic)");
  up->add_option("--ckpt", u_ckpt, "checkpoint with a learned upscaler");
  up->add_flag("--bicubic", u_bicubic, "use the fixed bicubic upscaler");
  up->add_option("--scale", u_scale, "scale factor for --bicubic");
  up->add_option("--in", u_in, "input PNG")->required();
  up->add_option("--out", u_out, "output PNG")->required();

  std::string e_ckpt, e_dir, e_upscaler, e_out;
  CLI::App* ev = app.add_subcommand("eval", "PSNR/SSIM over a directory of HR PNGs");
  ev->add_option("--ckpt", e_ckpt, "checkpoint path")->required();
  ev->add_option("--hr-dir", e_dir, "directory of HR PNGs")->required();
  ev->add_option("--upscaler", e_upscaler, "override: bicubic or learned");
  ev->add_option("--out", e_out, "also write the JSONL report here");

  car::GradCheckOptions gopt;
  CLI::App* gc = app.add_subcommand("gradcheck", "compare analytic gradients to finite differences");
  gc->add_option("--seed", gopt.seed, "RNG seed");
  gc->add_option("--instances", gopt.instances, "random instances per suite");
  gc->add_option("--max-size", gopt.max_size, "HR extent ceiling");
  gc->add_option("--tol", gopt.tol, "relative error tolerance");
  gc->add_option("--e2e-tol", gopt.end_to_end_tol, "tolerance for the end-to-end suite");
  gc->add_flag("--corrupt", gopt.corrupt, "negative control: skew one suite's gradients")
      ->group("");

  std::string v_ckpt, v_in, v_dir, v_stem = "viz";
  CLI::App* viz = app.add_subcommand("viz", "render kernel and offset maps for one image");
  viz->add_option("--ckpt", v_ckpt, "checkpoint path")->required();
  viz->add_option("--in", v_in, "input PNG")->required();
  viz->add_option("--out-dir", v_dir, "output directory")->required();
  viz->add_option("--stem", v_stem, "output filename stem");

  try {
    app.parse(argc, argv);
    if (train->parsed()) return cmd_train(targs);
    if (down->parsed()) return cmd_downscale(d_ckpt, d_in, d_out);
    if (up->parsed()) return cmd_upscale(u_ckpt, u_bicubic, u_scale, u_in, u_out);
    if (ev->parsed()) return cmd_eval(e_ckpt, e_dir, e_upscaler, e_out);
    if (gc->parsed()) return cmd_gradcheck(gopt);
    if (viz->parsed()) return cmd_viz(v_ckpt, v_in, v_dir, v_stem);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const car::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
