#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "car/image_io.hpp"
#include "car/trainer.hpp"
#include "png_builder.hpp"
#include "reference.hpp"

using namespace car;
namespace ts = car::testsupport;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("car_trainer_test_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

nlohmann::json minimal_config() { return {{"scale", 2}, {"lambda", 1.0}, {"gamma", 1.0}}; }

// small net so the training tests stay fast
TrainConfig tiny_config() {
  TrainConfig c;
  c.scale = 2;
  c.patch = 8;
  c.batch = 2;
  c.epochs = 1;
  c.lr = 1e-3;
  c.lambda = 0.0;
  c.gamma = 0.0;
  c.kernel_span = 4;
  c.net_base = 8;
  c.net_cap = 8;
  c.net_blocks = 1;
  c.net_head = 8;
  c.seed = 5;
  return c;
}

Dataset synth_dataset(std::uint64_t seed, std::size_t count, std::size_t h, std::size_t w) {
  Dataset ds;
  for (std::size_t i = 0; i < count; ++i) {
    ds.images.push_back(ts::synth_photo(seed + i, h, w));
    ds.names.push_back("synth_" + std::to_string(i) + ".png");
  }
  return ds;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].name != b.tensors[i].name) return false;
    if (!tensors_equal(a.tensors[i].t, b.tensors[i].t)) return false;
  }
  return a.state.step == b.state.step && a.state.epoch == b.state.epoch &&
         a.state.adam_t == b.state.adam_t && a.state.lr == b.state.lr;
}

}  // namespace

TEST_CASE("config: minimal JSON parses with defaults in place") {
  const TrainConfig c = train_config_from_json(minimal_config());
  CHECK(c.scale == 2);
  CHECK(c.lambda == 1.0);
  CHECK(c.gamma == 1.0);
  CHECK(c.batch == 16);
  CHECK(c.lr == 1e-4);
  CHECK(c.upscaler == "bicubic");
  CHECK(c.quantize == true);
  CHECK(c.effective_patch() == 96);
  CHECK(c.effective_span() == 6);
}

TEST_CASE("config: each required key is demanded by name") {
  for (const char* key : {"scale", "lambda", "gamma"}) {
    nlohmann::json j = minimal_config();
    j.erase(key);
    CHECK_THROWS_WITH_AS(train_config_from_json(j),
                         doctest::Contains((std::string("missing config key '") + key).c_str()),
                         ConfigError);
  }
}

TEST_CASE("config: unknown keys are rejected by name") {
  nlohmann::json j = minimal_config();
  j["learning_rate"] = 0.1;
  CHECK_THROWS_WITH_AS(train_config_from_json(j), doctest::Contains("'learning_rate'"),
                       ConfigError);
}

TEST_CASE("config: wrong value types are rejected") {
  nlohmann::json j = minimal_config();
  j["scale"] = "two";
  CHECK_THROWS_WITH_AS(train_config_from_json(j), doctest::Contains("wrong type"), ConfigError);
}

TEST_CASE("config: patch and span defaults scale with the factor") {
  nlohmann::json j = minimal_config();
  j["scale"] = 4;
  const TrainConfig c = train_config_from_json(j);
  CHECK(c.effective_patch() == 192);
  CHECK(c.effective_span() == 12);

  j["patch"] = 64;
  j["kernel_span"] = 8;
  const TrainConfig e = train_config_from_json(j);
  CHECK(e.effective_patch() == 64);
  CHECK(e.effective_span() == 8);
}

TEST_CASE("config: validate rejects out-of-range values") {
  auto reject = [](auto mutate, const char* needle) {
    TrainConfig c;
    c.lambda = 1.0;
    c.gamma = 1.0;
    mutate(c);
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains(needle), ConfigError);
  };
  reject([](TrainConfig& c) { c.scale = 3; }, "power of two");
  reject([](TrainConfig& c) { c.scale = 4; c.patch = 50; }, "divisible");
  reject([](TrainConfig& c) { c.batch = 0; }, "batch");
  reject([](TrainConfig& c) { c.lr = 0.0; }, "lr");
  reject([](TrainConfig& c) { c.beta1 = 1.0; }, "beta1");
  reject([](TrainConfig& c) { c.lr_factor = 1.5; }, "lr_factor");
  reject([](TrainConfig& c) { c.lambda = -0.1; }, "lambda");
  reject([](TrainConfig& c) { c.eta_mode = "huber"; }, "eta_mode");
  reject([](TrainConfig& c) { c.alpha = 1.2; }, "alpha");
  reject([](TrainConfig& c) { c.upscaler = "nearest"; }, "upscaler");
  reject([](TrainConfig& c) { c.kernel_norm = "l2"; }, "kernel_norm");
  reject([](TrainConfig& c) { c.kernel_span = 1; }, "kernel_span");
  reject([](TrainConfig& c) { c.net_base = 16; c.net_cap = 8; }, "net_cap");
  reject([](TrainConfig& c) { c.val_interval = 0; }, "val_interval");
}

TEST_CASE("config: json round trip is stable") {
  TrainConfig c = tiny_config();
  c.eta_mode = "inside-sqrt";
  c.upscaler = "learned";
  const nlohmann::json j1 = train_config_to_json(c);
  const TrainConfig back = train_config_from_json(j1);
  const nlohmann::json j2 = train_config_to_json(back);
  CHECK(j1 == j2);
}

TEST_CASE("load_dataset_dir: sorted load, alpha stripped, non-png ignored") {
  TempDir tmp;
  ts::TestRng rng(1);
  save_png(ts::random_image(rng, 6, 6, 3), tmp.file("c.png"));
  save_png(ts::random_image(rng, 5, 7, 3), tmp.file("a.png"));
  // RGBA via hand-built bytes; loader keeps the color channels
  ts::write_png_file(tmp.file("b.png"), 2, 2, 4,
                     {10, 20, 30, 255, 40, 50, 60, 255, 70, 80, 90, 255, 100, 110, 120, 255});
  std::ofstream(tmp.file("notes.txt")) << "not an image";

  const Dataset ds = load_dataset_dir(tmp.path.string());
  REQUIRE(ds.images.size() == 3);
  CHECK(ds.names == std::vector<std::string>{"a.png", "b.png", "c.png"});
  for (const Image& im : ds.images) CHECK(im.channels() == 3);
  CHECK(ds.images[1].at(0, 0, 0) == doctest::Approx(10.0 / 255.0).epsilon(1e-12));
}

TEST_CASE("load_dataset_dir: grayscale images are rejected by name") {
  TempDir tmp;
  ts::write_png_file(tmp.file("gray.png"), 2, 2, 1, {0, 64, 128, 255});
  CHECK_THROWS_WITH_AS(load_dataset_dir(tmp.path.string()), doctest::Contains("gray.png"),
                       std::runtime_error);
}

TEST_CASE("load_dataset_dir: empty and bogus directories are errors") {
  TempDir tmp;
  CHECK_THROWS_WITH_AS(load_dataset_dir(tmp.path.string()), doctest::Contains("no PNG"),
                       std::runtime_error);
  CHECK_THROWS_AS(load_dataset_dir(tmp.file("missing")), std::invalid_argument);
}

TEST_CASE("sample_minibatch: seeded draws are reproducible") {
  const Dataset ds = synth_dataset(3, 3, 12, 14);
  std::mt19937_64 r1(77), r2(77), r3(78);
  const std::vector<Image> a = sample_minibatch(ds, 6, 5, r1);
  const std::vector<Image> b = sample_minibatch(ds, 6, 5, r2);
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(tensors_equal(a[i].tensor(), b[i].tensor()));

  const std::vector<Image> c = sample_minibatch(ds, 6, 5, r3);
  bool any_diff = false;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (!tensors_equal(a[i].tensor(), c[i].tensor())) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("sample_minibatch: full-size patches are flip variants of the source") {
  Dataset ds;
  ts::TestRng rng(9);
  ds.images.push_back(ts::random_image(rng, 8, 8, 3));
  ds.names.push_back("only.png");
  const Image& src = ds.images[0];
  const Image variants[4] = {src, flip(src, FlipAxis::Horizontal), flip(src, FlipAxis::Vertical),
                             flip(flip(src, FlipAxis::Horizontal), FlipAxis::Vertical)};

  std::mt19937_64 r(123);
  const std::vector<Image> batch = sample_minibatch(ds, 8, 16, r);
  for (const Image& p : batch) {
    bool matched = false;
    for (const Image& v : variants)
      if (tensors_equal(p.tensor(), v.tensor())) matched = true;
    CHECK(matched);
  }
}

TEST_CASE("sample_minibatch: undersized images are reported by name") {
  Dataset ds;
  ts::TestRng rng(4);
  ds.images.push_back(ts::random_image(rng, 6, 6, 3));
  ds.names.push_back("tiny.png");
  std::mt19937_64 r(1);
  CHECK_THROWS_WITH_AS(sample_minibatch(ds, 10, 1, r), doctest::Contains("tiny.png"),
                       std::runtime_error);
}

TEST_CASE("train: zero epochs returns the seeded initialization untouched") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  const Dataset train_set = synth_dataset(11, 2, 16, 16);
  const TrainResult r1 = train(cfg, train_set, {});
  const TrainResult r2 = train(cfg, train_set, {});
  CHECK(r1.last.state.step == 0);
  CHECK(r1.last.state.adam_t == 0);
  CHECK(checkpoints_equal(r1.best, r1.last));
  CHECK(checkpoints_equal(r1.last, r2.last));
  CHECK(!r1.last.tensors.empty());
}

TEST_CASE("train: undersized training images are reported by name") {
  TrainConfig cfg = tiny_config();
  cfg.patch = 16;
  Dataset ds = synth_dataset(2, 1, 8, 8);
  ds.names[0] = "small_one.png";
  CHECK_THROWS_WITH_AS(train(cfg, ds, {}), doctest::Contains("small_one.png"),
                       std::runtime_error);
}

TEST_CASE("train: identical seeded runs emit identical records") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  const Dataset train_set = synth_dataset(21, 3, 12, 12);
  const Dataset val_set = synth_dataset(50, 2, 12, 12);

  auto run = [&]() {
    std::vector<std::string> records;
    train(cfg, train_set, val_set, nullptr,
          [&records](const nlohmann::json& j) { records.push_back(j.dump()); });
    return records;
  };
  const std::vector<std::string> a = run();
  const std::vector<std::string> b = run();
  REQUIRE(!a.empty());
  CHECK(a == b);

  TrainConfig other = cfg;
  other.seed = cfg.seed + 1;
  std::vector<std::string> c;
  train(other, train_set, val_set, nullptr,
        [&c](const nlohmann::json& j) { c.push_back(j.dump()); });
  CHECK(a != c);
}

TEST_CASE("train: step and val records carry the expected fields") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  cfg.val_interval = 2;
  const Dataset train_set = synth_dataset(31, 2, 12, 12);
  const Dataset val_set = synth_dataset(60, 1, 12, 12);

  std::vector<nlohmann::json> steps, vals;
  const TrainResult r = train(cfg, train_set, val_set, nullptr, [&](const nlohmann::json& j) {
    if (j.at("type") == "step") steps.push_back(j);
    if (j.at("type") == "val") vals.push_back(j);
  });

  REQUIRE(steps.size() == 2);  // ceil(2 / 2) steps per epoch, 2 epochs
  for (const auto& s : steps) {
    CHECK(s.at("l1").is_number());
    CHECK(s.at("total").is_number());
    CHECK(s.at("lr") == cfg.lr);
    CHECK(s.at("rejected") == false);
  }
  REQUIRE(vals.size() == 1);  // val_interval 2 over 2 epochs
  CHECK(vals[0].at("epoch") == 2);
  CHECK(vals[0].at("improved") == true);

  CHECK(r.improved_best);
  CHECK(std::isfinite(r.best.state.best_val_psnr));
  CHECK(r.last.state.step == 2);
  CHECK(r.last.config == train_config_to_json(cfg));
}

TEST_CASE("train: resuming at an epoch boundary replays the straight run") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  const Dataset train_set = synth_dataset(41, 3, 12, 12);

  const TrainResult straight = train(cfg, train_set, {});

  TrainConfig half = cfg;
  half.epochs = 1;
  const TrainResult first = train(half, train_set, {});
  CHECK(first.last.state.epoch == 1);
  const TrainResult second = train(cfg, train_set, {}, &first.last);

  CHECK(second.last.state.epoch == 2);
  CHECK(checkpoints_equal(straight.last, second.last));
}

TEST_CASE("train: resume rejects mismatched geometry") {
  TrainConfig cfg = tiny_config();
  const Dataset train_set = synth_dataset(43, 2, 12, 12);
  const TrainResult r = train(cfg, train_set, {});

  TrainConfig other = cfg;
  other.kernel_span = 6;
  CHECK_THROWS_WITH_AS(train(other, train_set, {}, &r.last), doctest::Contains("geometry"),
                       std::invalid_argument);
}

TEST_CASE("train: the reconstruction loss falls on an easy dataset") {
  TrainConfig cfg = tiny_config();
  cfg.patch = 16;
  cfg.batch = 2;
  cfg.epochs = 80;
  cfg.lr = 1e-3;
  const Dataset train_set = synth_dataset(71, 1, 16, 16);

  std::vector<double> l1;
  train(cfg, train_set, {}, nullptr, [&l1](const nlohmann::json& j) {
    if (j.at("type") == "step") l1.push_back(j.at("l1").get<double>());
  });
  REQUIRE(l1.size() == 80);
  const double head = std::accumulate(l1.begin(), l1.begin() + 10, 0.0) / 10.0;
  const double tail = std::accumulate(l1.end() - 10, l1.end(), 0.0) / 10.0;
  CHECK(tail < head * 0.8);
}
