#include "car/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace car {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'R', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are unsupported");

nlohmann::json encode_double(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double decode_double(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    fail("checkpoint: bad numeric string '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& nt : tensors)
    if (nt.name == name) return &nt.t;
  return nullptr;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  nlohmann::json j;
  j["version"] = c.version;
  j["geometry"] = {{"scale", c.geom.scale},
                   {"m", c.geom.m},
                   {"n", c.geom.n},
                   {"offset_unit", c.geom.offset_unit}};
  j["topology"] = {{"base", c.topology.base},
                   {"cap", c.topology.cap},
                   {"blocks", c.topology.blocks},
                   {"head_channels", c.topology.head_channels},
                   {"upscaler", c.topology.upscaler},
                   {"sr_features", c.topology.sr_features},
                   {"sr_blocks", c.topology.sr_blocks},
                   {"offset_cap", c.topology.offset_cap},
                   {"enable_offsets", c.topology.enable_offsets},
                   {"kernel_norm", c.topology.kernel_norm}};
  j["rgb_mean"] = c.rgb_mean;
  j["config"] = c.config;
  j["state"] = {{"step", c.state.step},
                {"epoch", c.state.epoch},
                {"adam_t", c.state.adam_t},
                {"lr", c.state.lr},
                {"best_val_psnr", encode_double(c.state.best_val_psnr)},
                {"epochs_since_improve", c.state.epochs_since_improve}};

  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& nt : c.tensors) {
    dir.push_back({{"name", nt.name}, {"shape", nt.t.shape()}, {"offset", offset}});
    offset += nt.t.size() * sizeof(float);
  }
  j["tensors"] = dir;

  const std::string header = j.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("save_checkpoint: cannot open '" + tmp + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<float> buf;
    for (const auto& nt : c.tensors) {
      buf.resize(nt.t.size());
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(nt.t[i]);
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      fail("save_checkpoint: write to '" + tmp + "' failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    fail("save_checkpoint: cannot rename temporary file onto '" + path + "': " + ec.message());
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t))
    fail("load_checkpoint: '" + path + "' is truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    fail("load_checkpoint: '" + path + "' is not a checkpoint (bad magic)");

  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof(kMagic), sizeof(len));
  const std::size_t header_start = sizeof(kMagic) + sizeof(std::uint64_t);
  if (header_start + len > bytes.size())
    fail("load_checkpoint: '" + path + "' is truncated (header)");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.substr(header_start, len));
  } catch (const nlohmann::json::exception& e) {
    fail("load_checkpoint: '" + path + "' has a corrupt header: " + e.what());
  }

  Checkpoint c;
  c.version = j.at("version").get<int>();
  if (c.version != 1)
    fail("load_checkpoint: unsupported checkpoint version " + std::to_string(c.version));

  const auto& g = j.at("geometry");
  c.geom.scale = g.at("scale").get<std::size_t>();
  c.geom.m = g.at("m").get<std::size_t>();
  c.geom.n = g.at("n").get<std::size_t>();
  c.geom.offset_unit = g.at("offset_unit").get<double>();
  c.geom.validate();

  const auto& t = j.at("topology");
  c.topology.base = t.at("base").get<std::size_t>();
  c.topology.cap = t.at("cap").get<std::size_t>();
  c.topology.blocks = t.at("blocks").get<std::size_t>();
  c.topology.head_channels = t.at("head_channels").get<std::size_t>();
  c.topology.upscaler = t.at("upscaler").get<std::string>();
  c.topology.sr_features = t.at("sr_features").get<std::size_t>();
  c.topology.sr_blocks = t.at("sr_blocks").get<std::size_t>();
  c.topology.offset_cap = t.at("offset_cap").get<double>();
  c.topology.enable_offsets = t.at("enable_offsets").get<bool>();
  c.topology.kernel_norm = t.at("kernel_norm").get<std::string>();

  c.rgb_mean = j.at("rgb_mean").get<std::array<double, 3>>();
  c.config = j.at("config");

  const auto& s = j.at("state");
  c.state.step = s.at("step").get<std::uint64_t>();
  c.state.epoch = s.at("epoch").get<std::uint64_t>();
  c.state.adam_t = s.at("adam_t").get<std::uint64_t>();
  c.state.lr = s.at("lr").get<double>();
  c.state.best_val_psnr = decode_double(s.at("best_val_psnr"));
  c.state.epochs_since_improve = s.at("epochs_since_improve").get<std::uint64_t>();

  const std::size_t payload_start = header_start + len;
  const std::size_t payload_size = bytes.size() - payload_start;
  for (const auto& entry : j.at("tensors")) {
    NamedTensor nt;
    nt.name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    const std::uint64_t off = entry.at("offset").get<std::uint64_t>();
    const std::size_t numel = Tensor::numel(shape);
    if (off + numel * sizeof(float) > payload_size)
      fail("load_checkpoint: '" + path + "' is truncated (tensor '" + nt.name + "')");
    nt.t = Tensor::zeros(shape);
    const char* src = bytes.data() + payload_start + off;
    for (std::size_t i = 0; i < numel; ++i) {
      float f;
      std::memcpy(&f, src + i * sizeof(float), sizeof(float));
      nt.t[i] = static_cast<double>(f);
    }
    c.tensors.push_back(std::move(nt));
  }
  return c;
}

}  // namespace car
