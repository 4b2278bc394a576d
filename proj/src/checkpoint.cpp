#include "fsi2p/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace fsi2p {

namespace {

constexpr char kMagic[] = "FSI2P-CKPT1";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;
constexpr char kMomentumPrefix[] = "momentum/";

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

Checkpoint make_checkpoint(const ModelParams& params, const std::map<std::string, Tensor>& momentum,
                           double baseline, std::uint64_t step) {
  Checkpoint c;
  visit_params(params, [&](const std::string& name, const Tensor& t) { c.tensors[name] = t.detach(); });
  for (const auto& [name, t] : momentum) c.tensors[kMomentumPrefix + name] = t.detach();
  c.baseline = baseline;
  c.step = step;
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                     const RunConfig& config) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kMagic, kMagicLen);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
      for (Index d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
      out.write(reinterpret_cast<const char*>(t.data().data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
    }
    put<double>(out, ckpt.baseline);
    put<std::uint64_t>(out, ckpt.step);
    if (!out) throw IoError("write failed on " + path.string());
  }
  std::ofstream cfg(path.string() + ".cfg");
  if (!cfg) throw IoError("cannot write config snapshot next to " + path.string());
  cfg << format_config(config);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw IoError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get<std::uint16_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rank = get<std::uint8_t>(in, path);
    Shape shape;
    for (std::uint8_t r = 0; r < rank; ++r) shape.push_back(get<std::uint32_t>(in, path));
    Eigen::VectorXd data(shape_numel(shape));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(data.size())));
    if (!in) throw IoError("truncated checkpoint " + path.string() + " in tensor " + name);
    c.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  c.baseline = get<double>(in, path);
  c.step = get<std::uint64_t>(in, path);
  return c;
}

void assign_params(ModelParams& params, const Checkpoint& ckpt) {
  visit_params(params, [&](const std::string& name, Tensor& t) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw ShapeError("checkpoint is missing tensor " + name);
    if (it->second.shape() != t.shape()) {
      throw ShapeError("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape()) +
                       ", model expects " + shape_str(t.shape()));
    }
    t = it->second;
  });
}

std::map<std::string, Tensor> momentum_buffers(const Checkpoint& ckpt) {
  std::map<std::string, Tensor> out;
  const std::size_t n = std::strlen(kMomentumPrefix);
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.compare(0, n, kMomentumPrefix) == 0) out.emplace(name.substr(n), t);
  }
  return out;
}

}  // namespace fsi2p
