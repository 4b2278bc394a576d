#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "fsi2p/model.hpp"

namespace fsi2p {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, Tensor> tensors;  // parameters, plus "momentum/<name>" buffers
  double baseline = 0.0;
  std::uint64_t step = 0;
};

Checkpoint make_checkpoint(const ModelParams& params, const std::map<std::string, Tensor>& momentum,
                           double baseline, std::uint64_t step);
// Writes the binary file and a "<path>.cfg" config snapshot next to it.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                     const RunConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every parameter out of the checkpoint; missing or mis-shaped tensors are errors.
void assign_params(ModelParams& params, const Checkpoint& ckpt);
std::map<std::string, Tensor> momentum_buffers(const Checkpoint& ckpt);

}  // namespace fsi2p
