#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "edm/nn.hpp"

namespace edm {

// Checkpoint layout: "EDMCKPT1", u8 role, u32 layer-width count, u32 widths,
// then every parameter as a little-endian f32 (per layer: weight row-major,
// then bias), then u64 FNV-1a over all preceding bytes.
//
// Parameters are rounded to single precision on save.

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kCheckpointMagic = "EDMCKPT1";

std::string encode_checkpoint(const ModelParams& model);
ModelParams decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelParams& model, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace edm
