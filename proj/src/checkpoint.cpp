#include "edm/checkpoint.hpp"

#include "edm/binary_io.hpp"

namespace edm {

std::string encode_checkpoint(const ModelParams& model) {
  bin::Writer w;
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(model.role));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.arch.widths.size()));
  for (int width : model.arch.widths) w.put<std::uint32_t>(static_cast<std::uint32_t>(width));
  for (const auto& t : model.params.tensors())
    for (double v : t) w.put_f32(static_cast<float>(v));
  const std::uint64_t sum = bin::fnv1a64(w.data());
  w.put<std::uint64_t>(sum);
  return w.data();
}

ModelParams decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 1 + 4 + 8 ||
      bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    throw CheckpointError("not a checkpoint file (bad magic or too short)");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  bin::Reader tail(bytes.substr(bytes.size() - 8));
  std::uint64_t stored = 0;
  tail.get(stored);
  if (stored != bin::fnv1a64(body))
    throw CheckpointError("checkpoint checksum mismatch");

  bin::Reader r(body.substr(kCheckpointMagic.size()));
  std::uint8_t role = 0;
  std::uint32_t n_widths = 0;
  r.get(role);
  r.get(n_widths);
  if (role > 1) throw CheckpointError("unknown network role tag");
  if (n_widths < 2 || n_widths > 64)
    throw CheckpointError("implausible architecture descriptor");
  Architecture arch;
  for (std::uint32_t i = 0; i < n_widths; ++i) {
    std::uint32_t width = 0;
    if (!r.get(width) || width == 0 || width > (1U << 20))
      throw CheckpointError("bad layer width in checkpoint");
    arch.widths.push_back(static_cast<int>(width));
  }
  ModelParams m;
  m.arch = arch;
  m.role = static_cast<NetRole>(role);
  for (std::size_t l = 0; l + 1 < arch.widths.size(); ++l)
    m.params.layers.push_back(
        DenseLayer{Matrix(static_cast<std::size_t>(arch.widths[l + 1]),
                          static_cast<std::size_t>(arch.widths[l])),
                   std::vector<double>(static_cast<std::size_t>(arch.widths[l + 1]))});
  if (r.remaining() != m.params.size() * 4)
    throw CheckpointError("checkpoint parameter block has the wrong length");
  for (auto t : m.params.tensors())
    for (double& v : t) {
      float f = 0.0F;
      r.get_f32(f);
      v = f;
    }
  return m;
}

void save_checkpoint(const ModelParams& model, const std::string& path) {
  bin::write_file(path, encode_checkpoint(model));
}

ModelParams load_checkpoint(const std::string& path) {
  std::string bytes;
  try {
    bytes = bin::read_file(path);
  } catch (const bin::IoError& e) {
    throw CheckpointError(e.what());
  }
  return decode_checkpoint(bytes);
}

}  // namespace edm
