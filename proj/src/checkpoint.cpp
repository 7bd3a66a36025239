#include "mvcnet/checkpoint.hpp"

#include "mvcnet/binary_io.hpp"
#include "mvcnet/errors.hpp"

namespace mvcnet {

std::string encode_checkpoint(const Network& network) {
  ByteWriter w;
  w.blob(kCheckpointVersion);
  w.blob(to_json(network.spec()).dump());
  w.u64(network.seed());
  w.u32(static_cast<std::uint32_t>(network.params().size()));
  for (const auto& [id, m] : network.params()) {
    w.blob(id);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
  }
  return w.take();
}

Network decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  const std::string version(r.blob());
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint version mismatch: file has '" + version + "', expected '" +
                          std::string(kCheckpointVersion) + "'");
  }
  nlohmann::json spec_json;
  try {
    spec_json = nlohmann::json::parse(r.blob());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint: malformed spec: ") + e.what());
  }
  NetworkSpec spec = network_spec_from_json(spec_json);
  const std::uint64_t seed = r.u64();
  const std::uint32_t count = r.u32();
  ParameterSet params;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string id(r.blob());
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (static_cast<std::uint64_t>(rows) * cols * 8 > r.remaining()) {
      throw ValidationError("checkpoint: tensor '" + id + "' truncated");
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
    params.emplace(std::move(id), std::move(m));
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes after the last tensor");
  return Network(std::move(spec), std::move(params), seed);
}

void save_checkpoint(const Network& network, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(network));
}

Network load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace mvcnet
