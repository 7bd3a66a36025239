#include "mvcnet/dataset_io.hpp"

#include <cmath>

#include "mvcnet/binary_io.hpp"
#include "mvcnet/errors.hpp"

namespace mvcnet {

namespace {

ByteReader field(ByteReader& r, std::string_view name) {
  const std::uint32_t len = r.u32();
  if (len > r.remaining()) throw ValidationError("dataset: header field '" + std::string(name) + "' truncated");
  return ByteReader(r.raw(len));
}

void finish(const ByteReader& r, std::string_view name) {
  if (!r.done()) throw ValidationError("dataset: header field '" + std::string(name) + "' has trailing bytes");
}

}  // namespace

std::string encode_dataset(const Dataset& d) {
  ByteWriter w;
  w.raw(kDatasetMagic);
  auto put = [&](auto fill) {
    ByteWriter f;
    fill(f);
    w.blob(f.bytes());
  };
  put([&](ByteWriter& f) {
    f.u8(d.manifold.kind == ManifoldKind::Spd ? 0 : 1);
    f.u32(static_cast<std::uint32_t>(d.manifold.n));
  });
  put([&](ByteWriter& f) {
    f.u32(static_cast<std::uint32_t>(d.dims.size()));
    for (int x : d.dims) f.u32(static_cast<std::uint32_t>(x));
  });
  put([&](ByteWriter& f) { f.u32(static_cast<std::uint32_t>(d.channels)); });
  put([&](ByteWriter& f) { f.u64(d.samples.size()); });
  put([&](ByteWriter& f) { f.u8(static_cast<std::uint8_t>(d.task)); });
  put([&](ByteWriter& f) { f.u64(d.seed); });
  put([&](ByteWriter& f) { f.u32(static_cast<std::uint32_t>(d.classes)); });
  put([&](ByteWriter& f) { f.f64(d.sigma); });
  for (const LabeledSample& s : d.samples) {
    if (!(s.image.manifold == d.manifold) || s.image.dims != d.dims || s.image.channels != d.channels) {
      throw ContractError("encode_dataset: sample shape differs from the dataset header");
    }
    w.f64(s.target);
    w.f64(s.clean_target);
    for (const Vector& c : s.image.data) {
      for (Eigen::Index i = 0; i < c.size(); ++i) w.f64(c(i));
    }
  }
  return w.take();
}

Dataset decode_dataset(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kDatasetMagic.size() || r.raw(kDatasetMagic.size()) != kDatasetMagic) {
    throw ValidationError("dataset: missing MVT1 magic bytes");
  }
  Dataset d;
  {
    ByteReader f = field(r, "manifold");
    const std::uint8_t kind = f.u8();
    const int n = static_cast<int>(f.u32());
    finish(f, "manifold");
    if (kind > 1) throw ValidationError("dataset: unknown manifold kind " + std::to_string(kind));
    d.manifold = kind == 0 ? ManifoldId::spd(n) : ManifoldId::sphere(n);
  }
  {
    ByteReader f = field(r, "dims");
    const std::uint32_t rank = f.u32();
    if (rank < 1 || rank > 3) throw ValidationError("dataset: dims rank must be 1, 2 or 3");
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t x = f.u32();
      if (x < 1 || x > (1u << 20)) throw ValidationError("dataset: dims extent out of range");
      d.dims.push_back(static_cast<int>(x));
    }
    finish(f, "dims");
  }
  {
    ByteReader f = field(r, "channels");
    const std::uint32_t c = f.u32();
    if (c < 1 || c > (1u << 16)) throw ValidationError("dataset: channels out of range");
    d.channels = static_cast<int>(c);
    finish(f, "channels");
  }
  std::uint64_t count = 0;
  {
    ByteReader f = field(r, "samples");
    count = f.u64();
    finish(f, "samples");
  }
  {
    ByteReader f = field(r, "task");
    const std::uint8_t t = f.u8();
    if (t > 2) throw ValidationError("dataset: unknown task code " + std::to_string(t));
    d.task = static_cast<TaskKind>(t);
    finish(f, "task");
  }
  {
    ByteReader f = field(r, "seed");
    d.seed = f.u64();
    finish(f, "seed");
  }
  {
    ByteReader f = field(r, "classes");
    d.classes = static_cast<int>(f.u32());
    finish(f, "classes");
  }
  {
    ByteReader f = field(r, "sigma");
    d.sigma = f.f64();
    finish(f, "sigma");
  }

  std::size_t sites = 1;
  for (int x : d.dims) sites *= static_cast<std::size_t>(x);
  const std::size_t coords = static_cast<std::size_t>(d.manifold.coord_size());
  const std::size_t per_sample = 8 * (2 + sites * d.channels * coords);
  if (count > r.remaining() / per_sample || r.remaining() != count * per_sample) {
    throw ValidationError("dataset: payload size does not match " + std::to_string(count) +
                          " samples");
  }
  d.samples.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    LabeledSample s;
    s.target = r.f64();
    s.clean_target = r.f64();
    s.image.manifold = d.manifold;
    s.image.dims = d.dims;
    s.image.channels = d.channels;
    s.image.data.resize(sites * d.channels);
    for (Vector& c : s.image.data) {
      c.resize(static_cast<Eigen::Index>(coords));
      for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = r.f64();
    }
    try {
      validate(s.image);
    } catch (const Error& e) {
      throw ValidationError("dataset: sample " + std::to_string(k) + ": " + e.what());
    }
    if (d.task != TaskKind::SpdRegression) {
      if (!(s.target >= 0.0 && s.target < d.classes) || s.target != static_cast<int>(s.target)) {
        throw ValidationError("dataset: sample " + std::to_string(k) + ": label out of range");
      }
    } else if (!std::isfinite(s.target)) {
      throw ValidationError("dataset: sample " + std::to_string(k) + ": non-finite target");
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace mvcnet
