#include "tofvae/checkpoint.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "binio.hpp"

namespace tofvae {

namespace {

constexpr char kMagic[4] = {'A', 'V', 'A', 'E'};
constexpr uint32_t kFormatVersion = 1;
constexpr uint8_t kDtypeF32 = 1;

void put_tensor(std::string& buf, const std::string& name, const Tensor<float>& t) {
  binio::put_str(buf, name);
  binio::put_u8(buf, kDtypeF32);
  binio::put_u32(buf, 4);
  const Shape4 s = t.shape();
  for (int64_t d : {s.n, s.c, s.h, s.w}) binio::put_u32(buf, static_cast<uint32_t>(d));
  if constexpr (std::endian::native == std::endian::little) {
    const size_t off = buf.size();
    buf.resize(off + t.numel() * 4);
    std::memcpy(buf.data() + off, t.data(), t.numel() * 4);
  } else {
    for (int64_t i = 0; i < t.numel(); ++i) binio::put_f32(buf, t.data()[i]);
  }
}

Tensor<float> read_tensor(binio::Reader& r, const std::string& want_name,
                          const Shape4& want_shape) {
  const std::string name = r.str();
  if (name != want_name)
    throw Error::data(fmt::format(
        "checkpoint: architecture mismatch: found tensor '{}', expected '{}'",
        name, want_name));
  const uint8_t dtype = r.u8();
  if (dtype != kDtypeF32)
    throw Error::data(fmt::format("checkpoint: unsupported dtype code {} for '{}'",
                                  dtype, name));
  const uint32_t rank = r.u32();
  if (rank != 4)
    throw Error::data(fmt::format("checkpoint: tensor '{}' has rank {}, expected 4",
                                  name, rank));
  Shape4 s;
  s.n = r.u32();
  s.c = r.u32();
  s.h = r.u32();
  s.w = r.u32();
  if (!(s == want_shape))
    throw Error::data(fmt::format(
        "checkpoint: architecture mismatch: tensor '{}' has shape {}, expected {}",
        name, s.str(), want_shape.str()));
  Tensor<float> t(s);
  if constexpr (std::endian::native == std::endian::little) {
    r.bytes(t.data(), t.numel() * 4);
  } else {
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = r.f32();
  }
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const VaeParams<float>& params,
                     const VaeArchitecture& arch, LossMode mode,
                     const std::string& normalization) {
  const auto layers = arch.all_layers();
  if (params.entries.size() != layers.size())
    throw Error::data(fmt::format("checkpoint: params have {} layers, architecture {}",
                                  params.entries.size(), layers.size()));
  std::string buf;
  buf.append(kMagic, 4);
  binio::put_u32(buf, kFormatVersion);
  binio::put_str(buf, arch.descriptor());
  binio::put_str(buf, loss_mode_name(mode));
  binio::put_str(buf, normalization);
  binio::put_u32(buf, static_cast<uint32_t>(params.entries.size() * 2));
  for (const auto& e : params.entries) {
    put_tensor(buf, e.name + ".weight", e.weight);
    put_tensor(buf, e.name + ".bias", e.bias);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error::data(fmt::format("checkpoint: cannot open '{}' for writing", path));
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw Error::data(fmt::format("checkpoint: write to '{}' failed", path));
}

std::pair<VaeParams<float>, CheckpointMeta> load_checkpoint(
    const std::string& path, const VaeArchitecture& expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error::data(fmt::format("checkpoint: cannot open '{}'", path));
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  binio::Reader r(reinterpret_cast<const uint8_t*>(buf.data()), buf.size(),
                  fmt::format("checkpoint '{}'", path));
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw Error::data(fmt::format("checkpoint: bad magic in '{}'", path));
  CheckpointMeta meta;
  meta.version = r.u32();
  if (meta.version != kFormatVersion)
    throw Error::data(fmt::format("checkpoint: unsupported version {} in '{}'",
                                  meta.version, path));
  meta.arch_descriptor = r.str();
  const std::string want = expected.descriptor();
  if (meta.arch_descriptor != want)
    throw Error::data(fmt::format(
        "checkpoint: architecture mismatch: file descriptor '{}' != current '{}'",
        meta.arch_descriptor, want));
  meta.loss_mode = parse_loss_mode(r.str());
  meta.normalization = r.str();
  const uint32_t count = r.u32();
  const auto layers = expected.all_layers();
  if (count != layers.size() * 2)
    throw Error::data(fmt::format("checkpoint: {} tensors recorded, expected {}",
                                  count, layers.size() * 2));
  VaeParams<float> params;
  for (const LayerSpec* l : layers) {
    typename VaeParams<float>::Entry e;
    e.name = l->name;
    e.weight = read_tensor(r, l->name + ".weight", layer_weight_shape(*l));
    e.bias = read_tensor(r, l->name + ".bias", layer_bias_shape(*l));
    params.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0)
    throw Error::data(fmt::format("checkpoint: {} trailing bytes in '{}'",
                                  r.remaining(), path));
  return {std::move(params), std::move(meta)};
}

}  // namespace tofvae
