#include "tofvae/nifti.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace tofvae {

namespace gzipio {

bool is_gzip(std::string_view bytes) {
  return bytes.size() >= 2 && static_cast<uint8_t>(bytes[0]) == 0x1F &&
         static_cast<uint8_t>(bytes[1]) == 0x8B;
}

std::string compress(std::string_view bytes) {
  z_stream strm{};
  if (deflateInit2(&strm, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
                   Z_DEFAULT_STRATEGY) != Z_OK)
    throw Error::data("gzip: deflateInit2 failed");
  std::string out;
  out.resize(deflateBound(&strm, static_cast<uLong>(bytes.size())) + 32);
  strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  strm.avail_in = static_cast<uInt>(bytes.size());
  strm.next_out = reinterpret_cast<Bytef*>(out.data());
  strm.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&strm, Z_FINISH);
  const size_t produced = out.size() - strm.avail_out;
  deflateEnd(&strm);
  if (rc != Z_STREAM_END) throw Error::data("gzip: deflate did not finish");
  out.resize(produced);
  return out;
}

std::string decompress_all(std::string_view bytes) {
  z_stream strm{};
  if (inflateInit2(&strm, 15 + 32) != Z_OK)
    throw Error::data("gzip: inflateInit2 failed");
  std::string out;
  std::string chunk(256 * 1024, '\0');
  strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  strm.avail_in = static_cast<uInt>(bytes.size());
  int rc = Z_OK;
  while (true) {
    strm.next_out = reinterpret_cast<Bytef*>(chunk.data());
    strm.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&strm, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&strm);
      throw Error::data(fmt::format("gzip: corrupt stream (zlib code {})", rc));
    }
    out.append(chunk.data(), chunk.size() - strm.avail_out);
    if (rc == Z_STREAM_END) {
      if (strm.avail_in == 0) break;
      // concatenated members keep the stream going
      if (inflateReset(&strm) != Z_OK) {
        inflateEnd(&strm);
        throw Error::data("gzip: inflateReset failed");
      }
    } else if (strm.avail_in == 0 && strm.avail_out != 0) {
      inflateEnd(&strm);
      throw Error::data("gzip: truncated stream");
    }
  }
  inflateEnd(&strm);
  return out;
}

}  // namespace gzipio

namespace {

constexpr size_t kHeaderSize = 348;
constexpr int16_t kDtypeU8 = 2;
constexpr int16_t kDtypeI16 = 4;
constexpr int16_t kDtypeF32 = 16;

uint16_t load_u16(const uint8_t* p, bool big) {
  return big ? static_cast<uint16_t>(p[0]) << 8 | p[1]
             : static_cast<uint16_t>(p[1]) << 8 | p[0];
}

uint32_t load_u32(const uint8_t* p, bool big) {
  if (big)
    return static_cast<uint32_t>(p[0]) << 24 | static_cast<uint32_t>(p[1]) << 16 |
           static_cast<uint32_t>(p[2]) << 8 | p[3];
  return static_cast<uint32_t>(p[3]) << 24 | static_cast<uint32_t>(p[2]) << 16 |
         static_cast<uint32_t>(p[1]) << 8 | p[0];
}

float load_f32(const uint8_t* p, bool big) {
  const uint32_t bits = load_u32(p, big);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void store_u16(uint8_t* p, uint16_t v) {
  p[0] = v & 0xFF;
  p[1] = (v >> 8) & 0xFF;
}

void store_u32(uint8_t* p, uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = (v >> (8 * i)) & 0xFF;
}

void store_f32(uint8_t* p, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  store_u32(p, bits);
}

// field offsets/widths of the 348-byte header; char runs are left alone
struct FieldRun {
  size_t offset;
  size_t width;
  size_t count;
};

constexpr FieldRun kSwapRuns[] = {
    {0, 4, 1},    // sizeof_hdr
    {32, 4, 1},   // extents
    {36, 2, 1},   // session_error
    {40, 2, 8},   // dim
    {56, 4, 3},   // intent_p1..p3
    {68, 2, 4},   // intent_code, datatype, bitpix, slice_start
    {76, 4, 8},   // pixdim
    {108, 4, 3},  // vox_offset, scl_slope, scl_inter
    {120, 2, 1},  // slice_end
    {124, 4, 4},  // cal_max, cal_min, slice_duration, toffset
    {140, 4, 2},  // glmax, glmin
    {252, 2, 2},  // qform_code, sform_code
    {256, 4, 18}, // quaternion, offsets, srow matrix
};

void swap_header_to_le(uint8_t* hdr) {
  for (const auto& run : kSwapRuns)
    for (size_t i = 0; i < run.count; ++i) {
      uint8_t* p = hdr + run.offset + i * run.width;
      for (size_t a = 0, b = run.width - 1; a < b; ++a, --b) std::swap(p[a], p[b]);
    }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error::data(fmt::format("cannot open '{}'", path));
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

Volume read_nifti(const std::string& path) {
  std::string bytes = read_file(path);
  if (gzipio::is_gzip(bytes)) bytes = gzipio::decompress_all(bytes);
  if (bytes.size() < kHeaderSize)
    throw Error::data(fmt::format("'{}': truncated header ({} bytes, need {})",
                                  path, bytes.size(), kHeaderSize));
  const uint8_t* raw = reinterpret_cast<const uint8_t*>(bytes.data());
  bool swapped = false;
  if (load_u32(raw, false) != kHeaderSize) {
    if (load_u32(raw, true) == kHeaderSize)
      swapped = true;
    else
      throw Error::data(fmt::format(
          "'{}': not a NIfTI-1 file (sizeof_hdr is neither 348-LE nor 348-BE)",
          path));
  }
  std::vector<uint8_t> hdr(raw, raw + kHeaderSize);
  if (swapped) swap_header_to_le(hdr.data());
  const uint8_t* h = hdr.data();

  const char* magic = reinterpret_cast<const char*>(h + 344);
  if (std::memcmp(magic, "ni1", 4) == 0)
    throw Error::data(fmt::format(
        "'{}': two-file NIfTI (.hdr/.img pair) is not supported; convert to "
        "single-file .nii",
        path));
  if (std::memcmp(magic, "n+1", 4) != 0)
    throw Error::data(fmt::format("'{}': bad NIfTI magic", path));

  int ndim = static_cast<int16_t>(load_u16(h + 40, false));
  if (ndim < 1 || ndim > 7)
    throw Error::data(fmt::format("'{}': dim[0] = {} outside [1,7]", path, ndim));
  int64_t dim[8] = {0};
  for (int i = 1; i <= ndim; ++i) {
    dim[i] = static_cast<int16_t>(load_u16(h + 40 + 2 * i, false));
    if (dim[i] < 1)
      throw Error::data(fmt::format("'{}': dim[{}] = {} invalid", path, i, dim[i]));
  }
  while (ndim > 3 && dim[ndim] == 1) --ndim;
  if (ndim != 3)
    throw Error::data(fmt::format(
        "'{}': only 3D volumes are supported; file is {}D after squeezing "
        "trailing singleton dimensions",
        path, ndim));

  const int16_t datatype = static_cast<int16_t>(load_u16(h + 70, false));
  const int16_t bitpix = static_cast<int16_t>(load_u16(h + 72, false));
  int bytes_per = 0;
  switch (datatype) {
    case kDtypeU8: bytes_per = 1; break;
    case kDtypeI16: bytes_per = 2; break;
    case kDtypeF32: bytes_per = 4; break;
    default:
      throw Error::data(fmt::format("'{}': unsupported datatype code {}", path,
                                    datatype));
  }
  if (bitpix != bytes_per * 8)
    throw Error::data(fmt::format("'{}': bitpix {} inconsistent with datatype {}",
                                  path, bitpix, datatype));

  const float vox_offset_f = load_f32(h + 108, false);
  if (!(vox_offset_f >= kHeaderSize))
    throw Error::data(fmt::format("'{}': invalid vox_offset {}", path, vox_offset_f));
  const size_t vox_offset = static_cast<size_t>(vox_offset_f);

  Volume v;
  v.dims = {dim[1], dim[2], dim[3]};
  for (int i = 0; i < 3; ++i) {
    const float s = load_f32(h + 76 + 4 * (i + 1), false);
    v.spacing[i] = (std::isfinite(s) && s > 0) ? s : 1.0f;
  }
  v.source_datatype = datatype;
  v.raw_header = hdr;

  const size_t need = static_cast<size_t>(v.numel()) * bytes_per;
  if (bytes.size() < vox_offset || bytes.size() - vox_offset < need)
    throw Error::data(fmt::format(
        "'{}': truncated voxel data (need {} bytes at offset {}, have {})", path,
        need, vox_offset, bytes.size() - std::min(bytes.size(), vox_offset)));

  float slope = load_f32(h + 112, false);
  float inter = load_f32(h + 116, false);
  const bool scale = std::isfinite(slope) && slope != 0.0f &&
                     !(slope == 1.0f && inter == 0.0f);
  if (!std::isfinite(inter)) inter = 0.0f;

  const uint8_t* d = raw + vox_offset;
  v.voxels.resize(static_cast<size_t>(v.numel()));
  for (int64_t i = 0; i < v.numel(); ++i) {
    float value = 0;
    switch (datatype) {
      case kDtypeU8: value = d[i]; break;
      case kDtypeI16:
        value = static_cast<int16_t>(load_u16(d + 2 * i, swapped));
        break;
      case kDtypeF32: value = load_f32(d + 4 * i, swapped); break;
    }
    v.voxels[i] = scale ? slope * value + inter : value;
  }
  v.check_valid("read_nifti");
  return v;
}

void write_nifti(const Volume& v, const std::string& path, bool gzip) {
  v.check_valid("write_nifti");
  std::vector<uint8_t> hdr(kHeaderSize, 0);
  if (v.raw_header.size() == kHeaderSize) {
    hdr = v.raw_header;
  } else {
    hdr[38] = 'r';                       // regular
    store_f32(hdr.data() + 76, 1.0f);    // pixdim[0] (qfac)
  }
  store_u32(hdr.data() + 0, kHeaderSize);
  store_u16(hdr.data() + 40, 3);
  for (int i = 0; i < 3; ++i)
    store_u16(hdr.data() + 42 + 2 * i, static_cast<uint16_t>(v.dims[i]));
  for (int i = 4; i <= 7; ++i) store_u16(hdr.data() + 40 + 2 * i, 1);
  store_u16(hdr.data() + 70, kDtypeF32);
  store_u16(hdr.data() + 72, 32);
  for (int i = 0; i < 3; ++i) store_f32(hdr.data() + 80 + 4 * i, v.spacing[i]);
  store_f32(hdr.data() + 108, 352.0f);
  store_f32(hdr.data() + 112, 1.0f);
  store_f32(hdr.data() + 116, 0.0f);
  std::memcpy(hdr.data() + 344, "n+1", 4);

  std::string body(reinterpret_cast<const char*>(hdr.data()), kHeaderSize);
  body.append(4, '\0');  // no-extension extender pad
  const size_t off = body.size();
  body.resize(off + static_cast<size_t>(v.numel()) * 4);
  uint8_t* out = reinterpret_cast<uint8_t*>(body.data()) + off;
  for (int64_t i = 0; i < v.numel(); ++i) store_f32(out + 4 * i, v.voxels[i]);

  if (gzip) body = gzipio::compress(body);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error::data(fmt::format("cannot open '{}' for writing", path));
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw Error::data(fmt::format("write to '{}' failed", path));
}

void write_mask_nifti(const BinaryMask3& mask,
                      const std::array<float, 3>& spacing,
                      const std::string& path, bool gzip) {
  if (mask.dims[0] < 1 || mask.dims[1] < 1 || mask.dims[2] < 1 ||
      static_cast<int64_t>(mask.voxels.size()) != mask.numel()) {
    throw Error::data("write_mask_nifti: mask dimensions are invalid");
  }
  std::vector<uint8_t> hdr(kHeaderSize, 0);
  hdr[38] = 'r';
  store_f32(hdr.data() + 76, 1.0f);
  store_u32(hdr.data() + 0, kHeaderSize);
  store_u16(hdr.data() + 40, 3);
  for (int i = 0; i < 3; ++i)
    store_u16(hdr.data() + 42 + 2 * i, static_cast<uint16_t>(mask.dims[i]));
  for (int i = 4; i <= 7; ++i) store_u16(hdr.data() + 40 + 2 * i, 1);
  store_u16(hdr.data() + 70, kDtypeU8);
  store_u16(hdr.data() + 72, 8);
  for (int i = 0; i < 3; ++i) store_f32(hdr.data() + 80 + 4 * i, spacing[i]);
  store_f32(hdr.data() + 108, 352.0f);
  store_f32(hdr.data() + 112, 1.0f);
  store_f32(hdr.data() + 116, 0.0f);
  std::memcpy(hdr.data() + 344, "n+1", 4);

  std::string body(reinterpret_cast<const char*>(hdr.data()), kHeaderSize);
  body.append(4, '\0');
  for (uint8_t v : mask.voxels) body.push_back(v ? '\1' : '\0');

  if (gzip) body = gzipio::compress(body);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error::data(fmt::format("cannot open '{}' for writing", path));
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw Error::data(fmt::format("write to '{}' failed", path));
}

BinaryMask3 mask_from_volume(const Volume& v, float threshold) {
  v.check_valid("mask_from_volume");
  BinaryMask3 m = BinaryMask3::create(v.dims);
  for (size_t i = 0; i < v.voxels.size(); ++i) {
    m.voxels[i] = v.voxels[i] > threshold ? 1 : 0;
  }
  return m;
}

}  // namespace tofvae
