#pragma once

#include <string>
#include <string_view>

#include "tofvae/volume.hpp"

namespace tofvae {

// NIfTI-1 single-file subset: datatypes u8 (2), i16 (4), f32 (16); magic
// "n+1\0"; scl_slope/scl_inter applied when slope != 0; opposite-endian files
// detected via sizeof_hdr and byte-swapped; gzip streams detected by magic.
Volume read_nifti(const std::string& path);

// Always emits little-endian f32 with scl_slope 1, scl_inter 0, vox_offset
// 352. Uninterpreted header fields of a loaded volume pass through verbatim.
void write_nifti(const Volume& v, const std::string& path, bool gzip);

// Binary masks are written as u8 volumes holding {0, 1}.
void write_mask_nifti(const BinaryMask3& mask,
                      const std::array<float, 3>& spacing,
                      const std::string& path, bool gzip);

// Rebuilds a mask from a volume read back off disk (mask voxels decode as
// 0.0 / 1.0 floats).
BinaryMask3 mask_from_volume(const Volume& v, float threshold = 0.5f);

namespace gzipio {

bool is_gzip(std::string_view bytes);
std::string compress(std::string_view bytes);
std::string decompress_all(std::string_view bytes);

}  // namespace gzipio

}  // namespace tofvae
