#pragma once

#include <string>

#include "dualsplat/core/types.hpp"

namespace dualsplat {

/// Binary PPM (P6, 8-bit). Values are clamped to [0,1] and quantized.
void write_ppm(const std::string& path, const ImageD& img);
ImageD read_ppm(const std::string& path);

/// PFM, 32-bit float little-endian (scale -1). 1 or 3 channels.
void write_pfm(const std::string& path, const ImageD& img);
ImageD read_pfm(const std::string& path);

/// Binary PGM (P5, 8-bit), mask convention nonzero = road.
void write_pgm_mask(const std::string& path, const SemanticMask& m);

/// Grayscale mask from PGM or PNG (by file magic), nonzero = road.
SemanticMask read_mask(const std::string& path);

/// 8-bit grayscale PNG, for mask interchange.
void write_png_mask(const std::string& path, const SemanticMask& m);

}  // namespace dualsplat
