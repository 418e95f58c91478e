#pragma once

// Binary tensor and checkpoint file formats.
//
// STEN v1: magic "STEN" | u8 version=1 | u8 dtype (0=float32, 1=float64) |
//          u8 ndim | u8 reserved=0 | ndim x u64-LE dims | row-major LE payload.
// SCKP v1: magic "SCKP" | u8 version=1 | u32-LE parameter count | per entry:
//          u16-LE name length, UTF-8 name bytes, embedded STEN tensor.
//
// Plus PPM (P6) / PGM (P5) image export for previews and attention maps.

#include <string>
#include <utility>
#include <vector>

#include "shunted/tensor.hpp"

namespace shunted {

template <class S>
void save_sten(const TensorT<S>& t, const std::string& path);

/// Loads a STEN file whose dtype must match S exactly (conversions are
/// explicit: load at stored precision, then cast).
template <class S>
TensorT<S> load_sten(const std::string& path);

/// dtype byte of a STEN file without loading the payload.
int sten_dtype(const std::string& path);

template <class S>
void save_sckp(const std::vector<std::pair<std::string, const TensorT<S>*>>& entries,
               const std::string& path);

template <class S>
std::vector<std::pair<std::string, TensorT<S>>> load_sckp(const std::string& path);

/// Binary P6; pixels in [0,1] stored as round(v*255), image is [3,H,W].
void write_ppm(const TensorT<float>& image, const std::string& path);

/// Binary P5 of a [rows,cols] map. Each row is scaled by its own max so the
/// brightest entry per row maps to 255 (rows of zeros stay zero).
template <class S>
void write_pgm_row_scaled(const TensorT<S>& map, const std::string& path);

/// Plain CSV of a [rows,cols] matrix.
template <class S>
void write_csv(const TensorT<S>& map, const std::string& path);

}  // namespace shunted
