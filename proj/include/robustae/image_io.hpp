#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "robustae/tensor.hpp"

namespace robustae::io {

struct CodecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Convert a [0,1] 3xHxW (or Nx3xHxW with N=1) tensor to interleaved 8-bit
/// RGB, rounding half away from zero.
std::vector<uint8_t> to_rgb8(const Tensor& img);
/// Inverse of to_rgb8; produces a 1x3xHxW tensor in [0,1].
Tensor from_rgb8(const std::vector<uint8_t>& rgb, int h, int w);

/// Quantize a [0,1] tensor to the 8-bit grid in place (clamp, scale, round).
Tensor quantize8(const Tensor& img);

// Real JPEG codec (libjpeg). Encoding uses the library defaults: 4:2:0
// sampling and the standard table scaling for the given quality. Decoding
// disables fancy upsampling so chroma comes back nearest-neighbor.
std::vector<uint8_t> encode_jpeg(const Tensor& img, int quality);
Tensor decode_jpeg(const std::vector<uint8_t>& bytes);

// PNG I/O (8-bit RGB).
void write_png(const std::string& path, const Tensor& img);
Tensor read_png(const std::string& path);

void write_file(const std::string& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_file(const std::string& path);

}  // namespace robustae::io
