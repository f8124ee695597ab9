#pragma once

#include <string>
#include <vector>

#include "ganunlearn/core/tensor.hpp"

namespace gu {

// Encodes a [3,H,W] float image in [0,1] as an 8-bit RGB PNG. Deflate runs
// with fixed settings so identical tensors produce identical bytes.
std::vector<unsigned char> encode_png_rgb8(const Tensor<float>& img);

void write_png_rgb8(const std::string& path, const Tensor<float>& img);

// Tiles a batch [B,3,H,W] into a single image grid with `cols` columns.
Tensor<float> tile_images(const std::vector<Tensor<float>>& images, int cols, int pad = 2);

}  // namespace gu
