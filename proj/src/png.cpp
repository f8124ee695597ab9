#include "ganunlearn/core/png.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace gu {

namespace {

void put_u32be(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back((v >> 24) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back(v & 0xff);
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& payload) {
  put_u32be(out, uint32_t(payload.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = crc32(0, out.data() + crc_start, uInt(out.size() - crc_start));
  put_u32be(out, crc);
}

unsigned char quantize(float v) {
  float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  return static_cast<unsigned char>(c * 255.f + 0.5f);
}

}  // namespace

std::vector<unsigned char> encode_png_rgb8(const Tensor<float>& img) {
  if (img.ndim() != 3 || img.dim(0) != 3) throw DomainError("encode_png_rgb8: expected [3,H,W]");
  int H = img.dim(1), W = img.dim(2);

  // raw scanlines, filter byte 0 per row
  std::vector<unsigned char> raw(size_t(H) * (1 + size_t(W) * 3));
  size_t p = 0;
  for (int y = 0; y < H; ++y) {
    raw[p++] = 0;
    for (int x = 0; x < W; ++x) {
      raw[p++] = quantize(img.at(0, y, x));
      raw[p++] = quantize(img.at(1, y, x));
      raw[p++] = quantize(img.at(2, y, x));
    }
  }

  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<unsigned char> z(bound);
  if (compress2(z.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw NumericError("png deflate failed");
  z.resize(bound);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<unsigned char> ihdr;
  put_u32be(ihdr, uint32_t(W));
  put_u32be(ihdr, uint32_t(H));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

void write_png_rgb8(const std::string& path, const Tensor<float>& img) {
  auto bytes = encode_png_rgb8(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw StateError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

Tensor<float> tile_images(const std::vector<Tensor<float>>& images, int cols, int pad) {
  if (images.empty()) throw DomainError("tile_images: empty batch");
  int H = images[0].dim(1), W = images[0].dim(2);
  int n = int(images.size());
  int rows = (n + cols - 1) / cols;
  Tensor<float> grid =
      Tensor<float>::full({3, rows * (H + pad) + pad, cols * (W + pad) + pad}, 1.0f);
  for (int i = 0; i < n; ++i) {
    int r = i / cols, c = i % cols;
    int oy = pad + r * (H + pad), ox = pad + c * (W + pad);
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) grid.at(ch, oy + y, ox + x) = images[size_t(i)].at(ch, y, x);
  }
  return grid;
}

}  // namespace gu
