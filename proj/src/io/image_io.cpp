#include "dualsplat/io/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "dualsplat/core/errors.hpp"

namespace dualsplat {

namespace {

uint8_t to_byte(double v) {
  return static_cast<uint8_t>(std::clamp(std::lround(v * 255.0), 0l, 255l));
}

void skip_pnm_whitespace(std::istream& in) {
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') in.ignore(1 << 20, '\n');
    else in.get();
    c = in.peek();
  }
}

}  // namespace

void write_ppm(const std::string& path, const ImageD& img) {
  if (img.channels != 3) throw BadInput(path, "ppm requires 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BadInput(path, "cannot open for writing");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) row[3 * x + c] = to_byte(img.at(x, y, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw BadInput(path, "write failed");
}

ImageD read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BadInput(path, "cannot open for reading");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw BadInput(path, "not a binary ppm");
  skip_pnm_whitespace(in);
  int w, h, maxval;
  in >> w;
  skip_pnm_whitespace(in);
  in >> h;
  skip_pnm_whitespace(in);
  in >> maxval;
  in.get();
  if (w <= 0 || h <= 0 || maxval != 255) throw BadInput(path, "bad ppm header");
  ImageD img(w, h, 3);
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
    if (!in) throw BadInput(path, "truncated ppm");
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = row[3 * x + c] / 255.0;
  }
  return img;
}

void write_pfm(const std::string& path, const ImageD& img) {
  if (img.channels != 1 && img.channels != 3)
    throw BadInput(path, "pfm requires 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BadInput(path, "cannot open for writing");
  out << (img.channels == 1 ? "Pf" : "PF") << "\n"
      << img.width << " " << img.height << "\n-1.0\n";
  // PFM stores rows bottom-up.
  std::vector<float> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        row[static_cast<size_t>(x) * img.channels + c] =
            static_cast<float>(img.at(x, y, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * 4));
  }
  if (!out) throw BadInput(path, "write failed");
}

ImageD read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BadInput(path, "cannot open for reading");
  std::string magic;
  in >> magic;
  int channels;
  if (magic == "Pf") channels = 1;
  else if (magic == "PF") channels = 3;
  else throw BadInput(path, "not a pfm");
  int w, h;
  double scale;
  in >> w >> h >> scale;
  in.get();
  if (w <= 0 || h <= 0 || scale >= 0)
    throw BadInput(path, "unsupported pfm header (big-endian?)");
  ImageD img(w, h, channels);
  std::vector<float> row(static_cast<size_t>(w) * channels);
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * 4));
    if (!in) throw BadInput(path, "truncated pfm");
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(x, y, c) = row[static_cast<size_t>(x) * channels + c];
  }
  return img;
}

void write_pgm_mask(const std::string& path, const SemanticMask& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BadInput(path, "cannot open for writing");
  out << "P5\n" << m.width << " " << m.height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(m.width));
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) row[x] = m.at(x, y) ? 255 : 0;
    out.write(reinterpret_cast<const char*>(row.data()), m.width);
  }
  if (!out) throw BadInput(path, "write failed");
}

namespace {

SemanticMask read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BadInput(path, "cannot open for reading");
  std::string magic;
  in >> magic;
  if (magic != "P5") throw BadInput(path, "not a binary pgm");
  skip_pnm_whitespace(in);
  int w, h, maxval;
  in >> w;
  skip_pnm_whitespace(in);
  in >> h;
  skip_pnm_whitespace(in);
  in >> maxval;
  in.get();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw BadInput(path, "bad pgm header");
  SemanticMask m(w, h);
  std::vector<uint8_t> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), w);
    if (!in) throw BadInput(path, "truncated pgm");
    for (int x = 0; x < w; ++x) m.at(x, y) = row[x] ? 1 : 0;
  }
  return m;
}

SemanticMask read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw BadInput(path, "cannot open for reading");
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw BadInput(path, "png decode failed");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  SemanticMask m(w, h);
  std::vector<uint8_t> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) m.at(x, y) = row[x] ? 1 : 0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return m;
}

}  // namespace

SemanticMask read_mask(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw BadInput(path, "cannot open for reading");
  unsigned char magic[2] = {0, 0};
  probe.read(reinterpret_cast<char*>(magic), 2);
  probe.close();
  if (magic[0] == 0x89 && magic[1] == 'P') return read_png(path);
  if (magic[0] == 'P' && magic[1] == '5') return read_pgm(path);
  throw BadInput(path, "mask must be PGM (P5) or PNG");
}

void write_png_mask(const std::string& path, const SemanticMask& m) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw BadInput(path, "cannot open for writing");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw BadInput(path, "png encode failed");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(m.width),
               static_cast<png_uint_32>(m.height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(static_cast<size_t>(m.width));
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) row[x] = m.at(x, y) ? 255 : 0;
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace dualsplat
