#include "dispkit/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace dispkit {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IngestionError("cannot open '" + path + "'");
  return f;
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;

  PngReader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw IngestionError("libpng initialization failed");
    }
  }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;

  PngWriter() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      throw IngestionError("libpng initialization failed");
    }
  }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

struct DecodedPng {
  int height = 0, width = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint16_t> samples;  // row-major, channel-interleaved
};

DecodedPng decode_png(const std::string& path) {
  FilePtr file = open_file(path, "rb");
  PngReader r;
  // libpng reports errors through longjmp; everything heap-allocated before
  // this point is owned by RAII wrappers, so the jump only needs to throw.
  if (setjmp(png_jmpbuf(r.png)))
    throw IngestionError("failed to decode PNG '" + path + "'");
  png_init_io(r.png, file.get());
  png_read_info(r.png, r.info);

  png_set_palette_to_rgb(r.png);
  png_set_expand_gray_1_2_4_to_8(r.png);
  if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
  png_set_strip_alpha(r.png);
  png_read_update_info(r.png, r.info);

  DecodedPng out;
  out.height = static_cast<int>(png_get_image_height(r.png, r.info));
  out.width = static_cast<int>(png_get_image_width(r.png, r.info));
  out.channels = static_cast<int>(png_get_channels(r.png, r.info));
  out.bit_depth = static_cast<int>(png_get_bit_depth(r.png, r.info));
  if (out.height < 1 || out.width < 1)
    throw IngestionError("empty PNG '" + path + "'");
  if (out.channels != 1 && out.channels != 3)
    throw IngestionError("unsupported channel count " + std::to_string(out.channels) + " in '" +
                         path + "'");

  const std::size_t row_bytes = png_get_rowbytes(r.png, r.info);
  std::vector<png_byte> raw(static_cast<std::size_t>(out.height) * row_bytes);
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * row_bytes;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);

  const std::size_t n = static_cast<std::size_t>(out.height) * out.width * out.channels;
  out.samples.resize(n);
  if (out.bit_depth == 16) {
    // PNG stores 16-bit samples big-endian.
    for (std::size_t i = 0; i < n; ++i)
      out.samples[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = raw[i];
  }
  return out;
}

void encode_png(const std::string& path, int height, int width, int channels, int bit_depth,
                const std::vector<std::uint16_t>& samples) {
  FilePtr file = open_file(path, "wb");
  PngWriter w;
  if (setjmp(png_jmpbuf(w.png)))
    throw IngestionError("failed to encode PNG '" + path + "'");
  png_init_io(w.png, file.get());

  const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);

  const std::size_t per_row = static_cast<std::size_t>(width) * channels;
  if (bit_depth == 16) {
    std::vector<png_byte> row(per_row * 2);
    for (int y = 0; y < height; ++y) {
      for (std::size_t i = 0; i < per_row; ++i) {
        const std::uint16_t v = samples[static_cast<std::size_t>(y) * per_row + i];
        row[2 * i] = static_cast<png_byte>(v >> 8);
        row[2 * i + 1] = static_cast<png_byte>(v & 0xff);
      }
      png_write_row(w.png, row.data());
    }
  } else {
    std::vector<png_byte> row(per_row);
    for (int y = 0; y < height; ++y) {
      for (std::size_t i = 0; i < per_row; ++i)
        row[i] = static_cast<png_byte>(samples[static_cast<std::size_t>(y) * per_row + i]);
      png_write_row(w.png, row.data());
    }
  }
  png_write_end(w.png, w.info);
}

}  // namespace

Image read_image_png(const std::string& path) {
  const DecodedPng decoded = decode_png(path);
  const double scale = decoded.bit_depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
  Image img(decoded.height, decoded.width, decoded.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = decoded.samples[i] * scale;
  return img;
}

ScalarField read_raw16_png(const std::string& path) {
  const DecodedPng decoded = decode_png(path);
  if (decoded.channels != 1 || decoded.bit_depth != 16)
    throw IngestionError("'" + path + "' is not a 16-bit grayscale PNG (channels " +
                         std::to_string(decoded.channels) + ", depth " +
                         std::to_string(decoded.bit_depth) + ")");
  ScalarField field(decoded.height, decoded.width);
  for (std::size_t i = 0; i < field.data.size(); ++i)
    field.data[i] = static_cast<double>(decoded.samples[i]);
  return field;
}

void write_image_png(const std::string& path, const Image& img) {
  check_input(img.channels == 1 || img.channels == 3,
              "write_image_png: expected 1 or 3 channels, got " + std::to_string(img.channels));
  check_input(img.height >= 1 && img.width >= 1, "write_image_png: empty image");
  std::vector<std::uint16_t> samples(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::clamp(img.data[i], 0.0, 1.0);
    samples[i] = static_cast<std::uint16_t>(std::lround(v * 255.0));
  }
  encode_png(path, img.height, img.width, img.channels, 8, samples);
}

void write_raw16_png(const std::string& path, const ScalarField& counts) {
  check_input(counts.height >= 1 && counts.width >= 1, "write_raw16_png: empty field");
  std::vector<std::uint16_t> samples(counts.data.size());
  for (std::size_t i = 0; i < counts.data.size(); ++i) {
    const double v = std::clamp(counts.data[i], 0.0, 65535.0);
    samples[i] = static_cast<std::uint16_t>(std::lround(v));
  }
  encode_png(path, counts.height, counts.width, 1, 16, samples);
}

}  // namespace dispkit
