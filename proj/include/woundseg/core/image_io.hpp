#pragma once

// Grayscale PNG / binary PGM reading and writing for frames and masks, plus
// RGBA PNG output for overlays. PNG goes through libpng's classic API.

#include <png.h>

#include <cctype>
#include <csetjmp>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "woundseg/core/error.hpp"
#include "woundseg/core/image.hpp"

namespace woundseg {

// Raw integer samples before scaling to [0, 1].
struct GrayRaster {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<std::uint16_t> samples;
};

namespace detail {

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

struct PngReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t offset;
};

inline void png_read_from_memory(png_structp png, png_bytep out, png_size_t count) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + count > cur->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes->data() + cur->offset, count);
  cur->offset += count;
}

inline void png_write_to_memory(png_structp png, png_bytep data, png_size_t count) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + count);
}

inline void png_flush_noop(png_structp) {}

inline void png_error_to_longjmp(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}

inline void png_warning_ignore(png_structp, png_const_charp) {}

inline bool is_png(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

inline bool is_pgm(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5';
}

inline GrayRaster decode_png_gray(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message,
                                           png_error_to_longjmp, png_warning_ignore);
  if (!png) throw IoError("libpng: cannot allocate read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng: cannot allocate info struct");
  }
  PngReadCursor cursor{&bytes, 0};
  GrayRaster raster;
  std::vector<png_byte> row;
  volatile bool non_gray = false;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("'" + name + "': " + message);
  }
  png_set_read_fn(png, &cursor, png_read_from_memory);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color_type != PNG_COLOR_TYPE_GRAY) {
    non_gray = true;
  } else {
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    raster.width = static_cast<int>(png_get_image_width(png, info));
    raster.height = static_cast<int>(png_get_image_height(png, info));
    const int out_depth = png_get_bit_depth(png, info);
    raster.maxval = out_depth == 16 ? 65535 : 255;
    row.resize(png_get_rowbytes(png, info));
    raster.samples.resize(static_cast<std::size_t>(raster.width) * raster.height);
    for (int y = 0; y < raster.height; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < raster.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * raster.width + x;
        raster.samples[i] = out_depth == 16
                                ? static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1])
                                : row[x];
      }
    }
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (non_gray) throw FormatError("'" + name + "': PNG is not single-channel grayscale");
  return raster;
}

inline GrayRaster decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos]))
      throw FormatError("'" + name + "': malformed PGM header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) throw FormatError("'" + name + "': PGM header value too large");
      ++pos;
    }
    return v;
  };
  GrayRaster r;
  r.width = static_cast<int>(next_token());
  r.height = static_cast<int>(next_token());
  r.maxval = static_cast<int>(next_token());
  if (r.width <= 0 || r.height <= 0 || r.maxval <= 0 || r.maxval > 65535)
    throw FormatError("'" + name + "': invalid PGM header");
  ++pos;  // single whitespace before raster
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  const std::size_t bps = r.maxval > 255 ? 2 : 1;
  if (bytes.size() < pos + n * bps) throw FormatError("'" + name + "': truncated PGM raster");
  r.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.samples[i] = bps == 2 ? static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1])
                            : bytes[pos + i];
    if (r.samples[i] > r.maxval) throw FormatError("'" + name + "': PGM sample exceeds maxval");
  }
  return r;
}

inline std::vector<std::uint8_t> encode_png(int width, int height, int color_type, int depth,
                                            const std::vector<std::uint8_t>& packed_rows) {
  std::string message;
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message,
                                            png_error_to_longjmp, png_warning_ignore);
  if (!png) throw IoError("libpng: cannot allocate write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng: cannot allocate info struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed: " + message);
  }
  png_set_write_fn(png, &out, png_write_to_memory, png_flush_noop);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = packed_rows.size() / static_cast<std::size_t>(height);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(packed_rows.data() + stride * y));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace detail

// Reads an 8/16-bit grayscale PNG or binary PGM without scaling.
inline GrayRaster read_gray_raster(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing file '" + path.string() + "'");
  const auto bytes = detail::read_bytes(path);
  if (detail::is_png(bytes)) return detail::decode_png_gray(bytes, path.string());
  if (detail::is_pgm(bytes)) return detail::decode_pgm(bytes, path.string());
  throw FormatError("'" + path.string() + "': unsupported image format (expected PNG or P5 PGM)");
}

// Intensities are samples divided by the bit-depth maximum.
inline Frame load_frame(const std::filesystem::path& path) {
  const GrayRaster r = read_gray_raster(path);
  std::vector<float> values(r.samples.size());
  const double scale = 1.0 / r.maxval;
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = static_cast<float>(r.samples[i] * scale);
  return Frame(r.width, r.height, std::move(values));
}

// Any nonzero sample is wound.
inline BinaryMask load_mask(const std::filesystem::path& path) {
  const GrayRaster r = read_gray_raster(path);
  BinaryMask m(r.width, r.height);
  for (std::size_t i = 0; i < r.samples.size(); ++i) m.set_index(i, r.samples[i] != 0);
  return m;
}

struct FramePair {
  Frame frame;
  BinaryMask mask;
};

inline FramePair load_pair(const std::filesystem::path& image, const std::filesystem::path& mask) {
  FramePair p{load_frame(image), load_mask(mask)};
  if (p.frame.width() != p.mask.width() || p.frame.height() != p.mask.height())
    throw ShapeError("dimension mismatch between '" + image.string() + "' and '" + mask.string() + "'");
  return p;
}

inline std::uint16_t quantize(float v, int maxval) {
  return static_cast<std::uint16_t>(std::lround(static_cast<double>(v) * maxval));
}

inline std::vector<std::uint8_t> encode_frame_png(const Frame& f, int bit_depth = 16) {
  if (bit_depth != 8 && bit_depth != 16) throw ValueError("PNG bit depth must be 8 or 16");
  const int maxval = bit_depth == 16 ? 65535 : 255;
  const std::size_t bps = bit_depth / 8;
  std::vector<std::uint8_t> rows(f.size() * bps);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const std::uint16_t q = quantize(f.values()[i], maxval);
    if (bps == 2) {
      rows[2 * i] = static_cast<std::uint8_t>(q >> 8);
      rows[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
    } else {
      rows[i] = static_cast<std::uint8_t>(q);
    }
  }
  return detail::encode_png(f.width(), f.height(), PNG_COLOR_TYPE_GRAY, bit_depth, rows);
}

inline void save_frame_png(const std::filesystem::path& path, const Frame& f, int bit_depth = 16) {
  detail::write_bytes(path, encode_frame_png(f, bit_depth));
}

inline void save_frame_pgm(const std::filesystem::path& path, const Frame& f, int maxval = 65535) {
  if (maxval <= 0 || maxval > 65535) throw ValueError("PGM maxval must be in [1, 65535]");
  std::ostringstream header;
  header << "P5\n" << f.width() << ' ' << f.height() << '\n' << maxval << '\n';
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  for (float v : f.values()) {
    const std::uint16_t q = quantize(v, maxval);
    if (maxval > 255) bytes.push_back(static_cast<std::uint8_t>(q >> 8));
    bytes.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  detail::write_bytes(path, bytes);
}

inline std::vector<std::uint8_t> encode_mask_png(const BinaryMask& m) {
  std::vector<std::uint8_t> rows(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) rows[i] = m[i] ? 255 : 0;
  return detail::encode_png(m.width(), m.height(), PNG_COLOR_TYPE_GRAY, 8, rows);
}

inline void save_mask_png(const std::filesystem::path& path, const BinaryMask& m) {
  detail::write_bytes(path, encode_mask_png(m));
}

inline void save_mask_pgm(const std::filesystem::path& path, const BinaryMask& m) {
  std::ostringstream header;
  header << "P5\n" << m.width() << ' ' << m.height() << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  for (std::size_t i = 0; i < m.size(); ++i) bytes.push_back(m[i] ? 255 : 0);
  detail::write_bytes(path, bytes);
}

inline std::vector<std::uint8_t> encode_rgba_png(const RgbaImage& img) {
  return detail::encode_png(img.width, img.height, PNG_COLOR_TYPE_RGBA, 8, img.pixels);
}

inline void save_rgba_png(const std::filesystem::path& path, const RgbaImage& img) {
  detail::write_bytes(path, encode_rgba_png(img));
}

}  // namespace woundseg
