#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <string>

#include "cfp/error.hpp"
#include "cfp/viz.hpp"

namespace cfp {

namespace {

constexpr std::array<Rgb, 256> kInferno = {{
#include "colormap_table.inc"
}};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

}  // namespace

const Colormap& Colormap::inferno() {
  static const Colormap cmap(kInferno);
  return cmap;
}

const Colormap& Colormap::by_name(std::string_view name) {
  if (name == "inferno") return inferno();
  throw ConfigError("unknown colormap '" + std::string(name) + "'; available: inferno");
}

Rgb Colormap::operator()(double v) const {
  if (!(v > 0.0)) return table_.front();
  return table_[static_cast<std::size_t>(std::lround(std::min(v, 1.0) * 255.0))];
}

void OverlayStyle::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  if (output_fps <= 0) throw ConfigError("output fps must be positive, got " + std::to_string(output_fps));
  Colormap::by_name(colormap);
}

std::vector<Image> clip_frames(const ClipBundle& clip) {
  const std::size_t c = clip.channels(), t = clip.frames(), h = clip.height(), w = clip.width();
  if (c != 1 && c != 3) {
    throw InvalidInputError("only 1- or 3-channel clips can be rendered, got " + std::to_string(c) + " channels");
  }
  const auto data = clip.tensor.data();
  std::vector<Image> frames(t, Image{w, h, std::vector<std::uint8_t>(w * h * 3)});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mean = ch < clip.mean.size() ? clip.mean[ch] : 0.0;
    const double sd = ch < clip.std.size() ? clip.std[ch] : 1.0;
    for (std::size_t f = 0; f < t; ++f) {
      auto& rgb = frames[f].rgb;
      const double* src = data.data() + ((ch * t + f) * h) * w;
      for (std::size_t p = 0; p < h * w; ++p) {
        const std::uint8_t b = to_byte((src[p] * sd + mean) * 255.0);
        if (c == 1) {
          rgb[3 * p] = rgb[3 * p + 1] = rgb[3 * p + 2] = b;
        } else {
          rgb[3 * p + ch] = b;
        }
      }
    }
  }
  return frames;
}

Image blend_frame(const Image& frame, std::span<const double> heat, const OverlayStyle& style) {
  style.validate();
  if (heat.size() != frame.width * frame.height) {
    throw InvalidInputError("heat map has " + std::to_string(heat.size()) + " values for a " +
                            std::to_string(frame.width) + "x" + std::to_string(frame.height) + " frame");
  }
  const Colormap& cmap = Colormap::by_name(style.colormap);
  Image out = frame;
  for (std::size_t p = 0; p < heat.size(); ++p) {
    const double v = std::clamp(heat[p], 0.0, 1.0);
    const double k = style.alpha * v;
    if (k == 0.0) continue;
    const Rgb c = cmap(v);
    const std::uint8_t col[3] = {c.r, c.g, c.b};
    for (int i = 0; i < 3; ++i) {
      out.rgb[3 * p + i] = to_byte((1.0 - k) * frame.rgb[3 * p + i] + k * col[i]);
    }
  }
  return out;
}

std::vector<std::filesystem::path> render_overlay(const ClipBundle& clip, const ActivationVolume& v,
                                                  const OverlayStyle& style, const std::filesystem::path& out_dir,
                                                  bool gif) {
  style.validate();
  const Shape expected{clip.frames(), clip.height(), clip.width()};
  if (v.values.shape() != expected) {
    throw InvalidInputError("map spans " + shape_to_string(v.values.shape()) + " but the clip is " +
                            shape_to_string(expected));
  }
  const auto frames = clip_frames(clip);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  std::vector<Image> blended;
  blended.reserve(frames.size());
  std::vector<std::filesystem::path> written;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    blended.push_back(blend_frame(frames[f], v.values.channel(f), style));
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.png", f);
    written.push_back(out_dir / name);
    write_png(written.back(), blended.back());
  }
  if (gif) {
    written.push_back(out_dir / "overlay.gif");
    write_gif(written.back(), blended, style.output_fps);
  }
  return written;
}

// ---- PNG ----

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  *static_cast<std::string*>(png_get_error_ptr(png)) = msg;
  png_longjmp(png, 1);
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.rgb.size() != image.width * image.height * 3 || image.width == 0 || image.height == 0) {
    throw InvalidInputError("image buffer does not match its extents");
  }
  auto file = open_file(path, "wb");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.rgb.data() + y * image.width * 3);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("writing '" + path.string() + "' failed: " + err);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError("writing '" + path.string() + "' failed");
}

Image read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("reading '" + path.string() + "' failed: " + err);
  }
  png_init_io(png, file.get());
  png_read_png(png, info, PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_PACKING | PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA,
               nullptr);
  Image img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  const int channels = png_get_channels(png, info);
  png_bytepp rows = png_get_rows(png, info);
  img.rgb.resize(img.width * img.height * 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (int i = 0; i < 3; ++i) {
        img.rgb[(y * img.width + x) * 3 + i] = rows[y][x * channels + (channels >= 3 ? i : 0)];
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// ---- GIF ----

namespace {

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void put(unsigned code, unsigned bits) {
    acc_ |= static_cast<std::uint32_t>(code) << nbits_;
    nbits_ += bits;
    while (nbits_ >= 8) {
      out_.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
      acc_ >>= 8;
      nbits_ -= 8;
    }
  }
  void flush() {
    if (nbits_ > 0) out_.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
    acc_ = 0;
    nbits_ = 0;
  }

 private:
  std::vector<std::uint8_t>& out_;
  std::uint32_t acc_ = 0;
  unsigned nbits_ = 0;
};

// Variable-width LZW as used by GIF, 8-bit minimum code size.
std::vector<std::uint8_t> lzw_encode(const std::vector<std::uint8_t>& indices) {
  constexpr unsigned kClear = 256, kEnd = 257, kMaxCode = 4095;
  std::vector<std::uint8_t> out;
  BitWriter bw(out);
  std::map<std::pair<unsigned, std::uint8_t>, unsigned> dict;
  unsigned next = 258, width = 9;
  bw.put(kClear, width);
  if (indices.empty()) {
    bw.put(kEnd, width);
    bw.flush();
    return out;
  }
  unsigned prefix = indices[0];
  for (std::size_t i = 1; i < indices.size(); ++i) {
    const std::uint8_t k = indices[i];
    auto it = dict.find({prefix, k});
    if (it != dict.end()) {
      prefix = it->second;
      continue;
    }
    bw.put(prefix, width);
    if (next <= kMaxCode) {
      dict.emplace(std::pair{prefix, k}, next);
      // The decoder widens one code later than the encoder adds the entry.
      if (next == (1u << width) && width < 12) ++width;
      ++next;
    } else {
      bw.put(kClear, width);
      dict.clear();
      next = 258;
      width = 9;
    }
    prefix = k;
  }
  bw.put(prefix, width);
  bw.put(kEnd, width);
  bw.flush();
  return out;
}

std::uint8_t palette_index(const std::uint8_t* px) {
  return static_cast<std::uint8_t>((px[0] >> 5) << 5 | (px[1] >> 5) << 2 | (px[2] >> 6));
}

void put_u16(std::vector<std::uint8_t>& out, unsigned v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

}  // namespace

void write_gif(const std::filesystem::path& path, std::span<const Image> frames, int fps) {
  if (frames.empty()) throw InvalidInputError("an animation needs at least one frame");
  if (fps <= 0) throw ConfigError("output fps must be positive, got " + std::to_string(fps));
  const std::size_t w = frames[0].width, h = frames[0].height;
  if (w > 0xffff || h > 0xffff) throw InvalidInputError("frame too large for GIF");
  std::vector<std::uint8_t> out;
  for (char c : std::string_view("GIF89a")) out.push_back(static_cast<std::uint8_t>(c));
  put_u16(out, static_cast<unsigned>(w));
  put_u16(out, static_cast<unsigned>(h));
  out.insert(out.end(), {0xf7, 0x00, 0x00});  // global 256-colour table
  for (unsigned i = 0; i < 256; ++i) {
    const unsigned r = (i >> 5) & 7, g = (i >> 2) & 7, b = i & 3;
    out.push_back(static_cast<std::uint8_t>(r * 255 / 7));
    out.push_back(static_cast<std::uint8_t>(g * 255 / 7));
    out.push_back(static_cast<std::uint8_t>(b * 255 / 3));
  }
  // NETSCAPE2.0 loop forever.
  out.insert(out.end(), {0x21, 0xff, 0x0b});
  for (char c : std::string_view("NETSCAPE2.0")) out.push_back(static_cast<std::uint8_t>(c));
  out.insert(out.end(), {0x03, 0x01, 0x00, 0x00, 0x00});

  const unsigned delay = static_cast<unsigned>(std::lround(100.0 / fps));
  for (const Image& img : frames) {
    if (img.width != w || img.height != h) throw InvalidInputError("animation frames differ in size");
    out.insert(out.end(), {0x21, 0xf9, 0x04, 0x00});
    put_u16(out, std::max(delay, 1u));
    out.insert(out.end(), {0x00, 0x00});
    out.push_back(0x2c);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, static_cast<unsigned>(w));
    put_u16(out, static_cast<unsigned>(h));
    out.push_back(0x00);
    std::vector<std::uint8_t> idx(w * h);
    for (std::size_t p = 0; p < w * h; ++p) idx[p] = palette_index(img.rgb.data() + 3 * p);
    const auto data = lzw_encode(idx);
    out.push_back(8);
    for (std::size_t off = 0; off < data.size(); off += 255) {
      const std::size_t n = std::min<std::size_t>(255, data.size() - off);
      out.push_back(static_cast<std::uint8_t>(n));
      out.insert(out.end(), data.begin() + static_cast<std::ptrdiff_t>(off),
                 data.begin() + static_cast<std::ptrdiff_t>(off + n));
    }
    out.push_back(0x00);
  }
  out.push_back(0x3b);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("writing '" + path.string() + "' failed");
}

}  // namespace cfp
