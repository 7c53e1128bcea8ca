#include "deqmd/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace deqmd {
namespace {

static_assert(std::endian::native == std::endian::little, "float image I/O assumes a little-endian host");

std::string extension_of(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return ext;
}

// Interleaved 8-bit samples -> planar image, optionally collapsed to luminance.
Image from_interleaved(const std::vector<unsigned char>& buf, int h, int w, int file_channels, int channels) {
  const int out_channels = channels == 0 ? file_channels : channels;
  if (out_channels != 1 && out_channels != file_channels) {
    throw ShapeError("cannot convert " + std::to_string(file_channels) + "-channel image to " +
                     std::to_string(out_channels) + " channels");
  }
  Image img(h, w, out_channels);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const unsigned char* px = &buf[(std::size_t(r) * w + c) * file_channels];
      if (out_channels == file_channels) {
        for (int ch = 0; ch < file_channels; ++ch) img(r, c, ch) = px[ch] / 255.0;
      } else if (file_channels >= 3) {
        img(r, c, 0) = (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) / 255.0;
      } else {
        img(r, c, 0) = px[0] / 255.0;
      }
    }
  }
  return img;
}

std::vector<unsigned char> to_interleaved(const Image& x) {
  std::vector<unsigned char> buf(std::size_t(x.size()));
  for (int r = 0; r < x.height(); ++r) {
    for (int c = 0; c < x.width(); ++c) {
      for (int ch = 0; ch < x.channels(); ++ch) {
        const double v = std::clamp(x(r, c, ch), 0.0, 1.0);
        buf[(std::size_t(r) * x.width() + c) * x.channels() + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  return buf;
}

constexpr std::array<char, 4> kFloatMagic{'D', 'E', 'Q', 'F'};

Image load_float(const std::filesystem::path& path, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  std::uint32_t dims[3] = {};
  in.read(magic.data(), 4);
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || magic != kFloatMagic) throw IoError(path.string() + ": not a DEQF float image");
  Image img{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])};
  in.read(reinterpret_cast<char*>(img.array().data()), std::streamsize(img.size() * sizeof(double)));
  if (!in) throw IoError(path.string() + ": truncated float image");
  if (channels != 0 && channels != img.channels()) {
    if (channels != 1) throw ShapeError(path.string() + ": channel count mismatch");
    Image gray(img.height(), img.width(), 1);
    gray.array() = img.array().head(img.plane_size());
    if (img.channels() >= 3) {
      const auto n = img.plane_size();
      gray.array() = 0.299 * img.array().segment(0, n) + 0.587 * img.array().segment(n, n) +
                     0.114 * img.array().segment(2 * n, n);
    }
    return gray;
  }
  return img;
}

void save_float(const Image& x, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint32_t dims[3] = {std::uint32_t(x.height()), std::uint32_t(x.width()), std::uint32_t(x.channels())};
  out.write(kFloatMagic.data(), 4);
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(x.array().data()), std::streamsize(x.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path.string());
}

// Skips whitespace and '#' comments in a netpbm header.
int read_pnm_int(std::istream& in) {
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int v = -1;
  in >> v;
  if (!in) throw IoError("malformed netpbm header");
  return v;
}

Image load_pnm(const std::filesystem::path& path, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char p = 0, kind = 0;
  in.get(p).get(kind);
  if (p != 'P' || (kind != '5' && kind != '6')) throw IoError(path.string() + ": only binary P5/P6 supported");
  const int file_channels = kind == '5' ? 1 : 3;
  const int w = read_pnm_int(in);
  const int h = read_pnm_int(in);
  const int maxval = read_pnm_int(in);
  if (maxval != 255) throw IoError(path.string() + ": only 8-bit netpbm supported");
  in.get();
  std::vector<unsigned char> buf(std::size_t(w) * h * file_channels);
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!in) throw IoError(path.string() + ": truncated pixel data");
  return from_interleaved(buf, h, w, file_channels, channels);
}

void save_pnm(const Image& x, const std::filesystem::path& path) {
  if (x.channels() != 1 && x.channels() != 3) throw ShapeError("netpbm export needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (x.channels() == 1 ? "P5" : "P6") << "\n" << x.width() << " " << x.height() << "\n255\n";
  const auto buf = to_interleaved(x);
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image load_png(const std::filesystem::path& path, int channels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError(path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(path.string() + ": " + image.message);
  }
  return from_interleaved(buf, int(image.height), int(image.width), color ? 3 : 1, channels);
}

void save_png(const Image& x, const std::filesystem::path& path) {
  if (x.channels() != 1 && x.channels() != 3) throw ShapeError("png export needs 1 or 3 channels");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(x.width());
  image.height = png_uint_32(x.height());
  image.format = x.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const auto buf = to_interleaved(x);
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + image.message);
  }
}

}  // namespace

Image load_image(const std::filesystem::path& path, int channels) {
  const std::string ext = extension_of(path);
  if (ext == ".deqf") return load_float(path, channels);
  if (ext == ".pgm" || ext == ".ppm") return load_pnm(path, channels);
  if (ext == ".png") return load_png(path, channels);
  throw IoError("unsupported image format: " + path.string());
}

void save_image(const Image& x, const std::filesystem::path& path) {
  if (!x.all_finite()) throw DomainError("save_image: non-finite pixel");
  const std::string ext = extension_of(path);
  if (ext == ".deqf") return save_float(x, path);
  if (ext == ".pgm" || ext == ".ppm") return save_pnm(x, path);
  if (ext == ".png") return save_png(x, path);
  throw IoError("unsupported image format: " + path.string());
}

}  // namespace deqmd
