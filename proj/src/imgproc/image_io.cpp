#include "mfvit/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "mfvit/binary_io.hpp"
#include "mfvit/error.hpp"

namespace mfvit::imgproc {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw FormatError("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) { throw FormatError(std::string("png: ") + msg); }
void png_warning_fn(png_structp, png_const_charp) {}

Image2D load_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw FormatError("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buffer(rowbytes * height);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + rowbytes * y;
  png_read_image(png, rows.data());

  Image2D img(width, height);
  for (int y = 0; y < height; ++y) {
    const unsigned char* row = rows[y];
    for (int x = 0; x < width; ++x) {
      if (out_depth == 16) {
        const unsigned v = (static_cast<unsigned>(row[2 * x]) << 8) | row[2 * x + 1];
        img.at(x, y) = v / 65535.0;
      } else {
        img.at(x, y) = row[x] / 255.0;
      }
    }
  }
  return img;
}

// Reads the next whitespace-delimited PGM header token, skipping comments.
std::string pgm_token(std::istream& is) {
  std::string tok;
  while (is) {
    const int c = is.peek();
    if (c == '#') {
      std::string comment;
      std::getline(is, comment);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  is >> tok;
  if (tok.empty()) throw FormatError("pgm: truncated header");
  return tok;
}

Image2D load_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  const std::string magic = pgm_token(is);
  if (magic != "P5" && magic != "P2") throw FormatError("pgm: unsupported magic " + magic);
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(pgm_token(is));
    height = std::stoi(pgm_token(is));
    maxval = std::stoi(pgm_token(is));
  } catch (const std::logic_error&) {
    throw FormatError("pgm: malformed header");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) throw FormatError("pgm: bad header values");
  Image2D img(width, height);
  if (magic == "P2") {
    for (std::size_t i = 0; i < img.size(); ++i) {
      int v;
      if (!(is >> v)) throw FormatError("pgm: truncated data");
      img.data()[i] = static_cast<double>(v) / maxval;
    }
    return img;
  }
  is.get();  // single whitespace after maxval
  const int bytes = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(img.size() * bytes);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError("pgm: truncated data");
  }
  for (std::size_t i = 0; i < img.size(); ++i) {
    const unsigned v = bytes == 1 ? raw[i] : (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
    img.data()[i] = static_cast<double>(v) / maxval;
  }
  return img;
}

}  // namespace

Image2D load_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw FormatError("cannot open " + path.string());
  char sig[8] = {};
  probe.read(sig, 8);
  const auto got = probe.gcount();
  probe.close();
  if (got >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(sig), 0, 8) == 0) return load_png(path);
  if (got >= 4 && std::string(sig, 4) == "IMG2") return load_img2(path);
  if (got >= 2 && sig[0] == 'P' && (sig[1] == '5' || sig[1] == '2')) return load_pgm(path);
  throw FormatError("unrecognized image format: " + path.string());
}

void save_png(const Image2D& image, const std::filesystem::path& path) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw FormatError("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width(), image.height(), 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      row[x] = static_cast<unsigned char>(std::lround(std::clamp(image.at(x, y), 0.0, 1.0) * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
}

void save_pgm(const Image2D& image, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  for (double v : image.data()) {
    os.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
}

void save_img2(const Image2D& image, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os.write("IMG2", 4);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(image.width()));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(image.height()));
  binio::write_le<std::uint32_t>(os, 0u);
  for (double v : image.data()) binio::write_f32(os, static_cast<float>(v));
  if (!os) throw FormatError("write failed: " + path.string());
}

Image2D load_img2(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "IMG2") throw FormatError("img2: bad magic in " + path.string());
  const auto width = binio::read_le<std::uint32_t>(is, "img2 width");
  const auto height = binio::read_le<std::uint32_t>(is, "img2 height");
  binio::read_le<std::uint32_t>(is, "img2 reserved");
  if (width == 0 || height == 0 || width > (1u << 16) || height > (1u << 16)) {
    throw FormatError("img2: implausible size");
  }
  Image2D img(static_cast<int>(width), static_cast<int>(height));
  for (double& v : img.data()) v = binio::read_f32(is, "img2 data");
  return img;
}

}  // namespace mfvit::imgproc
