#include "pmia/image.hpp"

#include <cstring>

#include <png.h>

#include "pmia/error.hpp"
#include "pmia/io.hpp"

namespace pmia {

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw ValidationError("image dimensions must be positive");
  px_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < px_.size(); i += 3) {
    px_[i] = fill.r;
    px_[i + 1] = fill.g;
    px_[i + 2] = fill.b;
  }
}

Rgb Image::at(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {px_[i], px_[i + 1], px_[i + 2]};
}

void Image::set(int x, int y, Rgb c) {
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  px_[i] = c.r;
  px_[i + 1] = c.g;
  px_[i + 2] = c.b;
}

namespace {

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw IoError(std::string("png: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

struct ReadCursor {
  const std::string* bytes;
  std::size_t pos;
};

}  // namespace

std::string encode_png(const Image& image) {
  if (image.width() == 0) throw ValidationError("cannot encode an empty image");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw IoError("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  std::string out;
  try {
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t len) {
          static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), len);
        },
        nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const auto& px = image.bytes();
    for (int y = 0; y < image.height(); ++y)
      png_write_row(png, const_cast<png_bytep>(px.data() + static_cast<std::size_t>(y) * image.width() * 3));
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw ParseError("not a PNG image");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw IoError("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{&bytes, 0};
  Image image;
  try {
    png_set_read_fn(png, &cursor, [](png_structp p, png_bytep data, png_size_t len) {
      auto* c = static_cast<ReadCursor*>(png_get_io_ptr(p));
      if (c->pos + len > c->bytes->size()) png_error(p, "truncated data");
      std::memcpy(data, c->bytes->data() + c->pos, len);
      c->pos += len;
    });
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_expand_gray_1_2_4_to_8(png);
      png_set_gray_to_rgb(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) png_error(png, "unexpected row layout");
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    image = Image(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
        image.set(x, y, {buf[i], buf[i + 1], buf[i + 2]});
      }
  } catch (const IoError& e) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(e.what());
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const Image& image, const std::filesystem::path& path) { atomic_write(path, encode_png(image)); }

Image read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

}  // namespace pmia
