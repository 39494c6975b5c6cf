#include "textcam/png_writer.hpp"

#include <png.h>

#include <csetjmp>

#include "textcam/error.hpp"
#include "textcam/tensor_io.hpp"

namespace textcam {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

void flush_noop(png_structp) {}

void on_png_warning(png_structp, png_const_charp) {}

}  // namespace

std::string encode_png(const cam::Image& image) {
  if (image.width < 1 || image.height < 1 || (image.channels != 1 && image.channels != 3) ||
      image.pixels.size() !=
          static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw Error(ErrorCode::kInvalidArgument, "malformed image buffer");
  }
  std::string out;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, on_png_warning);
  if (!png) throw Error(ErrorCode::kIoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::kIoError, "png_create_info_struct failed");
  }
  // libpng reports failures by longjmp back here.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIoError, "png encoding failed");
  }
  {
    png_set_write_fn(png, &out, append_bytes, flush_noop);
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
    for (int y = 0; y < image.height; ++y) {
      // libpng takes a non-const row pointer but does not modify it.
      auto* row = const_cast<png_bytep>(image.pixels.data() + y * stride);
      png_write_row(png, row);
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const cam::Image& image, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_png(image));
}

}  // namespace textcam
