#include "robustae/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>

#include <jpeglib.h>
#include <png.h>

namespace robustae::io {

namespace {

void check_rgb_tensor(const Tensor& img) {
  bool ok = (img.ndim() == 3 && img.dim(0) == 3) ||
            (img.ndim() == 4 && img.dim(0) == 1 && img.dim(1) == 3);
  if (!ok) throw std::invalid_argument("expected a 3xHxW or 1x3xHxW image tensor");
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  jmp_buf jump;
  char msg[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->msg);
  longjmp(err->jump, 1);
}

}  // namespace

std::vector<uint8_t> to_rgb8(const Tensor& img) {
  check_rgb_tensor(img);
  const int off = img.ndim() == 4 ? 1 : 0;
  const int h = img.dim(off + 1), w = img.dim(off + 2);
  const double* base = img.data();
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<uint8_t> out(plane * 3);
  for (size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) {
      double v = std::clamp(base[c * plane + p], 0.0, 1.0) * 255.0;
      out[p * 3 + c] = static_cast<uint8_t>(std::lround(v));
    }
  return out;
}

Tensor from_rgb8(const std::vector<uint8_t>& rgb, int h, int w) {
  if (rgb.size() != static_cast<size_t>(h) * w * 3)
    throw std::invalid_argument("from_rgb8: byte count does not match dimensions");
  Tensor img({1, 3, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  double* base = img.data();
  for (size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) base[c * plane + p] = rgb[p * 3 + c] / 255.0;
  return img;
}

Tensor quantize8(const Tensor& img) {
  Tensor out = img;
  for (size_t i = 0; i < out.numel(); ++i) {
    double v = std::clamp(out[i], 0.0, 1.0);
    out[i] = std::lround(v * 255.0) / 255.0;
  }
  return out;
}

std::vector<uint8_t> encode_jpeg(const Tensor& img, int quality) {
  if (quality < 1 || quality > 100)
    throw std::invalid_argument("encode_jpeg: quality must be in [1,100]");
  check_rgb_tensor(img);
  const int off = img.ndim() == 4 ? 1 : 0;
  const int h = img.dim(off + 1), w = img.dim(off + 2);
  std::vector<uint8_t> rgb = to_rgb8(img);

  jpeg_compress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;

  unsigned char* buf = nullptr;
  unsigned long buf_size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    if (buf) free(buf);
    throw CodecError(std::string("jpeg encode failed: ") + err.msg);
  }

  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buf, &buf_size);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = rgb.data() + static_cast<size_t>(cinfo.next_scanline) * w * 3;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);

  std::vector<uint8_t> out(buf, buf + buf_size);
  free(buf);
  return out;
}

Tensor decode_jpeg(const std::vector<uint8_t>& bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw CodecError(std::string("jpeg decode failed: ") + err.msg);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  cinfo.do_fancy_upsampling = FALSE;
  jpeg_start_decompress(&cinfo);
  const int h = static_cast<int>(cinfo.output_height);
  const int w = static_cast<int>(cinfo.output_width);
  std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb.data() + static_cast<size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(rgb, h, w);
}

void write_png(const std::string& path, const Tensor& img) {
  check_rgb_tensor(img);
  const int off = img.ndim() == 4 ? 1 : 0;
  const int h = img.dim(off + 1), w = img.dim(off + 2);
  std::vector<uint8_t> rgb = to_rgb8(img);

  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw CodecError("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw CodecError("write_png: libpng failure on " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y)
    png_write_row(png, rgb.data() + static_cast<size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Tensor read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw CodecError("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw CodecError("read_png: libpng failure on " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  // normalize anything to 8-bit RGB
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    png_read_row(png, rgb.data() + static_cast<size_t>(y) * w * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return from_rgb8(rgb, h, w);
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CodecError("write_file: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CodecError("write_file: short write to " + path);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CodecError("read_file: cannot open " + path);
  f.seekg(0, std::ios::end);
  std::streamsize n = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<uint8_t> bytes(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!f) throw CodecError("read_file: short read from " + path);
  return bytes;
}

}  // namespace robustae::io
