#include <csetjmp>
#include <cstring>

#include <png.h>

#include "hslf/error.hpp"
#include "hslf/io.hpp"

namespace hslf::io {

namespace {

struct ReadCursor {
    std::span<const std::uint8_t> in;
    std::size_t pos = 0;
};

void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void read_from_span(png_structp png, png_bytep data, png_size_t length) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->pos + length > cur->in.size())
        png_error(png, "unexpected end of data");
    std::memcpy(data, cur->in.data() + cur->pos, length);
    cur->pos += length;
}

/// Returns an empty string on success, else the libpng message.
std::string encode_rows(int width, int height, int color_type, int channels, const std::uint8_t* pixels, Bytes& out) {
    if (width <= 0 || height <= 0)
        return "image is empty";
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        return "cannot create write struct";
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        return "cannot create info struct";
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return "libpng write error";
    }
    png_set_write_fn(png, &out, write_to_vector, nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 1);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(pixels + stride * static_cast<std::size_t>(y)));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return {};
}

template <typename Pixel>
Bytes encode(const Raster<Pixel>& image, int color_type, int channels) {
    Bytes out;
    const std::string err = encode_rows(image.width, image.height, color_type, channels,
                                        reinterpret_cast<const std::uint8_t*>(image.data.data()), out);
    if (!err.empty())
        throw data_error("png: " + err);
    return out;
}

} // namespace

Bytes encode_png(const RgbImage& image) { return encode(image, PNG_COLOR_TYPE_RGB, 3); }
Bytes encode_png(const RgbaImage& image) { return encode(image, PNG_COLOR_TYPE_RGBA, 4); }
Bytes encode_png(const Raster<std::uint8_t>& gray) { return encode(gray, PNG_COLOR_TYPE_GRAY, 1); }

RgbaImage decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
        throw data_error("png: bad signature");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        throw internal_error("png: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw internal_error("png: cannot create info struct");
    }
    ReadCursor cursor{bytes, 0};
    RgbaImage* image = new RgbaImage();
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        delete image;
        throw data_error("png: corrupt data");
    }
    png_set_read_fn(png, &cursor, read_from_span);
    png_read_info(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (depth == 16)
        png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(png);
    if (!(color & PNG_COLOR_MASK_ALPHA) && !png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_filler(png, 0xff, PNG_FILLER_AFTER);
    png_read_update_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    image->width = width;
    image->height = height;
    image->data.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y)
        png_read_row(png, reinterpret_cast<png_bytep>(image->row(y)), nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    RgbaImage result = std::move(*image);
    delete image;
    return result;
}

void export_png(const RgbImage& image, const std::filesystem::path& path) { write_bytes(path, encode_png(image)); }
void export_png(const RgbaImage& image, const std::filesystem::path& path) { write_bytes(path, encode_png(image)); }
void export_png(const Raster<std::uint8_t>& gray, const std::filesystem::path& path) {
    write_bytes(path, encode_png(gray));
}

} // namespace hslf::io
