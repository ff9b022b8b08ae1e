#include "facefit/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "facefit/error.hpp"

namespace facefit {

ad::Array Image::to_array() const {
    return ad::Array({h, w, c}, px);
}

Image Image::from_array(const ad::Array& a) {
    if (a.rank() != 3) fail("Image::from_array: expected rank-3 array, got " + ad::shape_str(a.shape()));
    Image img(static_cast<int>(a.shape()[0]), static_cast<int>(a.shape()[1]),
              static_cast<int>(a.shape()[2]));
    img.px = a.vec();
    return img;
}

void write_pfm(const std::string& path, const Image& img) {
    if (img.c != 1 && img.c != 3) fail("write_pfm: image must have 1 or 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("cannot open '" + path + "' for writing");
    f << (img.c == 3 ? "PF" : "Pf") << "\n" << img.w << " " << img.h << "\n-1.0\n";
    std::vector<float> row(static_cast<size_t>(img.w) * img.c);
    for (int y = img.h - 1; y >= 0; --y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch)
                row[static_cast<size_t>(x) * img.c + ch] = static_cast<float>(img.at(y, x, ch));
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!f) fail("write failed for '" + path + "'");
}

Image read_pfm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open '" + path + "'");
    std::string magic;
    f >> magic;
    if (magic != "PF" && magic != "Pf") fail(path + ": not a PFM file");
    int w = 0, h = 0;
    double scale = 0.0;
    f >> w >> h >> scale;
    if (w <= 0 || h <= 0) fail(path + ": bad PFM dimensions");
    if (scale >= 0.0) fail(path + ": big-endian PFM not supported");
    f.get(); // single whitespace after the header
    const int c = magic == "PF" ? 3 : 1;
    Image img(h, w, c);
    std::vector<float> row(static_cast<size_t>(w) * c);
    for (int y = h - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!f) fail(path + ": truncated PFM payload");
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                img.at(y, x, ch) = static_cast<double>(row[static_cast<size_t>(x) * c + ch]);
    }
    return img;
}

void write_png(const std::string& path, const Image& img) {
    if (img.c != 1 && img.c != 3) fail("write_png: image must have 1 or 3 channels");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) fail("cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        fail("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        fail("libpng write error for '" + path + "'");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 img.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(img.w) * img.c);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                double v = img.at(y, x, ch);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                row[static_cast<size_t>(x) * img.c + ch] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image hstack(const std::vector<Image>& imgs) {
    if (imgs.empty()) fail("hstack: no images");
    int w = 0;
    const int h = imgs[0].h, c = imgs[0].c;
    for (const Image& im : imgs) {
        if (im.h != h || im.c != c) fail("hstack: mismatched image heights/channels");
        w += im.w;
    }
    Image out(h, w, c);
    int x0 = 0;
    for (const Image& im : imgs) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < im.w; ++x)
                for (int ch = 0; ch < c; ++ch) out.at(y, x0 + x, ch) = im.at(y, x, ch);
        x0 += im.w;
    }
    return out;
}

} // namespace facefit
