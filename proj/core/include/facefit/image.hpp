#pragma once

#include <string>
#include <vector>

#include "facefit/array.hpp"

namespace facefit {

// Row-major H x W x C double image, nominal range [0,1]. Values outside the
// range are legal in intermediate results; writers clamp for 8-bit output.
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<double> px;

    Image() = default;
    Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_), px(static_cast<size_t>(h_) * w_ * c_, 0.0) {}

    double& at(int y, int x, int ch) { return px[(static_cast<size_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return px[(static_cast<size_t>(y) * w + x) * c + ch]; }
    int64_t numel() const { return static_cast<int64_t>(px.size()); }

    ad::Array to_array() const;
    static Image from_array(const ad::Array& a);
};

// Float32 PFM (little-endian, bottom-up rows); the exact-valued sidecar
// format next to 8-bit PNGs.
void write_pfm(const std::string& path, const Image& img);
Image read_pfm(const std::string& path);

// 8-bit PNG, values clamped to [0,1].
void write_png(const std::string& path, const Image& img);

// Stitch images of equal height side by side (for fit report panels).
Image hstack(const std::vector<Image>& imgs);

} // namespace facefit
