#include "facefit/nn.hpp"

#include <algorithm>

#include "facefit/error.hpp"

namespace facefit::nn {

using ad::Array;
using ad::Tape;
using ad::Var;

ConvPlan make_conv_plan(int in_h, int in_w, int in_c, int k, int stride, int pad) {
    ConvPlan p;
    p.in_h = in_h;
    p.in_w = in_w;
    p.in_c = in_c;
    p.k = k;
    p.stride = stride;
    p.pad = pad;
    p.out_h = (in_h + 2 * pad - k) / stride + 1;
    p.out_w = (in_w + 2 * pad - k) / stride + 1;
    if (p.out_h <= 0 || p.out_w <= 0) fail("make_conv_plan: empty output");
    const int64_t patch = static_cast<int64_t>(k) * k * in_c;
    p.indices.reserve(static_cast<size_t>(p.out_h) * p.out_w * patch);
    p.mask.reserve(p.indices.capacity());
    for (int oy = 0; oy < p.out_h; ++oy)
        for (int ox = 0; ox < p.out_w; ++ox)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const int iy = oy * stride + ky - pad;
                    const int ix = ox * stride + kx - pad;
                    const bool valid = iy >= 0 && iy < in_h && ix >= 0 && ix < in_w;
                    const int cy = std::clamp(iy, 0, in_h - 1);
                    const int cx = std::clamp(ix, 0, in_w - 1);
                    for (int c = 0; c < in_c; ++c) {
                        p.indices.push_back((static_cast<int64_t>(cy) * in_w + cx) * in_c + c);
                        p.mask.push_back(valid ? 1.0 : 0.0);
                    }
                }
    return p;
}

Var im2col(Tape& tape, Var x, const ConvPlan& plan) {
    const ad::Shape& s = x.shape();
    if (s.size() != 3 || s[0] != plan.in_h || s[1] != plan.in_w || s[2] != plan.in_c)
        fail("im2col: input shape " + ad::shape_str(s) + " does not match plan");
    const int64_t rows = static_cast<int64_t>(plan.out_h) * plan.out_w;
    const int64_t cols = static_cast<int64_t>(plan.k) * plan.k * plan.in_c;
    Var patches = tape.gather(x, plan.indices, {rows, cols});
    if (plan.pad > 0) {
        Var mask = tape.constant(Array({rows, cols}, plan.mask));
        patches = patches * mask;
    }
    return patches;
}

Var conv2d(Tape& tape, Var x, const ConvPlan& plan, Var w, Var b) {
    const int64_t cout = w.shape()[1];
    Var patches = im2col(tape, x, plan);
    Var out = tape.matmul(patches, w) + b;
    return tape.reshape(out, {plan.out_h, plan.out_w, cout});
}

Var upsample2x(Tape& tape, Var x) {
    const ad::Shape& s = x.shape();
    if (s.size() != 3) fail("upsample2x: expected (H,W,C), got " + ad::shape_str(s));
    const int64_t h = s[0], w = s[1], c = s[2];
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(h) * w * c * 4);
    for (int64_t y = 0; y < 2 * h; ++y)
        for (int64_t x2 = 0; x2 < 2 * w; ++x2)
            for (int64_t ch = 0; ch < c; ++ch)
                idx.push_back(((y / 2) * w + x2 / 2) * c + ch);
    return tape.gather(x, std::move(idx), {2 * h, 2 * w, c});
}

Var dense(Tape& tape, Var x, Var w, Var b) {
    const int64_t n = w.shape()[0], m = w.shape()[1];
    if (x.numel() != n)
        fail("dense: input length " + std::to_string(x.numel()) + " does not match weights " +
             ad::shape_str(w.shape()));
    Var row = tape.reshape(x, {1, n});
    return tape.reshape(tape.matmul(row, w), {m}) + b;
}

} // namespace facefit::nn
