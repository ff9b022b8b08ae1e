#pragma once

#include <cstdint>
#include <vector>

#include "facefit/tape.hpp"

namespace facefit::nn {

// Precomputed im2col gather plan for a KxK convolution with zero padding.
// Out-of-bounds taps gather a clamped index and are zeroed by the mask.
struct ConvPlan {
    int in_h = 0, in_w = 0, in_c = 0;
    int k = 0, stride = 1, pad = 0;
    int out_h = 0, out_w = 0;
    std::vector<int64_t> indices; // (out_h*out_w) x (k*k*in_c) flat taps
    std::vector<double> mask;     // 1 valid, 0 padding
};

ConvPlan make_conv_plan(int in_h, int in_w, int in_c, int k, int stride, int pad);

// x: (H,W,C) image -> (out_h*out_w, k*k*C) patch matrix.
ad::Var im2col(ad::Tape& tape, ad::Var x, const ConvPlan& plan);

// Convolution via im2col + matmul. w: (k*k*C_in, C_out), b: (C_out,).
// Returns (out_h, out_w, C_out).
ad::Var conv2d(ad::Tape& tape, ad::Var x, const ConvPlan& plan, ad::Var w, ad::Var b);

// Nearest-neighbor 2x upsample of (H,W,C).
ad::Var upsample2x(ad::Tape& tape, ad::Var x);

// x: (n,), w: (n,m), b: (m,) -> (m,).
ad::Var dense(ad::Tape& tape, ad::Var x, ad::Var w, ad::Var b);

} // namespace facefit::nn
