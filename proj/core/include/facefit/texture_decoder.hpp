#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facefit/image.hpp"
#include "facefit/nn.hpp"
#include "facefit/tape.hpp"

namespace facefit {

// Fixed-seed convolutional texture decoder: latent vector -> UV image in
// (0,1). Weights are drawn once from a seeded Gaussian and frozen; the
// fitting engine only ever differentiates through it, never trains it.
//
// Architecture: dense to a 4x4x8 feature map (tanh), then upsample-2x /
// 3x3-conv / tanh blocks until the target resolution, then a 1x1 convolution
// and sigmoid. The block count is log2(out_size/4).
class TextureDecoder {
public:
    static TextureDecoder make(uint64_t seed, int latent_dim = 64, int out_size = 64);

    ad::Var generate(ad::Tape& tape, ad::Var p_t) const;
    Image generate_image(const ad::Array& p_t) const;

    int latent_dim() const { return latent_dim_; }
    int out_size() const { return out_size_; }
    uint64_t seed() const { return seed_; }

    void save(const std::string& path) const;
    static TextureDecoder load(const std::string& path);

private:
    TextureDecoder() = default;
    void build_plans();

    int latent_dim_ = 0;
    int out_size_ = 0;
    int base_size_ = 4;
    int channels_ = 8;
    uint64_t seed_ = 0;
    ad::Array dense_w_, dense_b_;
    std::vector<ad::Array> conv_w_, conv_b_;
    ad::Array head_w_, head_b_;
    std::vector<nn::ConvPlan> plans_;
    nn::ConvPlan head_plan_;
};

struct InvertResult {
    ad::Array latent;
    double final_mae = 0.0;
    std::vector<double> trace; // per-iteration loss, non-increasing
};

// Recovers a latent for `target` by Adam descent on the mean absolute
// per-pixel error, starting from zero. The default schedule shrinks the step
// within an iteration until the loss does not increase, so the trace is
// non-increasing by construction.
InvertResult invert_texture(const TextureDecoder& decoder, const Image& target, int steps,
                            double lr);

} // namespace facefit
