#include "facefit/texture_decoder.hpp"

#include <cmath>

#include "facefit/container.hpp"
#include "facefit/error.hpp"
#include "facefit/rng.hpp"

namespace facefit {

using ad::Array;
using ad::Tape;
using ad::Var;

namespace {

Array gaussian(Rng& rng, ad::Shape shape, double stdev) {
    Array a(std::move(shape));
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = rng.normal(0.0, stdev);
    return a;
}

int upsample_blocks(int base, int out) {
    int blocks = 0;
    int size = base;
    while (size < out) {
        size *= 2;
        ++blocks;
    }
    if (size != out)
        fail("TextureDecoder: output size " + std::to_string(out) +
             " is not a power-of-two multiple of the base " + std::to_string(base));
    return blocks;
}

} // namespace

TextureDecoder TextureDecoder::make(uint64_t seed, int latent_dim, int out_size) {
    if (latent_dim < 1) fail("TextureDecoder: latent dimension must be positive");
    TextureDecoder d;
    d.latent_dim_ = latent_dim;
    d.out_size_ = out_size;
    d.seed_ = seed;
    const int blocks = upsample_blocks(d.base_size_, out_size);
    const double stdev = 0.2;

    Rng rng(seed ^ 0x7e57c0defULL);
    d.dense_w_ = gaussian(rng, {latent_dim, static_cast<int64_t>(d.base_size_) * d.base_size_ * d.channels_}, stdev);
    d.dense_b_ = gaussian(rng, {static_cast<int64_t>(d.base_size_) * d.base_size_ * d.channels_}, stdev);
    for (int i = 0; i < blocks; ++i) {
        d.conv_w_.push_back(gaussian(rng, {9LL * d.channels_, d.channels_}, stdev));
        d.conv_b_.push_back(gaussian(rng, {d.channels_}, stdev));
    }
    d.head_w_ = gaussian(rng, {d.channels_, 3}, stdev);
    d.head_b_ = gaussian(rng, {3}, stdev);
    d.build_plans();
    return d;
}

void TextureDecoder::build_plans() {
    plans_.clear();
    int size = base_size_;
    for (size_t i = 0; i < conv_w_.size(); ++i) {
        size *= 2;
        plans_.push_back(nn::make_conv_plan(size, size, channels_, 3, 1, 1));
    }
    head_plan_ = nn::make_conv_plan(out_size_, out_size_, channels_, 1, 1, 0);
}

Var TextureDecoder::generate(Tape& tape, Var p_t) const {
    if (p_t.shape().size() != 1 || p_t.shape()[0] != latent_dim_)
        fail("TextureDecoder::generate: latent shape " + ad::shape_str(p_t.shape()) +
             " does not match latent dimension " + std::to_string(latent_dim_));
    Var x = nn::dense(tape, p_t, tape.constant(dense_w_), tape.constant(dense_b_));
    x = tape.tanh(x);
    x = tape.reshape(x, {base_size_, base_size_, channels_});
    for (size_t i = 0; i < conv_w_.size(); ++i) {
        x = nn::upsample2x(tape, x);
        x = nn::conv2d(tape, x, plans_[i], tape.constant(conv_w_[i]), tape.constant(conv_b_[i]));
        x = tape.tanh(x);
    }
    x = nn::conv2d(tape, x, head_plan_, tape.constant(head_w_), tape.constant(head_b_));
    return tape.sigmoid(x);
}

Image TextureDecoder::generate_image(const Array& p_t) const {
    Tape tape;
    return Image::from_array(generate(tape, tape.constant(p_t)).val());
}

void TextureDecoder::save(const std::string& path) const {
    Container c;
    c.kind = "texture_decoder";
    c.put_meta("seed", std::to_string(seed_));
    c.put_meta("latent_dim", std::to_string(latent_dim_));
    c.put_meta("out_size", std::to_string(out_size_));
    c.put_meta("blocks", std::to_string(conv_w_.size()));
    c.put("dense_w", dense_w_);
    c.put("dense_b", dense_b_);
    for (size_t i = 0; i < conv_w_.size(); ++i) {
        c.put("conv" + std::to_string(i) + "_w", conv_w_[i]);
        c.put("conv" + std::to_string(i) + "_b", conv_b_[i]);
    }
    c.put("head_w", head_w_);
    c.put("head_b", head_b_);
    c.write(path);
}

TextureDecoder TextureDecoder::load(const std::string& path) {
    const Container c = Container::read(path);
    if (c.kind != "texture_decoder") fail(path + ": expected kind texture_decoder, got " + c.kind);
    TextureDecoder d;
    d.seed_ = std::stoull(c.get_meta("seed", "0"));
    d.latent_dim_ = std::stoi(c.get_meta("latent_dim"));
    d.out_size_ = std::stoi(c.get_meta("out_size"));
    const int blocks = std::stoi(c.get_meta("blocks"));
    d.dense_w_ = c.get("dense_w");
    d.dense_b_ = c.get("dense_b");
    for (int i = 0; i < blocks; ++i) {
        d.conv_w_.push_back(c.get("conv" + std::to_string(i) + "_w"));
        d.conv_b_.push_back(c.get("conv" + std::to_string(i) + "_b"));
    }
    d.head_w_ = c.get("head_w");
    d.head_b_ = c.get("head_b");
    d.build_plans();
    return d;
}

InvertResult invert_texture(const TextureDecoder& decoder, const Image& target, int steps,
                            double lr) {
    if (target.h != decoder.out_size() || target.w != decoder.out_size() || target.c != 3)
        fail("invert_texture: target shape does not match decoder output");
    const Array target_arr = target.to_array();
    const int64_t n = decoder.latent_dim();

    Array latent = Array::zeros({n});
    Array m = Array::zeros({n}), v = Array::zeros({n});
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    InvertResult res;
    double current = 0.0;
    {
        Tape tape;
        Var p = tape.leaf(latent);
        Var img = decoder.generate(tape, p);
        current = (tape.l1_norm(img - tape.constant(target_arr)) /
                   static_cast<double>(target_arr.numel()))
                      .item();
    }

    for (int step = 0; step < steps; ++step) {
        Tape tape;
        Var p = tape.leaf(latent);
        Var img = decoder.generate(tape, p);
        Var loss = tape.l1_norm(img - tape.constant(target_arr)) /
                   static_cast<double>(target_arr.numel());
        const double l0 = loss.item();
        if (!std::isfinite(l0)) fail("invert_texture: non-finite loss at step " + std::to_string(step));
        const Array grad = tape.backward(loss, {p}).wrt(p);

        const double t = static_cast<double>(step + 1);
        for (int64_t i = 0; i < n; ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        }
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);

        // shrink the move until the loss does not increase
        Array candidate = latent;
        double scale = 1.0;
        bool accepted = false;
        for (int attempt = 0; attempt < 6 && !accepted; ++attempt) {
            for (int64_t i = 0; i < n; ++i) {
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                candidate[i] = latent[i] - scale * lr * mh / (std::sqrt(vh) + eps);
            }
            Tape probe;
            Var img2 = decoder.generate(probe, probe.constant(candidate));
            const double l1 =
                (probe.l1_norm(img2 - probe.constant(target_arr)) /
                 static_cast<double>(target_arr.numel()))
                    .item();
            if (l1 <= current) {
                latent = candidate;
                current = l1;
                accepted = true;
            } else {
                scale *= 0.5;
            }
        }
        res.trace.push_back(current);
    }
    res.latent = latent;
    res.final_mae = current;
    return res;
}

} // namespace facefit
