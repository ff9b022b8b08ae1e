#pragma once

#include <cstdint>
#include <string>

#include "facefit/image.hpp"
#include "facefit/mesh.hpp"
#include "facefit/tape.hpp"

namespace facefit {

// Linear statistical model: value = mean + basis * params. Basis columns are
// unit norm; per-component standard deviations are kept separately and applied
// by the regularizer, not baked into the basis.
struct LinearModel {
    ad::Array mean;   // (D,)
    ad::Array basis;  // (D, K)
    ad::Array stdev;  // (K,)

    int64_t dim() const { return mean.numel(); }
    int64_t components() const { return stdev.numel(); }
    void validate() const;
};

struct MorphableModel {
    LinearModel shape;       // D = 3N
    LinearModel expression;  // D = 3N
    LinearModel texture;     // D = uv_h * uv_w * 3 (PCA texture baseline)
    Mesh mesh;               // mean-shape geometry, uv, landmarks
    int uv_h = 0;
    int uv_w = 0;

    int64_t vertex_count() const { return mesh.vertex_count(); }

    void save(const std::string& model_path) const; // mesh goes to OBJ separately
    static MorphableModel load(const std::string& model_path, const std::string& mesh_path);
};

// vertices(p_s, p_e) = mean + U_s p_s + U_e p_e, shaped (N,3).
ad::Var shape_vertices(ad::Tape& tape, const MorphableModel& model, ad::Var p_s, ad::Var p_e);
ad::Array shape_vertices(const MorphableModel& model, const ad::Array& p_s, const ad::Array& p_e);

// mean + U_t p_t shaped (H,W,3). Unclamped; display paths clamp to [0,1].
ad::Var texture_pca(ad::Tape& tape, const LinearModel& texture, ad::Var p_t, int h, int w);
Image texture_pca_image(const LinearModel& texture, const ad::Array& p_t, int h, int w);

// Bilinear texture lookup at fixed per-vertex uv coordinates -> (N,C).
// Texel centers sit at (i+0.5)/W; u maps to columns, v to rows, origin
// top-left; border texels clamp. Differentiable w.r.t. the texels.
ad::Var sample_uv(ad::Tape& tape, ad::Var uv_image, const std::vector<double>& uv);
ad::Array sample_uv(const ad::Array& uv_image, const std::vector<double>& uv);

struct SynthModelConfig {
    int64_t vertex_count = 500;
    int shape_components = 40;
    int expression_components = 10;
    int texture_components = 32;
    int uv_size = 64;
    double shape_sigma0 = 1.0;
    double expression_sigma0 = 0.5;
    double texture_sigma0 = 1.0;
    double stdev_decay = 0.9;
};

// Deterministic synthetic face-like models: sphere-patch blob mean shape on a
// fixed grid triangulation, orthonormalized smooth random perturbation bases,
// geometrically decaying stdevs, and 68 landmark indices picked by a fixed
// stride.
MorphableModel synth_model(uint64_t seed, const SynthModelConfig& cfg = {});

} // namespace facefit
