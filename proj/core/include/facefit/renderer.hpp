#pragma once

#include <cstdint>
#include <vector>

#include "facefit/image.hpp"
#include "facefit/mesh.hpp"
#include "facefit/morphable.hpp"
#include "facefit/rng.hpp"
#include "facefit/tape.hpp"
#include "facefit/texture_decoder.hpp"

namespace facefit {

// p_c layout: [x_c, y_c, z_c, x_t, y_t, z_t, f]
struct CameraParams {
    double pos[3] = {0, 0, 5};
    double target[3] = {0, 0, 0};
    double focal = 100.0; // pixels

    ad::Array pack() const;
    static CameraParams unpack(const ad::Array& p_c);
};

// p_l layout: [x_l, y_l, z_l, r_l, g_l, b_l, r_a, g_a, b_a]
struct LightParams {
    double pos[3] = {0, 0, 5};
    double color[3] = {0.8, 0.8, 0.8};
    double ambient[3] = {0.4, 0.4, 0.4};

    ad::Array pack() const;
    static LightParams unpack(const ad::Array& p_l);
};

struct RenderOptions {
    int width = 64;
    int height = 64;
    double background = 0.0;
    double specular_strength = 0.2; // k_s
    double specular_exponent = 8.0; // alpha
    bool backface_cull = true;
};

// Pinhole projection. The view basis comes from position/look-at with world
// +y as up; +x_px right, +y_px down, principal point at the image center,
// pixel centers at integer+0.5. Differentiable w.r.t. vertices and camera.
struct Projection {
    ad::Var x, y, depth;            // (N,1) screen x, screen y, camera-space z
    std::vector<double> px, py, pz; // plain copies of the same values
    std::vector<char> behind;       // camera-space z below threshold
    int behind_count = 0;
};

Projection project_vertices(ad::Tape& tape, ad::Var vertices, ad::Var cam7,
                            const RenderOptions& opts);

// Fixed per-step coverage: winning triangle, barycentrics and interpolated
// camera-space depth per pixel. Front faces wind counter-clockwise in y-up
// screen coordinates; coverage uses pixel centers with a top-left fill rule;
// depth ties go to the lower triangle id.
struct RasterMap {
    int h = 0, w = 0;
    std::vector<int32_t> tri;  // -1 marks background
    std::vector<double> bary;  // 3 per pixel
    std::vector<double> depth;

    int64_t covered() const;
    std::vector<int64_t> covered_pixels() const; // row-major pixel ids
    bool same_coverage(const RasterMap& other) const;
};

RasterMap rasterize(const Projection& proj, const std::vector<int32_t>& triangles,
                    const RenderOptions& opts);
RasterMap rasterize_plain(const std::vector<double>& px, const std::vector<double>& py,
                          const std::vector<double>& pz, const std::vector<char>& behind,
                          const std::vector<int32_t>& triangles, int width, int height,
                          bool backface_cull);

// Area-weighted vertex normals, normalized; isolated vertices get a zero
// normal and are counted.
ad::Var vertex_normals(ad::Tape& tape, ad::Var vertices, const Mesh& mesh,
                       int* isolated_count = nullptr);

// Deferred Phong shading over the covered pixels. Coverage is constant;
// barycentrics are recomputed differentiably from the projected corners.
struct ShadeResult {
    ad::Var pixels;                 // (P,3)
    std::vector<int64_t> pixel_ids; // row-major pixel index per row of `pixels`
};

ShadeResult shade(ad::Tape& tape, const RasterMap& raster,
                  const std::vector<int32_t>& triangles, ad::Var vertex_colors,
                  ad::Var normals, ad::Var vertices, const Projection& proj, ad::Var cam7,
                  ad::Var light9, const RenderOptions& opts);

Image materialize(const RasterMap& raster, const ad::Array& shaded,
                  const std::vector<int64_t>& pixel_ids, double background);

// Whole differentiable pipeline on one tape. The texture is supplied as an
// (H,W,3) image node so the caller picks the decoder or the PCA model.
struct RenderGraph {
    Projection proj;
    RasterMap raster;
    ShadeResult shaded;
    ad::Var landmarks_x, landmarks_y; // (68,1)
    Image image(double background) const;
    ad::Array landmarks() const; // (68,2) plain
};

RenderGraph render_graph(ad::Tape& tape, const MorphableModel& model, ad::Var p_s, ad::Var p_e,
                         ad::Var uv_image, ad::Var cam7, ad::Var light9,
                         const RenderOptions& opts);

struct RenderResult {
    Image image;
    ad::Array landmarks; // (68,2)
    RasterMap raster;
};

// decoder == nullptr selects the PCA texture model.
RenderResult render(const MorphableModel& model, const TextureDecoder* decoder,
                    const ad::Array& p_s, const ad::Array& p_e, const ad::Array& p_t,
                    const ad::Array& p_c, const ad::Array& p_l, const RenderOptions& opts);

// Declared sampling distributions for the secondary randomized render
// (and for synthetic scene cameras/lights).
struct SecondaryDist {
    double expr_sigma = 0.5;
    double distance_mu = 5.0, distance_sigma = 0.5;
    double azimuth_sigma_deg = 20.0;
    double elevation_sigma_deg = 10.0;
    double focal_mu = 100.0, focal_sigma = 10.0;
    double light_pos_mu[3] = {0, 0, 5};
    double light_pos_sigma = 1.0;
    double light_color_mu = 0.8, light_color_sigma = 0.1;
    double ambient_mu = 0.4, ambient_sigma = 0.1;
};

struct SecondarySample {
    ad::Array p_e, p_c, p_l;
};

CameraParams sample_camera(Rng& rng, const SecondaryDist& dist);
LightParams sample_light(Rng& rng, const SecondaryDist& dist);

// Renders the held identity (p_s, p_t) under a random expression, camera and
// light. The camera draw is rejected while it falls inside the bounding
// sphere of the deformed mesh (at most 10 attempts).
RenderResult render_random(const MorphableModel& model, const TextureDecoder* decoder,
                           const ad::Array& p_s, const ad::Array& p_t, Rng& rng,
                           const RenderOptions& opts, const SecondaryDist& dist,
                           SecondarySample* sample_out = nullptr);

} // namespace facefit
