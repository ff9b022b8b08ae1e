#include "facefit/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "facefit/error.hpp"

namespace facefit {

using ad::Array;
using ad::Shape;
using ad::Tape;
using ad::Var;

namespace {
constexpr double kDepthEps = 1e-9;
}

ad::Array CameraParams::pack() const {
    return Array({7}, {pos[0], pos[1], pos[2], target[0], target[1], target[2], focal});
}

CameraParams CameraParams::unpack(const Array& p_c) {
    if (p_c.numel() != 7) fail("CameraParams: expected 7 values, got " + std::to_string(p_c.numel()));
    CameraParams c;
    for (int i = 0; i < 3; ++i) c.pos[i] = p_c[i];
    for (int i = 0; i < 3; ++i) c.target[i] = p_c[3 + i];
    c.focal = p_c[6];
    return c;
}

ad::Array LightParams::pack() const {
    return Array({9}, {pos[0], pos[1], pos[2], color[0], color[1], color[2], ambient[0],
                       ambient[1], ambient[2]});
}

LightParams LightParams::unpack(const Array& p_l) {
    if (p_l.numel() != 9) fail("LightParams: expected 9 values, got " + std::to_string(p_l.numel()));
    LightParams l;
    for (int i = 0; i < 3; ++i) l.pos[i] = p_l[i];
    for (int i = 0; i < 3; ++i) l.color[i] = p_l[3 + i];
    for (int i = 0; i < 3; ++i) l.ambient[i] = p_l[6 + i];
    return l;
}

Projection project_vertices(Tape& tape, Var vertices, Var cam7, const RenderOptions& opts) {
    const Shape& vs = vertices.shape();
    if (vs.size() != 2 || vs[1] != 3)
        fail("project_vertices: vertices must be (N,3), got " + ad::shape_str(vs));
    if (cam7.numel() != 7) fail("project_vertices: camera block must have 7 entries");
    const int64_t n = vs[0];

    const Array& cam = cam7.val();
    if (!(cam[6] > 0.0)) fail("project_vertices: focal length must be positive");

    Var pos = tape.slice(cam7, 0, 0, 3);
    Var target = tape.slice(cam7, 0, 3, 3);
    Var focal = tape.slice(cam7, 0, 6, 1);

    Var fwd_raw = target - pos;
    if (fwd_raw.val()[0] == 0.0 && fwd_raw.val()[1] == 0.0 && fwd_raw.val()[2] == 0.0)
        fail("project_vertices: camera position equals look-at target");
    Var fwd = ad::normalize3(fwd_raw);

    Var up_world = tape.constant(Array({3}, {0.0, 1.0, 0.0}));
    Var right_raw = ad::cross3(fwd, up_world);
    {
        const Array& r = right_raw.val();
        const double norm = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        if (norm < 1e-9) fail("project_vertices: view direction is parallel to the up axis");
    }
    Var right = ad::normalize3(right_raw);
    Var up_cam = ad::cross3(right, fwd);

    Var d = vertices - pos; // (N,3) - (3,)
    auto axis_dot = [&](Var basis) {
        return tape.matmul(d, tape.reshape(basis, {3, 1})); // (N,1)
    };
    Var qr = axis_dot(right);
    Var qu = axis_dot(up_cam);
    Var qz = axis_dot(fwd);

    Projection out;
    out.pz.resize(n);
    out.behind.assign(n, 0);
    for (int64_t i = 0; i < n; ++i) {
        const double z = qz.val()[i];
        if (std::abs(z) < kDepthEps)
            fail("project_vertices: vertex " + std::to_string(i) + " at zero camera depth");
        out.pz[i] = z;
        if (z < kDepthEps) {
            out.behind[i] = 1;
            ++out.behind_count;
        }
    }

    const double cx = 0.5 * opts.width, cy = 0.5 * opts.height;
    out.x = cx + focal * qr / qz;
    out.y = cy - focal * qu / qz;
    out.depth = qz;
    out.px.resize(n);
    out.py.resize(n);
    for (int64_t i = 0; i < n; ++i) {
        out.px[i] = out.x.val()[i];
        out.py[i] = out.y.val()[i];
    }
    return out;
}

int64_t RasterMap::covered() const {
    int64_t n = 0;
    for (int32_t t : tri) n += t >= 0;
    return n;
}

std::vector<int64_t> RasterMap::covered_pixels() const {
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(covered()));
    for (size_t i = 0; i < tri.size(); ++i)
        if (tri[i] >= 0) out.push_back(static_cast<int64_t>(i));
    return out;
}

bool RasterMap::same_coverage(const RasterMap& other) const {
    return h == other.h && w == other.w && tri == other.tri;
}

namespace {

// Boundary pixels belong to edges that either descend the screen (ey > 0) or
// run horizontally right-to-left (top edges for our front-face winding).
bool topleft_edge(double ex, double ey) { return ey > 0.0 || (ey == 0.0 && ex < 0.0); }

} // namespace

RasterMap rasterize_plain(const std::vector<double>& px, const std::vector<double>& py,
                          const std::vector<double>& pz, const std::vector<char>& behind,
                          const std::vector<int32_t>& triangles, int width, int height,
                          bool backface_cull) {
    RasterMap map;
    map.h = height;
    map.w = width;
    map.tri.assign(static_cast<size_t>(width) * height, -1);
    map.bary.assign(static_cast<size_t>(width) * height * 3, 0.0);
    map.depth.assign(static_cast<size_t>(width) * height,
                     std::numeric_limits<double>::infinity());

    const int64_t ntri = static_cast<int64_t>(triangles.size()) / 3;
    for (int64_t t = 0; t < ntri; ++t) {
        int32_t i0 = triangles[t * 3], i1 = triangles[t * 3 + 1], i2 = triangles[t * 3 + 2];
        if (behind[i0] || behind[i1] || behind[i2]) continue;
        bool swapped = false;
        double area2 = (px[i1] - px[i0]) * (py[i2] - py[i0]) -
                       (py[i1] - py[i0]) * (px[i2] - px[i0]);
        if (area2 == 0.0) continue;
        if (area2 > 0.0) {
            if (backface_cull) continue;
            std::swap(i1, i2);
            area2 = -area2;
            swapped = true;
        }
        const double x0 = px[i0], y0 = py[i0], x1 = px[i1], y1 = py[i1], x2 = px[i2], y2 = py[i2];

        const double min_x = std::min({x0, x1, x2}), max_x = std::max({x0, x1, x2});
        const double min_y = std::min({y0, y1, y2}), max_y = std::max({y0, y1, y2});
        const int xa = std::max(0, static_cast<int>(std::ceil(min_x - 0.5)));
        const int xb = std::min(width - 1, static_cast<int>(std::floor(max_x - 0.5)));
        const int ya = std::max(0, static_cast<int>(std::ceil(min_y - 0.5)));
        const int yb = std::min(height - 1, static_cast<int>(std::floor(max_y - 0.5)));

        for (int yi = ya; yi <= yb; ++yi) {
            const double cy = yi + 0.5;
            for (int xi = xa; xi <= xb; ++xi) {
                const double cx = xi + 0.5;
                const double e0 = (x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1);
                const double e1 = (x0 - x2) * (cy - y2) - (y0 - y2) * (cx - x2);
                const double e2 = (x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0);
                const bool in0 = e0 < 0.0 || (e0 == 0.0 && topleft_edge(x2 - x1, y2 - y1));
                const bool in1 = e1 < 0.0 || (e1 == 0.0 && topleft_edge(x0 - x2, y0 - y2));
                const bool in2 = e2 < 0.0 || (e2 == 0.0 && topleft_edge(x1 - x0, y1 - y0));
                if (!(in0 && in1 && in2)) continue;
                double w0 = e0 / area2, w1 = e1 / area2, w2 = e2 / area2;
                const double depth = w0 * pz[i0] + w1 * pz[i1] + w2 * pz[i2];
                if (depth <= 0.0) continue;
                const size_t pix = static_cast<size_t>(yi) * width + xi;
                const int32_t tid = static_cast<int32_t>(t);
                if (depth < map.depth[pix] ||
                    (depth == map.depth[pix] && tid < map.tri[pix])) {
                    map.depth[pix] = depth;
                    map.tri[pix] = tid;
                    if (swapped) std::swap(w1, w2);
                    map.bary[pix * 3] = w0;
                    map.bary[pix * 3 + 1] = w1;
                    map.bary[pix * 3 + 2] = w2;
                }
            }
        }
    }
    for (size_t i = 0; i < map.tri.size(); ++i)
        if (map.tri[i] < 0) map.depth[i] = 0.0;
    return map;
}

RasterMap rasterize(const Projection& proj, const std::vector<int32_t>& triangles,
                    const RenderOptions& opts) {
    return rasterize_plain(proj.px, proj.py, proj.pz, proj.behind, triangles, opts.width,
                           opts.height, opts.backface_cull);
}

Var vertex_normals(Tape& tape, Var vertices, const Mesh& mesh, int* isolated_count) {
    const int64_t n = vertices.shape()[0];
    const int64_t ntri = mesh.triangle_count();
    if (ntri == 0) fail("vertex_normals: mesh has no triangles");

    std::vector<int64_t> c0(ntri), c1(ntri), c2(ntri);
    for (int64_t t = 0; t < ntri; ++t) {
        c0[t] = mesh.triangles[t * 3];
        c1[t] = mesh.triangles[t * 3 + 1];
        c2[t] = mesh.triangles[t * 3 + 2];
    }
    Var v0 = ad::take_rows(vertices, c0);
    Var v1 = ad::take_rows(vertices, c1);
    Var v2 = ad::take_rows(vertices, c2);
    Var e1 = v1 - v0;
    Var e2 = v2 - v0;
    auto col = [&](Var m, int64_t i) { return tape.slice(m, 1, i, 1); }; // (T,1)
    // cross product magnitude carries twice the face area, which is exactly
    // the area weighting
    Var fnx = col(e1, 1) * col(e2, 2) - col(e1, 2) * col(e2, 1);
    Var fny = col(e1, 2) * col(e2, 0) - col(e1, 0) * col(e2, 2);
    Var fnz = col(e1, 0) * col(e2, 1) - col(e1, 1) * col(e2, 0);

    // per-vertex incident faces, padded to the max valence and masked; sorted
    // by vertex triple so the accumulation order is independent of the
    // triangle list order
    std::vector<std::vector<int64_t>> incident(static_cast<size_t>(n));
    for (int64_t t = 0; t < ntri; ++t) {
        incident[static_cast<size_t>(c0[t])].push_back(t);
        incident[static_cast<size_t>(c1[t])].push_back(t);
        incident[static_cast<size_t>(c2[t])].push_back(t);
    }
    for (auto& inc : incident)
        std::sort(inc.begin(), inc.end(), [&](int64_t a, int64_t b) {
            const int32_t* ta = &mesh.triangles[static_cast<size_t>(a) * 3];
            const int32_t* tb = &mesh.triangles[static_cast<size_t>(b) * 3];
            return std::lexicographical_compare(ta, ta + 3, tb, tb + 3);
        });
    size_t valence = 1;
    for (const auto& v : incident) valence = std::max(valence, v.size());
    std::vector<int64_t> slots;
    std::vector<double> mask;
    slots.reserve(static_cast<size_t>(n) * valence);
    int isolated = 0;
    for (int64_t i = 0; i < n; ++i) {
        const auto& inc = incident[static_cast<size_t>(i)];
        if (inc.empty()) ++isolated;
        for (size_t s = 0; s < valence; ++s) {
            slots.push_back(s < inc.size() ? inc[s] : 0);
            mask.push_back(s < inc.size() ? 1.0 : 0.0);
        }
    }
    if (isolated_count) *isolated_count = isolated;

    const Shape slot_shape{n, static_cast<int64_t>(valence)};
    Var mask_c = tape.constant(Array(slot_shape, mask));
    auto accumulate = [&](Var fcomp) { // (T,1) -> (N,1)
        Var flat = tape.reshape(fcomp, {ntri});
        Var gathered = tape.gather(flat, slots, slot_shape);
        Var summed = tape.sum(gathered * mask_c, 1); // (N,)
        return tape.reshape(summed, {n, 1});
    };
    Var nx = accumulate(fnx);
    Var ny = accumulate(fny);
    Var nz = accumulate(fnz);

    Var ex = tape.constant(Array({3}, {1.0, 0.0, 0.0}));
    Var ey = tape.constant(Array({3}, {0.0, 1.0, 0.0}));
    Var ez = tape.constant(Array({3}, {0.0, 0.0, 1.0}));
    Var acc = nx * ex + ny * ey + nz * ez; // (N,3)

    Var norm = tape.reshape(ad::sqrt(tape.sum(ad::square(acc), 1)), {n, 1});
    // the tiny bias keeps isolated vertices at an exact zero normal
    return acc / (norm + 1e-30);
}

ShadeResult shade(Tape& tape, const RasterMap& raster, const std::vector<int32_t>& triangles,
                  Var vertex_colors, Var normals, Var vertices, const Projection& proj,
                  Var cam7, Var light9, const RenderOptions& opts) {
    ShadeResult out;
    out.pixel_ids = raster.covered_pixels();
    const int64_t p = static_cast<int64_t>(out.pixel_ids.size());
    if (p == 0) {
        out.pixels = tape.constant(Array({0, 3}));
        return out;
    }

    std::vector<int64_t> r0(p), r1(p), r2(p);
    std::vector<double> cx(p), cy(p);
    for (int64_t i = 0; i < p; ++i) {
        const int64_t pix = out.pixel_ids[i];
        const int32_t t = raster.tri[pix];
        r0[i] = triangles[static_cast<size_t>(t) * 3];
        r1[i] = triangles[static_cast<size_t>(t) * 3 + 1];
        r2[i] = triangles[static_cast<size_t>(t) * 3 + 2];
        cx[i] = static_cast<double>(pix % raster.w) + 0.5;
        cy[i] = static_cast<double>(pix / raster.w) + 0.5;
    }

    // per-pixel corner screen coordinates; proj.x/proj.y are (N,1) so the
    // flat index is the vertex id
    auto pick = [&](Var coord, const std::vector<int64_t>& rows) {
        return tape.gather(coord, rows, {p, 1});
    };
    Var x0 = pick(proj.x, r0), y0 = pick(proj.y, r0);
    Var x1 = pick(proj.x, r1), y1 = pick(proj.y, r1);
    Var x2 = pick(proj.x, r2), y2 = pick(proj.y, r2);
    Var pcx = tape.constant(Array({p, 1}, std::move(cx)));
    Var pcy = tape.constant(Array({p, 1}, std::move(cy)));

    // barycentrics recomputed differentiably; they sum to one by construction
    Var e0 = (x2 - x1) * (pcy - y1) - (y2 - y1) * (pcx - x1);
    Var e1 = (x0 - x2) * (pcy - y2) - (y0 - y2) * (pcx - x2);
    Var e2 = (x1 - x0) * (pcy - y0) - (y1 - y0) * (pcx - x0);
    Var area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
    Var w0 = e0 / area2;
    Var w1 = e1 / area2;
    Var w2 = e2 / area2;

    auto interp = [&](Var attr) {
        Var a0 = ad::take_rows(attr, r0);
        Var a1 = ad::take_rows(attr, r1);
        Var a2 = ad::take_rows(attr, r2);
        return w0 * a0 + w1 * a1 + w2 * a2; // (P,3)
    };
    auto normalize_rows = [&](Var m) {
        Var nrm = tape.reshape(ad::sqrt(tape.sum(ad::square(m), 1)), {p, 1});
        return m / (nrm + 1e-30);
    };

    Var albedo = interp(vertex_colors);
    Var normal = normalize_rows(interp(normals));
    Var position = interp(vertices);

    Var light_pos = tape.slice(light9, 0, 0, 3);
    Var light_color = tape.slice(light9, 0, 3, 3);
    Var ambient = tape.slice(light9, 0, 6, 3);
    Var cam_pos = tape.slice(cam7, 0, 0, 3);

    Var l = normalize_rows(light_pos - position);
    Var ndotl = tape.reshape(tape.sum(normal * l, 1), {p, 1});
    Var diffuse = tape.relu(ndotl);
    Var reflect = 2.0 * ndotl * normal - l;
    Var view = normalize_rows(cam_pos - position);
    Var rdotv = tape.relu(tape.reshape(tape.sum(reflect * view, 1), {p, 1}));
    Var spec = tape.pow(rdotv, opts.specular_exponent);

    out.pixels = albedo * (ambient + light_color * diffuse) +
                 opts.specular_strength * (light_color * spec);
    return out;
}

Image materialize(const RasterMap& raster, const Array& shaded,
                  const std::vector<int64_t>& pixel_ids, double background) {
    Image img(raster.h, raster.w, 3);
    for (double& v : img.px) v = background;
    for (size_t i = 0; i < pixel_ids.size(); ++i) {
        const int64_t pix = pixel_ids[i];
        for (int ch = 0; ch < 3; ++ch)
            img.px[static_cast<size_t>(pix) * 3 + ch] = shaded[static_cast<int64_t>(i) * 3 + ch];
    }
    return img;
}

Image RenderGraph::image(double background) const {
    return materialize(raster, shaded.pixels.val(), shaded.pixel_ids, background);
}

ad::Array RenderGraph::landmarks() const {
    const int64_t n = landmarks_x.shape()[0];
    Array lm({n, 2});
    for (int64_t i = 0; i < n; ++i) {
        lm[i * 2] = landmarks_x.val()[i];
        lm[i * 2 + 1] = landmarks_y.val()[i];
    }
    return lm;
}

RenderGraph render_graph(Tape& tape, const MorphableModel& model, Var p_s, Var p_e, Var uv_image,
                         Var cam7, Var light9, const RenderOptions& opts) {
    RenderGraph g;
    Var verts = shape_vertices(tape, model, p_s, p_e);
    g.proj = project_vertices(tape, verts, cam7, opts);
    g.raster = rasterize(g.proj, model.mesh.triangles, opts);
    Var colors = sample_uv(tape, uv_image, model.mesh.uv);
    Var normals = vertex_normals(tape, verts, model.mesh);
    g.shaded = shade(tape, g.raster, model.mesh.triangles, colors, normals, verts,
                     g.proj, cam7, light9, opts);

    const std::vector<int64_t> lm(model.mesh.landmarks.begin(), model.mesh.landmarks.end());
    g.landmarks_x = tape.gather(g.proj.x, lm, {static_cast<int64_t>(lm.size()), 1});
    g.landmarks_y = tape.gather(g.proj.y, lm, {static_cast<int64_t>(lm.size()), 1});
    return g;
}

RenderResult render(const MorphableModel& model, const TextureDecoder* decoder,
                    const Array& p_s, const Array& p_e, const Array& p_t, const Array& p_c,
                    const Array& p_l, const RenderOptions& opts) {
    Tape tape;
    Var ps = tape.constant(p_s);
    Var pe = tape.constant(p_e);
    Var pt = tape.constant(p_t);
    Var pc = tape.constant(p_c);
    Var pl = tape.constant(p_l);
    Var uv = decoder ? decoder->generate(tape, pt)
                     : texture_pca(tape, model.texture, pt, model.uv_h, model.uv_w);
    RenderGraph g = render_graph(tape, model, ps, pe, uv, pc, pl, opts);
    RenderResult res;
    res.image = g.image(opts.background);
    res.landmarks = g.landmarks();
    res.raster = std::move(g.raster);
    return res;
}

CameraParams sample_camera(Rng& rng, const SecondaryDist& dist) {
    const double deg = M_PI / 180.0;
    const double d = rng.normal(dist.distance_mu, dist.distance_sigma);
    const double az = rng.normal(0.0, dist.azimuth_sigma_deg) * deg;
    const double el = rng.normal(0.0, dist.elevation_sigma_deg) * deg;
    const double f = rng.normal(dist.focal_mu, dist.focal_sigma);
    CameraParams cam;
    cam.pos[0] = d * std::sin(az) * std::cos(el);
    cam.pos[1] = d * std::sin(el);
    cam.pos[2] = d * std::cos(az) * std::cos(el);
    for (double& t : cam.target) t = 0.0;
    cam.focal = std::max(1.0, f);
    return cam;
}

LightParams sample_light(Rng& rng, const SecondaryDist& dist) {
    LightParams l;
    for (int i = 0; i < 3; ++i) l.pos[i] = rng.normal(dist.light_pos_mu[i], dist.light_pos_sigma);
    for (int i = 0; i < 3; ++i)
        l.color[i] = std::max(0.0, rng.normal(dist.light_color_mu, dist.light_color_sigma));
    for (int i = 0; i < 3; ++i)
        l.ambient[i] = std::max(0.0, rng.normal(dist.ambient_mu, dist.ambient_sigma));
    return l;
}

RenderResult render_random(const MorphableModel& model, const TextureDecoder* decoder,
                           const Array& p_s, const Array& p_t, Rng& rng,
                           const RenderOptions& opts, const SecondaryDist& dist,
                           SecondarySample* sample_out) {
    const int64_t n_e = model.expression.components();
    Array p_e({n_e});
    for (int64_t i = 0; i < n_e; ++i) p_e[i] = rng.normal(0.0, dist.expr_sigma);

    // bounding sphere of the deformed mesh for the camera rejection test
    const Array verts = shape_vertices(model, Array::zeros({model.shape.components()}), p_e);
    double center[3] = {0, 0, 0};
    const int64_t n = verts.shape()[0];
    for (int64_t i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) center[k] += verts.at(i, k);
    for (double& c : center) c /= static_cast<double>(n);
    double radius2 = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double d = verts.at(i, k) - center[k];
            d2 += d * d;
        }
        radius2 = std::max(radius2, d2);
    }

    CameraParams cam;
    bool ok = false;
    for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
        cam = sample_camera(rng, dist);
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double d = cam.pos[k] - center[k];
            d2 += d * d;
        }
        ok = d2 > radius2;
    }
    if (!ok) fail("render_random: sampled camera stayed inside the mesh bounding sphere");
    const LightParams light = sample_light(rng, dist);

    if (sample_out) {
        sample_out->p_e = p_e;
        sample_out->p_c = cam.pack();
        sample_out->p_l = light.pack();
    }
    return render(model, decoder, p_s, p_e, p_t, cam.pack(), light.pack(), opts);
}

} // namespace facefit
