#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "facefit/error.hpp"
#include "facefit/gradcheck.hpp"
#include "facefit/renderer.hpp"
#include "facefit/rng.hpp"

using namespace facefit;
using ad::Array;
using ad::Tape;
using ad::Var;

namespace {

SynthModelConfig small_cfg() {
    SynthModelConfig cfg;
    cfg.vertex_count = 120;
    cfg.shape_components = 6;
    cfg.expression_components = 3;
    cfg.texture_components = 5;
    cfg.uv_size = 16;
    return cfg;
}

Projection project_plain(const std::vector<double>& verts, const CameraParams& cam,
                         Tape& tape, const RenderOptions& opts) {
    const int64_t n = static_cast<int64_t>(verts.size()) / 3;
    Var v = tape.constant(Array({n, 3}, verts));
    Var c = tape.constant(cam.pack());
    return project_vertices(tape, v, c, opts);
}

// Independent scalar projection: orthonormal look-at basis and perspective
// divide, written without the tape.
void project_ref(const double v[3], const CameraParams& cam, int w, int h, double* out_xy) {
    double fwd[3], right[3], up[3];
    double norm = 0;
    for (int k = 0; k < 3; ++k) {
        fwd[k] = cam.target[k] - cam.pos[k];
        norm += fwd[k] * fwd[k];
    }
    norm = std::sqrt(norm);
    for (double& f : fwd) f /= norm;
    const double upw[3] = {0, 1, 0};
    right[0] = fwd[1] * upw[2] - fwd[2] * upw[1];
    right[1] = fwd[2] * upw[0] - fwd[0] * upw[2];
    right[2] = fwd[0] * upw[1] - fwd[1] * upw[0];
    norm = std::sqrt(right[0] * right[0] + right[1] * right[1] + right[2] * right[2]);
    for (double& r : right) r /= norm;
    up[0] = right[1] * fwd[2] - right[2] * fwd[1];
    up[1] = right[2] * fwd[0] - right[0] * fwd[2];
    up[2] = right[0] * fwd[1] - right[1] * fwd[0];
    double d[3];
    for (int k = 0; k < 3; ++k) d[k] = v[k] - cam.pos[k];
    const double qr = d[0] * right[0] + d[1] * right[1] + d[2] * right[2];
    const double qu = d[0] * up[0] + d[1] * up[1] + d[2] * up[2];
    const double qz = d[0] * fwd[0] + d[1] * fwd[1] + d[2] * fwd[2];
    out_xy[0] = 0.5 * w + cam.focal * qr / qz;
    out_xy[1] = 0.5 * h - cam.focal * qu / qz;
}

// All-triangles point-in-triangle scan used as the rasterization oracle.
// Same fill-rule convention, written independently of the production path.
int32_t raster_ref_winner(const std::vector<double>& px, const std::vector<double>& py,
                          const std::vector<double>& pz, const std::vector<int32_t>& tris,
                          double cx, double cy, bool cull) {
    int32_t best = -1;
    double best_depth = std::numeric_limits<double>::infinity();
    const int64_t nt = static_cast<int64_t>(tris.size()) / 3;
    for (int64_t t = 0; t < nt; ++t) {
        int i0 = tris[t * 3], i1 = tris[t * 3 + 1], i2 = tris[t * 3 + 2];
        double area2 = (px[i1] - px[i0]) * (py[i2] - py[i0]) -
                       (py[i1] - py[i0]) * (px[i2] - px[i0]);
        if (area2 == 0.0) continue;
        if (area2 > 0.0) {
            if (cull) continue;
            std::swap(i1, i2);
            area2 = -area2;
        }
        auto edge = [&](int a, int b) {
            return (px[b] - px[a]) * (cy - py[a]) - (py[b] - py[a]) * (cx - px[a]);
        };
        auto tl = [&](int a, int b) {
            const double ex = px[b] - px[a], ey = py[b] - py[a];
            return ey > 0.0 || (ey == 0.0 && ex < 0.0);
        };
        const double e0 = edge(i1, i2), e1 = edge(i2, i0), e2 = edge(i0, i1);
        const bool in = (e0 < 0 || (e0 == 0 && tl(i1, i2))) && (e1 < 0 || (e1 == 0 && tl(i2, i0))) &&
                        (e2 < 0 || (e2 == 0 && tl(i0, i1)));
        if (!in) continue;
        const double depth = (e0 * pz[i0] + e1 * pz[i1] + e2 * pz[i2]) / area2;
        if (depth <= 0) continue;
        if (depth < best_depth || (depth == best_depth && static_cast<int32_t>(t) < best)) {
            best_depth = depth;
            best = static_cast<int32_t>(t);
        }
    }
    return best;
}

} // namespace

TEST_CASE("camera/light parameter blocks round-trip through pack/unpack") {
    CameraParams cam;
    cam.pos[0] = 1.5;
    cam.focal = 42.0;
    CameraParams back = CameraParams::unpack(cam.pack());
    CHECK(back.pos[0] == 1.5);
    CHECK(back.focal == 42.0);
    LightParams l;
    l.ambient[2] = 0.9;
    CHECK(LightParams::unpack(l.pack()).ambient[2] == 0.9);
}

TEST_CASE("the look-at target projects to the image center") {
    Tape tape;
    RenderOptions opts;
    CameraParams cam;
    cam.pos[0] = 1.3;
    cam.pos[1] = -0.4;
    cam.pos[2] = 4.0;
    cam.target[0] = 0.2;
    cam.target[1] = 0.1;
    cam.target[2] = -0.3;
    Projection proj = project_plain({0.2, 0.1, -0.3}, cam, tape, opts);
    CHECK(proj.px[0] == doctest::Approx(32.0).epsilon(1e-12));
    CHECK(proj.py[0] == doctest::Approx(32.0).epsilon(1e-12));
}

TEST_CASE("doubling focal length doubles the offset from center") {
    RenderOptions opts;
    CameraParams cam;
    cam.focal = 80.0;
    Tape t1, t2;
    Projection p1 = project_plain({0.7, -0.3, 0.2}, cam, t1, opts);
    cam.focal = 160.0;
    Projection p2 = project_plain({0.7, -0.3, 0.2}, cam, t2, opts);
    CHECK(p2.px[0] - 32.0 == doctest::Approx(2.0 * (p1.px[0] - 32.0)).epsilon(1e-12));
    CHECK(p2.py[0] - 32.0 == doctest::Approx(2.0 * (p1.py[0] - 32.0)).epsilon(1e-12));
}

TEST_CASE("projection matches the scalar oracle") {
    RenderOptions opts;
    CameraParams cam; // (0,0,5) looking at the origin, f=100
    Tape tape;
    Projection proj = project_plain({1.0, 0.0, 0.0}, cam, tape, opts);
    double ref[2];
    const double v[3] = {1.0, 0.0, 0.0};
    project_ref(v, cam, 64, 64, ref);
    CHECK(proj.px[0] == doctest::Approx(ref[0]).epsilon(1e-14));
    CHECK(proj.py[0] == doctest::Approx(ref[1]).epsilon(1e-14));
    CHECK(proj.px[0] == doctest::Approx(52.0).epsilon(1e-12)); // 32 + 100 * 1/5
    CHECK(proj.py[0] == doctest::Approx(32.0).epsilon(1e-12));

    // a batch of random vertices and a tilted camera
    Rng rng(3);
    CameraParams cam2;
    cam2.pos[0] = 1.0;
    cam2.pos[1] = 0.8;
    cam2.pos[2] = 4.2;
    cam2.target[0] = -0.1;
    cam2.target[1] = 0.2;
    cam2.target[2] = 0.05;
    cam2.focal = 90.0;
    std::vector<double> verts;
    for (int i = 0; i < 30; ++i) verts.push_back(rng.uniform(-1.0, 1.0));
    Tape tape2;
    Projection proj2 = project_plain(verts, cam2, tape2, opts);
    for (int i = 0; i < 10; ++i) {
        double r[2];
        project_ref(&verts[i * 3], cam2, 64, 64, r);
        CHECK(proj2.px[i] == doctest::Approx(r[0]).epsilon(1e-12));
        CHECK(proj2.py[i] == doctest::Approx(r[1]).epsilon(1e-12));
    }
}

TEST_CASE("degenerate cameras are rejected") {
    RenderOptions opts;
    Tape t1;
    CameraParams cam;
    for (int k = 0; k < 3; ++k) cam.target[k] = cam.pos[k];
    CHECK_THROWS_AS((void)project_plain({0, 0, 0}, cam, t1, opts), Error);

    Tape t2;
    CameraParams cam2; // looking straight down: parallel to up
    cam2.pos[0] = 0;
    cam2.pos[1] = 5;
    cam2.pos[2] = 0;
    CHECK_THROWS_AS((void)project_plain({1, 0, 0}, cam2, t2, opts), Error);

    Tape t3;
    CameraParams cam3; // vertex exactly at the camera depth plane
    CHECK_THROWS_AS((void)project_plain({0.0, 0.0, 5.0}, cam3, t3, opts), Error);
}

TEST_CASE("single full-screen triangle covers every pixel") {
    RenderOptions opts;
    opts.width = opts.height = 16;
    // y-down screen winding with negative signed area (front-facing)
    std::vector<double> px = {-20.0, 60.0, -20.0};
    std::vector<double> py = {-20.0, -20.0, 60.0};
    std::vector<double> pz = {1.0, 1.0, 1.0};
    // winding check: area2 = (60)*(60) - 0 = positive -> swap to make it front
    std::vector<int32_t> tris = {0, 2, 1};
    RasterMap map = rasterize_plain(px, py, pz, {0, 0, 0}, tris, 16, 16, true);
    CHECK(map.covered() == 16 * 16);
    for (size_t i = 0; i < map.tri.size(); ++i) {
        CHECK(map.tri[i] == 0);
        const double wsum = map.bary[i * 3] + map.bary[i * 3 + 1] + map.bary[i * 3 + 2];
        CHECK(std::abs(wsum - 1.0) < 1e-9);
    }
}

TEST_CASE("nearer of two stacked triangles wins the z-buffer") {
    std::vector<double> px = {-20, 40, -20, -20, 40, -20};
    std::vector<double> py = {-20, -20, 40, -20, -20, 40};
    std::vector<double> pz = {2.0, 2.0, 2.0, 1.0, 1.0, 1.0};
    std::vector<int32_t> tris = {0, 2, 1, 3, 5, 4};
    RasterMap map = rasterize_plain(px, py, pz, std::vector<char>(6, 0), tris, 8, 8, true);
    for (size_t i = 0; i < map.tri.size(); ++i) CHECK(map.tri[i] == 1);
}

TEST_CASE("two triangles sharing an edge cover each pixel exactly once") {
    // quad split along the diagonal; the shared edge must not double-cover
    std::vector<double> px = {2.0, 14.0, 2.0, 14.0};
    std::vector<double> py = {2.0, 2.0, 14.0, 14.0};
    std::vector<double> pz = {1, 1, 1, 1};
    std::vector<int32_t> tris = {0, 2, 1, 1, 2, 3};
    RasterMap a = rasterize_plain(px, py, pz, std::vector<char>(4, 0), tris, 16, 16, true);
    std::vector<int32_t> tris_only_first = {0, 2, 1};
    std::vector<int32_t> tris_only_second = {1, 2, 3};
    RasterMap b = rasterize_plain(px, py, pz, std::vector<char>(4, 0), tris_only_first, 16, 16, true);
    RasterMap c = rasterize_plain(px, py, pz, std::vector<char>(4, 0), tris_only_second, 16, 16, true);
    CHECK(a.covered() == b.covered() + c.covered());
    for (size_t i = 0; i < a.tri.size(); ++i) {
        const bool in_b = b.tri[i] >= 0, in_c = c.tri[i] >= 0;
        CHECK_FALSE((in_b && in_c)); // fill rule assigns boundary pixels once
        CHECK((a.tri[i] >= 0) == (in_b || in_c));
    }
}

TEST_CASE("random scenes match the brute-force rasterization oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 8; ++trial) {
        const int n = 12;
        std::vector<double> px(n), py(n), pz(n);
        for (int i = 0; i < n; ++i) {
            px[i] = rng.uniform(-4.0, 20.0);
            py[i] = rng.uniform(-4.0, 20.0);
            pz[i] = rng.uniform(0.5, 4.0);
        }
        std::vector<int32_t> tris;
        std::vector<std::array<int, 3>> seen;
        for (int t = 0; t < 8; ++t) {
            int a = static_cast<int>(rng.uniform_int(n));
            int b = static_cast<int>(rng.uniform_int(n));
            int c = static_cast<int>(rng.uniform_int(n));
            if (a == b || b == c || a == c) continue;
            std::array<int, 3> key = {a, b, c};
            std::sort(key.begin(), key.end());
            if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
            seen.push_back(key);
            tris.insert(tris.end(), {a, b, c});
        }
        const bool cull = trial % 2 == 0;
        RasterMap map = rasterize_plain(px, py, pz, std::vector<char>(n, 0), tris, 16, 16, cull);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                const int32_t ref =
                    raster_ref_winner(px, py, pz, tris, x + 0.5, y + 0.5, cull);
                CHECK(map.tri[static_cast<size_t>(y) * 16 + x] == ref);
            }
    }
}

TEST_CASE("flat square normals point along +z") {
    Mesh mesh;
    mesh.vertices = {0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0};
    mesh.triangles = {0, 1, 2, 1, 3, 2}; // counter-clockwise from +z
    Tape tape;
    Var v = tape.constant(Array({4, 3}, mesh.vertices));
    Var n = vertex_normals(tape, v, mesh);
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(n.val().at(i, 0) == doctest::Approx(0.0));
        CHECK(n.val().at(i, 1) == doctest::Approx(0.0));
        CHECK(n.val().at(i, 2) == doctest::Approx(1.0));
    }
}

TEST_CASE("octahedron vertex normals point radially outward") {
    Mesh mesh;
    mesh.vertices = {1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1};
    // outward-facing winding
    mesh.triangles = {0, 2, 4, 2, 1, 4, 1, 3, 4, 3, 0, 4,
                      2, 0, 5, 1, 2, 5, 3, 1, 5, 0, 3, 5};
    Tape tape;
    Var v = tape.constant(Array({6, 3}, mesh.vertices));
    Var n = vertex_normals(tape, v, mesh);
    for (int64_t i = 0; i < 6; ++i) {
        for (int k = 0; k < 3; ++k) {
            const double expect = mesh.vertices[i * 3 + k]; // unit radial direction
            CHECK(n.val().at(i, k) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("isolated vertices get flagged zero normals") {
    Mesh mesh;
    mesh.vertices = {0, 0, 0, 1, 0, 0, 0, 1, 0, 5, 5, 5};
    mesh.triangles = {0, 1, 2};
    Tape tape;
    int isolated = 0;
    Var n = vertex_normals(tape, tape.constant(Array({4, 3}, mesh.vertices)), mesh, &isolated);
    CHECK(isolated == 1);
    for (int k = 0; k < 3; ++k) CHECK(n.val().at(3, k) == 0.0);
}

TEST_CASE("vertex normal gradients match finite differences") {
    MorphableModel m = synth_model(2, small_cfg());
    Rng rng(5);
    Array vflat({m.vertex_count() * 3}, m.mesh.vertices);
    auto f = [&](Tape& t, const std::vector<Var>& in) {
        Var verts = t.reshape(in[0], {m.vertex_count(), 3});
        Var n = vertex_normals(t, verts, m.mesh);
        Array w({m.vertex_count(), 3});
        Rng wr(7);
        for (int64_t i = 0; i < w.numel(); ++i) w[i] = wr.uniform(-1, 1);
        return t.sum(n * t.constant(w));
    };
    // probe a handful of coordinates only; full sweeps are slow
    Rng pick(13);
    std::vector<char> probe(static_cast<size_t>(vflat.numel()), 0);
    for (int i = 0; i < 12; ++i) probe[static_cast<size_t>(pick.uniform_int(vflat.numel()))] = 1;
    auto res = ad::check_gradient(
        f, {vflat}, 1e-5, [&](int, int64_t j) { return probe[static_cast<size_t>(j)] == 0; });
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("ambient-only shading returns the interpolated albedo") {
    MorphableModel m = synth_model(4, small_cfg());
    LightParams light;
    for (double& c : light.color) c = 0.0;
    for (double& a : light.ambient) a = 1.0;
    RenderOptions opts;
    opts.specular_strength = 0.0;

    const Array p_s = Array::zeros({6}), p_e = Array::zeros({3}), p_t = Array::zeros({5});
    CameraParams cam;
    RenderResult r = render(m, nullptr, p_s, p_e, p_t, cam.pack(), light.pack(), opts);

    // against a direct barycentric interpolation of sampled vertex colors
    const Array colors = sample_uv(
        texture_pca_image(m.texture, p_t, 16, 16).to_array(), m.mesh.uv);
    int64_t checked = 0;
    for (int y = 0; y < opts.height && checked < 200; ++y)
        for (int x = 0; x < opts.width && checked < 200; ++x) {
            const size_t pix = static_cast<size_t>(y) * opts.width + x;
            if (r.raster.tri[pix] < 0) continue;
            const int32_t t = r.raster.tri[pix];
            double expect[3] = {0, 0, 0};
            for (int k = 0; k < 3; ++k) {
                const int32_t vid = m.mesh.triangles[t * 3 + k];
                for (int ch = 0; ch < 3; ++ch)
                    expect[ch] += r.raster.bary[pix * 3 + k] * colors.at(vid, ch);
            }
            for (int ch = 0; ch < 3; ++ch)
                CHECK(r.image.px[pix * 3 + ch] == doctest::Approx(expect[ch]).epsilon(1e-9));
            ++checked;
        }
    CHECK(checked > 50);
}

TEST_CASE("lambert term is zero when the normal is orthogonal to the light") {
    // one pixel, hand-picked geometry: a small triangle in the z=0 plane,
    // normal +z, light in the plane (z=0 direction from the surface)
    Mesh mesh;
    mesh.vertices = {-2, -2, 0, 2, -2, 0, 0, 3, 0};
    mesh.triangles = {0, 1, 2};
    mesh.uv = {0.1, 0.1, 0.9, 0.1, 0.5, 0.9};
    mesh.landmarks.assign(68, 0);

    Tape tape;
    RenderOptions opts;
    opts.width = opts.height = 8;
    opts.specular_strength = 0.0;
    CameraParams cam;
    LightParams light;
    light.pos[0] = 50.0; // in the z=0 plane, far away
    light.pos[1] = 0.0;
    light.pos[2] = 0.0;
    for (double& a : light.ambient) a = 0.0;

    Var verts = tape.constant(Array({3, 3}, mesh.vertices));
    Projection proj = project_vertices(tape, verts, tape.constant(cam.pack()), opts);
    RasterMap raster = rasterize(proj, mesh.triangles, opts);
    REQUIRE(raster.covered() > 0);
    Var colors = tape.constant(Array::full({3, 3}, 0.7));
    Var normals = vertex_normals(tape, verts, mesh);
    ShadeResult sr = shade(tape, raster, mesh.triangles, colors, normals, verts, proj,
                           tape.constant(cam.pack()), tape.constant(light.pack()), opts);
    // light direction from any surface point is (50-x, -y, 0): n.l == 0
    for (int64_t i = 0; i < sr.pixels.numel(); ++i)
        CHECK(std::abs(sr.pixels.val()[i]) < 1e-12);
}

TEST_CASE("one covered pixel matches a scalar phong evaluation") {
    Mesh mesh;
    mesh.vertices = {-4, -4, 0, 4, -4, 0, 0, 6, 0};
    mesh.triangles = {0, 1, 2};
    mesh.uv = {0.2, 0.2, 0.8, 0.2, 0.5, 0.8};

    Tape tape;
    RenderOptions opts;
    opts.width = opts.height = 8;
    CameraParams cam;
    LightParams light;
    light.pos[0] = 1.0;
    light.pos[1] = 2.0;
    light.pos[2] = 6.0;
    light.color[0] = 0.9;
    light.color[1] = 0.7;
    light.color[2] = 0.5;
    light.ambient[0] = 0.2;
    light.ambient[1] = 0.25;
    light.ambient[2] = 0.3;

    Var verts = tape.constant(Array({3, 3}, mesh.vertices));
    Projection proj = project_vertices(tape, verts, tape.constant(cam.pack()), opts);
    RasterMap raster = rasterize(proj, mesh.triangles, opts);
    REQUIRE(raster.covered() > 0);

    Array colarr({3, 3}, {0.8, 0.5, 0.3, 0.6, 0.7, 0.2, 0.4, 0.9, 0.6});
    Var colors = tape.constant(colarr);
    Var normals = vertex_normals(tape, verts, mesh);
    ShadeResult sr = shade(tape, raster, mesh.triangles, colors, normals, verts, proj,
                           tape.constant(cam.pack()), tape.constant(light.pack()), opts);

    const int64_t pix = sr.pixel_ids[0];
    const double w0 = raster.bary[pix * 3], w1 = raster.bary[pix * 3 + 1],
                 w2 = raster.bary[pix * 3 + 2];

    // independent scalar phong: interpolate attributes, n=(0,0,1) on a flat
    // triangle, then ambient + diffuse + specular
    double cpt[3], xpt[3] = {0, 0, 0};
    for (int ch = 0; ch < 3; ++ch)
        cpt[ch] = w0 * colarr.at(0, ch) + w1 * colarr.at(1, ch) + w2 * colarr.at(2, ch);
    for (int k = 0; k < 3; ++k)
        xpt[k] = w0 * mesh.vertices[0 * 3 + k] + w1 * mesh.vertices[1 * 3 + k] +
                 w2 * mesh.vertices[2 * 3 + k];
    const double n[3] = {0, 0, 1};
    double l[3], v[3];
    double ln = 0, vn = 0;
    for (int k = 0; k < 3; ++k) {
        l[k] = light.pos[k] - xpt[k];
        ln += l[k] * l[k];
        v[k] = cam.pos[k] - xpt[k];
        vn += v[k] * v[k];
    }
    ln = std::sqrt(ln);
    vn = std::sqrt(vn);
    for (int k = 0; k < 3; ++k) {
        l[k] /= ln;
        v[k] /= vn;
    }
    const double ndotl = std::max(0.0, n[0] * l[0] + n[1] * l[1] + n[2] * l[2]);
    double r[3];
    for (int k = 0; k < 3; ++k) r[k] = 2.0 * ndotl * n[k] - l[k];
    const double rdotv = std::max(0.0, r[0] * v[0] + r[1] * v[1] + r[2] * v[2]);
    const double spec = std::pow(rdotv, 8.0);
    for (int ch = 0; ch < 3; ++ch) {
        const double expect =
            cpt[ch] * (light.ambient[ch] + light.color[ch] * ndotl) + 0.2 * light.color[ch] * spec;
        CHECK(sr.pixels.val()[0 * 3 + ch] == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("rendering the same parameters twice is bit-identical") {
    MorphableModel m = synth_model(0, small_cfg());
    TextureDecoder d = TextureDecoder::make(0, 12, 16);
    Rng rng(9);
    Array p_s({6}), p_e({3}), p_t({12});
    for (int64_t i = 0; i < 6; ++i) p_s[i] = rng.normal(0, 0.5);
    for (int64_t i = 0; i < 3; ++i) p_e[i] = rng.normal(0, 0.3);
    for (int64_t i = 0; i < 12; ++i) p_t[i] = rng.normal();
    RenderOptions opts;
    CameraParams cam;
    LightParams light;
    RenderResult a = render(m, &d, p_s, p_e, p_t, cam.pack(), light.pack(), opts);
    RenderResult b = render(m, &d, p_s, p_e, p_t, cam.pack(), light.pack(), opts);
    CHECK(a.image.px == b.image.px);
    CHECK(a.landmarks.vec() == b.landmarks.vec());
    CHECK(a.raster.covered() > 400); // the face actually fills a chunk of frame
}

TEST_CASE("rendering is invariant to triangle list permutation") {
    MorphableModel m = synth_model(0, small_cfg());
    const Array p_s = Array::zeros({6}), p_e = Array::zeros({3}), p_t = Array::zeros({5});
    RenderOptions opts;
    CameraParams cam;
    LightParams light;
    RenderResult a = render(m, nullptr, p_s, p_e, p_t, cam.pack(), light.pack(), opts);

    MorphableModel perm = m;
    const int64_t nt = m.mesh.triangle_count();
    std::vector<int64_t> order(nt);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(17);
    for (int64_t i = nt - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(i + 1)]);
    for (int64_t t = 0; t < nt; ++t)
        for (int k = 0; k < 3; ++k)
            perm.mesh.triangles[t * 3 + k] = m.mesh.triangles[order[t] * 3 + k];
    RenderResult b = render(perm, nullptr, p_s, p_e, p_t, cam.pack(), light.pack(), opts);
    CHECK(a.image.px == b.image.px);
}

TEST_CASE("weak-perspective: doubling distance and focal keeps the silhouette") {
    SynthModelConfig cfg = small_cfg();
    MorphableModel m = synth_model(1, cfg);
    const Array p_s = Array::zeros({6}), p_e = Array::zeros({3}), p_t = Array::zeros({5});
    RenderOptions opts;
    LightParams light;

    CameraParams near_cam;
    near_cam.pos[2] = 120.0;
    near_cam.focal = 2200.0;
    CameraParams far_cam = near_cam;
    far_cam.pos[2] = 240.0;
    far_cam.focal = 4400.0;

    RenderResult a = render(m, nullptr, p_s, p_e, p_t, near_cam.pack(), light.pack(), opts);
    RenderResult b = render(m, nullptr, p_s, p_e, p_t, far_cam.pack(), light.pack(), opts);
    REQUIRE(a.raster.covered() > 300);
    int flips = 0;
    for (size_t i = 0; i < a.raster.tri.size(); ++i)
        flips += (a.raster.tri[i] >= 0) != (b.raster.tri[i] >= 0);
    CHECK(flips <= static_cast<int>(0.01 * opts.width * opts.height));
}

TEST_CASE("covered barycentrics reconstruct the pixel center") {
    MorphableModel m = synth_model(3, small_cfg());
    const Array p_s = Array::zeros({6}), p_e = Array::zeros({3}), p_t = Array::zeros({5});
    RenderOptions opts;
    CameraParams cam;
    LightParams light;
    Tape tape;
    Var uv = texture_pca(tape, m.texture, tape.constant(p_t), 16, 16);
    RenderGraph g = render_graph(tape, m, tape.constant(p_s), tape.constant(p_e), uv,
                                 tape.constant(cam.pack()), tape.constant(light.pack()), opts);
    for (int y = 0; y < opts.height; ++y)
        for (int x = 0; x < opts.width; ++x) {
            const size_t pix = static_cast<size_t>(y) * opts.width + x;
            const int32_t t = g.raster.tri[pix];
            if (t < 0) continue;
            double rx = 0, ry = 0, wsum = 0;
            for (int k = 0; k < 3; ++k) {
                const int32_t vid = m.mesh.triangles[t * 3 + k];
                const double w = g.raster.bary[pix * 3 + k];
                rx += w * g.proj.px[vid];
                ry += w * g.proj.py[vid];
                wsum += w;
            }
            CHECK(std::abs(wsum - 1.0) < 1e-9);
            CHECK(std::abs(rx - (x + 0.5)) < 1e-6);
            CHECK(std::abs(ry - (y + 0.5)) < 1e-6);
        }
}

TEST_CASE("render_random is reproducible and respects a zero sigma") {
    MorphableModel m = synth_model(5, small_cfg());
    TextureDecoder d = TextureDecoder::make(5, 12, 16);
    const Array p_s = Array::zeros({6}), p_t = Array::zeros({12});
    RenderOptions opts;
    SecondaryDist dist;

    Rng r1(100), r2(100);
    SecondarySample s1, s2;
    RenderResult a = render_random(m, &d, p_s, p_t, r1, opts, dist, &s1);
    RenderResult b = render_random(m, &d, p_s, p_t, r2, opts, dist, &s2);
    CHECK(a.image.px == b.image.px);
    CHECK(s1.p_e.vec() == s2.p_e.vec());
    CHECK(s1.p_c.vec() == s2.p_c.vec());

    SecondaryDist frozen;
    frozen.expr_sigma = 0.0;
    Rng r3(7);
    SecondarySample s3;
    (void)render_random(m, &d, p_s, p_t, r3, opts, frozen, &s3);
    for (int64_t i = 0; i < s3.p_e.numel(); ++i) CHECK(s3.p_e[i] == 0.0);
}

TEST_CASE("sampled expression coordinates have the declared mean") {
    MorphableModel m = synth_model(6, small_cfg());
    SecondaryDist dist;
    Rng rng(31);
    double sum = 0.0;
    int64_t count = 0;
    for (int i = 0; i < 400; ++i) { // 400 draws x 3 coords > 1000 samples
        Array p_e({3});
        for (int64_t k = 0; k < 3; ++k) {
            p_e[k] = rng.normal(0.0, dist.expr_sigma);
            sum += p_e[k];
            ++count;
        }
    }
    CHECK(std::abs(sum / static_cast<double>(count)) < 0.05);
}
