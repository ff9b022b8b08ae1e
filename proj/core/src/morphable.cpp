#include "facefit/morphable.hpp"

#include <algorithm>
#include <cmath>

#include "facefit/container.hpp"
#include "facefit/error.hpp"
#include "facefit/rng.hpp"

namespace facefit {

using ad::Array;
using ad::Shape;
using ad::Tape;
using ad::Var;

void LinearModel::validate() const {
    if (basis.rank() != 2) fail("LinearModel: basis must be rank 2");
    if (basis.shape()[0] != dim()) fail("LinearModel: basis rows do not match mean length");
    if (basis.shape()[1] != components()) fail("LinearModel: basis columns do not match stdev length");
    for (int64_t k = 0; k < components(); ++k)
        if (!(stdev[k] > 0.0)) fail("LinearModel: non-positive stdev at component " + std::to_string(k));
}

namespace {

Var basis_offset(Tape& tape, const LinearModel& m, Var params, const char* what) {
    if (params.shape().size() != 1 || params.shape()[0] != m.components())
        fail(std::string(what) + ": parameter length " + ad::shape_str(params.shape()) +
             " does not match model components " + std::to_string(m.components()));
    Var basis = tape.constant(m.basis);
    Var col = tape.reshape(params, {m.components(), 1});
    return tape.reshape(tape.matmul(basis, col), {m.dim()});
}

} // namespace

Var shape_vertices(Tape& tape, const MorphableModel& model, Var p_s, Var p_e) {
    Var mean = tape.constant(model.shape.mean);
    Var s = basis_offset(tape, model.shape, p_s, "shape_vertices(identity)");
    Var e = basis_offset(tape, model.expression, p_e, "shape_vertices(expression)");
    return tape.reshape(mean + (s + e), {model.vertex_count(), 3});
}

Array shape_vertices(const MorphableModel& model, const Array& p_s, const Array& p_e) {
    Tape tape;
    return shape_vertices(tape, model, tape.leaf(p_s), tape.leaf(p_e)).val();
}

Var texture_pca(Tape& tape, const LinearModel& texture, Var p_t, int h, int w) {
    if (texture.dim() != static_cast<int64_t>(h) * w * 3)
        fail("texture_pca: model dimension does not match " + std::to_string(h) + "x" +
             std::to_string(w) + "x3");
    Var mean = tape.constant(texture.mean);
    Var flat = mean + basis_offset(tape, texture, p_t, "texture_pca");
    return tape.reshape(flat, {h, w, 3});
}

Image texture_pca_image(const LinearModel& texture, const Array& p_t, int h, int w) {
    Tape tape;
    Var img = texture_pca(tape, texture, tape.leaf(p_t), h, w);
    Var clamped = tape.clamp(img, 0.0, 1.0);
    return Image::from_array(clamped.val());
}

Var sample_uv(Tape& tape, Var uv_image, const std::vector<double>& uv) {
    const Shape& s = uv_image.shape();
    if (s.size() != 3) fail("sample_uv: image must be rank 3, got " + ad::shape_str(s));
    const int64_t h = s[0], w = s[1], c = s[2];
    const int64_t n = static_cast<int64_t>(uv.size()) / 2;

    std::vector<int64_t> idx00, idx01, idx10, idx11;
    std::vector<double> w00, w01, w10, w11;
    idx00.reserve(n * c);
    for (int64_t i = 0; i < n; ++i) {
        const double u = uv[i * 2], v = uv[i * 2 + 1];
        if (!(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0))
            fail("sample_uv: uv (" + std::to_string(u) + "," + std::to_string(v) +
                 ") outside [0,1]^2 at vertex " + std::to_string(i));
        const double x = u * static_cast<double>(w) - 0.5;
        const double y = v * static_cast<double>(h) - 0.5;
        const double xf = std::floor(x), yf = std::floor(y);
        const double fx = x - xf, fy = y - yf;
        const int64_t x0 = std::clamp(static_cast<int64_t>(xf), int64_t{0}, w - 1);
        const int64_t x1 = std::clamp(static_cast<int64_t>(xf) + 1, int64_t{0}, w - 1);
        const int64_t y0 = std::clamp(static_cast<int64_t>(yf), int64_t{0}, h - 1);
        const int64_t y1 = std::clamp(static_cast<int64_t>(yf) + 1, int64_t{0}, h - 1);
        for (int64_t ch = 0; ch < c; ++ch) {
            idx00.push_back((y0 * w + x0) * c + ch);
            idx01.push_back((y0 * w + x1) * c + ch);
            idx10.push_back((y1 * w + x0) * c + ch);
            idx11.push_back((y1 * w + x1) * c + ch);
        }
        w00.push_back((1.0 - fy) * (1.0 - fx));
        w01.push_back((1.0 - fy) * fx);
        w10.push_back(fy * (1.0 - fx));
        w11.push_back(fy * fx);
    }

    const Shape out{n, c};
    auto tap = [&](std::vector<int64_t>& idx, std::vector<double>& wgt) {
        Var g = tape.gather(uv_image, std::move(idx), out);
        Var wv = tape.constant(Array({n, 1}, std::move(wgt)));
        return g * wv;
    };
    return tap(idx00, w00) + tap(idx01, w01) + tap(idx10, w10) + tap(idx11, w11);
}

Array sample_uv(const Array& uv_image, const std::vector<double>& uv) {
    Tape tape;
    return sample_uv(tape, tape.constant(uv_image), uv).val();
}

namespace {

// Two-pass modified Gram-Schmidt; columns come out orthonormal to ~1e-15.
void orthonormalize_columns(Array& m) {
    const int64_t d = m.shape()[0], k = m.shape()[1];
    for (int pass = 0; pass < 2; ++pass) {
        for (int64_t i = 0; i < k; ++i) {
            for (int64_t j = 0; j < i; ++j) {
                double dot = 0.0;
                for (int64_t r = 0; r < d; ++r) dot += m[r * k + i] * m[r * k + j];
                for (int64_t r = 0; r < d; ++r) m[r * k + i] -= dot * m[r * k + j];
            }
            double norm = 0.0;
            for (int64_t r = 0; r < d; ++r) norm += m[r * k + i] * m[r * k + i];
            norm = std::sqrt(norm);
            if (norm < 1e-12)
                fail("synth_model: degenerate basis column " + std::to_string(i));
            for (int64_t r = 0; r < d; ++r) m[r * k + i] /= norm;
        }
    }
}

Array geometric_stdevs(int64_t k, double sigma0, double decay) {
    Array s({k});
    double v = sigma0;
    for (int64_t i = 0; i < k; ++i) {
        s[i] = v;
        v *= decay;
    }
    return s;
}

double sq(double x) { return x * x; }

// Radial profile of the face blob on the sphere patch, angles in radians.
double blob_radius(double theta, double phi) {
    const double deg = M_PI / 180.0;
    double r = 1.0;
    r += 0.25 * std::exp(-(sq(theta + 5.0 * deg) + sq(phi)) / (2.0 * sq(12.0 * deg)));   // nose
    r += 0.06 * std::exp(-sq(theta - 25.0 * deg) / (2.0 * sq(10.0 * deg))) *
         std::exp(-sq(phi) / (2.0 * sq(35.0 * deg)));                                    // brow
    r += 0.08 * std::exp(-(sq(theta + 55.0 * deg) + sq(phi / 2.0)) / (2.0 * sq(15.0 * deg))); // chin
    r -= 0.05 * std::exp(-(sq(theta - 15.0 * deg) + sq(phi - 25.0 * deg)) / (2.0 * sq(9.0 * deg)));
    r -= 0.05 * std::exp(-(sq(theta - 15.0 * deg) + sq(phi + 25.0 * deg)) / (2.0 * sq(9.0 * deg)));
    r += 0.05 * std::exp(-(sq(theta + 20.0 * deg) + sq(phi - 30.0 * deg)) / (2.0 * sq(14.0 * deg)));
    r += 0.05 * std::exp(-(sq(theta + 20.0 * deg) + sq(phi + 30.0 * deg)) / (2.0 * sq(14.0 * deg)));
    return 1.2 * r;
}

// Smooth random field over the sphere patch: a few seeded Gaussian bumps with
// per-axis amplitudes. Columns are orthonormalized afterwards.
Array smooth_vertex_basis(Rng& rng, const std::vector<double>& theta,
                          const std::vector<double>& phi, int64_t k) {
    const double deg = M_PI / 180.0;
    const int64_t n = static_cast<int64_t>(theta.size());
    Array basis({n * 3, k});
    for (int64_t col = 0; col < k; ++col) {
        for (int bump = 0; bump < 6; ++bump) {
            const double tc = rng.uniform(-75.0 * deg, 75.0 * deg);
            const double pc = rng.uniform(-70.0 * deg, 70.0 * deg);
            const double sigma = rng.uniform(10.0 * deg, 30.0 * deg);
            const double ax = rng.normal(), ay = rng.normal(), az = rng.normal();
            for (int64_t i = 0; i < n; ++i) {
                const double wgt =
                    std::exp(-(sq(theta[i] - tc) + sq(phi[i] - pc)) / (2.0 * sq(sigma)));
                basis[(i * 3 + 0) * k + col] += ax * wgt;
                basis[(i * 3 + 1) * k + col] += ay * wgt;
                basis[(i * 3 + 2) * k + col] += az * wgt;
            }
        }
    }
    orthonormalize_columns(basis);
    return basis;
}

Array smooth_uv_basis(Rng& rng, int h, int w, int64_t k) {
    const int64_t d = static_cast<int64_t>(h) * w * 3;
    Array basis({d, k});
    for (int64_t col = 0; col < k; ++col) {
        for (int bump = 0; bump < 8; ++bump) {
            const double uc = rng.uniform(), vc = rng.uniform();
            const double sigma = rng.uniform(0.08, 0.35);
            const double ar = rng.normal(), ag = rng.normal(), ab = rng.normal();
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double u = (x + 0.5) / w, v = (y + 0.5) / h;
                    const double wgt = std::exp(-(sq(u - uc) + sq(v - vc)) / (2.0 * sq(sigma)));
                    const int64_t base = (static_cast<int64_t>(y) * w + x) * 3;
                    basis[(base + 0) * k + col] += ar * wgt;
                    basis[(base + 1) * k + col] += ag * wgt;
                    basis[(base + 2) * k + col] += ab * wgt;
                }
        }
    }
    orthonormalize_columns(basis);
    return basis;
}

// Largest factor of n not exceeding sqrt(n); the grid is rows x cols = n.
int64_t grid_rows(int64_t n) {
    int64_t best = 1;
    for (int64_t r = 1; r * r <= n; ++r)
        if (n % r == 0) best = r;
    return best;
}

} // namespace

MorphableModel synth_model(uint64_t seed, const SynthModelConfig& cfg) {
    if (cfg.vertex_count < 4) fail("synth_model: vertex count must be at least 4");
    if (cfg.shape_components < 1 || cfg.expression_components < 1 || cfg.texture_components < 1)
        fail("synth_model: component counts must be at least 1");

    const int64_t n = cfg.vertex_count;
    const int64_t rows = grid_rows(n);
    const int64_t cols = n / rows;
    if (rows < 2 || cols < 2)
        fail("synth_model: vertex count " + std::to_string(n) +
             " does not factor into a usable grid");

    const double deg = M_PI / 180.0;
    MorphableModel model;
    model.uv_h = cfg.uv_size;
    model.uv_w = cfg.uv_size;

    // Mean shape: radial blob over a sphere patch, grid-triangulated. Row 0 is
    // the top of the face; +z points out of the face toward the camera.
    std::vector<double> theta(n), phi(n);
    Mesh& mesh = model.mesh;
    mesh.vertices.resize(n * 3);
    mesh.uv.resize(n * 2);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            const int64_t i = r * cols + c;
            const double s = rows == 1 ? 0.5 : static_cast<double>(r) / (rows - 1);
            const double t = cols == 1 ? 0.5 : static_cast<double>(c) / (cols - 1);
            const double th = (0.5 - s) * 150.0 * deg;
            const double ph = (t - 0.5) * 140.0 * deg;
            const double rad = blob_radius(th, ph);
            theta[i] = th;
            phi[i] = ph;
            mesh.vertices[i * 3 + 0] = rad * std::cos(th) * std::sin(ph);
            mesh.vertices[i * 3 + 1] = rad * std::sin(th);
            mesh.vertices[i * 3 + 2] = rad * std::cos(th) * std::cos(ph);
            mesh.uv[i * 2 + 0] = t;
            mesh.uv[i * 2 + 1] = s;
        }
    }
    mesh.triangles.reserve((rows - 1) * (cols - 1) * 6);
    for (int64_t r = 0; r + 1 < rows; ++r)
        for (int64_t c = 0; c + 1 < cols; ++c) {
            const int32_t a = static_cast<int32_t>(r * cols + c);
            const int32_t b = static_cast<int32_t>(r * cols + c + 1);
            const int32_t d = static_cast<int32_t>((r + 1) * cols + c);
            const int32_t e = static_cast<int32_t>((r + 1) * cols + c + 1);
            mesh.triangles.insert(mesh.triangles.end(), {a, d, b});
            mesh.triangles.insert(mesh.triangles.end(), {b, d, e});
        }

    mesh.landmarks.resize(68);
    for (int k = 0; k < 68; ++k)
        mesh.landmarks[k] = static_cast<int32_t>(
            std::llround(static_cast<double>(k) * static_cast<double>(n - 1) / 67.0));
    mesh.validate();

    Rng rng(seed);
    Rng shape_rng = rng.fork(1);
    Rng expr_rng = rng.fork(2);
    Rng tex_rng = rng.fork(3);

    model.shape.mean = Array({n * 3}, mesh.vertices);
    model.shape.basis = smooth_vertex_basis(shape_rng, theta, phi, cfg.shape_components);
    model.shape.stdev = geometric_stdevs(cfg.shape_components, cfg.shape_sigma0, cfg.stdev_decay);

    model.expression.mean = model.shape.mean;
    model.expression.basis = smooth_vertex_basis(expr_rng, theta, phi, cfg.expression_components);
    model.expression.stdev =
        geometric_stdevs(cfg.expression_components, cfg.expression_sigma0, cfg.stdev_decay);

    const int h = cfg.uv_size, w = cfg.uv_size;
    Array tex_mean({static_cast<int64_t>(h) * w * 3});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = (x + 0.5) / w, v = (y + 0.5) / h;
            const double shade = 0.82 + 0.10 * std::sin(2.2 * u * M_PI) * std::cos(1.4 * v * M_PI) -
                                 0.18 * sq(2.0 * v - 1.0);
            const int64_t base = (static_cast<int64_t>(y) * w + x) * 3;
            tex_mean[base + 0] = std::clamp(0.80 * shade, 0.0, 1.0);
            tex_mean[base + 1] = std::clamp(0.62 * shade, 0.0, 1.0);
            tex_mean[base + 2] = std::clamp(0.52 * shade, 0.0, 1.0);
        }
    model.texture.mean = std::move(tex_mean);
    model.texture.basis = smooth_uv_basis(tex_rng, h, w, cfg.texture_components);
    model.texture.stdev =
        geometric_stdevs(cfg.texture_components, cfg.texture_sigma0, cfg.stdev_decay);

    model.shape.validate();
    model.expression.validate();
    model.texture.validate();
    return model;
}

void MorphableModel::save(const std::string& model_path) const {
    Container c;
    c.kind = "morphable_model";
    c.put_meta("uv_h", std::to_string(uv_h));
    c.put_meta("uv_w", std::to_string(uv_w));
    c.put("shape_mean", shape.mean);
    c.put("shape_basis", shape.basis);
    c.put("shape_stdev", shape.stdev);
    c.put("expression_mean", expression.mean);
    c.put("expression_basis", expression.basis);
    c.put("expression_stdev", expression.stdev);
    c.put("texture_mean", texture.mean);
    c.put("texture_basis", texture.basis);
    c.put("texture_stdev", texture.stdev);
    std::vector<int64_t> lm(mesh.landmarks.begin(), mesh.landmarks.end());
    c.put_ints("landmarks", lm);
    c.write(model_path);
}

MorphableModel MorphableModel::load(const std::string& model_path, const std::string& mesh_path) {
    const Container c = Container::read(model_path);
    if (c.kind != "morphable_model")
        fail(model_path + ": expected kind morphable_model, got " + c.kind);
    MorphableModel m;
    m.uv_h = static_cast<int>(std::stol(c.get_meta("uv_h", "0")));
    m.uv_w = static_cast<int>(std::stol(c.get_meta("uv_w", "0")));
    m.shape = {c.get("shape_mean"), c.get("shape_basis"), c.get("shape_stdev")};
    m.expression = {c.get("expression_mean"), c.get("expression_basis"), c.get("expression_stdev")};
    m.texture = {c.get("texture_mean"), c.get("texture_basis"), c.get("texture_stdev")};
    m.mesh = read_obj(mesh_path);
    const auto& lm = c.get_ints("landmarks");
    m.mesh.landmarks.assign(lm.begin(), lm.end());
    m.mesh.validate();
    m.shape.validate();
    m.expression.validate();
    m.texture.validate();
    if (m.shape.dim() != m.vertex_count() * 3)
        fail(model_path + ": shape model dimension does not match mesh vertex count");
    return m;
}

} // namespace facefit
