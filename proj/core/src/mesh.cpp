#include "facefit/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "facefit/container.hpp"
#include "facefit/error.hpp"

namespace facefit {

double Mesh::diameter() const {
    if (vertex_count() == 0) return 0.0;
    double lo[3], hi[3];
    for (int k = 0; k < 3; ++k) lo[k] = hi[k] = vertices[static_cast<size_t>(k)];
    for (int64_t i = 1; i < vertex_count(); ++i)
        for (int k = 0; k < 3; ++k) {
            const double v = vertices[static_cast<size_t>(i * 3 + k)];
            lo[k] = std::min(lo[k], v);
            hi[k] = std::max(hi[k], v);
        }
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) d2 += (hi[k] - lo[k]) * (hi[k] - lo[k]);
    return std::sqrt(d2);
}

void Mesh::validate() const {
    const int64_t n = vertex_count();
    if (static_cast<int64_t>(vertices.size()) != n * 3) fail("Mesh: vertex buffer not a multiple of 3");
    if (triangles.size() % 3 != 0) fail("Mesh: triangle buffer not a multiple of 3");
    for (int32_t t : triangles)
        if (t < 0 || t >= n) fail("Mesh: triangle index " + std::to_string(t) + " out of range");
    for (int32_t l : landmarks)
        if (l < 0 || l >= n) fail("Mesh: landmark index " + std::to_string(l) + " out of range");
    if (!uv.empty()) {
        if (static_cast<int64_t>(uv.size()) != n * 2) fail("Mesh: uv buffer size mismatch");
        for (double u : uv)
            if (!(u >= 0.0 && u <= 1.0)) fail("Mesh: uv coordinate " + std::to_string(u) + " outside [0,1]");
    }
}

void write_obj(const std::string& path, const Mesh& mesh) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("cannot open '" + path + "' for writing");
    const int64_t n = mesh.vertex_count();
    for (int64_t i = 0; i < n; ++i)
        f << "v " << fmt17(mesh.vertices[i * 3]) << " " << fmt17(mesh.vertices[i * 3 + 1]) << " "
          << fmt17(mesh.vertices[i * 3 + 2]) << "\n";
    if (!mesh.uv.empty())
        for (int64_t i = 0; i < n; ++i)
            f << "vt " << fmt17(mesh.uv[i * 2]) << " " << fmt17(mesh.uv[i * 2 + 1]) << "\n";
    const bool has_uv = !mesh.uv.empty();
    for (int64_t t = 0; t < mesh.triangle_count(); ++t) {
        f << "f";
        for (int k = 0; k < 3; ++k) {
            const int32_t v = mesh.triangles[t * 3 + k] + 1;
            f << " " << v;
            if (has_uv) f << "/" << v;
        }
        f << "\n";
    }
    if (!f) fail("write failed for '" + path + "'");
}

Mesh read_obj(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open '" + path + "'");
    Mesh mesh;
    std::string line;
    while (std::getline(f, line)) {
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag)) continue;
        if (tag == "v") {
            double x, y, z;
            if (!(ss >> x >> y >> z)) fail(path + ": malformed vertex line '" + line + "'");
            mesh.vertices.insert(mesh.vertices.end(), {x, y, z});
        } else if (tag == "vt") {
            double u, v;
            if (!(ss >> u >> v)) fail(path + ": malformed vt line '" + line + "'");
            mesh.uv.insert(mesh.uv.end(), {u, v});
        } else if (tag == "f") {
            int count = 0;
            std::string vert;
            while (ss >> vert) {
                const size_t slash = vert.find('/');
                const std::string head = slash == std::string::npos ? vert : vert.substr(0, slash);
                const int32_t idx = static_cast<int32_t>(std::stol(head));
                if (idx <= 0) fail(path + ": only positive OBJ indices are supported");
                mesh.triangles.push_back(idx - 1);
                ++count;
            }
            if (count != 3) fail(path + ": face with " + std::to_string(count) + " vertices (triangles only)");
        }
    }
    mesh.validate();
    return mesh;
}

} // namespace facefit
