#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace facefit {

// Triangle mesh with per-vertex UV coordinates and optional landmark vertex
// indices. Positions are in model units; the evaluation protocol reads them
// as millimeters.
struct Mesh {
    std::vector<double> vertices;    // N*3, row-major
    std::vector<int32_t> triangles;  // T*3
    std::vector<double> uv;          // N*2, in [0,1]^2
    std::vector<int32_t> landmarks;  // landmark vertex indices (68 for fitting)

    int64_t vertex_count() const { return static_cast<int64_t>(vertices.size()) / 3; }
    int64_t triangle_count() const { return static_cast<int64_t>(triangles.size()) / 3; }

    std::array<double, 3> vertex(int64_t i) const {
        return {vertices[i * 3], vertices[i * 3 + 1], vertices[i * 3 + 2]};
    }

    // Bounding-box diagonal.
    double diameter() const;

    // Index bounds and UV range checks; throws on violation.
    void validate() const;
};

// OBJ with `v`, `vt` and `f v/vt` records (vt indices equal v indices).
void write_obj(const std::string& path, const Mesh& mesh);
Mesh read_obj(const std::string& path);

} // namespace facefit
