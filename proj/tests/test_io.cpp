#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "facefit/container.hpp"
#include "facefit/error.hpp"
#include "facefit/image.hpp"
#include "facefit/mesh.hpp"
#include "facefit/rng.hpp"

using namespace facefit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "facefit_test_io";
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("container write -> read -> write is byte-identical") {
    Rng rng(5);
    Container c;
    c.kind = "unit_test";
    c.put_meta("seed", "5");
    c.put_meta("note", "two words");
    ad::Array a({7, 3});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = rng.normal() * std::pow(10.0, rng.uniform(-8, 8));
    a[0] = 0.0;
    a[1] = -0.0;
    a[2] = 1.0 / 3.0;
    c.put("values", a);
    c.put("scalar", ad::Array::scalar(-1.25e-30));
    c.put_ints("indices", {0, 5, 999999, -3});

    const fs::path p1 = temp_dir() / "roundtrip1.txt";
    const fs::path p2 = temp_dir() / "roundtrip2.txt";
    c.write(p1.string());
    Container c2 = Container::read(p1.string());
    c2.write(p2.string());
    CHECK(slurp(p1) == slurp(p2));

    CHECK(c2.kind == "unit_test");
    CHECK(c2.get_meta("note") == "two words");
    CHECK(c2.get("values").shape() == ad::Shape{7, 3});
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(c2.get("values")[i] == a[i]);
    CHECK(c2.get_ints("indices")[3] == -3);
}

TEST_CASE("container rejects malformed input") {
    CHECK_THROWS_AS((void)Container::read((temp_dir() / "missing.txt").string()), Error);
    CHECK_THROWS_AS((void)Container::parse("not a container\n"), Error);
    CHECK_THROWS_AS((void)Container::parse("facefit-container 1\nkind x\narray a 1 3\n1 2\n"), Error);
}

TEST_CASE("pfm round trip preserves float32 values") {
    Rng rng(9);
    Image img(5, 4, 3);
    for (auto& v : img.px) v = rng.uniform(-0.2, 1.4);
    const fs::path p = temp_dir() / "img.pfm";
    write_pfm(p.string(), img);
    Image back = read_pfm(p.string());
    REQUIRE(back.h == img.h);
    REQUIRE(back.w == img.w);
    REQUIRE(back.c == img.c);
    for (size_t i = 0; i < img.px.size(); ++i)
        CHECK(back.px[i] == static_cast<double>(static_cast<float>(img.px[i])));

    // bytes are stable across rewrites
    const fs::path p2 = temp_dir() / "img2.pfm";
    write_pfm(p2.string(), back);
    Image back2 = read_pfm(p2.string());
    CHECK(back2.px == back.px);
}

TEST_CASE("png writer emits a decodable file deterministically") {
    Image img(8, 8, 3);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            img.at(y, x, 0) = x / 7.0;
            img.at(y, x, 1) = y / 7.0;
            img.at(y, x, 2) = 1.5; // clamps to 1
        }
    const fs::path p1 = temp_dir() / "a.png";
    const fs::path p2 = temp_dir() / "b.png";
    write_png(p1.string(), img);
    write_png(p2.string(), img);
    const std::string b1 = slurp(p1), b2 = slurp(p2);
    CHECK(b1 == b2);
    CHECK(b1.substr(1, 3) == "PNG");
}

TEST_CASE("obj write -> read -> write is byte-identical") {
    Mesh m;
    m.vertices = {0, 0, 0, 1, 0, 0, 0, 1, 0, 1.0 / 3.0, 0.25, -2.5};
    m.uv = {0, 0, 1, 0, 0, 1, 0.5, 0.5};
    m.triangles = {0, 1, 2, 1, 3, 2};
    const fs::path p1 = temp_dir() / "m1.obj";
    const fs::path p2 = temp_dir() / "m2.obj";
    write_obj(p1.string(), m);
    Mesh back = read_obj(p1.string());
    write_obj(p2.string(), back);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(back.vertex_count() == 4);
    CHECK(back.triangle_count() == 2);
    CHECK(back.uv == m.uv);
    CHECK(back.triangles == m.triangles);
}

TEST_CASE("obj reader rejects bad indices and non-triangles") {
    const fs::path p = temp_dir() / "bad.obj";
    {
        std::ofstream f(p);
        f << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3 1\n";
    }
    CHECK_THROWS_AS((void)read_obj(p.string()), Error);
    {
        std::ofstream f(p);
        f << "v 0 0 0\nv 1 0 0\nf 1 2 5\n";
    }
    CHECK_THROWS_AS((void)read_obj(p.string()), Error);
}

TEST_CASE("hstack concatenates panels") {
    Image a(2, 3, 1), b(2, 2, 1);
    a.at(0, 0, 0) = 1.0;
    b.at(1, 1, 0) = 0.5;
    Image s = hstack({a, b});
    CHECK(s.w == 5);
    CHECK(s.at(0, 0, 0) == 1.0);
    CHECK(s.at(1, 4, 0) == 0.5);
}
