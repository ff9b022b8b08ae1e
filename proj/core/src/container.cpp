#include "facefit/container.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "facefit/error.hpp"

namespace facefit {

namespace {

constexpr const char* kMagic = "facefit-container 1";

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

double parse_double(const std::string& tok, const std::string& origin) {
    double v = 0.0;
    const auto* begin = tok.data();
    const auto* end = tok.data() + tok.size();
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end)
        fail(origin + ": bad numeric token '" + tok + "'");
    return v;
}

int64_t parse_int(const std::string& tok, const std::string& origin) {
    int64_t v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        fail(origin + ": bad integer token '" + tok + "'");
    return v;
}

} // namespace

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool Container::has(const std::string& name) const {
    for (const auto& [n, a] : arrays)
        if (n == name) return true;
    return false;
}

bool Container::has_ints(const std::string& name) const {
    for (const auto& [n, a] : iarrays)
        if (n == name) return true;
    return false;
}

const ad::Array& Container::get(const std::string& name) const {
    for (const auto& [n, a] : arrays)
        if (n == name) return a;
    fail("container(kind=" + kind + "): missing array '" + name + "'");
}

const std::vector<int64_t>& Container::get_ints(const std::string& name) const {
    for (const auto& [n, a] : iarrays)
        if (n == name) return a;
    fail("container(kind=" + kind + "): missing integer array '" + name + "'");
}

std::string Container::get_meta(const std::string& key, const std::string& fallback) const {
    for (const auto& [k, v] : meta)
        if (k == key) return v;
    return fallback;
}

void Container::put(const std::string& name, ad::Array a) { arrays.emplace_back(name, std::move(a)); }

void Container::put_ints(const std::string& name, std::vector<int64_t> v) {
    iarrays.emplace_back(name, std::move(v));
}

void Container::put_meta(const std::string& key, const std::string& value) {
    meta.emplace_back(key, value);
}

std::string Container::serialize() const {
    std::string out;
    out.reserve(1 << 16);
    out += kMagic;
    out += '\n';
    out += "kind " + kind + "\n";
    for (const auto& [k, v] : meta) out += "meta " + k + " " + v + "\n";
    for (const auto& [name, a] : arrays) {
        out += "array " + name + " " + std::to_string(a.rank());
        for (int64_t d : a.shape()) out += " " + std::to_string(d);
        out += '\n';
        for (int64_t i = 0; i < a.numel(); ++i) {
            out += fmt17(a[i]);
            out += (i % 8 == 7 || i == a.numel() - 1) ? '\n' : ' ';
        }
    }
    for (const auto& [name, v] : iarrays) {
        out += "iarray " + name + " " + std::to_string(v.size()) + "\n";
        for (size_t i = 0; i < v.size(); ++i) {
            out += std::to_string(v[i]);
            out += (i % 16 == 15 || i == v.size() - 1) ? '\n' : ' ';
        }
    }
    out += "end\n";
    return out;
}

void Container::write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("cannot open '" + path + "' for writing");
    const std::string text = serialize();
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) fail("write failed for '" + path + "'");
}

Container Container::parse(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kMagic)
        fail(origin + ": not a facefit container (bad header '" + line + "')");

    Container c;
    bool have_kind = false, have_end = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto toks = split_ws(line);
        if (toks[0] == "kind") {
            if (toks.size() != 2) fail(origin + ": malformed kind line");
            c.kind = toks[1];
            have_kind = true;
        } else if (toks[0] == "meta") {
            if (toks.size() < 3) fail(origin + ": malformed meta line");
            std::string value = toks[2];
            for (size_t i = 3; i < toks.size(); ++i) value += " " + toks[i];
            c.meta.emplace_back(toks[1], value);
        } else if (toks[0] == "array") {
            if (toks.size() < 3) fail(origin + ": malformed array line");
            const std::string name = toks[1];
            const int64_t rank = parse_int(toks[2], origin);
            if (static_cast<int64_t>(toks.size()) != 3 + rank)
                fail(origin + ": array '" + name + "' dimension count mismatch");
            ad::Shape shape;
            for (int64_t d = 0; d < rank; ++d)
                shape.push_back(parse_int(toks[3 + static_cast<size_t>(d)], origin));
            const int64_t n = ad::shape_numel(shape);
            std::vector<double> data;
            data.reserve(static_cast<size_t>(n));
            while (static_cast<int64_t>(data.size()) < n) {
                std::string vtok;
                if (!(in >> vtok)) fail(origin + ": array '" + name + "' truncated");
                data.push_back(parse_double(vtok, origin));
            }
            std::getline(in, line); // consume the rest of the last value line
            c.arrays.emplace_back(name, ad::Array(std::move(shape), std::move(data)));
        } else if (toks[0] == "iarray") {
            if (toks.size() != 3) fail(origin + ": malformed iarray line");
            const std::string name = toks[1];
            const int64_t n = parse_int(toks[2], origin);
            std::vector<int64_t> data;
            data.reserve(static_cast<size_t>(n));
            while (static_cast<int64_t>(data.size()) < n) {
                std::string vtok;
                if (!(in >> vtok)) fail(origin + ": iarray '" + name + "' truncated");
                data.push_back(parse_int(vtok, origin));
            }
            std::getline(in, line);
            c.iarrays.emplace_back(name, std::move(data));
        } else if (toks[0] == "end") {
            have_end = true;
            break;
        } else {
            fail(origin + ": unknown directive '" + toks[0] + "'");
        }
    }
    if (!have_kind) fail(origin + ": missing kind");
    if (!have_end) fail(origin + ": missing end marker");
    return c;
}

Container Container::read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
}

} // namespace facefit
