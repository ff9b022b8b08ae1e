#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "facefit/array.hpp"

namespace facefit {

// Versioned structured-text container holding named double and integer
// arrays. One canonical byte layout: write(read(write(x))) == write(x).
// Used for linear models, decoder and feature-net weights, and fit
// parameters.
struct Container {
    std::string kind;
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, ad::Array>> arrays;
    std::vector<std::pair<std::string, std::vector<int64_t>>> iarrays;

    bool has(const std::string& name) const;
    bool has_ints(const std::string& name) const;
    const ad::Array& get(const std::string& name) const;
    const std::vector<int64_t>& get_ints(const std::string& name) const;
    std::string get_meta(const std::string& key, const std::string& fallback = {}) const;

    void put(const std::string& name, ad::Array a);
    void put_ints(const std::string& name, std::vector<int64_t> v);
    void put_meta(const std::string& key, const std::string& value);

    void write(const std::string& path) const;
    std::string serialize() const;
    static Container read(const std::string& path);
    static Container parse(const std::string& text, const std::string& origin = "<memory>");
};

// Shortest-round-trip-safe decimal rendering (17 significant digits).
std::string fmt17(double v);

} // namespace facefit
