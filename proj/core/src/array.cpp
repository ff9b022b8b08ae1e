#include "facefit/array.hpp"

#include <cmath>

#include "facefit/error.hpp"

namespace facefit::ad {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

Array::Array(Shape shape) : shape_(std::move(shape)) {
    for (int64_t d : shape_)
        if (d < 0) fail("Array: negative dimension in shape " + shape_str(shape_));
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
        fail("Array: shape " + shape_str(shape_) + " does not match buffer length " +
             std::to_string(data_.size()));
}

Array Array::scalar(double v) {
    Array a;
    a.data_.assign(1, v);
    return a;
}

Array Array::zeros(Shape s) { return Array(std::move(s)); }

Array Array::full(Shape s, double v) {
    Array a(std::move(s));
    for (double& x : a.data_) x = v;
    return a;
}

Array Array::of(std::initializer_list<double> v) {
    Array a;
    a.shape_ = {static_cast<int64_t>(v.size())};
    a.data_.assign(v.begin(), v.end());
    return a;
}

double& Array::at(int64_t r, int64_t c) {
    return data_[static_cast<size_t>(r * shape_[1] + c)];
}

double Array::at(int64_t r, int64_t c) const {
    return data_[static_cast<size_t>(r * shape_[1] + c)];
}

double Array::item() const {
    if (numel() != 1) fail("Array::item on array of shape " + shape_str(shape_));
    return data_[0];
}

bool Array::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace facefit::ad
