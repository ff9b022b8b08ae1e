#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace facefit::ad {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool shape_eq(const Shape& a, const Shape& b);

// Dense row-major tensor of doubles. Rank 0 is a scalar.
class Array {
public:
    Array() = default;
    explicit Array(Shape shape);
    Array(Shape shape, std::vector<double> data);

    static Array scalar(double v);
    static Array zeros(Shape s);
    static Array full(Shape s, double v);
    static Array of(std::initializer_list<double> v); // 1-D

    const Shape& shape() const { return shape_; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int rank() const { return static_cast<int>(shape_.size()); }
    bool is_scalar() const { return shape_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // rank-2 accessors
    double& at(int64_t r, int64_t c);
    double at(int64_t r, int64_t c) const;

    // value of a single-element array
    double item() const;

    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    bool all_finite() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

} // namespace facefit::ad
