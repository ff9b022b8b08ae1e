#pragma once

#include <functional>
#include <vector>

#include "facefit/tape.hpp"

namespace facefit::ad {

// Records a scalar function of named array inputs on a fresh tape.
// The leaves are handed over in the same order as the points.
using RecordedFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
    double max_rel_err = 0.0;
    int worst_input = -1;      // which input array
    int64_t worst_coord = -1;  // flat coordinate within it
    int64_t checked = 0;
    int64_t skipped = 0;
};

// Max over all coordinates of |analytic - central difference| /
// (|central difference| + 1e-8). Throws on non-finite values while probing.
// `skip` may veto individual coordinates (input index, flat coordinate),
// e.g. when a probe would cross a discrete boundary.
GradCheckResult check_gradient(
    const RecordedFn& f, const std::vector<Array>& point, double h,
    const std::function<bool(int, int64_t)>& skip = nullptr);

} // namespace facefit::ad
