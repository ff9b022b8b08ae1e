#include "facefit/gradcheck.hpp"

#include <cmath>

#include "facefit/error.hpp"

namespace facefit::ad {

namespace {

double eval_at(const RecordedFn& f, const std::vector<Array>& point) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(point.size());
    for (const Array& p : point) leaves.push_back(tape.leaf(p));
    const Var out = f(tape, leaves);
    if (out.numel() != 1) fail("check_gradient: function output must be scalar");
    const double v = out.item();
    if (!std::isfinite(v)) fail("check_gradient: non-finite value while probing");
    return v;
}

} // namespace

GradCheckResult check_gradient(const RecordedFn& f, const std::vector<Array>& point, double h,
                               const std::function<bool(int, int64_t)>& skip) {
    if (!(h > 0.0)) fail("check_gradient: step h must be positive");

    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(point.size());
    for (const Array& p : point) leaves.push_back(tape.leaf(p));
    const Var out = f(tape, leaves);
    if (out.numel() != 1) fail("check_gradient: function output must be scalar");
    if (!std::isfinite(out.item())) fail("check_gradient: non-finite value at base point");
    const Gradients grads = tape.backward(out, leaves);

    GradCheckResult res;
    std::vector<Array> probe = point;
    for (size_t i = 0; i < point.size(); ++i) {
        const Array& analytic = grads.wrt(leaves[i]);
        for (int64_t j = 0; j < point[i].numel(); ++j) {
            if (skip && skip(static_cast<int>(i), j)) {
                ++res.skipped;
                continue;
            }
            const double x = point[i][j];
            probe[i][j] = x + h;
            const double fp = eval_at(f, probe);
            probe[i][j] = x - h;
            const double fm = eval_at(f, probe);
            probe[i][j] = x;
            const double fd = (fp - fm) / (2.0 * h);
            if (!std::isfinite(fd)) fail("check_gradient: non-finite central difference");
            const double rel = std::abs(analytic[j] - fd) / (std::abs(fd) + 1e-8);
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_input = static_cast<int>(i);
                res.worst_coord = j;
            }
            ++res.checked;
        }
    }
    return res;
}

} // namespace facefit::ad
