#pragma once

// Central finite-difference gradient oracle. Independent of the tape's
// backward path: it only uses forward evaluations.

#include <cmath>
#include <functional>
#include <vector>

#include "aedet/tensor.hpp"

namespace aedet_test {

// builder(tape) must rebuild the graph from the current contents of the
// input tensors and return a scalar loss. Inputs are watched here.
template <typename T>
struct FdReport {
    double max_rel_err = 0.0;
    size_t checked = 0;
};

template <typename T, typename Builder>
FdReport<T> fd_check(Builder&& builder, const std::vector<aedet::BasicTensor<T>*>& inputs,
                     double h, double tol) {
    using aedet::BasicTape;
    BasicTape<T> tape;
    for (auto* in : inputs) tape.watch(*in);
    auto loss = builder(&tape);
    tape.backward(loss);
    std::vector<std::vector<T>> analytic;
    for (auto* in : inputs)
        analytic.push_back(tape.has_grad(*in) ? tape.grad(*in)
                                              : std::vector<T>(in->numel(), T(0)));
    for (auto* in : inputs) {
        in->node = -1;
        in->requires_grad = false;
    }

    // Per-input vector comparison: ||g_fd - g_an|| / max(||g_fd||, ||g_an||).
    // Componentwise ratios are meaningless where a single entry is near zero.
    FdReport<T> rep;
    (void)tol;
    for (size_t ii = 0; ii < inputs.size(); ++ii) {
        auto* in = inputs[ii];
        double diff2 = 0, fd2 = 0, an2 = 0;
        for (size_t j = 0; j < in->numel(); ++j) {
            const T orig = in->data[j];
            in->data[j] = orig + static_cast<T>(h);
            const double fp = static_cast<double>(builder(nullptr).scalar());
            in->data[j] = orig - static_cast<T>(h);
            const double fm = static_cast<double>(builder(nullptr).scalar());
            in->data[j] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = static_cast<double>(analytic[ii][j]);
            diff2 += (fd - an) * (fd - an);
            fd2 += fd * fd;
            an2 += an * an;
            ++rep.checked;
        }
        const double denom = std::max({std::sqrt(fd2), std::sqrt(an2), 1e-8});
        rep.max_rel_err = std::max(rep.max_rel_err, std::sqrt(diff2) / denom);
    }
    return rep;
}

}  // namespace aedet_test
