#pragma once

#include <cmath>
#include <functional>

#include "fosnet/errors.hpp"
#include "fosnet/tape.hpp"

namespace fosnet {

// Compares analytic gradients of a scalar-valued function against central
// differences.  `f` receives a fresh tape and the current input as a leaf
// value and must return a scalar output recorded on that tape.  Returns the
// worst relative error max(|analytic - numeric| / max(1, |analytic|)) over
// all input elements.
template <typename T>
T finite_diff_check(const std::function<ValueT<T>(TapeT<T>&, ValueT<T>)>& f, const TensorT<T>& x,
                    T eps) {
    if (eps <= T(0)) throw NumericError("finite_diff_check: eps must be positive");

    TensorT<T> analytic;
    {
        TapeT<T> tape;
        ValueT<T> in = tape.leaf(x, true);
        ValueT<T> out = f(tape, in);
        tape.backward(out);
        analytic = in.grad();
        // A function that ignores its input never propagates back to the
        // leaf; its gradient is identically zero.
        if (analytic.empty()) analytic = TensorT<T>(x.shape());
    }

    auto eval = [&](const TensorT<T>& probe) {
        TapeT<T> tape;
        ValueT<T> out = f(tape, tape.leaf(probe, false));
        if (out.value().numel() != 1)
            throw ShapeError("finite_diff_check: function output must be scalar, got " +
                             shape_str(out.value().shape()));
        const T y = out.value()[0];
        if (!std::isfinite(y)) throw NumericError("finite_diff_check: non-finite evaluation");
        return y;
    };

    TensorT<T> probe = x;
    T worst = T(0);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T orig = probe[i];
        probe[i] = orig + eps;
        const T up = eval(probe);
        probe[i] = orig - eps;
        const T down = eval(probe);
        probe[i] = orig;
        const T numeric = (up - down) / (T(2) * eps);
        const T a = analytic[i];
        const T rel = std::abs(a - numeric) / std::max(T(1), std::abs(a));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace fosnet
