#pragma once

#include <vector>

#include "adaptcl/rng.hpp"
#include "adaptcl/tensor.hpp"

namespace adaptcl {

constexpr double kInitStd = 0.02;

namespace detail {

template <typename Real>
TensorT<Real> init_proj(Rng& rng, std::vector<std::size_t> shape) {
    auto t = TensorT<Real>::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t.at(i) = static_cast<Real>(rng.truncated_normal(kInitStd));
    }
    t.set_requires_grad(true);
    return t;
}

template <typename Real>
TensorT<Real> init_const(std::vector<std::size_t> shape, Real v) {
    auto t = TensorT<Real>::full(std::move(shape), v);
    t.set_requires_grad(true);
    return t;
}

} // namespace detail

} // namespace adaptcl
