#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "adaptcl/ops.hpp"
#include "adaptcl/tensor.hpp"

namespace adaptcl {

template <typename Real>
struct GradCheckEntry {
    std::string tensor;
    std::size_t coord = 0;
    Real analytic = Real(0);
    Real numeric = Real(0);
    Real rel_error = Real(0);
};

template <typename Real>
struct GradCheckReport {
    Real tol = Real(0);
    Real worst_rel_error = Real(0);
    GradCheckEntry<Real> worst;
    std::vector<GradCheckEntry<Real>> per_tensor_worst;
    std::size_t coords_checked = 0;
    bool pass = true;
};

// Central-difference step sized to the scalar type: float FD noise floats
// around 1e-4 relative, double around 1e-9.
template <typename Real>
constexpr Real default_fd_step() {
    return sizeof(Real) == 4 ? Real(1e-2) : Real(1e-4);
}

// Checks analytic gradients of a scalar-valued function against central
// finite differences, coordinate by coordinate. `f` must be a pure function
// of the tensors in `params` (same handles captured in its closure). Tensors
// with requires_grad == false are skipped entirely.
//
// Relative error per coordinate: |g - ghat| / max(|g|, |ghat|, 1e-8).
template <typename Real>
GradCheckReport<Real> grad_check(const std::function<TensorT<Real>()>& f,
                                 std::vector<std::pair<std::string, TensorT<Real>>> params,
                                 Real h, Real tol) {
    if (h <= Real(0)) {
        throw ContractError("grad_check: step h must be positive");
    }
    GradCheckReport<Real> report;
    report.tol = tol;

    for (auto& [name, t] : params) {
        (void)name;
        t.clear_grad();
    }

    // Analytic pass on a private tape.
    std::vector<std::vector<Real>> analytic(params.size());
    {
        TapeT<Real> tape;
        auto scope = tape.activate();
        auto loss = f();
        if (!loss.is_scalar()) {
            throw ContractError("grad_check: function must be scalar-valued, got shape " +
                                detail::shape_str(loss.shape()));
        }
        backward(loss);
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& t = params[p].second;
            if (!t.requires_grad()) continue;
            analytic[p] = t.has_grad() ? t.grad() : std::vector<Real>(t.size(), Real(0));
        }
    }

    // Numeric pass, no tape active.
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& [name, t] = params[p];
        if (!t.requires_grad()) continue;
        GradCheckEntry<Real> tensor_worst;
        tensor_worst.tensor = name;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const Real saved = t.at(i);
            t.at(i) = saved + h;
            const Real fp = f().item();
            t.at(i) = saved - h;
            const Real fm = f().item();
            t.at(i) = saved;
            const Real numeric = (fp - fm) / (Real(2) * h);
            const Real g = analytic[p][i];
            const Real denom = std::max({std::abs(g), std::abs(numeric), Real(1e-8)});
            const Real rel = std::abs(g - numeric) / denom;
            ++report.coords_checked;
            if (rel >= tensor_worst.rel_error) {
                tensor_worst = GradCheckEntry<Real>{name, i, g, numeric, rel};
            }
            if (rel >= report.worst_rel_error) {
                report.worst_rel_error = rel;
                report.worst = GradCheckEntry<Real>{name, i, g, numeric, rel};
            }
        }
        report.per_tensor_worst.push_back(tensor_worst);
    }
    report.pass = report.worst_rel_error <= tol;
    return report;
}

} // namespace adaptcl
