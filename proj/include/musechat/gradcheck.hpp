#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "musechat/matrix.hpp"
#include "musechat/params.hpp"
#include "musechat/rng.hpp"

namespace musechat {

/// |a - b| / max(|a|, |b|, floor); robust when both gradients are near zero.
/// The floor turns the comparison absolute for entries smaller than it, so
/// it should sit above the finite-difference noise floor of the loss being
/// checked (roundoff of order |loss| * 2^-52 / eps).
inline double relative_error(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central-difference gradient of a scalar function of the store's
/// parameters, one Matrix per parameter in store order. Restores every
/// parameter bit-exactly (each entry is perturbed and written back).
inline std::vector<Matrix> finite_difference_grad(ParameterStore& store, const std::function<double()>& f,
                                                  double eps = 1e-5) {
    std::vector<Matrix> out;
    for (auto& p : store) {
        Matrix g(p.value.rows, p.value.cols);
        for (std::size_t k = 0; k < p.value.data.size(); ++k) {
            double saved = p.value.data[k];
            p.value.data[k] = saved + eps;
            double fp = f();
            p.value.data[k] = saved - eps;
            double fm = f();
            p.value.data[k] = saved;
            g.data[k] = (fp - fm) / (2.0 * eps);
        }
        out.push_back(std::move(g));
    }
    return out;
}

struct GradCheckOptions {
    double eps = 1e-5;
    double tol = 1e-4;
    // Denominator floor for relative errors; entries where both gradients
    // sit below it are compared absolutely against it rather than
    // proportionally. Central differences cannot resolve gradients under the
    // roundoff scale |loss| * 2^-52 / eps (~1e-11 for unit losses), so the
    // floor must sit well above that or exactly-zero gradients report noise.
    double denom_floor = 1e-5;
    // 0 checks every entry; otherwise a seeded subset per parameter.
    std::size_t max_entries_per_param = 0;
    std::uint64_t sample_seed = 17;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::size_t entries_checked = 0;
    double tol = 0.0;

    bool passed() const { return max_rel_err < tol; }
};

/// Compares backward-pass gradients against fourth-order central
/// differences, (f(-2h) - 8f(-h) + 8f(h) - f(2h)) / 12h, whose truncation
/// error falls as h^4 so the step can sit well above roundoff.
/// `loss` must run a full forward pass and return the scalar loss;
/// when `with_grad` is true it must also run backward, accumulating into
/// Parameter::grad (the checker zeroes grads first).
inline GradCheckReport check_gradients(ParameterStore& store, const std::function<double(bool)>& loss,
                                       GradCheckOptions opts = {}) {
    store.zero_grad();
    loss(true);
    std::vector<Matrix> analytic;
    analytic.reserve(store.size());
    for (auto& p : store) analytic.push_back(p.grad);

    GradCheckReport rep;
    rep.tol = opts.tol;
    std::size_t pi = 0;
    for (auto& p : store) {
        const Matrix& g = analytic[pi];
        ++pi;
        std::vector<std::size_t> idx(p.value.data.size());
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
        if (opts.max_entries_per_param > 0 && idx.size() > opts.max_entries_per_param) {
            Rng rng(mix_seed(opts.sample_seed, p.name));
            rng.shuffle(idx);
            idx.resize(opts.max_entries_per_param);
            std::sort(idx.begin(), idx.end());
        }
        for (std::size_t k : idx) {
            double saved = p.value.data[k];
            auto eval = [&](double x) {
                p.value.data[k] = x;
                return loss(false);
            };
            double f1 = eval(saved - 2.0 * opts.eps);
            double f2 = eval(saved - opts.eps);
            double f3 = eval(saved + opts.eps);
            double f4 = eval(saved + 2.0 * opts.eps);
            p.value.data[k] = saved;
            double fd = (f1 - 8.0 * f2 + 8.0 * f3 - f4) / (12.0 * opts.eps);
            double rel = relative_error(g.data[k], fd, opts.denom_floor);
            ++rep.entries_checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p.name;
                rep.worst_index = k;
                rep.analytic_at_worst = g.data[k];
                rep.numeric_at_worst = fd;
            }
        }
    }
    return rep;
}

}  // namespace musechat
