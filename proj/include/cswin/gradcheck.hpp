#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "cswin/params.hpp"
#include "cswin/rng.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

struct GradCheckOptions {
    double eps = 1e-5;
    // Tensors larger than this get a seeded random subset of elements.
    size_t max_elems_per_tensor = 32;
    uint64_t seed = 0x9d5ec7a11;
};

struct ParamGradReport {
    std::string name;
    double max_rel_err = 0.0;
    int64_t checked = 0;
    bool nonfinite = false;
};

struct GradReport {
    std::vector<ParamGradReport> params;
    double max_rel_err = 0.0;
    bool nonfinite = false;

    bool pass(double tol) const { return !nonfinite && max_rel_err < tol; }

    const ParamGradReport* worst() const {
        const ParamGradReport* w = nullptr;
        for (const auto& p : params)
            if (!w || p.max_rel_err > w->max_rel_err) w = &p;
        return w;
    }
};

namespace detail {

// Scaled relative error with a unit floor, so tiny-magnitude gradients are
// judged on absolute error. rel = |a-n| / max(|a|, |n|, 1).
inline double rel_err(double analytic, double numeric) {
    double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1.0});
    return std::fabs(analytic - numeric) / denom;
}

inline std::vector<int64_t> sample_indices(int64_t n, size_t k, Rng& rng) {
    std::vector<int64_t> idx;
    if (static_cast<size_t>(n) <= k) {
        idx.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
        return idx;
    }
    std::unordered_set<int64_t> seen;
    while (seen.size() < k) seen.insert(rng.randint(0, n));
    idx.assign(seen.begin(), seen.end());
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace detail

// Central-difference check of every parameter in `ps` against the analytic
// gradient of the scalar function f (which reads ps by reference). f must be
// deterministic; run this with T = double.
template <class T, class F>
GradReport grad_check(ParamStore<T>& ps, F&& f, GradCheckOptions opts = {}) {
    GradReport report;
    Rng rng(opts.seed);

    ps.zero_grad();
    // A non-finite f is reported, never silently skipped; ops that guard
    // against NaN/Inf throw numeric_error, which counts as non-finite here.
    Tensor<T> y;
    try {
        y = f();
    } catch (const numeric_error&) {
        report.nonfinite = true;
        return report;
    }
    if (y.numel() != 1)
        throw value_error("grad_check: f must return a scalar, got shape " + shape_str(y.shape()));
    if (!std::isfinite(static_cast<double>(y.item()))) {
        report.nonfinite = true;
    }
    y.backward();

    std::vector<std::vector<T>> analytic;
    analytic.reserve(ps.size());
    for (size_t i = 0; i < ps.size(); ++i) analytic.push_back(ps.at(i).grad());

    const T eps = static_cast<T>(opts.eps);
    for (size_t i = 0; i < ps.size(); ++i) {
        Tensor<T> param = ps.at(i);
        ParamGradReport pr;
        pr.name = ps.names()[i];
        Rng prng = rng.child(pr.name);
        auto idx = detail::sample_indices(param.numel(), opts.max_elems_per_tensor, prng);
        pr.checked = static_cast<int64_t>(idx.size());
        auto& data = param.data();
        for (int64_t j : idx) {
            T saved = data[j];
            double fp, fm;
            {
                NoGradGuard ng;
                try {
                    data[j] = saved + eps;
                    fp = static_cast<double>(f().item());
                    data[j] = saved - eps;
                    fm = static_cast<double>(f().item());
                } catch (const numeric_error&) {
                    data[j] = saved;
                    pr.nonfinite = true;
                    continue;
                }
                data[j] = saved;
            }
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                pr.nonfinite = true;
                continue;
            }
            double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
            double err = detail::rel_err(static_cast<double>(analytic[i][j]), numeric);
            if (!std::isfinite(err)) {
                pr.nonfinite = true;  // NaN analytic gradients must not vanish in a max()
                continue;
            }
            pr.max_rel_err = std::max(pr.max_rel_err, err);
        }
        report.max_rel_err = std::max(report.max_rel_err, pr.max_rel_err);
        report.nonfinite = report.nonfinite || pr.nonfinite;
        report.params.push_back(std::move(pr));
    }
    return report;
}

}  // namespace cswin
