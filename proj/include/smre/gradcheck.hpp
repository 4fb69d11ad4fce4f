#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "smre/params.hpp"
#include "smre/tensor.hpp"

namespace smre {

/// One row per named parameter. The headline number compares gradient
/// vectors as wholes: ||analytic - numeric|| / max(||analytic||, ||numeric||,
/// 1e-8). Comparing coordinate by coordinate instead would drown near-zero
/// gradients in finite-difference rounding noise. worst_* fields single out
/// the coordinate with the largest absolute disagreement for diagnostics.
struct GradCheckEntry {
    std::string param;
    double rel_err = 0.0;
    double analytic_norm = 0.0;
    double numeric_norm = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;

    bool passes(double tol) const { return max_rel_err < tol; }

    std::string to_string() const {
        std::ostringstream os;
        os << std::scientific << std::setprecision(3);
        for (const auto& e : entries)
            os << "  " << e.param << ": rel err " << e.rel_err << " (|analytic| "
               << e.analytic_norm << ", |numeric| " << e.numeric_norm << ", worst coord "
               << e.worst_index << ": " << e.worst_analytic << " vs " << e.worst_numeric << ")\n";
        os << "  overall max rel err " << max_rel_err << "\n";
        return os.str();
    }
};

/// Central-difference check of reverse-mode gradients. `f` must rebuild the
/// scalar loss from scratch on every call; it runs once under a fresh tape
/// for the analytic gradients and then twice per parameter coordinate,
/// tapeless, for the numeric ones. Double precision only.
inline GradCheckReport finite_diff_check(const std::function<Tensor<double>(ModelParams<double>&)>& f,
                                         ModelParams<double>& params, double h = 1e-5) {
    if (!(h > 0.0) || h > 1e-2) throw ContractError("finite_diff_check: h must lie in (0, 1e-2]");

    params.zero_grad();
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        typename Tape<double>::Scope scope(tape);
        Tensor<double> loss = f(params);
        tape.backward(loss);
    }
    for (const auto& [name, t] : params.items()) {
        if (t.grad().empty())
            analytic.emplace_back(t.size(), 0.0);
        else
            analytic.push_back(t.grad());
    }

    auto eval = [&]() {
        Tensor<double> loss = f(params);
        const double v = loss.item();
        if (!std::isfinite(v)) throw EvaluationError("finite_diff_check: non-finite loss at perturbed point");
        return v;
    };

    GradCheckReport report;
    for (std::size_t p = 0; p < params.count(); ++p) {
        auto& [name, t] = params.items()[p];
        GradCheckEntry entry;
        entry.param = name;
        double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0, worst_diff = -1.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t.data()[i];
            t.mutable_data()[i] = orig + h;
            const double fp = eval();
            t.mutable_data()[i] = orig - h;
            const double fm = eval();
            t.mutable_data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[p][i];
            diff_sq += (a - numeric) * (a - numeric);
            a_sq += a * a;
            n_sq += numeric * numeric;
            if (std::fabs(a - numeric) > worst_diff) {
                worst_diff = std::fabs(a - numeric);
                entry.worst_index = i;
                entry.worst_analytic = a;
                entry.worst_numeric = numeric;
            }
        }
        entry.analytic_norm = std::sqrt(a_sq);
        entry.numeric_norm = std::sqrt(n_sq);
        entry.rel_err = std::sqrt(diff_sq) /
                        std::max({entry.analytic_norm, entry.numeric_norm, 1e-8});
        report.max_rel_err = std::max(report.max_rel_err, entry.rel_err);
        report.entries.push_back(std::move(entry));
    }
    params.zero_grad();
    return report;
}

}  // namespace smre
