#pragma once

// Volume-constrained p-norm stress minimization driven by MMA.

#include "stresstopo/benchmarks.hpp"
#include "stresstopo/filter.hpp"
#include "stresstopo/mma.hpp"
#include "stresstopo/sensitivity.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <vector>

namespace stresstopo {

struct IterationRecord {
    int iter = 0;
    double pnorm = 0.0;
    double max_mises = 0.0;
    double volume = 0.0;  ///< mean filtered density
    double change = 0.0;  ///< max |x_k - x_{k-1}| of the design variables
    double seconds = 0.0; ///< wall time of the iteration
};

struct OptimizerOptions {
    int max_iterations = 100;
    double tolx = 0.0; ///< stop early when change < tolx; 0 disables
    FilterChainRule chain_rule = FilterChainRule::Exact;
    /// Hold the design variables of passive elements at the floor as well.
    /// By default only their physical density is clamped after filtering.
    bool pin_passive = false;
    MmaSettings mma;
};

struct OptimizationResult {
    Vector x;          ///< design variables after the last update
    Vector x_filtered; ///< physical densities of the last evaluated design
    StressField field; ///< stresses of the last evaluated design
    std::vector<IterationRecord> history;
    MmaState mma;
    bool converged = false;
};

/// Called after every iteration with the record, the design variables and
/// the evaluated physical field.  Returning false stops the loop.
using IterationCallback =
    std::function<bool(const IterationRecord &, const Vector &x, const Vector &x_filtered, const StressField &)>;

class StressMinimizer {
  public:
    StressMinimizer(const ProblemDefinition &problem, OptimizerOptions options)
        : problem_(problem), options_(options), mesh_(problem.mesh()),
          analysis_(StressProblem(mesh_, problem.model, problem.stress, problem.boundary_conditions(),
                                  problem.solver)),
          filter_(build_filter(mesh_, problem.radius)) {
        problem_.validate();
        options_.mma.validate();
        xmin_ = Vector::Constant(mesh_.nele(), kDensityFloor);
        xmax_ = Vector::Ones(mesh_.nele());
        for (int e = 0; e < mesh_.nele(); ++e)
            if (options_.pin_passive && problem_.passive[static_cast<std::size_t>(e)])
                xmax_[e] = kDensityFloor;
    }

    const ProblemDefinition &problem() const noexcept { return problem_; }
    const DensityFilter &filter() const noexcept { return filter_; }
    StressAnalysis &analysis() noexcept { return analysis_; }

    /// MMA state of the loop in progress (valid inside the iteration callback).
    const MmaState *current_state() const noexcept { return running_; }

    /// Filtered densities with passive elements reset to the floor.
    Vector physical_density(const Vector &x) const {
        Vector xt = filter_density(filter_, x);
        for (int e = 0; e < mesh_.nele(); ++e)
            if (problem_.passive[static_cast<std::size_t>(e)])
                xt[e] = kDensityFloor;
        return xt;
    }

    struct Evaluation {
        Vector x_filtered;
        SensitivityResult sens;
        Vector df0; ///< objective gradient w.r.t. the design variables
        double volume = 0.0;
        Vector dvol; ///< volume gradient w.r.t. the design variables
    };

    /// Objective, constraint and their gradients at design x.
    Evaluation evaluate(const Vector &x) {
        Evaluation ev;
        ev.x_filtered = physical_density(x);
        ev.sens = analysis_.sensitivity(ev.x_filtered);
        Vector g = ev.sens.grad;
        Vector dv = Vector::Constant(mesh_.nele(), 1.0 / mesh_.nele());
        for (int e = 0; e < mesh_.nele(); ++e)
            if (problem_.passive[static_cast<std::size_t>(e)]) {
                g[e] = 0.0;
                dv[e] = 0.0;
            }
        ev.df0 = filter_sensitivity(filter_, g, options_.chain_rule);
        ev.dvol = filter_sensitivity(filter_, dv, options_.chain_rule);
        ev.volume = ev.x_filtered.mean();
        return ev;
    }

    /// Runs from x0, or from the problem's initial density when x0 is empty.
    /// A non-empty `resume` continues an earlier run (iteration count and
    /// asymptotes).
    OptimizationResult run(const Vector &x0 = Vector(), const IterationCallback &callback = {},
                           std::optional<MmaState> resume = std::nullopt) {
        OptimizationResult res;
        res.x = x0.size() ? x0 : problem_.initial_density();
        if (res.x.size() != mesh_.nele())
            throw StructuralError("StressMinimizer: initial design has the wrong size");
        for (int e = 0; e < mesh_.nele(); ++e)
            res.x[e] = std::clamp(res.x[e], xmin_[e], xmax_[e]);
        res.mma = resume ? *resume : MmaState(options_.mma);
        res.mma.settings = options_.mma;
        running_ = &res.mma;
        struct Reset {
            const MmaState *&p;
            ~Reset() { p = nullptr; }
        } reset{running_};

        const int first = res.mma.iter + 1;
        for (int it = first; it <= options_.max_iterations; ++it) {
            const auto t0 = std::chrono::steady_clock::now();
            const Evaluation ev = evaluate(res.x);
            const Vector fval = Vector::Constant(1, ev.volume - problem_.volfrac);
            const Matrix dfdx = ev.dvol.transpose();
            const Vector xnew = mma_update(res.mma, res.x, ev.sens.pnorm, ev.df0, fval, dfdx, xmin_, xmax_);

            IterationRecord rec;
            rec.iter = it;
            rec.pnorm = ev.sens.pnorm;
            rec.max_mises = ev.sens.field.max_mises();
            rec.volume = ev.volume;
            rec.change = (xnew - res.x).cwiseAbs().maxCoeff();
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            res.history.push_back(rec);

            res.x = xnew;
            res.x_filtered = ev.x_filtered;
            res.field = ev.sens.field;

            if (callback && !callback(rec, res.x, ev.x_filtered, ev.sens.field))
                break;
            if (options_.tolx > 0.0 && rec.change < options_.tolx) {
                res.converged = true;
                break;
            }
        }
        return res;
    }

  private:
    ProblemDefinition problem_;
    OptimizerOptions options_;
    GridMesh mesh_;
    StressAnalysis analysis_;
    DensityFilter filter_;
    Vector xmin_, xmax_;
    const MmaState *running_ = nullptr;
};

inline OptimizationResult run_optimization(const ProblemDefinition &problem, const OptimizerOptions &options,
                                           const IterationCallback &callback = {}) {
    StressMinimizer opt(problem, options);
    return opt.run(Vector(), callback);
}

} // namespace stresstopo
