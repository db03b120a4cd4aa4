#include "sdtpwl/assim.hpp"
#include "sdtpwl/rom.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace sdtpwl::assim {

Vector steepest_descent(const Vector& x0, const Objective& objective, const HmConfig& config, InnerTrace* trace)
{
    config.validate();
    InnerTrace local;
    InnerTrace& tr = trace ? *trace : local;
    tr = {};
    Vector x = x0;
    auto [cost, grad] = objective.cost_and_gradient(x);
    ++tr.gradient_evaluations;
    tr.cost.push_back(cost);
    tr.gradient_norm.push_back(grad.norm());
    if (grad.norm() <= config.stationary_tolerance * std::max(1.0, std::abs(cost))) {
        tr.stop_reason = "stationary";
        return x;
    }
    Vector prev_x, prev_g;
    double last_alpha = 1.0 / grad.norm();
    for (int k = 1; k <= config.max_iterations; ++k) {
        const double gg = grad.squaredNorm();
        double alpha = 1.0 / std::sqrt(gg);
        if (k > 1) {
            const Vector s = x - prev_x, y = grad - prev_g;
            const double sy = s.dot(y);
            alpha = sy > 0 ? s.squaredNorm() / sy : 2.0 * last_alpha;
        }
        bool accepted = false;
        Vector trial;
        for (int ls = 0; ls < config.line_search_max; ++ls) {
            trial = x - alpha * grad;
            double c = std::numeric_limits<double>::infinity();
            try {
                c = objective.cost(trial);
            } catch (const Error&) {
                // a trial the surrogate cannot evaluate counts as no descent
            }
            ++tr.line_search_evaluations;
            if (c <= cost - config.armijo * alpha * gg) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            tr.stop_reason = "line search found no descent";
            break;
        }
        auto [new_cost, new_grad] = objective.cost_and_gradient(trial);
        ++tr.gradient_evaluations;
        prev_x = x;
        prev_g = grad;
        last_alpha = alpha;
        const double dj = std::abs(new_cost - cost) / std::max(std::abs(new_cost), 1.0);
        const double dx = (trial - x).norm() / std::max(trial.norm(), 1.0);
        x = trial;
        cost = new_cost;
        grad = new_grad;
        tr.iterations = k;
        tr.cost.push_back(cost);
        tr.gradient_norm.push_back(grad.norm());
        tr.step.push_back(alpha);
        if (dj < config.eta_cost) {
            tr.stop_reason = "cost change below tolerance";
            break;
        }
        if (dx < config.eta_xi) {
            tr.stop_reason = "parameter change below tolerance";
            break;
        }
        if (grad.norm() <= config.stationary_tolerance * std::max(1.0, std::abs(cost))) {
            tr.stop_reason = "stationary";
            break;
        }
        if (k == config.max_iterations)
            tr.stop_reason = "iteration cap";
    }
    return x;
}

Vector minimize_inner(const Vector& xi0, const tpwl::TpwlSystem& system, const Observations& obs,
                      const Vector& xi_prior, const HmConfig& config, InnerTrace* trace)
{
    std::vector<int> anchors;
    const std::vector<int>* frozen = nullptr;
    if (config.freeze_anchors) {
        tpwl::SimulateOptions so;
        so.evaluation = config.evaluation;
        so.tolerance = config.coupling_tolerance;
        anchors = tpwl::simulate_reduced(system, xi0, so).anchors;
        frozen = &anchors;
    }
    Objective obj;
    obj.cost = [&](const Vector& xi) { return reduced_cost(xi, system, obs, xi_prior, config, frozen).cost; };
    obj.cost_and_gradient = [&](const Vector& xi) {
        const auto e = reduced_cost(xi, system, obs, xi_prior, config, frozen);
        const auto lambda = adjoint_sweep(xi, e.run, system, obs);
        return std::pair{e.cost, reduced_gradient(xi, e.run, lambda, system, obs, xi_prior)};
    };
    return steepest_descent(xi0, obj, config, trace);
}

HmResult history_match(const Vector& xi0, const FomContext& fom, tpwl::TpwlSystem system, const Vector& xi_prior,
                       const HmConfig& config, const FomBudget& offline)
{
    config.validate();
    const auto band = acceptance_band(fom.obs->size());
    HmResult res;
    res.budget = offline;
    Vector xi = xi0;
    double best = std::numeric_limits<double>::infinity();
    for (int outer = 1; outer <= config.outer_max; ++outer) {
        OuterLoop loop;
        loop.xi = minimize_inner(xi, system, *fom.obs, xi_prior, config, &loop.inner);
        loop.reduced_cost = loop.inner.cost.back();
        auto run = rom::run_training(*fom.kle, *fom.config, loop.xi);
        loop.true_cost = fom_cost(loop.xi, xi_prior, run.sim, *fom.obs);
        loop.accepted = band.contains(2.0 * loop.true_cost);
        if (loop.true_cost < best) {
            best = loop.true_cost;
            res.xi = loop.xi;
            res.true_cost = loop.true_cost;
            res.accepted = loop.accepted;
            res.final_run = run.sim;
        }
        res.outer.push_back(loop);
        if (loop.accepted) {
            ++res.budget.evaluation_runs;
            res.stop_reason = fmt::format("accepted in outer loop {}", outer);
            break;
        }
        if (outer == config.outer_max) {
            ++res.budget.evaluation_runs;
            res.stop_reason = "outer-loop cap reached without acceptance";
            break;
        }
        try {
            system = tpwl::rebuild_with(system, run, *fom.config);
        } catch (const Error& e) {
            ++res.budget.evaluation_runs;
            res.stop_reason = fmt::format("stopped in outer loop {}: {}", outer, e.what());
            break;
        }
        ++res.budget.rebuild_runs;
        xi = loop.xi;
    }
    res.field = fom.kle->decode(res.xi);
    return res;
}

std::vector<int> pick_backgrounds(int available, int count, std::uint64_t seed)
{
    if (count < 0 || count > available)
        throw Error("assim", fmt::format("cannot pick {} backgrounds from {} training runs", count, available));
    std::vector<int> idx(static_cast<std::size_t>(available));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(count));
    return idx;
}

std::vector<RmlMember> rml_ensemble(const std::vector<int>& backgrounds, const tpwl::TpwlSystem& system,
                                    const Observations& obs, const HmConfig& config)
{
    std::vector<RmlMember> out;
    for (int b : backgrounds) {
        if (b < 0 || b >= static_cast<int>(system.trajectories().size()))
            throw Error("assim", fmt::format("background {} is not a training trajectory", b));
        RmlMember m;
        m.background = b;
        m.xi_prior = system.trajectories()[static_cast<std::size_t>(b)].xi;
        m.xi = minimize_inner(m.xi_prior, system, obs, m.xi_prior, config, &m.inner);
        m.reduced_cost = m.inner.cost.back();
        out.push_back(std::move(m));
    }
    return out;
}

Vector fd_minimize(const Vector& xi0, const std::function<double(const Vector&)>& cost, const HmConfig& config,
                   const FdOptions& fd, InnerTrace* trace, int* gradient_calls, int* line_search_calls)
{
    int grads = 0, searches = 0;
    Objective obj;
    obj.cost = [&](const Vector& x) {
        ++searches;
        return cost(x);
    };
    obj.cost_and_gradient = [&](const Vector& x) {
        ++grads;
        const double base = cost(x);
        Vector g(x.size());
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            Vector xp = x;
            xp(j) += fd.step;
            g(j) = (cost(xp) - base) / fd.step;
        }
        return std::pair{base, g};
    };
    Vector x = steepest_descent(xi0, obj, config, trace);
    if (gradient_calls)
        *gradient_calls = grads;
    if (line_search_calls)
        *line_search_calls = searches;
    return x;
}

HmResult fd_baseline(const Vector& xi0, const FomContext& fom, const Vector& xi_prior, const HmConfig& config,
                     const FdOptions& fd)
{
    auto cost = [&](const Vector& xi) {
        const auto run = rom::run_training(*fom.kle, *fom.config, xi);
        return fom_cost(xi, xi_prior, run.sim, *fom.obs);
    };
    OuterLoop loop;
    int grads = 0, searches = 0;
    loop.xi = fd_minimize(xi0, cost, config, fd, &loop.inner, &grads, &searches);
    HmResult res;
    res.budget.gradient_runs = grads * static_cast<int>(xi0.size() + 1);
    res.budget.line_search_runs = searches;
    auto run = rom::run_training(*fom.kle, *fom.config, loop.xi);
    ++res.budget.evaluation_runs;
    loop.true_cost = fom_cost(loop.xi, xi_prior, run.sim, *fom.obs);
    loop.reduced_cost = loop.true_cost;
    loop.accepted = acceptance_band(fom.obs->size()).contains(2.0 * loop.true_cost);
    res.xi = loop.xi;
    res.true_cost = loop.true_cost;
    res.accepted = loop.accepted;
    res.stop_reason = loop.inner.stop_reason;
    res.final_run = run.sim;
    res.field = fom.kle->decode(res.xi);
    res.outer.push_back(std::move(loop));
    return res;
}

} // namespace sdtpwl::assim
