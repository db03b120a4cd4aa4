#include "sdtpwl/assim.hpp"

#include <Eigen/LU>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace sdtpwl::assim {

std::size_t Observations::size() const
{
    std::size_t n = 0;
    for (const auto& v : values)
        n += static_cast<std::size_t>(v.size());
    return n;
}

Observations Observations::scaled_covariance(double factor) const
{
    Observations o = *this;
    for (auto& s : o.sigma)
        s *= std::sqrt(factor);
    return o;
}

std::vector<Vector> noise_std(const fom::ObservationSet& truth, int injectors, int producers, const NoiseModel& noise)
{
    // Data types in a flattened block: [BHP x injectors, rate x producers, WCT x producers].
    const int per = injectors + 2 * producers;
    auto type_of = [&](int k) { return k < injectors ? 0 : (k < injectors + producers ? 1 : 2); };
    double type_max[3] = {0, 0, 0};
    for (const auto& v : truth.values)
        for (int k = 0; k < per; ++k)
            type_max[type_of(k)] = std::max(type_max[type_of(k)], std::abs(v(k)));
    std::vector<Vector> out;
    for (const auto& v : truth.values) {
        Vector s(per);
        for (int k = 0; k < per; ++k) {
            s(k) = std::max(noise.fraction * std::abs(v(k)), noise.floor_fraction * type_max[type_of(k)]);
            if (!(s(k) > 0))
                s(k) = 1e-6; // a data type that is identically zero
        }
        out.push_back(std::move(s));
    }
    return out;
}

Observations make_observations(const fom::ObservationSet& truth, int injectors, int producers,
                               const NoiseModel& noise, std::uint64_t seed, bool perturb)
{
    Observations obs;
    obs.steps = truth.steps;
    obs.sigma = noise_std(truth, injectors, producers, noise);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t m = 0; m < truth.values.size(); ++m) {
        Vector v = truth.values[m];
        if (perturb)
            for (Eigen::Index k = 0; k < v.size(); ++k)
                v(k) += obs.sigma[m](k) * normal(rng);
        obs.values.push_back(std::move(v));
    }
    return obs;
}

double data_misfit(const std::vector<Vector>& predicted, const Observations& obs)
{
    if (predicted.size() != obs.values.size())
        throw Error("assim", fmt::format("{} predicted times for {} observed", predicted.size(), obs.values.size()));
    double j = 0;
    for (std::size_t m = 0; m < predicted.size(); ++m)
        j += ((obs.values[m] - predicted[m]).cwiseQuotient(obs.sigma[m])).squaredNorm();
    return 0.5 * j;
}

Band acceptance_band(std::size_t data_count)
{
    const double n = static_cast<double>(data_count);
    const double w = 2.0 * std::sqrt(2.0 * n);
    return {n - w, n + w};
}

void HmConfig::validate() const
{
    if (!(eta_cost > 0) || !(eta_xi > 0))
        throw Error("assim", "stopping tolerances must be positive");
    if (max_iterations < 1)
        throw Error("assim", "the iteration cap must be at least 1");
    if (outer_max < 1)
        throw Error("assim", "the outer-loop cap must be at least 1");
}

double prior_cost(const Vector& xi, const Vector& xi_prior) { return 0.5 * (xi - xi_prior).squaredNorm(); }

ReducedEvaluation reduced_cost(const Vector& xi, const tpwl::TpwlSystem& system, const Observations& obs,
                               const Vector& xi_prior, const HmConfig& config, const std::vector<int>* frozen)
{
    ReducedEvaluation e;
    tpwl::SimulateOptions so;
    so.frozen_anchors = frozen;
    so.evaluation = config.evaluation;
    so.tolerance = config.coupling_tolerance;
    e.run = tpwl::simulate_reduced(system, xi, so);
    e.prior = prior_cost(xi, xi_prior);
    e.data = data_misfit(e.run.responses, obs);
    e.cost = e.prior + e.data;
    return e;
}

namespace {

struct BlockLayout
{
    std::vector<int> offset;
    int total = 0;
};

BlockLayout blocks(const tpwl::TpwlSystem& sys)
{
    BlockLayout b;
    for (int d = 0; d < sys.layout().size(); ++d) {
        b.offset.push_back(b.total);
        b.total += sys.state_size(d);
    }
    return b;
}

// Coupled operators of the transition to step n + 1 (0-based n).
struct StepOperators
{
    Matrix coupling; // I - E_nb
    Matrix self;     // block-diagonal E_self
    Matrix g;        // stacked G
};

StepOperators operators(const tpwl::TpwlSystem& sys, const BlockLayout& b, int n, int anchor)
{
    StepOperators op{Matrix::Identity(b.total, b.total), Matrix::Zero(b.total, b.total),
                     Matrix::Zero(b.total, sys.parameters())};
    for (int d = 0; d < sys.layout().size(); ++d) {
        const auto& jac = sys.step_jacobians(n, d, anchor);
        const int r = b.offset[static_cast<std::size_t>(d)], ls = sys.state_size(d);
        op.self.block(r, r, ls, ls) = jac.e_self;
        op.g.middleRows(r, ls) = jac.g;
        int pos = 0;
        for (int nb : sys.layout().domains[static_cast<std::size_t>(d)].neighbors) {
            const int w = sys.state_size(nb);
            op.coupling.block(r, b.offset[static_cast<std::size_t>(nb)], ls, w) -= jac.e_nb.middleCols(pos, w);
            pos += w;
        }
    }
    return op;
}

} // namespace

Adjoint adjoint_sweep(const Vector& /*xi*/, const tpwl::ReducedRun& run, const tpwl::TpwlSystem& sys,
                      const Observations& obs)
{
    const int steps = sys.steps();
    const auto b = blocks(sys);
    const auto& ms = sys.measurement_steps();
    if (obs.values.size() != ms.size())
        throw Error("assim", "observations do not match the measurement schedule");

    // Forcing A^T R^-1 r at each measured step.
    std::vector<Vector> forcing(static_cast<std::size_t>(steps), Vector::Zero(b.total));
    for (std::size_t m = 0; m < ms.size(); ++m) {
        const int step = ms[m];
        const int a = run.anchors[static_cast<std::size_t>(step - 1)];
        const Vector w = (obs.values[m] - run.responses[m]).cwiseQuotient(obs.sigma[m].cwiseAbs2());
        for (int d = 0; d < sys.layout().size(); ++d) {
            const auto& idx = sys.data_index(d);
            if (idx.empty())
                continue;
            Vector wd(static_cast<Eigen::Index>(idx.size()));
            for (std::size_t i = 0; i < idx.size(); ++i)
                wd(static_cast<Eigen::Index>(i)) = w(idx[i]);
            const auto& jac = sys.well_jacobians(static_cast<int>(m), d, a);
            forcing[static_cast<std::size_t>(step - 1)].segment(b.offset[static_cast<std::size_t>(d)],
                                                                  sys.state_size(d)) += jac.a.transpose() * wd;
        }
    }
    Adjoint lambda(static_cast<std::size_t>(steps));
    Vector next = Vector::Zero(b.total); // E_self^{n+1 T} lambda^{n+1}
    for (int n = steps; n >= 1; --n) {
        const auto op = operators(sys, b, n - 1, run.anchors[static_cast<std::size_t>(n - 1)]);
        const Vector rhs = next + forcing[static_cast<std::size_t>(n - 1)];
        Vector lam;
        if (sys.coupled()) {
            const Eigen::FullPivLU<Matrix> lu(op.coupling.transpose());
            if (!lu.isInvertible())
                throw Error("assim", fmt::format("step {}: singular coupled adjoint system", n));
            lam = lu.solve(rhs);
        } else {
            lam = rhs;
        }
        next = op.self.transpose() * lam;
        std::vector<Vector> per;
        for (int d = 0; d < sys.layout().size(); ++d)
            per.push_back(lam.segment(b.offset[static_cast<std::size_t>(d)], sys.state_size(d)));
        lambda[static_cast<std::size_t>(n - 1)] = std::move(per);
    }
    return lambda;
}

Vector reduced_gradient(const Vector& xi, const tpwl::ReducedRun& run, const Adjoint& lambda,
                        const tpwl::TpwlSystem& sys, const Observations& obs, const Vector& xi_prior)
{
    Vector g = xi - xi_prior;
    const auto& ms = sys.measurement_steps();
    for (std::size_t m = 0; m < ms.size(); ++m) {
        const int a = run.anchors[static_cast<std::size_t>(ms[m] - 1)];
        const Vector w = (obs.values[m] - run.responses[m]).cwiseQuotient(obs.sigma[m].cwiseAbs2());
        for (int d = 0; d < sys.layout().size(); ++d) {
            const auto& idx = sys.data_index(d);
            if (idx.empty())
                continue;
            Vector wd(static_cast<Eigen::Index>(idx.size()));
            for (std::size_t i = 0; i < idx.size(); ++i)
                wd(static_cast<Eigen::Index>(i)) = w(idx[i]);
            g -= sys.well_jacobians(static_cast<int>(m), d, a).b.transpose() * wd;
        }
    }
    for (int n = 1; n <= sys.steps(); ++n) {
        const int a = run.anchors[static_cast<std::size_t>(n - 1)];
        for (int d = 0; d < sys.layout().size(); ++d)
            g -= sys.step_jacobians(n - 1, d, a).g.transpose() *
                 lambda[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(d)];
    }
    return g;
}

double fom_cost(const Vector& xi, const Vector& xi_prior, const fom::Simulation& sim, const Observations& obs)
{
    const auto set = fom::observe(sim.responses, obs.steps);
    return prior_cost(xi, xi_prior) + data_misfit(set.values, obs);
}

} // namespace sdtpwl::assim
