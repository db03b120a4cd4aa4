#pragma once

#include "sdtpwl/common.hpp"
#include "sdtpwl/fom.hpp"
#include "sdtpwl/geostat.hpp"
#include "sdtpwl/tpwl.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sdtpwl::assim {

struct NoiseModel
{
    double fraction = 0.05;      // std = fraction * |true value|
    double floor_fraction = 0.01; // lower bound: fraction of the largest |value| of the same data type
};

/// Measured data with independent Gaussian errors, one block per time.
struct Observations
{
    std::vector<int> steps;
    std::vector<Vector> values;
    std::vector<Vector> sigma;

    std::size_t size() const;
    std::size_t time_count() const { return steps.size(); }
    Observations scaled_covariance(double factor) const;
};

/// Standard deviations for true data laid out as fom::flatten does.
std::vector<Vector> noise_std(const fom::ObservationSet& truth, int injectors, int producers, const NoiseModel& noise);

/// truth + sigma * N(0, 1); sigma from the noise model. `perturb` false keeps
/// the true values (noise-free twin) while still assigning sigma.
Observations make_observations(const fom::ObservationSet& truth, int injectors, int producers,
                               const NoiseModel& noise, std::uint64_t seed, bool perturb = true);

/// 1/2 sum r^T R^-1 r over all times.
double data_misfit(const std::vector<Vector>& predicted, const Observations& obs);

struct Band
{
    double lower = 0, upper = 0;
    bool contains(double two_j) const { return two_j >= lower && two_j <= upper; }
};

/// N - 2 sqrt(2N) <= 2J <= N + 2 sqrt(2N) for N scalar data.
Band acceptance_band(std::size_t data_count);

struct HmConfig
{
    double eta_cost = 1e-4;
    double eta_xi = 1e-3;
    int max_iterations = 30;
    int outer_max = 6;
    double armijo = 1e-4;
    int line_search_max = 30;
    double stationary_tolerance = 1e-10;
    tpwl::Evaluation evaluation = tpwl::Evaluation::Coupled;
    double coupling_tolerance = 1e-13;
    /// Keep the anchors chosen at the start point for the whole inner loop,
    /// so every line-search trial sees the same piecewise-linear model.
    bool freeze_anchors = false;

    void validate() const;
};

/// Prior term with R_p^-1 applied in KLE coordinates: 1/2 |xi - xi_p|^2,
/// where beta_p = beta_b + phi_beta xi_p.
double prior_cost(const Vector& xi, const Vector& xi_prior);

struct ReducedEvaluation
{
    double cost = 0;
    double prior = 0;
    double data = 0;
    tpwl::ReducedRun run;
};

ReducedEvaluation reduced_cost(const Vector& xi, const tpwl::TpwlSystem& system, const Observations& obs,
                               const Vector& xi_prior, const HmConfig& config,
                               const std::vector<int>* frozen_anchors = nullptr);

/// lambda[n][d] for n = 1..N stored at index n - 1.
using Adjoint = std::vector<std::vector<Vector>>;

Adjoint adjoint_sweep(const Vector& xi, const tpwl::ReducedRun& run, const tpwl::TpwlSystem& system,
                      const Observations& obs);

Vector reduced_gradient(const Vector& xi, const tpwl::ReducedRun& run, const Adjoint& lambda,
                        const tpwl::TpwlSystem& system, const Observations& obs, const Vector& xi_prior);

/// Cost and gradient for the steepest-descent driver.
struct Objective
{
    std::function<double(const Vector&)> cost;
    std::function<std::pair<double, Vector>(const Vector&)> cost_and_gradient;
};

struct InnerTrace
{
    std::vector<double> cost;          // cost[k] at iterate k
    std::vector<double> gradient_norm; // at iterate k
    std::vector<double> step;          // accepted step length per iteration
    int iterations = 0;
    int line_search_evaluations = 0;
    int gradient_evaluations = 0;
    std::string stop_reason;
};

/// Steepest descent with Armijo backtracking (halving). The first trial step
/// moves a unit distance; later trials use the Barzilai-Borwein length.
Vector steepest_descent(const Vector& x0, const Objective& objective, const HmConfig& config, InnerTrace* trace);

Vector minimize_inner(const Vector& xi0, const tpwl::TpwlSystem& system, const Observations& obs,
                      const Vector& xi_prior, const HmConfig& config, InnerTrace* trace);

/// FOM runs spent by one calibration, by purpose.
struct FomBudget
{
    int snapshot_runs = 0;
    int rbf_runs = 0;
    int rebuild_runs = 0;    // outer-loop runs that became new centers
    int evaluation_runs = 0; // outer-loop runs used only to evaluate the true cost
    int gradient_runs = 0;   // finite-difference baseline
    int line_search_runs = 0;
    int forecast_runs = 0;   // diagnostics outside the calibration

    int total() const
    {
        return snapshot_runs + rbf_runs + rebuild_runs + evaluation_runs + gradient_runs + line_search_runs;
    }
};

struct OuterLoop
{
    InnerTrace inner;
    Vector xi;
    double reduced_cost = 0;
    double true_cost = 0;
    bool accepted = false;
};

struct HmResult
{
    Vector xi;
    fom::LogPermField field;
    std::vector<OuterLoop> outer;
    FomBudget budget;
    double true_cost = 0;
    bool accepted = false;
    std::string stop_reason;
    fom::Simulation final_run; // FOM run at xi
};

/// Everything the calibration needs to call the full model.
struct FomContext
{
    const fom::ReservoirConfig* config = nullptr;
    const geostat::KleModel* kle = nullptr;
    const Observations* obs = nullptr;
};

/// True cost: prior in KLE coordinates plus the FOM data misfit.
double fom_cost(const Vector& xi, const Vector& xi_prior, const fom::Simulation& sim, const Observations& obs);

HmResult history_match(const Vector& xi0, const FomContext& fom, tpwl::TpwlSystem system, const Vector& xi_prior,
                       const HmConfig& config, const FomBudget& offline = {});

struct RmlMember
{
    int background = 0; // training trajectory index
    Vector xi_prior;
    Vector xi;
    InnerTrace inner;
    double reduced_cost = 0;
};

/// One inner minimization per background (prior mean and start both set to
/// the background's xi) against a shared system; no FOM runs.
std::vector<RmlMember> rml_ensemble(const std::vector<int>& backgrounds, const tpwl::TpwlSystem& system,
                                    const Observations& obs, const HmConfig& config);

/// Picks `count` distinct training trajectories with a seeded shuffle.
std::vector<int> pick_backgrounds(int available, int count, std::uint64_t seed);

/// One-sided finite-difference steepest descent on the full model.
struct FdOptions
{
    double step = 1e-2;
};

HmResult fd_baseline(const Vector& xi0, const FomContext& fom, const Vector& xi_prior, const HmConfig& config,
                     const FdOptions& fd = {});

/// Same driver with a caller-supplied cost in place of the FOM;
/// `runs` counts every cost call.
Vector fd_minimize(const Vector& xi0, const std::function<double(const Vector&)>& cost, const HmConfig& config,
                   const FdOptions& fd, InnerTrace* trace, int* gradient_calls, int* line_search_calls);

} // namespace sdtpwl::assim
