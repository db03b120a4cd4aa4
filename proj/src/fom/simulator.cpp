#include "sdtpwl/fom.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

namespace sdtpwl::fom {

namespace {

Error fom_error(const std::string& what) { return Error("fom", what); }

} // namespace

int ReservoirConfig::injector_count() const
{
    return static_cast<int>(std::count_if(wells.begin(), wells.end(),
        [](const Well& w) { return w.kind == WellKind::RateInjector; }));
}

int ReservoirConfig::producer_count() const
{
    return static_cast<int>(wells.size()) - injector_count();
}

std::vector<int> ReservoirConfig::measurement_steps() const
{
    std::vector<int> out;
    for (int n = measure_every; n <= history_steps; n += measure_every)
        out.push_back(n);
    return out;
}

void ReservoirConfig::validate() const
{
    if (nx <= 0 || ny <= 0)
        throw fom_error(fmt::format("grid must have positive cell counts, got {}x{}", nx, ny));
    for (double v : {dx, dy, dz, mu_w, mu_o, rho_w, rho_o, p_init, n_w, n_o, krw_end, kro_end,
                     well_radius, dt_days, cfl_safety})
        if (!(v > 0) || !std::isfinite(v))
            throw fom_error("physical constants must be strictly positive and finite");
    if (swc < 0 || sor < 0 || swc + sor >= 1)
        throw fom_error(fmt::format("invalid residual saturations swc={} sor={}", swc, sor));
    if (sw_init < swc - 1e-12 || sw_init > 1 - sor + 1e-12)
        throw fom_error("initial water saturation outside [swc, 1-sor]");
    if (history_steps < 0 || forecast_steps < 0 || measure_every <= 0)
        throw fom_error("invalid schedule");
    if (0.14 * std::hypot(dx, dy) <= well_radius)
        throw fom_error("well radius exceeds the Peaceman equivalent radius");
    for (const auto& w : wells) {
        if (w.i < 0 || w.i >= nx || w.j < 0 || w.j >= ny)
            throw fom_error(fmt::format("well {} at ({}, {}) lies outside the grid", w.name, w.i, w.j));
        if (!std::isfinite(w.control))
            throw fom_error(fmt::format("well {} has a non-finite control", w.name));
    }
}

Vector LogPermField::porosity() const
{
    return (0.25 * ((beta.array().exp() / 200.0).pow(0.1))).matrix();
}

Vector LogPermField::permeability() const
{
    return (beta.array().exp() * units::milli_darcy).matrix();
}

Simulator::Simulator(ReservoirConfig config, const LogPermField& field)
    : config_(std::move(config))
{
    config_.validate();
    const int ng = config_.cell_count();
    if (field.beta.size() != ng)
        throw fom_error(fmt::format("field has {} cells, grid has {}", field.beta.size(), ng));
    if (!field.beta.allFinite())
        throw fom_error("log-permeability field contains non-finite values");

    porosity_ = field.porosity();
    perm_ = field.permeability();
    pore_volume_ = porosity_ * (config_.dx * config_.dy * config_.dz);

    const int nx = config_.nx;
    const int ny = config_.ny;
    auto harmonic = [&](int a, int b) { return 2.0 / (1.0 / perm_[a] + 1.0 / perm_[b]); };
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const int c = j * nx + i;
            if (i + 1 < nx)
                faces_.push_back({c, c + 1, harmonic(c, c + 1) * config_.dy * config_.dz / config_.dx});
            if (j + 1 < ny)
                faces_.push_back({c, c + nx, harmonic(c, c + nx) * config_.dx * config_.dz / config_.dy});
        }
    }

    const double r_eq = 0.14 * std::hypot(config_.dx, config_.dy);
    for (const auto& w : config_.wells) {
        const double k = perm_[w.cell(nx)];
        well_index_.push_back(2.0 * std::numbers::pi * k * config_.dz / std::log(r_eq / config_.well_radius));
    }

    // Largest slope of the fractional-flow curve, sampled finely, for the CFL bound.
    const double lo = config_.swc;
    const double hi = 1.0 - config_.sor;
    constexpr int samples = 2000;
    double prev = water_fractional_flow(lo);
    for (int k = 1; k <= samples; ++k) {
        const double s = lo + (hi - lo) * k / samples;
        const double f = water_fractional_flow(s);
        max_dfw_ = std::max(max_dfw_, (f - prev) / ((hi - lo) / samples));
        prev = f;
    }
    max_dfw_ *= 1.05;
}

double Simulator::water_fractional_flow(double sw) const
{
    const double lw = [&] {
        const double se = std::clamp((sw - config_.swc) / (1.0 - config_.swc - config_.sor), 0.0, 1.0);
        return config_.krw_end * std::pow(se, config_.n_w) / config_.mu_w;
    }();
    const double lo = [&] {
        const double se = std::clamp((sw - config_.swc) / (1.0 - config_.swc - config_.sor), 0.0, 1.0);
        return config_.kro_end * std::pow(1.0 - se, config_.n_o) / config_.mu_o;
    }();
    return lw / (lw + lo);
}

double Simulator::total_mobility(double sw) const
{
    const double se = std::clamp((sw - config_.swc) / (1.0 - config_.swc - config_.sor), 0.0, 1.0);
    return config_.krw_end * std::pow(se, config_.n_w) / config_.mu_w
        + config_.kro_end * std::pow(1.0 - se, config_.n_o) / config_.mu_o;
}

StateField Simulator::initial_state() const
{
    const int ng = config_.cell_count();
    return {Vector::Constant(ng, config_.p_init), Vector::Constant(ng, config_.sw_init)};
}

StateField Simulator::step(const StateField& state, WellResponse* response, StepDiagnostics* diag,
                           int step_index) const
{
    const int ng = config_.cell_count();
    const int nx = config_.nx;
    const double lo_bound = config_.swc;
    const double hi_bound = 1.0 - config_.sor;
    constexpr double bound_slack = 1e-10;

    if (state.pressure.size() != ng || state.saturation.size() != ng)
        throw fom_error(fmt::format("step {}: state size mismatch", step_index));
    for (int c = 0; c < ng; ++c) {
        const double s = state.saturation[c];
        if (!(s >= lo_bound - bound_slack && s <= hi_bound + bound_slack))
            throw fom_error(fmt::format("step {}: saturation {} in cell {} outside [{}, {}]", step_index, s, c,
                                        lo_bound, hi_bound));
    }

    Vector lam_t(ng);
    for (int c = 0; c < ng; ++c)
        lam_t[c] = total_mobility(state.saturation[c]);

    // Pressure: sum_f T lam (p_c - p_n) + WI lam (p_c - bhp) = q_inj
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(4 * faces_.size() + config_.wells.size() + ng);
    Vector rhs = Vector::Zero(ng);
    std::vector<double> face_t(faces_.size());
    for (std::size_t f = 0; f < faces_.size(); ++f) {
        const auto& face = faces_[f];
        face_t[f] = face.trans * 0.5 * (lam_t[face.a] + lam_t[face.b]);
        triplets.emplace_back(face.a, face.a, face_t[f]);
        triplets.emplace_back(face.b, face.b, face_t[f]);
        triplets.emplace_back(face.a, face.b, -face_t[f]);
        triplets.emplace_back(face.b, face.a, -face_t[f]);
    }
    bool pressure_support = false;
    double total_injection = 0; // m^3/s
    for (std::size_t w = 0; w < config_.wells.size(); ++w) {
        const auto& well = config_.wells[w];
        if (!well.open)
            continue;
        const int c = well.cell(nx);
        if (well.kind == WellKind::BhpProducer) {
            const double j = well_index_[w] * lam_t[c];
            triplets.emplace_back(c, c, j);
            rhs[c] += j * well.control;
            pressure_support = true;
        } else {
            const double q = well.control / units::day;
            rhs[c] += q;
            total_injection += q;
        }
    }

    Vector pressure;
    if (pressure_support) {
        // explicit diagonal so every cell is in the pattern
        for (int c = 0; c < ng; ++c)
            triplets.emplace_back(c, c, 0.0);
        Eigen::SparseMatrix<double> a(ng, ng);
        a.setFromTriplets(triplets.begin(), triplets.end());
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
        solver.compute(a);
        if (solver.info() != Eigen::Success)
            throw fom_error(fmt::format("step {}: pressure factorization failed", step_index));
        pressure = solver.solve(rhs);
        if (solver.info() != Eigen::Success || !pressure.allFinite())
            throw fom_error(fmt::format("step {}: pressure solve did not converge", step_index));
        // one step of iterative refinement tightens the well balance
        const Vector resid = rhs - a * pressure;
        pressure += solver.solve(resid);
        if (!pressure.allFinite())
            throw fom_error(fmt::format("step {}: pressure solve produced non-finite values", step_index));
    } else {
        if (std::abs(total_injection) > 0)
            throw fom_error(fmt::format("step {}: injection without any open pressure-controlled well", step_index));
        pressure = state.pressure;
    }

    // Fluxes frozen over the report step.
    std::vector<double> flux(faces_.size()); // a -> b
    for (std::size_t f = 0; f < faces_.size(); ++f)
        flux[f] = face_t[f] * (pressure[faces_[f].a] - pressure[faces_[f].b]);
    std::vector<double> well_q(config_.wells.size(), 0.0); // +outflow for producers, +inflow for injectors
    double total_production = 0;
    for (std::size_t w = 0; w < config_.wells.size(); ++w) {
        const auto& well = config_.wells[w];
        if (!well.open)
            continue;
        const int c = well.cell(nx);
        if (well.kind == WellKind::BhpProducer) {
            well_q[w] = well_index_[w] * lam_t[c] * (pressure[c] - well.control);
            total_production += well_q[w];
        } else {
            well_q[w] = well.control / units::day;
        }
    }

    // Throughput per cell bounds the explicit transport step.
    Vector inflow = Vector::Zero(ng);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
        if (flux[f] > 0)
            inflow[faces_[f].b] += flux[f];
        else
            inflow[faces_[f].a] -= flux[f];
    }
    for (std::size_t w = 0; w < config_.wells.size(); ++w) {
        const int c = config_.wells[w].cell(nx);
        const bool injecting = config_.wells[w].kind == WellKind::RateInjector ? well_q[w] > 0 : well_q[w] < 0;
        if (injecting)
            inflow[c] += std::abs(well_q[w]);
    }
    const double dt = config_.dt_days * units::day;
    double dt_cfl = dt;
    for (int c = 0; c < ng; ++c)
        if (inflow[c] > 0)
            dt_cfl = std::min(dt_cfl, config_.cfl_safety * pore_volume_[c] / (max_dfw_ * inflow[c]));
    const int substeps = std::max(1, static_cast<int>(std::ceil(dt / dt_cfl - 1e-12)));
    const double h = dt / substeps;

    Vector sat = state.saturation;
    Vector fw(ng);
    Vector dw(ng);
    std::vector<double> water_out(config_.wells.size(), 0.0);
    double water_in = 0;
    for (int k = 0; k < substeps; ++k) {
        for (int c = 0; c < ng; ++c)
            fw[c] = water_fractional_flow(sat[c]);
        dw.setZero();
        for (std::size_t f = 0; f < faces_.size(); ++f) {
            const double q = flux[f];
            const double wflux = q * (q > 0 ? fw[faces_[f].a] : fw[faces_[f].b]);
            dw[faces_[f].a] -= wflux;
            dw[faces_[f].b] += wflux;
        }
        for (std::size_t w = 0; w < config_.wells.size(); ++w) {
            const auto& well = config_.wells[w];
            if (!well.open)
                continue;
            const int c = well.cell(nx);
            if (well.kind == WellKind::RateInjector) {
                // injected fluid is water; a negative rate withdraws the cell mixture
                const double wq = well_q[w] >= 0 ? well_q[w] : well_q[w] * fw[c];
                dw[c] += wq;
                water_in += wq * h;
            } else {
                const double wq = well_q[w] * fw[c];
                dw[c] -= wq;
                water_out[w] += wq * h;
            }
        }
        for (int c = 0; c < ng; ++c) {
            double s = sat[c] + h * dw[c] / pore_volume_[c];
            if (!(s >= lo_bound - bound_slack && s <= hi_bound + bound_slack))
                throw fom_error(fmt::format("step {}: saturation update left bounds ({} in cell {})", step_index, s, c));
            sat[c] = std::clamp(s, lo_bound, hi_bound);
        }
    }

    if (response) {
        response->injector_bhp.clear();
        response->liquid_rate.clear();
        response->water_cut.clear();
        for (std::size_t w = 0; w < config_.wells.size(); ++w) {
            const auto& well = config_.wells[w];
            const int c = well.cell(nx);
            if (well.kind == WellKind::RateInjector) {
                const double bhp = well.open ? pressure[c] + well_q[w] / (well_index_[w] * lam_t[c]) : pressure[c];
                response->injector_bhp.push_back(bhp);
            } else {
                response->liquid_rate.push_back(well_q[w] * units::day);
                const double wct = std::abs(well_q[w]) > 0 ? water_out[w] / (well_q[w] * dt) : 0.0;
                response->water_cut.push_back(std::clamp(wct, 0.0, 1.0));
            }
        }
    }

    if (diag) {
        diag->substeps = substeps;
        diag->injected = total_injection * dt;
        diag->produced = total_production * dt;
        diag->water_injected = water_in;
        diag->water_produced = 0;
        for (double v : water_out)
            diag->water_produced += v;
        diag->water_in_place_change = pore_volume_.dot(sat - state.saturation);
        const double imbalance = std::abs(total_injection - total_production);
        diag->volume_balance = total_injection > 0 ? imbalance / total_injection : imbalance;
    }

    return {std::move(pressure), std::move(sat)};
}

Simulation Simulator::run(int steps) const
{
    Simulation sim;
    sim.states.reserve(steps + 1);
    sim.states.push_back(initial_state());
    for (int n = 1; n <= steps; ++n) {
        WellResponse r;
        StepDiagnostics d;
        sim.states.push_back(step(sim.states.back(), &r, &d, n));
        sim.responses.push_back(std::move(r));
        sim.diagnostics.push_back(d);
    }
    return sim;
}

namespace {
std::atomic<std::uint64_t> run_counter{0};
}

std::uint64_t simulation_count() { return run_counter.load(); }

Simulation simulate(const ReservoirConfig& config, const LogPermField& field, int steps)
{
    ++run_counter;
    Simulator sim(config, field);
    return sim.run(steps < 0 ? config.history_steps : steps);
}

StateField step(const StateField& state, const LogPermField& field, const ReservoirConfig& config)
{
    return Simulator(config, field).step(state);
}

} // namespace sdtpwl::fom
