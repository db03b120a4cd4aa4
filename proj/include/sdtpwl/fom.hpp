#pragma once

#include "sdtpwl/common.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sdtpwl::fom {

enum class WellKind { RateInjector, BhpProducer };

struct Well
{
    std::string name;
    int i = 0; // column index, 0-based
    int j = 0; // row index, 0-based
    WellKind kind = WellKind::BhpProducer;
    /// Injection rate in m^3/day for rate injectors, bottom-hole pressure in
    /// Pa for producers.
    double control = 0.0;
    bool open = true;

    int cell(int nx) const { return j * nx + i; }
};

/// Physical and numerical setup of the 2D oil-water model. SI units
/// internally except `dt_days` and well rates.
struct ReservoirConfig
{
    int nx = 0;
    int ny = 0;
    double dx = 0, dy = 0, dz = 0;       // m
    double mu_w = 0.4e-3, mu_o = 2e-3;   // Pa s
    double rho_w = 1014, rho_o = 859;    // kg/m^3, unused without gravity
    double p_init = 30e6;                // Pa
    double sw_init = 0.2;
    double swc = 0.2, sor = 0.2;
    double n_w = 4.0, n_o = 4.0;
    double krw_end = 1.0, kro_end = 1.0;
    double well_radius = 0.1;            // m
    double dt_days = 36.5;
    int history_steps = 50;              // N
    int forecast_steps = 100;            // total steps of a prediction run
    int measure_every = 2;               // N_0 = history_steps / measure_every
    double cfl_safety = 0.9;
    std::vector<Well> wells;

    int cell_count() const { return nx * ny; }
    int injector_count() const;
    int producer_count() const;
    /// Scalars measured per measurement time: one BHP per injector, a liquid
    /// rate and a water cut per producer.
    int data_per_time() const { return injector_count() + 2 * producer_count(); }
    /// Steps (1-based) at which history data are recorded.
    std::vector<int> measurement_steps() const;

    /// Throws Error("fom", ...) on any violated invariant.
    void validate() const;
};

/// Reads the [grid], [fluid], [rock], [schedule] and [wells] sections of an
/// INI-style key=value file.
ReservoirConfig load_reservoir_config(const std::filesystem::path& path);

struct StateField
{
    Vector pressure;   // Pa
    Vector saturation; // water saturation

    bool operator==(const StateField&) const = default;
};

/// Log-permeability (ln mD) per cell.
struct LogPermField
{
    Vector beta;

    /// phi = 0.25 (e^beta / 200)^0.1
    Vector porosity() const;
    Vector permeability() const; // m^2
};

/// Well quantities averaged over one report step, in config well order
/// within each group.
struct WellResponse
{
    std::vector<double> injector_bhp; // Pa
    std::vector<double> liquid_rate;  // m^3/day per producer
    std::vector<double> water_cut;    // fraction per producer

    std::size_t size() const
    {
        return injector_bhp.size() + liquid_rate.size() + water_cut.size();
    }
};

struct StepDiagnostics
{
    int substeps = 0;
    double injected = 0;      // m^3 over the step
    double produced = 0;      // m^3 liquid
    double water_injected = 0;
    double water_produced = 0;
    double water_in_place_change = 0;
    /// |sum of well fluxes| / injection rate (or absolute if nothing is injected)
    double volume_balance = 0;
};

struct Simulation
{
    std::vector<StateField> states;      // steps + 1 entries
    std::vector<WellResponse> responses; // responses[n-1] belongs to step n
    std::vector<StepDiagnostics> diagnostics;
};

/// Precomputed geometry and rock terms for one permeability field.
class Simulator
{
public:
    Simulator(ReservoirConfig config, const LogPermField& field);

    const ReservoirConfig& config() const { return config_; }
    StateField initial_state() const;

    /// Advances one report step. `step_index` is only used in messages.
    StateField step(const StateField& state, WellResponse* response = nullptr,
                    StepDiagnostics* diag = nullptr, int step_index = 0) const;

    Simulation run(int steps) const;

    double water_fractional_flow(double sw) const;
    double total_mobility(double sw) const;

private:
    struct Face
    {
        int a, b;
        double trans;
    };

    ReservoirConfig config_;
    Vector porosity_;
    Vector pore_volume_;
    Vector perm_;
    std::vector<Face> faces_;
    std::vector<double> well_index_; // per config well
    double max_dfw_ = 0;
};

/// Full-order run over `steps` report steps (config.history_steps if < 0).
Simulation simulate(const ReservoirConfig& config, const LogPermField& field, int steps = -1);
/// Number of simulate() calls made by this process.
std::uint64_t simulation_count();

StateField step(const StateField& state, const LogPermField& field, const ReservoirConfig& config);

/// Flattened measurements d^m, one block of data_per_time() scalars per
/// scheduled step. BHP values are expressed in bar.
struct ObservationSet
{
    std::vector<int> steps;
    std::vector<Vector> values;

    std::size_t time_count() const { return steps.size(); }
    std::size_t total_size() const;
    Vector flat() const;
};

/// Picks the scheduled steps out of a response sequence and flattens them as
/// [injector BHPs..., producer rates..., producer water cuts...] per time.
ObservationSet observe(const std::vector<WellResponse>& responses, const std::vector<int>& schedule);

Vector flatten(const WellResponse& r);

} // namespace sdtpwl::fom
