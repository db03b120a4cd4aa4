#pragma once

#include "sdtpwl/assim.hpp"
#include "sdtpwl/fom.hpp"
#include "sdtpwl/geostat.hpp"
#include "sdtpwl/rom.hpp"
#include "sdtpwl/tpwl.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sdtpwl::harness {

/// Everything read from one experiment file: the reservoir sections plus
/// [geostat], [rom], [rbf], [tpwl] and [assim].
struct ExperimentConfig
{
    std::filesystem::path path;
    fom::ReservoirConfig reservoir;

    geostat::CovarianceSpec covariance;
    double kle_energy = 0.95;
    int ensemble_size = 1000;
    std::uint64_t ensemble_seed = 20170901;
    int truth_index = 0;

    std::uint64_t snapshot_seed = 7;
    rom::CollectOptions collect;
    double energy_p = 0.95, energy_s = 0.90;
    int layout_rows = 3, layout_cols = 3;
    double perturbation = 1.0;
    int extra_points = 0;
    std::uint64_t extra_seed = 11;
    bool snapshot_runs_as_centers = true;

    tpwl::TpwlOptions tpwl;

    assim::NoiseModel noise;
    std::uint64_t noise_seed = 5;
    assim::HmConfig hm;
    assim::FdOptions fd;
    int fd_max_iterations = 60;
    int rml_backgrounds = 20;
    std::uint64_t rml_seed = 13;
};

ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Root-mean-square data misfit over every scalar of every time.
double e_obs(const std::vector<Vector>& observed, const std::vector<Vector>& simulated);
/// Root-mean-square log-permeability error over cells.
double e_beta(const fom::LogPermField& truth, const fom::LogPermField& updated);

/// Truth model, its history run and the noisy observations.
struct Twin
{
    geostat::KleModel kle;
    fom::LogPermField truth;
    fom::Simulation truth_run;
    assim::Observations obs;
};

geostat::KleModel fit_kle(const ExperimentConfig& cfg);
fom::LogPermField truth_field(const ExperimentConfig& cfg);
Twin make_twin(const ExperimentConfig& cfg);

/// FOM runs and artifacts shared by every reduced calibration.
struct Offline
{
    rom::SnapshotCollection snapshots;
    std::vector<rom::TrainingRun> runs; // every surrogate center, snapshot runs first when used
    int snapshot_runs = 0;
    int rbf_runs = 0;

    assim::FomBudget budget() const;
};

Offline run_offline(const ExperimentConfig& cfg, const geostat::KleModel& kle);
/// runs.bin, snapshots.bin and offline.bin in `dir`.
void save_offline(const std::filesystem::path& dir, const Offline& offline);
Offline load_offline(const std::filesystem::path& dir, const ExperimentConfig& cfg);

/// Basis and surrogate over a given layout; no FOM runs.
tpwl::TpwlSystem build_system(const ExperimentConfig& cfg, const Offline& offline, int rows, int cols);

enum class Method { Sd, Gd, Fd };
Method parse_method(const std::string& name);
std::string method_name(Method m);

struct MethodReport
{
    Method method = Method::Sd;
    assim::HmResult result;
    double two_j_initial = 0;
    double two_j = 0;
    double e_obs_initial = 0, e_obs = 0;
    double e_beta_initial = 0, e_beta = 0;
    std::vector<fom::WellResponse> initial_responses; // prior-mean model over the history
};

/// Runs one calibration from the prior mean. Sd uses the configured layout
/// with coupled evaluation, Gd one global domain.
MethodReport run_method(Method method, const ExperimentConfig& cfg, const Twin& twin, const Offline& offline);

struct RmlReport
{
    std::vector<assim::RmlMember> members;
    std::vector<int> backgrounds;
    double prior_wct_variance = 0;
    double posterior_wct_variance = 0;
    int forecast_runs = 0;
    int accepted = 0; // members whose true 2J falls in the band
    std::vector<double> two_j; // true 2J of each member over the history
};

/// Randomized maximum likelihood on the offline surrogate, then forecasts of
/// the prior and posterior members to compare their water-cut spread.
RmlReport run_rml(const ExperimentConfig& cfg, const Twin& twin, const tpwl::TpwlSystem& system, int backgrounds);

/// Variance across members of every producer water cut, averaged over
/// producers and steps.
double wct_spread(const std::vector<fom::Simulation>& runs);

struct TwinOutcome
{
    std::vector<MethodReport> methods;
    Offline offline;
    Twin twin;
};

/// Full twin experiment into `out`: manifest.json, metrics.csv, per-method
/// result bundles and plot exports.
TwinOutcome run_twin(const ExperimentConfig& cfg, const std::vector<Method>& methods, const std::filesystem::path& out);

/// Writes metrics.csv and manifest.json for finished reports.
void write_reports(const ExperimentConfig& cfg, const Twin& twin, const std::vector<MethodReport>& reports,
                   const std::filesystem::path& out);

/// Turns a manifest and the result bundles it lists into plot-ready CSV
/// files. Fails naming the first missing artifact.
void export_plots(const std::filesystem::path& manifest);

void save_result(const std::filesystem::path& path, const MethodReport& report);

/// rml.bin and rml_members.csv, and the ensemble summary in manifest.json.
void write_rml(const RmlReport& report, const Twin& twin, const std::filesystem::path& out);

} // namespace sdtpwl::harness
