#include "sdtpwl/harness.hpp"
#include "sdtpwl/io.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace sdtpwl::harness {

double e_obs(const std::vector<Vector>& observed, const std::vector<Vector>& simulated)
{
    if (observed.size() != simulated.size())
        throw Error("harness", fmt::format("{} observed times but {} simulated", observed.size(), simulated.size()));
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t m = 0; m < observed.size(); ++m) {
        if (observed[m].size() != simulated[m].size())
            throw Error("harness", fmt::format("data size mismatch at time {}", m + 1));
        sum += (observed[m] - simulated[m]).squaredNorm();
        count += static_cast<std::size_t>(observed[m].size());
    }
    return count ? std::sqrt(sum / static_cast<double>(count)) : 0.0;
}

double e_beta(const fom::LogPermField& truth, const fom::LogPermField& updated)
{
    if (truth.beta.size() != updated.beta.size())
        throw Error("harness", "fields differ in size");
    return std::sqrt((truth.beta - updated.beta).squaredNorm() / static_cast<double>(truth.beta.size()));
}

geostat::KleModel fit_kle(const ExperimentConfig& cfg)
{
    return geostat::fit_kle_separable(cfg.covariance, geostat::Geometry::of(cfg.reservoir), cfg.kle_energy);
}

fom::LogPermField truth_field(const ExperimentConfig& cfg)
{
    // Realizations are drawn in sequence, so member k does not depend on the ensemble size.
    return geostat::sample_realizations(cfg.covariance, geostat::Geometry::of(cfg.reservoir), cfg.truth_index + 1,
                                        cfg.ensemble_seed)
        .back();
}

Twin make_twin(const ExperimentConfig& cfg)
{
    Twin t;
    t.kle = fit_kle(cfg);
    t.truth = truth_field(cfg);
    try {
        t.truth_run = fom::simulate(cfg.reservoir, t.truth);
    } catch (const Error& e) {
        throw Error("fom", fmt::format("truth run: {}", e.what()));
    }
    const auto data = fom::observe(t.truth_run.responses, cfg.reservoir.measurement_steps());
    t.obs = assim::make_observations(data, cfg.reservoir.injector_count(), cfg.reservoir.producer_count(), cfg.noise,
                                     cfg.noise_seed);
    return t;
}

assim::FomBudget Offline::budget() const
{
    assim::FomBudget b;
    b.snapshot_runs = snapshot_runs;
    b.rbf_runs = rbf_runs;
    return b;
}

Offline run_offline(const ExperimentConfig& cfg, const geostat::KleModel& kle)
{
    Offline off;
    rom::SignSampler sampler(kle.modes, cfg.snapshot_seed);
    off.snapshots = rom::collect_snapshots(kle, cfg.reservoir, [&] { return sampler(); }, cfg.collect);
    off.snapshot_runs = off.snapshots.fom_runs;
    if (cfg.snapshot_runs_as_centers)
        off.runs = off.snapshots.runs;
    for (const auto& xi : rom::rbf_training_points(kle.modes, cfg.perturbation, cfg.extra_points, cfg.extra_seed)) {
        bool known = false;
        for (const auto& r : off.runs)
            known = known || (r.xi - xi).norm() <= 1e-12 * std::max(1.0, xi.norm());
        if (known)
            continue;
        off.runs.push_back(rom::run_training(kle, cfg.reservoir, xi));
        ++off.rbf_runs;
    }
    return off;
}

void save_offline(const std::filesystem::path& dir, const Offline& offline)
{
    std::filesystem::create_directories(dir);
    rom::save_runs(dir / "runs.bin", offline.runs);
    offline.snapshots.set.save(dir / "snapshots.bin");
    io::Bundle b;
    b.put_scalar("snapshot_runs", offline.snapshot_runs);
    b.put_scalar("rbf_runs", offline.rbf_runs);
    b.put_scalar("duplicates_skipped", offline.snapshots.duplicates_skipped);
    b.put_scalar("converged", offline.snapshots.converged ? 1 : 0);
    Vector change(static_cast<Eigen::Index>(offline.snapshots.spectrum_change.size()));
    for (std::size_t k = 0; k < offline.snapshots.spectrum_change.size(); ++k)
        change(static_cast<Eigen::Index>(k)) = offline.snapshots.spectrum_change[k];
    b.put("spectrum_change", change);
    b.save(dir / "offline.bin");
}

Offline load_offline(const std::filesystem::path& dir, const ExperimentConfig& cfg)
{
    for (const char* name : {"runs.bin", "snapshots.bin", "offline.bin"})
        if (!std::filesystem::exists(dir / name))
            throw Error("io", fmt::format("missing artifact {} (run build-rom first)", (dir / name).string()));
    Offline off;
    off.runs = rom::load_runs(dir / "runs.bin", cfg.reservoir);
    off.snapshots.set = rom::SnapshotSet::load(dir / "snapshots.bin");
    const auto b = io::Bundle::load(dir / "offline.bin");
    off.snapshot_runs = static_cast<int>(b.scalar("snapshot_runs"));
    off.rbf_runs = static_cast<int>(b.scalar("rbf_runs"));
    off.snapshots.fom_runs = off.snapshot_runs;
    off.snapshots.duplicates_skipped = static_cast<int>(b.scalar("duplicates_skipped"));
    off.snapshots.converged = b.scalar("converged") != 0;
    const Vector change = b.vector("spectrum_change");
    off.snapshots.spectrum_change.assign(change.data(), change.data() + change.size());
    return off;
}

tpwl::TpwlSystem build_system(const ExperimentConfig& cfg, const Offline& offline, int rows, int cols)
{
    const auto layout = rom::partition(cfg.reservoir.nx, cfg.reservoir.ny, rows, cols);
    const auto basis = rom::build_pod(offline.snapshots.set, layout, cfg.energy_p, cfg.energy_s);
    return tpwl::build(basis, layout, offline.runs, cfg.reservoir, cfg.tpwl);
}

Method parse_method(const std::string& name)
{
    if (name == "sd")
        return Method::Sd;
    if (name == "gd")
        return Method::Gd;
    if (name == "fd")
        return Method::Fd;
    throw Error("config", fmt::format("unknown method '{}' (expected sd, gd or fd)", name));
}

std::string method_name(Method m)
{
    switch (m) {
    case Method::Sd: return "sd";
    case Method::Gd: return "gd";
    case Method::Fd: return "fd";
    }
    return "?";
}

namespace {

const fom::Simulation* find_run(const Offline& offline, const Vector& xi)
{
    for (const auto& r : offline.runs)
        if (r.xi == xi)
            return &r.sim;
    return nullptr;
}

} // namespace

MethodReport run_method(Method method, const ExperimentConfig& cfg, const Twin& twin, const Offline& offline)
{
    MethodReport rep;
    rep.method = method;
    const Vector xi0 = Vector::Zero(twin.kle.modes);
    const auto& steps = cfg.reservoir.measurement_steps();

    // The prior-mean model is the first stencil point, so its run is normally at hand.
    fom::Simulation initial_run;
    if (const auto* sim = find_run(offline, xi0))
        initial_run = *sim;
    else
        initial_run = rom::run_training(twin.kle, cfg.reservoir, xi0).sim;
    rep.two_j_initial = 2 * assim::fom_cost(xi0, xi0, initial_run, twin.obs);
    rep.e_obs_initial = e_obs(twin.obs.values, fom::observe(initial_run.responses, steps).values);
    rep.e_beta_initial = e_beta(twin.truth, twin.kle.decode(xi0));
    rep.initial_responses = initial_run.responses;

    assim::FomContext ctx{&cfg.reservoir, &twin.kle, &twin.obs};
    if (method == Method::Fd) {
        auto hm = cfg.hm;
        hm.max_iterations = cfg.fd_max_iterations;
        rep.result = assim::fd_baseline(xi0, ctx, xi0, hm, cfg.fd);
    } else {
        auto hm = cfg.hm;
        int rows = cfg.layout_rows, cols = cfg.layout_cols;
        if (method == Method::Gd) {
            rows = cols = 1;
            hm.evaluation = tpwl::Evaluation::Global;
        }
        auto system = build_system(cfg, offline, rows, cols);
        rep.result = assim::history_match(xi0, ctx, std::move(system), xi0, hm, offline.budget());
    }
    rep.two_j = 2 * rep.result.true_cost;
    rep.e_obs = e_obs(twin.obs.values, fom::observe(rep.result.final_run.responses, steps).values);
    rep.e_beta = e_beta(twin.truth, rep.result.field);
    return rep;
}

double wct_spread(const std::vector<fom::Simulation>& runs)
{
    if (runs.size() < 2)
        return 0.0;
    const std::size_t steps = runs.front().responses.size();
    const std::size_t producers = runs.front().responses.front().water_cut.size();
    double total = 0;
    for (std::size_t n = 0; n < steps; ++n)
        for (std::size_t p = 0; p < producers; ++p) {
            double mean = 0;
            for (const auto& r : runs)
                mean += r.responses[n].water_cut[p];
            mean /= static_cast<double>(runs.size());
            double var = 0;
            for (const auto& r : runs) {
                const double d = r.responses[n].water_cut[p] - mean;
                var += d * d;
            }
            total += var / static_cast<double>(runs.size() - 1);
        }
    return producers && steps ? total / static_cast<double>(steps * producers) : 0.0;
}

RmlReport run_rml(const ExperimentConfig& cfg, const Twin& twin, const tpwl::TpwlSystem& system, int backgrounds)
{
    RmlReport rep;
    rep.backgrounds =
        assim::pick_backgrounds(static_cast<int>(system.trajectories().size()), backgrounds, cfg.rml_seed);
    rep.members = assim::rml_ensemble(rep.backgrounds, system, twin.obs, cfg.hm);

    const auto band = assim::acceptance_band(twin.obs.size());
    const int horizon = cfg.reservoir.forecast_steps;
    std::vector<fom::Simulation> prior, posterior;
    for (const auto& m : rep.members) {
        prior.push_back(rom::run_training(twin.kle, cfg.reservoir, m.xi_prior, horizon).sim);
        posterior.push_back(rom::run_training(twin.kle, cfg.reservoir, m.xi, horizon).sim);
        rep.forecast_runs += 2;
        const double two_j = 2 * assim::fom_cost(m.xi, m.xi_prior, posterior.back(), twin.obs);
        rep.two_j.push_back(two_j);
        rep.accepted += band.contains(two_j);
    }
    rep.prior_wct_variance = wct_spread(prior);
    rep.posterior_wct_variance = wct_spread(posterior);
    return rep;
}

} // namespace sdtpwl::harness
