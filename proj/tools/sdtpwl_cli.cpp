#include "sdtpwl/harness.hpp"
#include "sdtpwl/io.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cstdio>
#include <fstream>

using namespace sdtpwl;
namespace fs = std::filesystem;

namespace {

struct Common
{
    std::string config;
    std::string work = "work";
};

harness::ExperimentConfig load(const Common& c) { return harness::load_experiment(c.config); }

void gen_ensemble(const Common& c, int count, long long seed)
{
    auto cfg = load(c);
    if (count > 0)
        cfg.ensemble_size = count;
    if (seed >= 0)
        cfg.ensemble_seed = static_cast<std::uint64_t>(seed);
    fs::create_directories(c.work);
    const auto geom = geostat::Geometry::of(cfg.reservoir);
    const auto kle = harness::fit_kle(cfg);
    kle.save(fs::path(c.work) / "kle.bin");
    std::vector<std::vector<double>> rows;
    for (Eigen::Index k = 0; k < kle.spectrum.size(); ++k)
        rows.push_back({static_cast<double>(k + 1), kle.spectrum(k), k < kle.modes ? 1.0 : 0.0});
    io::write_csv(fs::path(c.work) / "kle_spectrum.csv", {"index", "eigenvalue", "retained"}, rows);
    const auto ens = geostat::sample_realizations(cfg.covariance, geom, cfg.ensemble_size, cfg.ensemble_seed);
    geostat::save_ensemble(fs::path(c.work) / "ensemble.bin", geom, ens);
    geostat::save_ensemble(fs::path(c.work) / "truth.bin", geom, {ens.at(static_cast<std::size_t>(cfg.truth_index))});
    fmt::print("{} realizations, {} KLE modes retaining {:.4f} of the energy\n", ens.size(), kle.modes,
               kle.retained_energy);
}

void run_fom(const Common& c, const std::string& field, int member, int steps)
{
    const auto cfg = load(c);
    fom::LogPermField perm;
    std::string label = field;
    if (field == "truth") {
        perm = harness::truth_field(cfg);
    } else if (field == "prior") {
        perm = harness::fit_kle(cfg).decode(Vector::Zero(harness::fit_kle(cfg).modes));
    } else if (field == "member") {
        const auto path = fs::path(c.work) / "ensemble.bin";
        if (!fs::exists(path))
            throw Error("io", fmt::format("missing artifact {} (run gen-ensemble first)", path.string()));
        const auto ens = geostat::load_ensemble(path);
        if (member < 0 || member >= static_cast<int>(ens.size()))
            throw Error("config", fmt::format("member {} outside an ensemble of {}", member, ens.size()));
        perm = ens[static_cast<std::size_t>(member)];
        label = fmt::format("member{}", member);
    } else {
        throw Error("config", fmt::format("unknown field '{}' (truth, prior or member)", field));
    }
    const auto sim = fom::simulate(cfg.reservoir, perm, steps);
    fs::create_directories(c.work);
    io::RecordFile f;
    f.nx = static_cast<std::uint64_t>(cfg.reservoir.nx);
    f.ny = static_cast<std::uint64_t>(cfg.reservoir.ny);
    for (const auto& s : sim.states) {
        Vector r(2 * s.pressure.size());
        r << s.pressure, s.saturation;
        f.records.push_back(std::move(r));
    }
    io::write_records(fs::path(c.work) / fmt::format("fom_{}.bin", label), f);

    std::vector<std::string> header{"step"};
    for (const auto& w : cfg.reservoir.wells)
        if (w.kind == fom::WellKind::RateInjector)
            header.push_back(w.name + "_bhp_bar");
    for (const char* q : {"_rate", "_wct"})
        for (const auto& w : cfg.reservoir.wells)
            if (w.kind == fom::WellKind::BhpProducer)
                header.push_back(w.name + q);
    std::vector<std::vector<double>> rows;
    for (std::size_t n = 0; n < sim.responses.size(); ++n) {
        std::vector<double> row{static_cast<double>(n + 1)};
        const Vector y = fom::flatten(sim.responses[n]);
        row.insert(row.end(), y.data(), y.data() + y.size());
        rows.push_back(std::move(row));
    }
    io::write_csv(fs::path(c.work) / fmt::format("fom_{}_wells.csv", label), header, rows);
    double worst = 0;
    for (const auto& d : sim.diagnostics)
        worst = std::max(worst, d.volume_balance);
    fmt::print("{} steps, worst relative volume balance {:.2e}\n", sim.responses.size(), worst);
}

void build_rom(const Common& c)
{
    const auto cfg = load(c);
    const auto kle = harness::fit_kle(cfg);
    const auto off = harness::run_offline(cfg, kle);
    harness::save_offline(c.work, off);
    const auto layout = rom::partition(cfg.reservoir.nx, cfg.reservoir.ny, cfg.layout_rows, cfg.layout_cols);
    const auto basis = rom::build_pod(off.snapshots.set, layout, cfg.energy_p, cfg.energy_s);
    basis.save(fs::path(c.work) / "pod.bin");
    fmt::print("snapshot runs {} ({}converged), rbf runs {}, reduced states {}\n", off.snapshot_runs,
               off.snapshots.converged ? "" : "not ", off.rbf_runs, basis.total_size());
    for (const auto& w : basis.warnings)
        fmt::print("warning: {}\n", w);
}

void build_tpwl(const Common& c, int rows, int cols)
{
    const auto cfg = load(c);
    const auto off = harness::load_offline(c.work, cfg);
    const auto sys = harness::build_system(cfg, off, rows > 0 ? rows : cfg.layout_rows, cols > 0 ? cols : cfg.layout_cols);
    sys.save(fs::path(c.work) / "tpwl.bin");
    std::ofstream(fs::path(c.work) / "tpwl_manifest.json") << sys.manifest_json() << '\n';
    fmt::print("{} centers, {} subdomains, {} reduced states\n", sys.trajectories().size(), sys.layout().size(),
               sys.total_states());
}

void print_report(const harness::MethodReport& r)
{
    const auto& b = r.result.budget;
    fmt::print("{}: {} after {} outer loop(s)\n", harness::method_name(r.method), r.result.stop_reason,
               r.result.outer.size());
    fmt::print("  2J {:.1f} -> {:.1f}   e_obs {:.3f} -> {:.3f}   e_beta {:.3f} -> {:.3f}\n", r.two_j_initial, r.two_j,
               r.e_obs_initial, r.e_obs, r.e_beta_initial, r.e_beta);
    fmt::print("  FOM runs {} (snapshot {}, rbf {}, rebuild {}, evaluation {}, gradient {}, line search {})\n",
               b.total(), b.snapshot_runs, b.rbf_runs, b.rebuild_runs, b.evaluation_runs, b.gradient_runs,
               b.line_search_runs);
}

void match(const Common& c, const std::string& method, int outer_max, long long seed)
{
    auto cfg = load(c);
    if (outer_max > 0)
        cfg.hm.outer_max = outer_max;
    if (seed >= 0)
        cfg.noise_seed = static_cast<std::uint64_t>(seed);
    const auto m = harness::parse_method(method);
    const auto twin = harness::make_twin(cfg);
    harness::Offline off;
    if (m != harness::Method::Fd)
        off = harness::load_offline(c.work, cfg);
    const auto rep = harness::run_method(m, cfg, twin, off);
    harness::write_reports(cfg, twin, {rep}, c.work);
    print_report(rep);
}

void rml(const Common& c, int backgrounds)
{
    const auto cfg = load(c);
    const auto twin = harness::make_twin(cfg);
    const auto off = harness::load_offline(c.work, cfg);
    const auto sys = harness::build_system(cfg, off, cfg.layout_rows, cfg.layout_cols);
    const auto rep = harness::run_rml(cfg, twin, sys, backgrounds > 0 ? backgrounds : cfg.rml_backgrounds);
    harness::write_reports(cfg, twin, {}, c.work);
    harness::write_rml(rep, twin, c.work);
    fmt::print("{} members, {} inside the acceptance band, 0 calibration FOM runs ({} forecast runs)\n",
               rep.members.size(), rep.accepted, rep.forecast_runs);
    fmt::print("water-cut forecast variance: prior {:.4e}, posterior {:.4e}\n", rep.prior_wct_variance,
               rep.posterior_wct_variance);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Subdomain POD-TPWL history matching"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "experiment file")->required()->check(CLI::ExistingFile);
        sub->add_option("--work", common.work, "artifact directory")->capture_default_str();
    };

    int count = 0;
    long long seed = -1;
    auto* ens = app.add_subcommand("gen-ensemble", "fit the KLE and sample the prior ensemble");
    add_common(ens);
    ens->add_option("--count", count, "number of realizations");
    ens->add_option("--seed", seed, "ensemble seed");

    std::string field = "truth";
    int member = 0, steps = -1;
    auto* fom_cmd = app.add_subcommand("run-fom", "run the full model on one field");
    add_common(fom_cmd);
    fom_cmd->add_option("--field", field, "truth, prior or member")->capture_default_str();
    fom_cmd->add_option("--member", member, "ensemble member for --field member");
    fom_cmd->add_option("--steps", steps, "report steps (history length by default)");

    auto* rom_cmd = app.add_subcommand("build-rom", "snapshot and training runs, subdomain POD bases");
    add_common(rom_cmd);

    int rows = 0, cols = 0;
    auto* tpwl_cmd = app.add_subcommand("build-tpwl", "fit the RBF surrogate on the stored runs");
    add_common(tpwl_cmd);
    tpwl_cmd->add_option("--rows", rows, "subdomain rows");
    tpwl_cmd->add_option("--cols", cols, "subdomain columns");

    std::string method = "sd";
    int outer_max = 0;
    auto* match_cmd = app.add_subcommand("match", "history match the twin experiment");
    add_common(match_cmd);
    match_cmd->add_option("--method", method, "sd, gd or fd")
        ->check(CLI::IsMember({"sd", "gd", "fd"}))
        ->capture_default_str();
    match_cmd->add_option("--outer-max", outer_max, "outer-loop cap");
    match_cmd->add_option("--seed", seed, "observation noise seed");

    int backgrounds = 0;
    auto* rml_cmd = app.add_subcommand("rml", "randomized maximum likelihood ensemble");
    add_common(rml_cmd);
    rml_cmd->add_option("--backgrounds", backgrounds, "ensemble size K");

    auto* export_cmd = app.add_subcommand("export", "plot-ready CSV files from the manifest");
    export_cmd->add_option("--work", common.work, "artifact directory")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (ens->parsed())
            gen_ensemble(common, count, seed);
        else if (fom_cmd->parsed())
            run_fom(common, field, member, steps);
        else if (rom_cmd->parsed())
            build_rom(common);
        else if (tpwl_cmd->parsed())
            build_tpwl(common, rows, cols);
        else if (match_cmd->parsed())
            match(common, method, outer_max, seed);
        else if (rml_cmd->parsed())
            rml(common, backgrounds);
        else if (export_cmd->parsed())
            harness::export_plots(fs::path(common.work) / "manifest.json");
    } catch (const Error& e) {
        std::fprintf(stderr, "error in stage %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
