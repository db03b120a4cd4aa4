// Runs every acceptance criterion on the desk twin and prints one PASS/FAIL
// line per criterion. The exit status counts failures that were not listed
// with --known-fail.

#include "sdtpwl/harness.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

using namespace sdtpwl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict
{
    bool pass = true;
    std::string detail;
};

struct Line
{
    int id;
    std::string name;
    Verdict v;
    double seconds;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-12); }

Vector concat(const rom::Reduced& psi)
{
    Eigen::Index n = 0;
    for (const auto& v : psi)
        n += v.size();
    Vector out(n);
    n = 0;
    for (const auto& v : psi) {
        out.segment(n, v.size()) = v;
        n += v.size();
    }
    return out;
}


Verdict rbf_oracle()
{
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> pick_m(4, 40), pick_dim(1, 20), pick_out(1, 3);
    std::uniform_real_distribution<double> u(0, 1), factor(0.5, 2.0);
    const rbf::KernelKind kinds[] = {rbf::KernelKind::Multiquadric, rbf::KernelKind::Gaussian,
                                     rbf::KernelKind::InverseMultiquadric};
    int instances = 0, rejected = 0;
    double worst = 0;
    for (int trial = 0; instances < 150 && trial < 1000; ++trial) {
        const int m = pick_m(rng), dim = pick_dim(rng), outs = pick_out(rng);
        Matrix c(m, dim), v(m, outs);
        for (auto* mat : {&c, &v})
            for (Eigen::Index i = 0; i < mat->size(); ++i)
                mat->data()[i] = u(rng);
        const rbf::Kernel kernel{kinds[trial % 3], factor(rng) * rbf::mean_nearest_distance(c)};
        rbf::FitOptions fo;
        fo.max_condition = 1e9;
        rbf::RbfModel model;
        try {
            model = rbf::RbfModel::fit(c, v, kernel, fo);
        } catch (const Error&) {
            ++rejected;
            continue;
        }
        Vector x(dim);
        for (int j = 0; j < dim; ++j)
            x(j) = u(rng);
        const Matrix g = model.grad(x, 0, dim);
        const double h = 1e-5;
        Matrix fd(outs, dim);
        for (int j = 0; j < dim; ++j) {
            Vector a = x, b = x;
            a(j) += h;
            b(j) -= h;
            fd.col(j) = (model.eval(a) - model.eval(b)) / (2 * h);
        }
        worst = std::max(worst, (fd - g).cwiseAbs().maxCoeff() / std::max(g.cwiseAbs().maxCoeff(), 1e-300));
        ++instances;
    }
    return {instances >= 100 && worst < 1e-5,
            fmt::format("{} instances ({} ill-conditioned draws skipped), max relative error {:.2e} (limit 1e-05)",
                        instances, rejected, worst)};
}


// Corey fractional flow written out independently of the simulator.
struct FractionalFlow
{
    double swc, sor, nw, no, mw, mo;

    double operator()(double s) const
    {
        const double se = std::clamp((s - swc) / (1 - swc - sor), 0.0, 1.0);
        const double lw = std::pow(se, nw) / mw;
        const double lo = std::pow(1 - se, no) / mo;
        return lw / (lw + lo);
    }
    double slope(double s) const
    {
        const double h = 1e-7;
        return ((*this)(s + h) - (*this)(s - h)) / (2 * h);
    }
    double shock_saturation() const
    {
        double lo = swc + 1e-4, hi = 1 - sor - 1e-6;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            ((slope(mid) * (mid - swc) - (*this)(mid)) > 0 ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }
};

double front_error(const fom::ReservoirConfig& base)
{
    fom::ReservoirConfig cfg = base;
    const int nx = 300;
    cfg.nx = nx;
    cfg.ny = 1;
    cfg.dx = 2.0;
    cfg.dy = 10.0;
    cfg.dz = 10.0;
    cfg.dt_days = 10.0;
    const double rate = 10.0;
    cfg.wells = {{"I1", 0, 0, fom::WellKind::RateInjector, rate, true},
                 {"P1", nx - 1, 0, fom::WellKind::BhpProducer, 25 * units::mega_pascal, true}};
    const int steps = 30;
    const fom::LogPermField field{Vector::Constant(nx, std::log(200.0))};
    const auto sim = fom::simulate(cfg, field, steps);

    const FractionalFlow f{cfg.swc, cfg.sor, cfg.n_w, cfg.n_o, cfg.mu_w, cfg.mu_o};
    const double s_front = f.shock_saturation();
    const double phi = field.porosity()[0];
    const double x_exact = rate * steps * cfg.dt_days * f.slope(s_front) / (phi * cfg.dy * cfg.dz);
    const Vector& s = sim.states.back().saturation;
    const double threshold = 0.5 * (cfg.swc + s_front);
    for (int c = 0; c + 1 < nx; ++c)
        if (s[c] >= threshold && s[c + 1] < threshold) {
            const double x = (c + 0.5) * cfg.dx + cfg.dx * (s[c] - threshold) / (s[c] - s[c + 1]);
            return std::abs(x - x_exact) / x_exact;
        }
    return std::numeric_limits<double>::infinity();
}

Verdict fom_physics(const harness::ExperimentConfig& cfg, const harness::Twin& twin)
{
    // The truth run over the full forecast window exercises breakthrough.
    const auto sim = fom::simulate(cfg.reservoir, twin.truth, cfg.reservoir.forecast_steps);
    double balance = 0, below = 0, above = 0;
    for (const auto& d : sim.diagnostics)
        balance = std::max(balance, d.volume_balance);
    for (const auto& st : sim.states) {
        below = std::max(below, cfg.reservoir.swc - st.saturation.minCoeff());
        above = std::max(above, st.saturation.maxCoeff() - (1 - cfg.reservoir.sor));
    }
    const double front = front_error(cfg.reservoir);
    const bool bounds = below <= 0 && above <= 0;
    return {balance < 1e-8 && bounds && front < 0.05,
            fmt::format("{} steps, worst volume balance {:.2e} (limit 1e-08), saturation {} [swc, 1-sor], "
                        "front position error {:.2f}% (limit 5%)",
                        sim.diagnostics.size(), balance, bounds ? "within" : "outside", 100 * front)};
}


Verdict adjoint_oracle(const tpwl::TpwlSystem& sys, const assim::Observations& obs, const assim::HmConfig& hm)
{
    const int l = sys.parameters();
    std::mt19937_64 rng(31);
    std::normal_distribution<double> n(0, 1);
    std::vector<Vector> points{Vector::Zero(l), Vector::Constant(l, 0.25)};
    Vector r(l);
    for (int j = 0; j < l; ++j)
        r(j) = 0.5 * n(rng);
    points.push_back(r);
    const Vector prior = Vector::Zero(l);
    double worst = 0;
    for (const auto& xi : points) {
        const auto e = assim::reduced_cost(xi, sys, obs, prior, hm);
        const Vector g = assim::reduced_gradient(xi, e.run, assim::adjoint_sweep(xi, e.run, sys, obs), sys, obs, prior);
        const double h = 1e-5;
        double err = 0;
        for (int j = 0; j < l; ++j) {
            Vector a = xi, b = xi;
            a(j) += h;
            b(j) -= h;
            const double fd = (assim::reduced_cost(a, sys, obs, prior, hm, &e.run.anchors).cost -
                               assim::reduced_cost(b, sys, obs, prior, hm, &e.run.anchors).cost) /
                              (2 * h);
            err = std::max(err, std::abs(fd - g(j)));
        }
        worst = std::max(worst, err / g.cwiseAbs().maxCoeff());
    }
    return {worst < 1e-6, fmt::format("{} points, {} parameters, {} subdomains, max component error {:.2e} of the "
                                      "largest gradient entry (limit 1e-06)",
                                      points.size(), l, sys.layout().size(), worst)};
}


Verdict tpwl_exactness(const tpwl::TpwlSystem& sys, const harness::Offline& off,
                       const fom::ReservoirConfig& reservoir)
{
    double worst_psi = 0, worst_y = 0;
    int wrong_anchor = 0;
    for (std::size_t k = 0; k < sys.trajectories().size(); ++k) {
        const auto& t = sys.trajectories()[k];
        tpwl::SimulateOptions so;
        so.tolerance = 1e-13;
        const auto run = tpwl::simulate_reduced(sys, t.xi, so);
        for (int n = 0; n <= sys.steps(); ++n)
            worst_psi = std::max(worst_psi, rel(concat(run.psi[static_cast<std::size_t>(n)]),
                                                concat(t.psi[static_cast<std::size_t>(n)])));
        const auto y = fom::observe(off.runs[k].sim.responses, reservoir.measurement_steps());
        for (std::size_t m = 0; m < run.responses.size(); ++m)
            worst_y = std::max(worst_y, rel(run.responses[m], y.values[m]));
        for (int a : run.anchors)
            wrong_anchor += a != static_cast<int>(k);
    }
    return {worst_psi < 1e-6 && worst_y < 1e-6,
            fmt::format("{} training points, max relative error: reduced states {:.2e}, well data {:.2e} (limit "
                        "1e-06); {} steps anchored elsewhere",
                        sys.trajectories().size(), worst_psi, worst_y, wrong_anchor)};
}


struct Pipeline
{
    harness::Twin twin;
    harness::Offline offline;
    harness::MethodReport sd, gd, fd;
    harness::RmlReport rml;
    std::uint64_t offline_runs = 0, sd_runs = 0, fd_runs = 0, rml_runs = 0;
    double seconds = 0;
};

Pipeline run_pipeline(const harness::ExperimentConfig& cfg, const fs::path& out)
{
    const auto t0 = Clock::now();
    Pipeline p;
    p.twin = harness::make_twin(cfg);
    auto c = fom::simulation_count();
    auto tick = [&] {
        const auto now = fom::simulation_count();
        const auto d = now - c;
        c = now;
        return d;
    };
    p.offline = harness::run_offline(cfg, p.twin.kle);
    p.offline_runs = tick();
    p.sd = harness::run_method(harness::Method::Sd, cfg, p.twin, p.offline);
    p.sd_runs = tick();
    p.gd = harness::run_method(harness::Method::Gd, cfg, p.twin, p.offline);
    tick();
    p.fd = harness::run_method(harness::Method::Fd, cfg, p.twin, p.offline);
    p.fd_runs = tick();
    harness::write_reports(cfg, p.twin, {p.sd, p.gd, p.fd}, out);

    const auto sys = harness::build_system(cfg, p.offline, cfg.layout_rows, cfg.layout_cols);
    const auto heads = assim::pick_backgrounds(static_cast<int>(sys.trajectories().size()), cfg.rml_backgrounds,
                                               cfg.rml_seed);
    // Calibration alone, so that its FOM count is measured apart from the forecasts.
    const auto members = assim::rml_ensemble(heads, sys, p.twin.obs, cfg.hm);
    p.rml_runs = tick();
    p.rml = harness::run_rml(cfg, p.twin, sys, cfg.rml_backgrounds);
    harness::write_rml(p.rml, p.twin, out);
    harness::export_plots(out / "manifest.json");
    for (std::size_t k = 0; k < members.size(); ++k)
        if (members[k].xi != p.rml.members[k].xi)
            throw Error("acceptance", "RML calibration differs between two identical calls");
    p.seconds = seconds_since(t0);
    return p;
}

Verdict efficacy(const Pipeline& p)
{
    const auto band = assim::acceptance_band(p.twin.obs.size());
    const double width = band.upper - band.lower;
    const double slack = 0.25 * width;
    const double beta_gain = 1 - p.sd.e_beta / p.sd.e_beta_initial;
    const double obs_gain = 1 - p.sd.e_obs / p.sd.e_obs_initial;
    const bool in_band = p.sd.two_j >= band.lower - slack && p.sd.two_j <= band.upper + slack;
    const bool timely = p.seconds < 15 * 60;
    return {beta_gain >= 0.4 && obs_gain >= 0.7 && in_band && timely,
            fmt::format("l_beta {}, e_beta {:.3f} -> {:.3f} ({:+.1f}%, need -40%), e_obs {:.3f} -> {:.3f} ({:+.1f}%, "
                        "need -70%), 2J {:.1f} vs band [{:.1f}, {:.1f}] widened by 25% of its width, pipeline {:.0f} s",
                        p.twin.kle.modes, p.sd.e_beta_initial, p.sd.e_beta, -100 * beta_gain, p.sd.e_obs_initial,
                        p.sd.e_obs, -100 * obs_gain, p.sd.two_j, band.lower, band.upper, p.seconds)};
}

Verdict budget(const Pipeline& p)
{
    const auto& b = p.sd.result.budget;
    const int limit = 3 * p.twin.kle.modes + b.snapshot_runs + 10;
    const int sd = b.total(), fd = p.fd.result.budget.total();
    const auto measured_sd = static_cast<int>(p.offline_runs + p.sd_runs);
    const auto measured_fd = static_cast<int>(p.fd_runs);
    const bool counted = measured_sd == sd && measured_fd == fd;
    return {sd <= limit && fd >= 5 * sd && counted,
            fmt::format("SD {} FOM runs (limit {} = 3 x {} + {} snapshot runs + 10), FD {} runs = {:.1f} x SD (need 5 "
                        "x); counters {} the ledger ({} and {})",
                        sd, limit, p.twin.kle.modes, b.snapshot_runs, fd, static_cast<double>(fd) / sd,
                        counted ? "match" : "disagree with", measured_sd, measured_fd)};
}

Verdict sd_vs_gd(const harness::ExperimentConfig& cfg, const Pipeline& p)
{
    auto single = cfg;
    single.layout_rows = single.layout_cols = 1;
    const auto sd1 = harness::run_method(harness::Method::Sd, single, p.twin, p.offline);
    const auto& gd = p.gd;
    double diff = (sd1.result.xi - gd.result.xi).cwiseAbs().maxCoeff() / std::max(1.0, gd.result.xi.cwiseAbs().maxCoeff());
    diff = std::max(diff, std::abs(sd1.two_j - gd.two_j) / std::max(1.0, gd.two_j));
    diff = std::max(diff, std::abs(sd1.e_obs - gd.e_obs) / std::max(1.0, gd.e_obs));
    const double gap = std::abs(p.sd.e_obs - gd.e_obs) / std::min(p.sd.e_obs, gd.e_obs);
    return {diff <= 1e-10 && gap <= 0.3,
            fmt::format("1x1 SD vs GD max relative difference {:.1e} (limit 1e-10); {}x{} SD e_obs {:.3f} vs GD {:.3f}, "
                        "gap {:.1f}% (limit 30%)",
                        diff, cfg.layout_rows, cfg.layout_cols, p.sd.e_obs, gd.e_obs, 100 * gap)};
}

Verdict rml(const harness::ExperimentConfig& cfg, const Pipeline& p)
{
    const auto& r = p.rml;
    const double ratio = r.posterior_wct_variance / r.prior_wct_variance;
    const bool count = static_cast<int>(r.members.size()) == cfg.rml_backgrounds && cfg.rml_backgrounds == 20;
    return {count && p.rml_runs == 0 && ratio < 1,
            fmt::format("{} members ({} inside the band, the rest flagged), {} calibration FOM runs, water-cut "
                        "forecast variance ratio {:.3f} (limit 1)",
                        r.members.size(), r.accepted, p.rml_runs, ratio)};
}

Verdict determinism(const fs::path& a, const fs::path& b)
{
    std::vector<std::string> differ;
    const char* files[] = {"metrics.csv", "rml_members.csv", "plots/cost_sd.csv", "plots/wells_sd.csv"};
    for (const char* f : files)
        if (slurp(a / f) != slurp(b / f) || slurp(a / f).empty())
            differ.push_back(f);
    std::string list;
    for (const auto& d : differ)
        list += (list.empty() ? "" : ", ") + d;
    return {differ.empty(), differ.empty() ? fmt::format("{} metric files bit-identical across two runs", std::size(files))
                                           : "differences in " + list};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"acceptance criteria on the desk twin"};
    std::string config = SDTPWL_DESK_CONFIG;
    std::string work = "acceptance_work";
    std::vector<int> known;
    app.add_option("--config", config, "experiment file")->capture_default_str();
    app.add_option("--work", work, "output directory")->capture_default_str();
    app.add_option("--known-fail", known, "criteria whose failure is documented and does not set the exit status");
    CLI11_PARSE(app, argc, argv);

    std::vector<Line> lines;
    // limit: runtime bound in seconds, 0 for none
    auto record = [&](int id, std::string name, double limit, const std::function<Verdict()>& body) {
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = body();
        } catch (const std::exception& e) {
            v = {false, fmt::format("error: {}", e.what())};
        }
        const double s = seconds_since(t0);
        if (limit > 0) {
            v.pass = v.pass && s < limit;
            v.detail += fmt::format(", runtime limit {:.0f} s", limit);
        }
        lines.push_back({id, std::move(name), v, s});
        const auto& l = lines.back();
        fmt::print("{} [{}] {} ({:.1f} s): {}\n", l.v.pass ? "PASS" : "FAIL", l.id, l.name, l.seconds, l.v.detail);
        std::fflush(stdout);
    };

    try {
        const auto cfg = harness::load_experiment(config);
        const fs::path first = fs::path(work) / "run1", second = fs::path(work) / "run2";

        record(1, "RBF derivative oracle", 10, rbf_oracle);

        Pipeline p = run_pipeline(cfg, first);
        const auto sys = harness::build_system(cfg, p.offline, cfg.layout_rows, cfg.layout_cols);

        record(2, "adjoint gradient oracle", 60, [&] { return adjoint_oracle(sys, p.twin.obs, cfg.hm); });
        record(3, "TPWL exactness", 60, [&] { return tpwl_exactness(sys, p.offline, cfg.reservoir); });
        record(4, "FOM physics", 0, [&] { return fom_physics(cfg, p.twin); });
        record(5, "twin-experiment efficacy", 0, [&] { return efficacy(p); });
        record(6, "FOM budget", 0, [&] { return budget(p); });
        record(7, "SD vs GD consistency", 0, [&] { return sd_vs_gd(cfg, p); });
        record(8, "RML ensemble", 0, [&] { return rml(cfg, p); });
        record(9, "determinism", 0, [&] {
            run_pipeline(cfg, second);
            return determinism(first, second);
        });
    } catch (const std::exception& e) {
        fmt::print("FAIL setup: {}\n", e.what());
        return 1;
    }

    const std::set<int> excused(known.begin(), known.end());
    int passed = 0, blocking = 0;
    for (const auto& l : lines) {
        passed += l.v.pass;
        blocking += !l.v.pass && !excused.count(l.id);
    }
    fmt::print("{} of {} criteria pass", passed, lines.size());
    if (passed < static_cast<int>(lines.size()))
        fmt::print(", {} failing criteria not listed as known", blocking);
    fmt::print("\n");
    return blocking ? 1 : 0;
}
