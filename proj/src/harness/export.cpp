#include "sdtpwl/harness.hpp"
#include "sdtpwl/io.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <fstream>

namespace sdtpwl::harness {

using nlohmann::json;

namespace {

Matrix response_matrix(const std::vector<fom::WellResponse>& responses)
{
    if (responses.empty())
        return {};
    Matrix y(static_cast<Eigen::Index>(responses.size()), static_cast<Eigen::Index>(responses.front().size()));
    for (std::size_t n = 0; n < responses.size(); ++n)
        y.row(static_cast<Eigen::Index>(n)) = fom::flatten(responses[n]).transpose();
    return y;
}

Matrix stack(const std::vector<Vector>& rows)
{
    if (rows.empty())
        return {};
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t k = 0; k < rows.size(); ++k)
        m.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
    return m;
}

json budget_json(const assim::FomBudget& b)
{
    return {{"snapshot", b.snapshot_runs},     {"rbf", b.rbf_runs},
            {"rebuild", b.rebuild_runs},       {"evaluation", b.evaluation_runs},
            {"gradient", b.gradient_runs},     {"line_search", b.line_search_runs},
            {"forecast", b.forecast_runs},     {"total", b.total()}};
}

json load_json(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error("io", fmt::format("missing artifact {}", path.string()));
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("io", fmt::format("{}: {}", path.string(), e.what()));
    }
}

void save_json(const std::filesystem::path& path, const json& j)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error("io", fmt::format("cannot open {} for writing", path.string()));
    out << j.dump(2) << '\n';
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out)
        throw Error("io", fmt::format("cannot open {} for writing", path.string()));
    out << text;
}

void write_raster(const std::filesystem::path& path, const Vector& beta, int nx, int ny)
{
    // One grid row per line, cell (i, j) at column i of line j.
    std::string text;
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i)
            text += (i ? "," : "") + io::format_double(beta(j * nx + i));
        text += '\n';
    }
    write_text(path, text);
}

std::vector<std::string> data_labels(const fom::ReservoirConfig& c)
{
    std::vector<std::string> inj, prod;
    for (const auto& w : c.wells)
        (w.kind == fom::WellKind::RateInjector ? inj : prod).push_back(w.name);
    std::vector<std::string> out;
    for (const auto& n : inj)
        out.push_back(n + ",bhp_bar");
    for (const auto& n : prod)
        out.push_back(n + ",liquid_rate");
    for (const auto& n : prod)
        out.push_back(n + ",water_cut");
    return out;
}

} // namespace

void save_result(const std::filesystem::path& path, const MethodReport& rep)
{
    io::Bundle b;
    const auto& r = rep.result;
    b.put("xi", r.xi);
    b.put("beta", r.field.beta);
    b.put("responses", response_matrix(r.final_run.responses));
    b.put("initial_responses", response_matrix(rep.initial_responses));
    // cost trace rows: outer loop, iteration, cost, gradient norm
    std::vector<Vector> trace;
    for (std::size_t o = 0; o < r.outer.size(); ++o) {
        const auto& in = r.outer[o].inner;
        for (std::size_t k = 0; k < in.cost.size(); ++k) {
            Vector row(4);
            row << static_cast<double>(o + 1), static_cast<double>(k), in.cost[k], in.gradient_norm[k];
            trace.push_back(row);
        }
    }
    b.put("trace", stack(trace));
    std::vector<Vector> outer;
    for (std::size_t o = 0; o < r.outer.size(); ++o) {
        Vector row(5);
        row << static_cast<double>(o + 1), r.outer[o].reduced_cost, r.outer[o].true_cost,
            r.outer[o].accepted ? 1.0 : 0.0, static_cast<double>(r.outer[o].inner.iterations);
        outer.push_back(row);
    }
    b.put("outer", stack(outer));
    b.save(path);
}

void write_reports(const ExperimentConfig& cfg, const Twin& twin, const std::vector<MethodReport>& reports,
                   const std::filesystem::path& out)
{
    std::filesystem::create_directories(out);
    const auto manifest_path = out / "manifest.json";
    json m = std::filesystem::exists(manifest_path) ? load_json(manifest_path) : json::object();

    const auto& rc = cfg.reservoir;
    const auto band = assim::acceptance_band(twin.obs.size());
    m["config"] = cfg.path.string();
    m["grid"] = {{"nx", rc.nx}, {"ny", rc.ny}};
    m["seeds"] = {{"ensemble", cfg.ensemble_seed}, {"truth_index", cfg.truth_index}, {"snapshot", cfg.snapshot_seed},
                  {"noise", cfg.noise_seed},       {"extra_points", cfg.extra_seed}, {"rml", cfg.rml_seed}};
    m["kle_modes"] = twin.kle.modes;
    m["data_count"] = twin.obs.size();
    m["band"] = {band.lower, band.upper};

    io::Bundle tb;
    tb.put("truth_beta", twin.truth.beta);
    tb.put("initial_beta", twin.kle.beta_b);
    tb.put("truth_responses", response_matrix(twin.truth_run.responses));
    tb.put("observed", stack(twin.obs.values));
    tb.put("sigma", stack(twin.obs.sigma));
    Vector steps(static_cast<Eigen::Index>(twin.obs.steps.size()));
    for (std::size_t k = 0; k < twin.obs.steps.size(); ++k)
        steps(static_cast<Eigen::Index>(k)) = twin.obs.steps[k];
    tb.put("steps", steps);
    tb.save(out / "twin.bin");
    m["artifacts"]["twin"] = "twin.bin";
    m["labels"] = data_labels(rc);

    json& methods = m["methods"];
    if (!methods.is_object())
        methods = json::object();
    for (const auto& rep : reports) {
        const auto name = method_name(rep.method);
        const auto file = fmt::format("result_{}.bin", name);
        save_result(out / file, rep);
        int inner = 0;
        for (const auto& o : rep.result.outer)
            inner += o.inner.iterations;
        methods[name] = {{"artifact", file},
                         {"accepted", rep.result.accepted},
                         {"stop_reason", rep.result.stop_reason},
                         {"outer_loops", rep.result.outer.size()},
                         {"inner_iterations", inner},
                         {"two_j_initial", rep.two_j_initial},
                         {"two_j", rep.two_j},
                         {"e_obs_initial", rep.e_obs_initial},
                         {"e_obs", rep.e_obs},
                         {"e_beta_initial", rep.e_beta_initial},
                         {"e_beta", rep.e_beta},
                         {"fom", budget_json(rep.result.budget)}};
    }
    save_json(manifest_path, m);

    std::string csv = "method,accepted,outer_loops,inner_iterations,two_j_initial,two_j,e_obs_initial,e_obs,"
                      "e_beta_initial,e_beta,fom_snapshot,fom_rbf,fom_rebuild,fom_evaluation,fom_gradient,"
                      "fom_line_search,fom_total,stop_reason\n";
    for (const auto& [name, r] : methods.items()) {
        const auto& f = r["fom"];
        csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},\"{}\"\n", name,
                           r["accepted"].get<bool>() ? 1 : 0, r["outer_loops"].get<int>(),
                           r["inner_iterations"].get<int>(), io::format_double(r["two_j_initial"].get<double>()),
                           io::format_double(r["two_j"].get<double>()),
                           io::format_double(r["e_obs_initial"].get<double>()),
                           io::format_double(r["e_obs"].get<double>()),
                           io::format_double(r["e_beta_initial"].get<double>()),
                           io::format_double(r["e_beta"].get<double>()), f["snapshot"].get<int>(),
                           f["rbf"].get<int>(), f["rebuild"].get<int>(), f["evaluation"].get<int>(),
                           f["gradient"].get<int>(), f["line_search"].get<int>(), f["total"].get<int>(),
                           r["stop_reason"].get<std::string>());
    }
    write_text(out / "metrics.csv", csv);
}

void write_rml(const RmlReport& rep, const Twin& twin, const std::filesystem::path& out)
{
    std::filesystem::create_directories(out);
    io::Bundle b;
    std::vector<Vector> xi, prior, beta;
    for (const auto& m : rep.members) {
        xi.push_back(m.xi);
        prior.push_back(m.xi_prior);
        beta.push_back(twin.kle.decode(m.xi).beta);
    }
    b.put("xi", stack(xi));
    b.put("xi_prior", stack(prior));
    b.put("beta", stack(beta));
    b.save(out / "rml.bin");

    std::string csv = "member,background,reduced_cost,two_j,accepted,iterations,stop_reason\n";
    const auto band = assim::acceptance_band(twin.obs.size());
    for (std::size_t k = 0; k < rep.members.size(); ++k) {
        const auto& m = rep.members[k];
        csv += fmt::format("{},{},{},{},{},{},\"{}\"\n", k, m.background, io::format_double(m.reduced_cost),
                           io::format_double(rep.two_j[k]), band.contains(rep.two_j[k]) ? 1 : 0, m.inner.iterations,
                           m.inner.stop_reason);
    }
    write_text(out / "rml_members.csv", csv);

    const auto manifest_path = out / "manifest.json";
    json m = std::filesystem::exists(manifest_path) ? load_json(manifest_path) : json::object();
    m["artifacts"]["rml"] = "rml.bin";
    m["rml"] = {{"members", rep.members.size()},
                {"accepted", rep.accepted},
                {"prior_wct_variance", rep.prior_wct_variance},
                {"posterior_wct_variance", rep.posterior_wct_variance},
                {"variance_ratio", rep.prior_wct_variance > 0 ? rep.posterior_wct_variance / rep.prior_wct_variance
                                                              : 0.0},
                {"forecast_runs", rep.forecast_runs},
                {"additional_calibration_runs", 0}};
    save_json(manifest_path, m);
}

namespace {

void export_from(const json& m, const std::filesystem::path& manifest_path)
{
    const auto dir = manifest_path.parent_path();
    auto artifact = [&](const std::string& file) {
        const auto p = dir / file;
        if (!std::filesystem::exists(p))
            throw Error("io", fmt::format("missing artifact {}", p.string()));
        return io::Bundle::load(p);
    };
    if (!m.contains("artifacts"))
        return;
    const int nx = m["grid"]["nx"].get<int>(), ny = m["grid"]["ny"].get<int>();
    const auto plots = dir / "plots";
    std::filesystem::create_directories(plots);

    io::Bundle twin = artifact(m["artifacts"]["twin"].get<std::string>());
    write_raster(plots / "field_truth.csv", twin.vector("truth_beta"), nx, ny);
    write_raster(plots / "field_initial.csv", twin.vector("initial_beta"), nx, ny);
    const Matrix& truth_y = twin.get("truth_responses");
    const Matrix& observed = twin.get("observed");
    const Vector steps = twin.vector("steps");
    const auto labels = m["labels"].get<std::vector<std::string>>();

    std::map<std::string, io::Bundle> results;
    if (m.contains("methods"))
        for (const auto& [name, r] : m["methods"].items())
            results.emplace(name, artifact(r["artifact"].get<std::string>()));
    for (const auto& [name, b] : results) {
        write_raster(plots / fmt::format("field_{}.csv", name), b.vector("beta"), nx, ny);
        const Matrix& y = b.get("responses");
        const Matrix& y0 = b.get("initial_responses");
        std::string csv = "step,well,quantity,truth,initial,updated,observed\n";
        for (Eigen::Index n = 0; n < y.rows(); ++n) {
            Eigen::Index mi = -1;
            for (Eigen::Index k = 0; k < steps.size(); ++k)
                if (static_cast<Eigen::Index>(steps(k)) == n + 1)
                    mi = k;
            for (Eigen::Index d = 0; d < y.cols(); ++d)
                csv += fmt::format("{},{},{},{},{},{}\n", n + 1, labels[static_cast<std::size_t>(d)],
                                   io::format_double(truth_y(n, d)), io::format_double(y0(n, d)),
                                   io::format_double(y(n, d)),
                                   mi >= 0 ? io::format_double(observed(mi, d)) : "");
        }
        write_text(plots / fmt::format("wells_{}.csv", name), csv);

        const Matrix& tr = b.get("trace");
        std::string tc = "outer,iteration,cost,gradient_norm\n";
        for (Eigen::Index k = 0; k < tr.rows(); ++k)
            tc += fmt::format("{},{},{},{}\n", static_cast<int>(tr(k, 0)), static_cast<int>(tr(k, 1)),
                              io::format_double(tr(k, 2)), io::format_double(tr(k, 3)));
        write_text(plots / fmt::format("cost_{}.csv", name), tc);
    }

    if (m["artifacts"].contains("rml")) {
        io::Bundle rml = artifact(m["artifacts"]["rml"].get<std::string>());
        const Matrix& beta = rml.get("beta");
        for (Eigen::Index k = 0; k < beta.rows(); ++k)
            write_raster(plots / fmt::format("field_rml_{:02d}.csv", k), beta.row(k).transpose(), nx, ny);
        // cell-wise spread of the updated ensemble
        Vector mean = beta.colwise().mean().transpose();
        Vector var = Vector::Zero(beta.cols());
        for (Eigen::Index k = 0; k < beta.rows(); ++k)
            var += (beta.row(k).transpose() - mean).cwiseAbs2();
        if (beta.rows() > 1)
            var /= static_cast<double>(beta.rows() - 1);
        write_raster(plots / "field_rml_mean.csv", mean, nx, ny);
        write_raster(plots / "field_rml_variance.csv", var, nx, ny);
        const auto& s = m["rml"];
        write_text(plots / "rml_spread.csv",
                   fmt::format("quantity,prior,posterior,ratio\nwater_cut_variance,{},{},{}\n",
                               io::format_double(s["prior_wct_variance"].get<double>()),
                               io::format_double(s["posterior_wct_variance"].get<double>()),
                               io::format_double(s["variance_ratio"].get<double>())));
    }
}

} // namespace

void export_plots(const std::filesystem::path& manifest_path)
{
    const json m = load_json(manifest_path);
    try {
        export_from(m, manifest_path);
    } catch (const json::exception& e) {
        throw Error("io", fmt::format("malformed manifest {}: {}", manifest_path.string(), e.what()));
    }
}

TwinOutcome run_twin(const ExperimentConfig& cfg, const std::vector<Method>& methods, const std::filesystem::path& out)
{
    TwinOutcome res;
    res.twin = make_twin(cfg);
    bool reduced = false;
    for (auto mth : methods)
        reduced = reduced || mth != Method::Fd;
    if (reduced)
        res.offline = run_offline(cfg, res.twin.kle);
    for (auto mth : methods)
        res.methods.push_back(run_method(mth, cfg, res.twin, res.offline));
    write_reports(cfg, res.twin, res.methods, out);
    export_plots(out / "manifest.json");
    return res;
}

} // namespace sdtpwl::harness
