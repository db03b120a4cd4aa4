#include "sdtpwl/rom.hpp"
#include "sdtpwl/io.hpp"

#include <Eigen/SVD>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace sdtpwl::rom {

std::vector<int> SubdomainLayout::color_class(int color) const
{
    std::vector<int> out;
    for (int d = 0; d < size(); ++d)
        if (domains[static_cast<std::size_t>(d)].color == color)
            out.push_back(d);
    return out;
}

SubdomainLayout partition(int nx, int ny, int rows, int cols)
{
    if (nx < 1 || ny < 1)
        throw Error("rom", "grid must have at least one cell");
    if (rows < 1 || cols < 1 || rows > ny || cols > nx)
        throw Error("rom", fmt::format("cannot split a {}x{} grid into {}x{} subdomains", nx, ny, rows, cols));
    SubdomainLayout layout;
    layout.nx = nx;
    layout.ny = ny;
    layout.rows = rows;
    layout.cols = cols;
    layout.owner.assign(static_cast<std::size_t>(nx * ny), -1);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            Subdomain s;
            s.i0 = c * nx / cols;
            s.i1 = (c + 1) * nx / cols;
            s.j0 = r * ny / rows;
            s.j1 = (r + 1) * ny / rows;
            s.color = (r + c) % 2;
            const int id = r * cols + c;
            for (int j = s.j0; j < s.j1; ++j)
                for (int i = s.i0; i < s.i1; ++i) {
                    s.cells.push_back(j * nx + i);
                    layout.owner[static_cast<std::size_t>(j * nx + i)] = id;
                }
            if (r > 0)
                s.neighbors.push_back(id - cols);
            if (c > 0)
                s.neighbors.push_back(id - 1);
            if (c + 1 < cols)
                s.neighbors.push_back(id + 1);
            if (r + 1 < rows)
                s.neighbors.push_back(id + cols);
            layout.domains.push_back(std::move(s));
        }
    return layout;
}

void SnapshotSet::append(const TrainingRun& run)
{
    const auto& states = run.sim.states;
    const int n = static_cast<int>(states.size()) - 1;
    if (n < 1)
        return;
    const Eigen::Index cells = states.front().pressure.size();
    if (pressure.cols() == 0) {
        pressure.resize(cells, 0);
        saturation.resize(cells, 0);
    }
    const Eigen::Index c0 = pressure.cols();
    pressure.conservativeResize(cells, c0 + n);
    saturation.conservativeResize(cells, c0 + n);
    const int id = runs();
    for (int k = 1; k <= n; ++k) {
        pressure.col(c0 + k - 1) = states[static_cast<std::size_t>(k)].pressure;
        saturation.col(c0 + k - 1) = states[static_cast<std::size_t>(k)].saturation;
        column_run.push_back(id);
        column_step.push_back(k);
    }
    run_xi.push_back(run.xi);
}

void SnapshotSet::save(const std::filesystem::path& path) const
{
    // One record per column: [pressure; saturation].
    io::RecordFile f;
    f.nx = static_cast<std::uint64_t>(nx);
    f.ny = static_cast<std::uint64_t>(ny);
    for (int c = 0; c < columns(); ++c) {
        Vector r(2 * pressure.rows());
        r << pressure.col(c), saturation.col(c);
        f.records.push_back(std::move(r));
    }
    io::write_records(path, f);

    io::Bundle tags;
    Matrix xi(run_xi.empty() ? 0 : run_xi.front().size(), runs());
    for (int k = 0; k < runs(); ++k)
        xi.col(k) = run_xi[static_cast<std::size_t>(k)];
    tags.put("xi", xi);
    Vector cr(columns()), cs(columns());
    for (int c = 0; c < columns(); ++c) {
        cr(c) = column_run[static_cast<std::size_t>(c)];
        cs(c) = column_step[static_cast<std::size_t>(c)];
    }
    tags.put("column_run", cr);
    tags.put("column_step", cs);
    auto tag_path = path;
    tags.save(tag_path.replace_extension(".tags"));
}

SnapshotSet SnapshotSet::load(const std::filesystem::path& path)
{
    const auto f = io::read_records(path);
    auto tag_path = path;
    const auto tags = io::Bundle::load(tag_path.replace_extension(".tags"));
    SnapshotSet s;
    s.nx = static_cast<int>(f.nx);
    s.ny = static_cast<int>(f.ny);
    const Eigen::Index cells = static_cast<Eigen::Index>(f.nx * f.ny);
    s.pressure.resize(cells, static_cast<Eigen::Index>(f.records.size()));
    s.saturation.resize(cells, static_cast<Eigen::Index>(f.records.size()));
    for (std::size_t c = 0; c < f.records.size(); ++c) {
        if (f.records[c].size() != 2 * cells)
            throw Error("io", fmt::format("{} has records of the wrong length", path.string()));
        s.pressure.col(static_cast<Eigen::Index>(c)) = f.records[c].head(cells);
        s.saturation.col(static_cast<Eigen::Index>(c)) = f.records[c].tail(cells);
    }
    const Matrix& xi = tags.get("xi");
    for (Eigen::Index k = 0; k < xi.cols(); ++k)
        s.run_xi.push_back(xi.col(k));
    const Vector cr = tags.vector("column_run"), cs = tags.vector("column_step");
    for (Eigen::Index c = 0; c < cr.size(); ++c) {
        s.column_run.push_back(static_cast<int>(cr(c)));
        s.column_step.push_back(static_cast<int>(cs(c)));
    }
    return s;
}

std::vector<fom::StateField> states_of(const SnapshotSet& set, int run)
{
    std::vector<fom::StateField> out;
    for (int c = 0; c < set.columns(); ++c)
        if (set.column_run[static_cast<std::size_t>(c)] == run)
            out.push_back({set.pressure.col(c), set.saturation.col(c)});
    return out;
}

SignSampler::SignSampler(int dim, std::uint64_t seed)
    : dim_(dim)
    , rng_(seed)
{}

Vector SignSampler::operator()()
{
    Vector xi(dim_);
    for (int k = 0; k < dim_; ++k)
        xi(k) = (rng_() >> 63) ? 1.0 : -1.0;
    return xi;
}

Vector normalized_spectrum(const Matrix& snapshots, int leading)
{
    if (snapshots.cols() == 0)
        return {};
    const Matrix centered = snapshots.colwise() - snapshots.rowwise().mean();
    Eigen::BDCSVD<Matrix> svd(centered);
    const Vector& s = svd.singularValues();
    const double norm = s.norm();
    if (norm <= 0)
        return Vector::Zero(std::min<Eigen::Index>(leading, s.size()));
    int rank = 0;
    while (rank < s.size() && s(rank) > 1e-12 * s(0))
        ++rank;
    return s.head(std::min(leading, rank)) / norm;
}

double spectrum_change(const Vector& previous, const Vector& current)
{
    const Eigen::Index k = std::min(previous.size(), current.size());
    if (k == 0)
        return previous.size() == current.size() ? 0.0 : std::numeric_limits<double>::infinity();
    // Values beyond the shorter spectrum count as newly appeared energy.
    Vector a = Vector::Zero(std::max(previous.size(), current.size()));
    Vector b = a;
    a.head(previous.size()) = previous;
    b.head(current.size()) = current;
    return (b - a).norm() / std::max(a.norm(), 1e-300);
}

std::string format_xi(const Vector& xi)
{
    std::string s = "[";
    for (Eigen::Index k = 0; k < xi.size(); ++k)
        s += fmt::format("{}{:g}", k ? " " : "", xi(k));
    return s + "]";
}

TrainingRun run_training(const geostat::KleModel& kle, const fom::ReservoirConfig& config, const Vector& xi, int steps)
{
    try {
        return {xi, fom::simulate(config, kle.decode(xi), steps)};
    } catch (const Error& e) {
        throw Error("fom", fmt::format("run at xi={}: {}", format_xi(xi), e.what()));
    }
}

SnapshotCollection collect_snapshots(const geostat::KleModel& kle, const fom::ReservoirConfig& config,
                                     const Sampler& sampler, const CollectOptions& options)
{
    SnapshotCollection out;
    out.set.nx = config.nx;
    out.set.ny = config.ny;
    Vector prev_p, prev_s;
    const bool single = std::isinf(options.tolerance);
    for (int draw = 0; draw < options.max_draws && out.fom_runs < options.max_runs; ++draw) {
        Vector xi = sampler();
        const bool seen = std::any_of(out.runs.begin(), out.runs.end(),
                                      [&](const TrainingRun& r) { return r.xi == xi; });
        if (seen) {
            ++out.duplicates_skipped;
            continue;
        }
        auto run = run_training(kle, config, xi);
        ++out.fom_runs;
        out.set.append(run);
        out.runs.push_back(std::move(run));
        if (single) {
            out.converged = true;
            break;
        }
        const Vector sp = normalized_spectrum(out.set.pressure, options.leading);
        const Vector ss = normalized_spectrum(out.set.saturation, options.leading);
        if (out.fom_runs >= 2) {
            const double change = std::max(spectrum_change(prev_p, sp), spectrum_change(prev_s, ss));
            out.spectrum_change.push_back(change);
            if (change < options.tolerance && out.fom_runs >= options.min_runs) {
                out.converged = true;
                break;
            }
        }
        prev_p = sp;
        prev_s = ss;
    }
    return out;
}

Vector VariableBasis::reduce(const Vector& x) const
{
    if (width == 0)
        return {};
    return (u.transpose() * (x - mean)).cwiseQuotient(sigma.head(width));
}

Vector VariableBasis::reconstruct(const Vector& psi) const
{
    if (width == 0)
        return mean;
    return mean + u * sigma.head(width).cwiseProduct(psi);
}

int PodBasis::total_size() const
{
    int n = 0;
    for (const auto& d : domains)
        n += d.size();
    return n;
}

namespace {

VariableBasis fit_variable(const Matrix& x, double energy, bool centered, std::string* warning)
{
    VariableBasis b;
    b.mean = centered ? Vector(x.rowwise().mean()) : Vector::Zero(x.rows());
    const Matrix dev = x.colwise() - b.mean;
    Eigen::BDCSVD<Matrix> svd(dev, Eigen::ComputeThinU);
    b.sigma = svd.singularValues();
    if (b.sigma.size() == 0 || b.sigma(0) <= 1e-14 * std::max(1.0, x.cwiseAbs().maxCoeff())) {
        *warning = "zero-variance snapshots";
        b.sigma = Vector::Zero(b.sigma.size());
        b.u = Matrix::Zero(x.rows(), 0);
        return b;
    }
    b.width = geostat::energy_modes(b.sigma, energy);
    b.u = svd.matrixU().leftCols(b.width);
    return b;
}

} // namespace

PodBasis build_pod(const SnapshotSet& snapshots, const SubdomainLayout& layout, double energy_p, double energy_s,
                   bool centered)
{
    if (snapshots.columns() < 2)
        throw Error("rom", "POD needs at least two snapshot columns");
    if (!(energy_p > 0 && energy_p <= 1 && energy_s > 0 && energy_s <= 1))
        throw Error("rom", "energy fractions must lie in (0, 1]");
    PodBasis basis;
    basis.energy_p = energy_p;
    basis.energy_s = energy_s;
    basis.centered = centered;
    basis.snapshot_count = snapshots.columns();
    for (int d = 0; d < layout.size(); ++d) {
        const auto& cells = layout.domains[static_cast<std::size_t>(d)].cells;
        Matrix p(static_cast<Eigen::Index>(cells.size()), snapshots.columns());
        Matrix s(p.rows(), p.cols());
        for (std::size_t r = 0; r < cells.size(); ++r) {
            p.row(static_cast<Eigen::Index>(r)) = snapshots.pressure.row(cells[r]);
            s.row(static_cast<Eigen::Index>(r)) = snapshots.saturation.row(cells[r]);
        }
        SubdomainBasis sb;
        std::string warn;
        sb.p = fit_variable(p, energy_p, centered, &warn);
        if (!warn.empty())
            basis.warnings.push_back(fmt::format("subdomain {} pressure: {}", d + 1, warn));
        warn.clear();
        sb.s = fit_variable(s, energy_s, centered, &warn);
        if (!warn.empty())
            basis.warnings.push_back(fmt::format("subdomain {} saturation: {}", d + 1, warn));
        basis.domains.push_back(std::move(sb));
    }
    return basis;
}

void PodBasis::save(const std::filesystem::path& path) const
{
    io::Bundle b;
    b.put_scalar("domains", static_cast<double>(domains.size()));
    b.put_scalar("energy_p", energy_p);
    b.put_scalar("energy_s", energy_s);
    b.put_scalar("centered", centered ? 1.0 : 0.0);
    b.put_scalar("snapshot_count", snapshot_count);
    for (std::size_t d = 0; d < domains.size(); ++d) {
        for (const auto& [tag, v] : {std::pair{"p", &domains[d].p}, std::pair{"s", &domains[d].s}}) {
            const auto key = fmt::format("{}.{}.", d, tag);
            b.put(key + "mean", v->mean);
            b.put(key + "u", v->u);
            b.put(key + "sigma", v->sigma);
        }
    }
    b.save(path);
}

PodBasis PodBasis::load(const std::filesystem::path& path)
{
    const auto b = io::Bundle::load(path);
    PodBasis basis;
    basis.energy_p = b.scalar("energy_p");
    basis.energy_s = b.scalar("energy_s");
    basis.centered = b.scalar("centered") != 0;
    basis.snapshot_count = static_cast<int>(b.scalar("snapshot_count"));
    const int n = static_cast<int>(b.scalar("domains"));
    for (int d = 0; d < n; ++d) {
        SubdomainBasis sb;
        for (const auto& [tag, v] : {std::pair{"p", &sb.p}, std::pair{"s", &sb.s}}) {
            const auto key = fmt::format("{}.{}.", d, tag);
            v->mean = b.vector(key + "mean");
            v->u = b.get(key + "u");
            v->sigma = b.vector(key + "sigma");
            v->width = static_cast<int>(v->u.cols());
        }
        basis.domains.push_back(std::move(sb));
    }
    return basis;
}

Reduced reduce(const fom::StateField& state, const PodBasis& basis, const SubdomainLayout& layout)
{
    if (static_cast<int>(basis.domains.size()) != layout.size())
        throw Error("rom", "basis and layout disagree on the subdomain count");
    Reduced out;
    for (int d = 0; d < layout.size(); ++d) {
        const auto& cells = layout.domains[static_cast<std::size_t>(d)].cells;
        const auto& b = basis.domains[static_cast<std::size_t>(d)];
        Vector p(static_cast<Eigen::Index>(cells.size())), s(p.size());
        for (std::size_t r = 0; r < cells.size(); ++r) {
            p(static_cast<Eigen::Index>(r)) = state.pressure(cells[r]);
            s(static_cast<Eigen::Index>(r)) = state.saturation(cells[r]);
        }
        Vector psi(b.size());
        psi << b.p.reduce(p), b.s.reduce(s);
        out.push_back(std::move(psi));
    }
    return out;
}

fom::StateField reconstruct(const Reduced& psi, const PodBasis& basis, const SubdomainLayout& layout)
{
    if (static_cast<int>(psi.size()) != layout.size())
        throw Error("rom", "coefficient and layout disagree on the subdomain count");
    fom::StateField x{Vector(layout.nx * layout.ny), Vector(layout.nx * layout.ny)};
    for (int d = 0; d < layout.size(); ++d) {
        const auto& cells = layout.domains[static_cast<std::size_t>(d)].cells;
        const auto& b = basis.domains[static_cast<std::size_t>(d)];
        const Vector& c = psi[static_cast<std::size_t>(d)];
        if (c.size() != b.size())
            throw Error("rom", fmt::format("subdomain {} expects {} coefficients", d + 1, b.size()));
        const Vector p = b.p.reconstruct(c.head(b.p.width));
        const Vector s = b.s.reconstruct(c.tail(b.s.width));
        for (std::size_t r = 0; r < cells.size(); ++r) {
            x.pressure(cells[r]) = p(static_cast<Eigen::Index>(r));
            x.saturation(cells[r]) = s(static_cast<Eigen::Index>(r));
        }
    }
    return x;
}

std::vector<Vector> rbf_training_points(int dim, double delta, int extra_random, std::uint64_t seed)
{
    if (!(delta > 0))
        throw Error("rom", "perturbation amplitude must be positive");
    std::vector<Vector> pts;
    pts.push_back(Vector::Zero(dim));
    for (int j = 0; j < dim; ++j)
        for (double sign : {1.0, -1.0}) {
            Vector x = Vector::Zero(dim);
            x(j) = sign * delta;
            pts.push_back(std::move(x));
        }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-delta, delta);
    for (int k = 0; k < extra_random; ++k) {
        Vector x(dim);
        for (int j = 0; j < dim; ++j)
            x(j) = u(rng);
        pts.push_back(std::move(x));
    }
    return pts;
}

void save_runs(const std::filesystem::path& path, const std::vector<TrainingRun>& runs)
{
    io::Bundle b;
    b.put_scalar("runs", static_cast<double>(runs.size()));
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const auto& r = runs[k];
        const auto& st = r.sim.states;
        const auto cells = st.front().pressure.size();
        Matrix p(cells, static_cast<Eigen::Index>(st.size())), s(cells, static_cast<Eigen::Index>(st.size()));
        for (std::size_t n = 0; n < st.size(); ++n) {
            p.col(static_cast<Eigen::Index>(n)) = st[n].pressure;
            s.col(static_cast<Eigen::Index>(n)) = st[n].saturation;
        }
        Matrix y(r.sim.responses.empty() ? 0 : fom::flatten(r.sim.responses.front()).size(),
                 static_cast<Eigen::Index>(r.sim.responses.size()));
        for (std::size_t n = 0; n < r.sim.responses.size(); ++n)
            y.col(static_cast<Eigen::Index>(n)) = fom::flatten(r.sim.responses[n]);
        b.put(fmt::format("r{}.xi", k), r.xi);
        b.put(fmt::format("r{}.p", k), std::move(p));
        b.put(fmt::format("r{}.s", k), std::move(s));
        b.put(fmt::format("r{}.y", k), std::move(y));
    }
    b.save(path);
}

std::vector<TrainingRun> load_runs(const std::filesystem::path& path, const fom::ReservoirConfig& config)
{
    const auto b = io::Bundle::load(path);
    const int count = static_cast<int>(b.scalar("runs"));
    const auto ni = static_cast<std::size_t>(config.injector_count());
    const auto np = static_cast<std::size_t>(config.producer_count());
    std::vector<TrainingRun> out;
    for (int k = 0; k < count; ++k) {
        TrainingRun r;
        r.xi = b.vector(fmt::format("r{}.xi", k));
        const Matrix& p = b.get(fmt::format("r{}.p", k));
        const Matrix& s = b.get(fmt::format("r{}.s", k));
        const Matrix& y = b.get(fmt::format("r{}.y", k));
        if (p.rows() != config.cell_count() || y.rows() != static_cast<Eigen::Index>(ni + 2 * np))
            throw Error("io", fmt::format("{}: run {} does not fit the configured grid and wells", path.string(), k));
        for (Eigen::Index n = 0; n < p.cols(); ++n)
            r.sim.states.push_back({p.col(n), s.col(n)});
        for (Eigen::Index n = 0; n < y.cols(); ++n) {
            fom::WellResponse w;
            for (std::size_t i = 0; i < ni; ++i)
                w.injector_bhp.push_back(y(static_cast<Eigen::Index>(i), n) * units::bar);
            for (std::size_t i = 0; i < np; ++i) {
                w.liquid_rate.push_back(y(static_cast<Eigen::Index>(ni + i), n));
                w.water_cut.push_back(y(static_cast<Eigen::Index>(ni + np + i), n));
            }
            r.sim.responses.push_back(std::move(w));
        }
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace sdtpwl::rom
