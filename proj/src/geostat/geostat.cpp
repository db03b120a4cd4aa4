#include "sdtpwl/geostat.hpp"
#include "sdtpwl/io.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sdtpwl::geostat {

namespace {

constexpr double psd_tolerance = 1e-8;

// 1D Gaussian correlation factor between cell centers spaced h apart.
Matrix factor_1d(int n, double h, double chi)
{
    Matrix c(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            const double r = (a - b) * h / chi;
            c(a, b) = std::exp(-r * r);
        }
    return c;
}

struct Eig1d
{
    Vector values; // nonincreasing
    Matrix vectors;
};

Eig1d eig_desc(const Matrix& m)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.info() != Eigen::Success)
        throw Error("geostat", "eigendecomposition failed");
    return {es.eigenvalues().reverse(), es.eigenvectors().rowwise().reverse()};
}

Vector repair_spectrum(Vector values)
{
    const double top = values.size() ? std::max(values(0), 0.0) : 0.0;
    for (Eigen::Index k = 0; k < values.size(); ++k) {
        if (values(k) < -psd_tolerance * top)
            throw Error("geostat", fmt::format("covariance is not positive semidefinite (eigenvalue {:.3e}, max {:.3e})",
                                               values(k), top));
        values(k) = std::max(values(k), 0.0);
    }
    return values;
}

KleModel assemble(Vector mean, const Matrix& vectors, Vector spectrum, double fraction, int max_modes)
{
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw Error("geostat", fmt::format("energy fraction {} outside (0, 1]", fraction));
    if (spectrum.size() == 0 || spectrum(0) <= 0.0)
        throw Error("geostat", "degenerate (rank-0) covariance");
    int k = energy_modes(spectrum, fraction);
    if (max_modes > 0)
        k = std::min(k, max_modes);
    KleModel m;
    m.beta_b = std::move(mean);
    m.basis = vectors.leftCols(k);
    m.phi_beta = m.basis * spectrum.head(k).cwiseSqrt().asDiagonal();
    m.spectrum = std::move(spectrum);
    m.modes = k;
    m.energy_fraction = fraction;
    m.retained_energy = energy_ratio(m.spectrum, k);
    return m;
}

} // namespace

void CovarianceSpec::validate() const
{
    if (!(sigma > 0))
        throw Error("geostat", "sigma must be positive");
    if (!(corr_x > 0 && corr_x <= 1) || !(corr_y > 0 && corr_y <= 1))
        throw Error("geostat", "correlation ratios must lie in (0, 1]");
}

Matrix covariance(const CovarianceSpec& spec, const Geometry& geom)
{
    spec.validate();
    const double chi_x = spec.corr_x * geom.length_x();
    const double chi_y = spec.corr_y * geom.length_y();
    const int n = geom.cells();
    Matrix c(n, n);
    const double s2 = spec.sigma * spec.sigma;
    for (int a = 0; a < n; ++a) {
        const int ia = a % geom.nx, ja = a / geom.nx;
        for (int b = 0; b < n; ++b) {
            const int ib = b % geom.nx, jb = b / geom.nx;
            const double rx = (ia - ib) * geom.dx / chi_x;
            const double ry = (ja - jb) * geom.dy / chi_y;
            c(a, b) = s2 * std::exp(-(rx * rx + ry * ry));
        }
    }
    return c;
}

double energy_ratio(const Vector& nu, int k)
{
    const double total = nu.squaredNorm();
    if (total <= 0)
        return 0;
    return nu.head(k).squaredNorm() / total;
}

int energy_modes(const Vector& nu, double fraction)
{
    const double total = nu.squaredNorm();
    if (total <= 0)
        return 0;
    // Relative slack so that fraction = 1 is reached despite rounding and
    // numerically-zero trailing values are never requested.
    const double target = fraction * total * (1.0 - 1e-12);
    const double floor = 1e-12 * std::abs(nu(0));
    double acc = 0;
    for (Eigen::Index k = 0; k < nu.size(); ++k) {
        if (std::abs(nu(k)) <= floor)
            return static_cast<int>(k);
        acc += nu(k) * nu(k);
        if (acc >= target)
            return static_cast<int>(k + 1);
    }
    return static_cast<int>(nu.size());
}

Vector KleModel::encode(const Vector& beta) const
{
    if (beta.size() != beta_b.size())
        throw Error("geostat", "field size does not match the KLE model");
    const Vector s = spectrum.head(modes).cwiseSqrt();
    return (basis.transpose() * (beta - beta_b)).cwiseQuotient(s);
}

fom::LogPermField KleModel::decode(const Vector& xi) const
{
    if (xi.size() != modes)
        throw Error("geostat", fmt::format("expected {} coefficients, got {}", modes, xi.size()));
    return {beta_b + phi_beta * xi};
}

Vector KleModel::project(const Vector& beta) const
{
    return beta_b + basis * (basis.transpose() * (beta - beta_b));
}

void KleModel::save(const std::filesystem::path& path) const
{
    io::Bundle b;
    b.put("beta_b", beta_b);
    b.put("basis", basis);
    b.put("spectrum", spectrum);
    b.put_scalar("energy_fraction", energy_fraction);
    b.put_scalar("retained_energy", retained_energy);
    b.save(path);
}

KleModel KleModel::load(const std::filesystem::path& path)
{
    const auto b = io::Bundle::load(path);
    KleModel m;
    m.beta_b = b.vector("beta_b");
    m.basis = b.get("basis");
    m.spectrum = b.vector("spectrum");
    m.modes = static_cast<int>(m.basis.cols());
    m.phi_beta = m.basis * m.spectrum.head(m.modes).cwiseSqrt().asDiagonal();
    m.energy_fraction = b.scalar("energy_fraction");
    m.retained_energy = b.scalar("retained_energy");
    return m;
}

KleModel fit_kle(const Matrix& cov, const Vector& mean, double energy_fraction, int max_modes)
{
    if (cov.rows() != cov.cols() || cov.rows() != mean.size())
        throw Error("geostat", "covariance and mean dimensions differ");
    auto e = eig_desc(0.5 * (cov + cov.transpose()));
    return assemble(mean, e.vectors, repair_spectrum(e.values), energy_fraction, max_modes);
}

KleModel fit_kle_ensemble(const Matrix& ensemble, double energy_fraction, int max_modes)
{
    const Eigen::Index k = ensemble.cols();
    if (k < 2)
        throw Error("geostat", "an ensemble needs at least two realizations");
    const Vector mean = ensemble.rowwise().mean();
    const Matrix dev = (ensemble.colwise() - mean) / std::sqrt(static_cast<double>(k - 1));
    Eigen::BDCSVD<Matrix> svd(dev, Eigen::ComputeThinU);
    Vector lambda = svd.singularValues().cwiseAbs2();
    return assemble(mean, svd.matrixU(), lambda, energy_fraction, max_modes);
}

KleModel fit_kle_separable(const CovarianceSpec& spec, const Geometry& geom, double energy_fraction, int max_modes)
{
    spec.validate();
    const auto ex = eig_desc(factor_1d(geom.nx, geom.dx, spec.corr_x * geom.length_x()));
    const auto ey = eig_desc(factor_1d(geom.ny, geom.dy, spec.corr_y * geom.length_y()));
    const double s2 = spec.sigma * spec.sigma;

    struct Pair
    {
        double value;
        int a, b;
    };
    std::vector<Pair> pairs;
    pairs.reserve(static_cast<std::size_t>(geom.cells()));
    for (int b = 0; b < geom.ny; ++b)
        for (int a = 0; a < geom.nx; ++a)
            pairs.push_back({s2 * std::max(ex.values(a), 0.0) * std::max(ey.values(b), 0.0), a, b});
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& l, const Pair& r) { return l.value > r.value; });

    // Validate the 1D factors as the full product would be validated.
    repair_spectrum(ex.values);
    repair_spectrum(ey.values);

    Vector spectrum(geom.cells());
    for (int k = 0; k < geom.cells(); ++k)
        spectrum(k) = pairs[static_cast<std::size_t>(k)].value;
    int k = energy_modes(spectrum, energy_fraction);
    if (max_modes > 0)
        k = std::min(k, max_modes);
    Matrix vectors(geom.cells(), std::max(k, 1));
    for (int m = 0; m < std::max(k, 1); ++m) {
        const auto& p = pairs[static_cast<std::size_t>(m)];
        for (int j = 0; j < geom.ny; ++j)
            for (int i = 0; i < geom.nx; ++i)
                vectors(j * geom.nx + i, m) = ex.vectors(i, p.a) * ey.vectors(j, p.b);
    }
    return assemble(Vector::Constant(geom.cells(), spec.mean), vectors, spectrum, energy_fraction, max_modes);
}

std::vector<fom::LogPermField> sample_realizations(const CovarianceSpec& spec, const Geometry& geom, int count,
                                                   std::uint64_t seed)
{
    spec.validate();
    if (count < 1)
        throw Error("geostat", "realization count must be at least 1");
    const auto ex = eig_desc(factor_1d(geom.nx, geom.dx, spec.corr_x * geom.length_x()));
    const auto ey = eig_desc(factor_1d(geom.ny, geom.dy, spec.corr_y * geom.length_y()));
    const Vector sx = repair_spectrum(ex.values).cwiseSqrt();
    const Vector sy = repair_spectrum(ey.values).cwiseSqrt();
    const Matrix scale = spec.sigma * (sx * sy.transpose()); // nx x ny

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<fom::LogPermField> out;
    out.reserve(static_cast<std::size_t>(count));
    Matrix z(geom.nx, geom.ny);
    for (int r = 0; r < count; ++r) {
        for (int j = 0; j < geom.ny; ++j)
            for (int i = 0; i < geom.nx; ++i)
                z(i, j) = normal(rng);
        // Column-major nx x ny storage matches cell index j * nx + i.
        const Matrix f = ex.vectors * scale.cwiseProduct(z) * ey.vectors.transpose();
        fom::LogPermField field{Eigen::Map<const Vector>(f.data(), f.size()).array() + spec.mean};
        out.push_back(std::move(field));
    }
    return out;
}

Matrix as_matrix(const std::vector<fom::LogPermField>& ensemble)
{
    if (ensemble.empty())
        return {};
    Matrix m(ensemble.front().beta.size(), static_cast<Eigen::Index>(ensemble.size()));
    for (std::size_t k = 0; k < ensemble.size(); ++k)
        m.col(static_cast<Eigen::Index>(k)) = ensemble[k].beta;
    return m;
}

void save_ensemble(const std::filesystem::path& path, const Geometry& geom,
                   const std::vector<fom::LogPermField>& ensemble)
{
    io::RecordFile f;
    f.nx = static_cast<std::uint64_t>(geom.nx);
    f.ny = static_cast<std::uint64_t>(geom.ny);
    for (const auto& e : ensemble)
        f.records.push_back(e.beta);
    io::write_records(path, f);
}

std::vector<fom::LogPermField> load_ensemble(const std::filesystem::path& path)
{
    auto f = io::read_records(path);
    std::vector<fom::LogPermField> out;
    for (auto& r : f.records)
        out.push_back({std::move(r)});
    return out;
}

} // namespace sdtpwl::geostat
