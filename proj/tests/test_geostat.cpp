#include "sdtpwl/geostat.hpp"
#include "sdtpwl/io.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace sdtpwl;
using namespace sdtpwl::geostat;

namespace {

Geometry case1_grid() { return {50, 50, 20.0, 20.0}; }

// Projector onto the column span of an orthonormal basis.
Matrix projector(const Matrix& u) { return u * u.transpose(); }

} // namespace

TEST_CASE("covariance entries follow the Gaussian kernel")
{
    CovarianceSpec spec;
    const Geometry g{10, 8, 20.0, 25.0};
    const Matrix c = covariance(spec, g);
    CHECK(c.rows() == 80);
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (int k = 0; k < 80; ++k)
        CHECK(c(k, k) == doctest::Approx(25.0).epsilon(1e-14));

    // chi_x = 0.2 * 200 m = 40 m, two cells apart in x.
    CHECK(c(0, 2) == doctest::Approx(25.0 * std::exp(-1.0)).epsilon(1e-12));
    // chi_y = 0.2 * 200 m = 40 m, cells 25 m apart in y: exp(-(25/40)^2).
    CHECK(c(0, 10) == doctest::Approx(25.0 * std::exp(-0.390625)).epsilon(1e-12));

    for (int i = 1; i < 10; ++i)
        CHECK(c(0, i) < c(0, i - 1));
    CHECK(c(0, 9) == doctest::Approx(25.0 * std::exp(-20.25)).epsilon(1e-10));

    const Eigen::SelfAdjointEigenSolver<Matrix> es(c);
    CHECK(es.eigenvalues().minCoeff() > -1e-8 * es.eigenvalues().maxCoeff());
}

TEST_CASE("invalid covariance specs are rejected")
{
    CovarianceSpec spec;
    spec.sigma = 0;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec.sigma = 1;
    spec.corr_x = 1.5;
    CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("energy criterion counting")
{
    CHECK(energy_modes(Vector::Constant(9, 2.0), 0.5) == 5);
    CHECK(energy_modes(Vector::Constant(10, 2.0), 0.5) == 5);
    CHECK(energy_modes(Vector::Constant(10, 2.0), 1.0) == 10);
    Vector nu(4);
    nu << 3, 2, 1, 0;
    // squares 9, 4, 1: 9/14 = 0.643, 13/14 = 0.929
    CHECK(energy_modes(nu, 0.6) == 1);
    CHECK(energy_modes(nu, 0.65) == 2);
    CHECK(energy_modes(nu, 1.0) == 3);
    CHECK(energy_ratio(nu, 2) == doctest::Approx(13.0 / 14.0));
    CHECK(energy_modes(Vector::Zero(3), 0.9) == 0);
}

TEST_CASE("equal-variance diagonal covariance keeps half the modes at fraction 0.5")
{
    for (int n : {7, 12}) {
        const Matrix c = 3.0 * Matrix::Identity(n, n);
        const auto kle = fit_kle(c, Vector::Zero(n), 0.5);
        CHECK(kle.modes == (n + 1) / 2);
        CHECK(kle.retained_energy >= 0.5);
    }
}

TEST_CASE("full energy on a rank-r ensemble keeps r modes")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 1);
    const int cells = 40, r = 6;
    Matrix basis(cells, r), coef(r, r + 1);
    for (int i = 0; i < cells; ++i)
        for (int j = 0; j < r; ++j)
            basis(i, j) = n(rng);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j <= r; ++j)
            coef(i, j) = n(rng);
    // r + 1 members spanning an r-dimensional affine set around the mean.
    Matrix ens = basis * coef;
    ens = ens.colwise() - ens.rowwise().mean();
    ens.array() += 4.0;
    const auto kle = fit_kle_ensemble(ens, 1.0);
    CHECK(kle.modes == r);
    CHECK(kle.retained_energy == doctest::Approx(1.0));
    CHECK((kle.beta_b.array() - 4.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("rank-zero input fails")
{
    CHECK_THROWS_AS(fit_kle(Matrix::Zero(5, 5), Vector::Zero(5), 0.9), Error);
    CHECK_THROWS_AS(fit_kle_ensemble(Matrix::Ones(5, 3), 0.9), Error);
    CHECK_THROWS_AS(fit_kle(Matrix::Identity(5, 5), Vector::Zero(5), 0.0), Error);
}

TEST_CASE("indefinite covariance beyond tolerance fails")
{
    Matrix c = Matrix::Identity(3, 3);
    c(2, 2) = -0.1;
    CHECK_THROWS_AS(fit_kle(c, Vector::Zero(3), 0.9), Error);
}

TEST_CASE("separable and dense KLE agree")
{
    CovarianceSpec spec;
    const Geometry g{12, 9, 10.0, 15.0};
    const auto dense = fit_kle(covariance(spec, g), Vector::Constant(g.cells(), spec.mean), 0.95);
    const auto sep = fit_kle_separable(spec, g, 0.95);
    REQUIRE(dense.modes == sep.modes);
    CHECK((dense.spectrum - sep.spectrum).cwiseAbs().maxCoeff() < 1e-9 * dense.spectrum(0));
    CHECK((projector(dense.basis) - projector(sep.basis)).norm() < 1e-7);
    CHECK(dense.retained_energy == doctest::Approx(sep.retained_energy).epsilon(1e-12));
    const Matrix gram = sep.basis.transpose() * sep.basis;
    CHECK((gram - Matrix::Identity(sep.modes, sep.modes)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("reference setup retains a moderate number of modes at 95 percent")
{
    CovarianceSpec spec;
    const auto kle = fit_kle_separable(spec, case1_grid(), 0.95);
    CHECK(kle.modes >= 14);
    CHECK(kle.modes <= 24);
    CHECK(kle.retained_energy >= 0.95);
    CHECK(energy_ratio(kle.spectrum, kle.modes - 1) < 0.95);
    CHECK(kle.retained_energy == energy_ratio(kle.spectrum, kle.modes));

    const auto desk = fit_kle_separable(spec, {25, 25, 40.0, 40.0}, 0.95);
    CHECK(desk.modes == kle.modes);
}

TEST_CASE("encode and decode")
{
    CovarianceSpec spec;
    const auto kle = fit_kle_separable(spec, {20, 20, 25.0, 25.0}, 0.95);
    CHECK(kle.decode(Vector::Zero(kle.modes)).beta == kle.beta_b);

    Vector e1 = Vector::Zero(kle.modes);
    e1(0) = 1;
    CHECK(((kle.decode(e1).beta - kle.beta_b) - kle.phi_beta.col(0)).cwiseAbs().maxCoeff() < 1e-14);

    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0, 1);
    Vector xi(kle.modes);
    for (int k = 0; k < kle.modes; ++k)
        xi(k) = n(rng);
    CHECK((kle.encode(kle.decode(xi)) - xi).cwiseAbs().maxCoeff() < 1e-10);

    const auto field = sample_realizations(spec, {20, 20, 25.0, 25.0}, 1, 5).front();
    const Vector p = kle.project(field.beta);
    CHECK((kle.decode(kle.encode(field)).beta - p).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((kle.project(p) - p).cwiseAbs().maxCoeff() < 1e-10);
    CHECK_THROWS_AS(kle.decode(Vector::Zero(kle.modes + 1)), Error);
}

TEST_CASE("projection error of realizations matches the discarded variance")
{
    CovarianceSpec spec;
    const Geometry g{20, 20, 25.0, 25.0};
    const auto kle = fit_kle_separable(spec, g, 0.95);
    // E|beta - P beta|^2 / E|beta - beta_b|^2 = discarded eigenvalue mass.
    const double expected = kle.spectrum.tail(kle.spectrum.size() - kle.modes).sum() / kle.spectrum.sum();
    const auto ens = sample_realizations(spec, g, 400, 21);
    double lost = 0, total = 0;
    for (const auto& f : ens) {
        lost += (f.beta - kle.project(f.beta)).squaredNorm();
        total += (f.beta - kle.beta_b).squaredNorm();
    }
    CHECK(lost / total == doctest::Approx(expected).epsilon(0.1));
    CHECK(lost / total < 1.0 - kle.retained_energy + 0.2);
}

TEST_CASE("realizations reproduce the prescribed statistics")
{
    CovarianceSpec spec;
    const Geometry g{25, 25, 40.0, 40.0};
    const auto ens = sample_realizations(spec, g, 1000, 2024);
    REQUIRE(ens.size() == 1000);
    const Matrix m = as_matrix(ens);
    const Vector mean = m.rowwise().mean();
    int inside = 0;
    for (int c = 0; c < g.cells(); ++c) {
        const double var = (m.row(c).array() - mean(c)).square().sum() / 999.0;
        const double sd = std::sqrt(var);
        inside += sd >= 4.5 && sd <= 5.5;
    }
    CHECK(inside >= 0.95 * g.cells());

    // Lag-one correlation in x against the analytic kernel exp(-(40/200)^2).
    const Matrix dev = m.colwise() - mean;
    double cov01 = 0;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i + 1 < g.nx; ++i)
            cov01 += dev.row(j * 25 + i).dot(dev.row(j * 25 + i + 1)) / 999.0;
    cov01 /= g.ny * (g.nx - 1);
    CHECK(cov01 == doctest::Approx(25.0 * std::exp(-0.04)).epsilon(0.1));
}

TEST_CASE("sampling is reproducible and collapses with vanishing sigma")
{
    CovarianceSpec spec;
    const Geometry g{10, 10, 20.0, 20.0};
    const auto a = sample_realizations(spec, g, 5, 77);
    const auto b = sample_realizations(spec, g, 5, 77);
    const auto c = sample_realizations(spec, g, 5, 78);
    for (int k = 0; k < 5; ++k) {
        CHECK(a[k].beta == b[k].beta);
        CHECK(a[k].beta != c[k].beta);
    }
    spec.sigma = 1e-14;
    for (const auto& f : sample_realizations(spec, g, 3, 1))
        CHECK((f.beta.array() - spec.mean).abs().maxCoeff() < 1e-10);
    CHECK_THROWS_AS(sample_realizations(spec, g, 0, 1), Error);
}

TEST_CASE("models and ensembles survive a file round trip")
{
    const auto dir = std::filesystem::temp_directory_path() / "sdtpwl_geostat_test";
    std::filesystem::remove_all(dir);
    CovarianceSpec spec;
    const Geometry g{8, 6, 20.0, 20.0};
    const auto kle = fit_kle_separable(spec, g, 0.9);
    kle.save(dir / "kle.bin");
    const auto back = KleModel::load(dir / "kle.bin");
    CHECK(back.modes == kle.modes);
    CHECK(back.phi_beta == kle.phi_beta);
    CHECK(back.beta_b == kle.beta_b);
    CHECK(back.retained_energy == kle.retained_energy);

    const auto ens = sample_realizations(spec, g, 4, 9);
    save_ensemble(dir / "ens.bin", g, ens);
    const auto rec = io::read_records(dir / "ens.bin");
    CHECK(rec.nx == 8);
    CHECK(rec.ny == 6);
    const auto ens2 = load_ensemble(dir / "ens.bin");
    REQUIRE(ens2.size() == 4);
    CHECK(ens2[3].beta == ens[3].beta);
    CHECK(std::filesystem::file_size(dir / "ens.bin") == 40 + 4 * 48 * 8);

    CHECK_THROWS_AS(KleModel::load(dir / "missing.bin"), Error);
    CHECK_THROWS_AS(KleModel::load(dir / "ens.bin"), Error);
    std::filesystem::remove_all(dir);
}
