#pragma once

#include "sdtpwl/common.hpp"
#include "sdtpwl/fom.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace sdtpwl::geostat {

/// Gaussian covariance sigma^2 exp(-(dx/chi_x)^2 - (dy/chi_y)^2) with the
/// correlation lengths given relative to the domain extent.
struct CovarianceSpec
{
    double sigma = 5.0;
    double corr_x = 0.2; // chi_x / L_x
    double corr_y = 0.2; // chi_y / L_y
    double mean = 5.298317366548036; // ln 200, background log-perm in ln mD

    void validate() const;
};

struct Geometry
{
    int nx = 0, ny = 0;
    double dx = 0, dy = 0;

    static Geometry of(const fom::ReservoirConfig& c) { return {c.nx, c.ny, c.dx, c.dy}; }
    int cells() const { return nx * ny; }
    double length_x() const { return nx * dx; }
    double length_y() const { return ny * dy; }
};

Matrix covariance(const CovarianceSpec& spec, const Geometry& geom);

/// Smallest k with sum_{i<k} nu_i^2 >= fraction * sum nu_i^2 for a
/// nonincreasing spectrum. Returns 0 for an all-zero spectrum.
int energy_modes(const Vector& nu, double fraction);
double energy_ratio(const Vector& nu, int k);

/// beta = beta_b + phi_beta xi, with phi_beta = U sqrt(Lambda) over the
/// retained covariance eigenpairs. R_p^{-1} restricted to the span is then
/// the identity in xi.
struct KleModel
{
    Vector beta_b;
    Matrix basis;     // U, orthonormal columns
    Matrix phi_beta;  // U sqrt(Lambda)
    Vector spectrum;  // all covariance eigenvalues, nonincreasing
    int modes = 0;
    double energy_fraction = 0;
    double retained_energy = 0;

    int cells() const { return static_cast<int>(beta_b.size()); }
    Vector encode(const Vector& beta) const;
    Vector encode(const fom::LogPermField& field) const { return encode(field.beta); }
    fom::LogPermField decode(const Vector& xi) const;
    /// Orthogonal projection of beta - beta_b onto the retained span, plus beta_b.
    Vector project(const Vector& beta) const;

    void save(const std::filesystem::path& path) const;
    static KleModel load(const std::filesystem::path& path);
};

/// Dense eigendecomposition of an explicit covariance matrix.
KleModel fit_kle(const Matrix& cov, const Vector& mean, double energy_fraction, int max_modes = -1);

/// Sample covariance of an ensemble (columns are realizations); the mean of
/// the ensemble becomes beta_b.
KleModel fit_kle_ensemble(const Matrix& ensemble, double energy_fraction, int max_modes = -1);

/// Same result as fit_kle(covariance(spec, geom), ...) but built from the two
/// 1D factors of the separable covariance, so it scales to larger grids.
KleModel fit_kle_separable(const CovarianceSpec& spec, const Geometry& geom, double energy_fraction,
                           int max_modes = -1);

/// Gaussian realizations drawn with the full (untruncated) spectrum.
std::vector<fom::LogPermField> sample_realizations(const CovarianceSpec& spec, const Geometry& geom, int count,
                                                   std::uint64_t seed);

Matrix as_matrix(const std::vector<fom::LogPermField>& ensemble);

void save_ensemble(const std::filesystem::path& path, const Geometry& geom,
                   const std::vector<fom::LogPermField>& ensemble);
std::vector<fom::LogPermField> load_ensemble(const std::filesystem::path& path);

} // namespace sdtpwl::geostat
