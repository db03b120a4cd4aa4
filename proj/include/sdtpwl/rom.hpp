#pragma once

#include "sdtpwl/common.hpp"
#include "sdtpwl/fom.hpp"
#include "sdtpwl/geostat.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace sdtpwl::rom {

/// Axis-aligned block of cells [i0, i1) x [j0, j1).
struct Subdomain
{
    int i0 = 0, i1 = 0, j0 = 0, j1 = 0;
    std::vector<int> cells;     // ascending global cell indices
    std::vector<int> neighbors; // edge-adjacent subdomains, ascending
    int color = 0;              // 0 or 1, checkerboard
};

struct SubdomainLayout
{
    int nx = 0, ny = 0;
    int rows = 1, cols = 1;
    std::vector<Subdomain> domains; // row-major over the block grid
    std::vector<int> owner;         // cell -> subdomain

    int size() const { return static_cast<int>(domains.size()); }
    std::vector<int> color_class(int color) const;
};

/// Splits an nx x ny grid into rows x cols near-equal rectangles. Block row r
/// covers grid rows [r*ny/rows, (r+1)*ny/rows).
SubdomainLayout partition(int nx, int ny, int rows, int cols);

/// One FOM run used for training, with the parameters that produced it.
struct TrainingRun
{
    Vector xi;
    fom::Simulation sim;
};

/// State snapshots as columns; pressure and saturation kept apart.
struct SnapshotSet
{
    int nx = 0, ny = 0;
    Matrix pressure;   // N_g x columns
    Matrix saturation; // N_g x columns
    std::vector<Vector> run_xi;
    std::vector<int> column_run;
    std::vector<int> column_step;

    int columns() const { return static_cast<int>(pressure.cols()); }
    int runs() const { return static_cast<int>(run_xi.size()); }
    /// Appends states 1..N of a run (the shared initial state is left out).
    void append(const TrainingRun& run);

    void save(const std::filesystem::path& path) const;
    static SnapshotSet load(const std::filesystem::path& path);
};

std::vector<fom::StateField> states_of(const SnapshotSet& set, int run);

/// Draws xi in {-1, 1}^l with equal probability per entry.
class SignSampler
{
public:
    SignSampler(int dim, std::uint64_t seed);
    Vector operator()();

private:
    int dim_;
    std::mt19937_64 rng_;
};

using Sampler = std::function<Vector()>;

struct CollectOptions
{
    double tolerance = 0.01; // relative spectrum change; infinity means one run
    int min_runs = 2;
    int max_runs = 40;
    int leading = 20;        // number of leading singular values compared
    int max_draws = 1000;    // sampler calls before giving up on fresh points
};

struct SnapshotCollection
{
    SnapshotSet set;
    std::vector<TrainingRun> runs;
    int fom_runs = 0;
    int duplicates_skipped = 0;
    std::vector<double> spectrum_change; // entry k compares runs k+1 and k+2
    bool converged = false;
};

/// Normalized leading singular values sigma_k / |sigma| of centered snapshots.
Vector normalized_spectrum(const Matrix& snapshots, int leading);
double spectrum_change(const Vector& previous, const Vector& current);

SnapshotCollection collect_snapshots(const geostat::KleModel& kle, const fom::ReservoirConfig& config,
                                     const Sampler& sampler, const CollectOptions& options = {});

/// Truncated POD of one variable over one subdomain. phi = U_k Sigma_k, so the
/// coefficients of the snapshots are the rows of V_k.
struct VariableBasis
{
    Vector mean;  // zero when uncentered
    Matrix u;     // orthonormal columns
    Vector sigma; // all singular values, nonincreasing
    int width = 0;

    Matrix phi() const { return u * sigma.head(width).asDiagonal(); }
    Vector reduce(const Vector& x) const;
    Vector reconstruct(const Vector& psi) const;
};

struct SubdomainBasis
{
    VariableBasis p, s;
    int size() const { return p.width + s.width; }
};

struct PodBasis
{
    std::vector<SubdomainBasis> domains;
    double energy_p = 0.95, energy_s = 0.90;
    bool centered = true;
    int snapshot_count = 0;
    std::vector<std::string> warnings;

    int total_size() const;
    void save(const std::filesystem::path& path) const;
    static PodBasis load(const std::filesystem::path& path);
};

PodBasis build_pod(const SnapshotSet& snapshots, const SubdomainLayout& layout, double energy_p, double energy_s,
                   bool centered = true);

/// Per subdomain, psi^d = [psi_p; psi_s].
using Reduced = std::vector<Vector>;

Reduced reduce(const fom::StateField& state, const PodBasis& basis, const SubdomainLayout& layout);
fom::StateField reconstruct(const Reduced& psi, const PodBasis& basis, const SubdomainLayout& layout);

/// Background point, then +-delta along each axis (2 l + 1 points), then
/// `extra_random` points uniform in [-delta, delta]^l.
std::vector<Vector> rbf_training_points(int dim, double delta, int extra_random = 0, std::uint64_t seed = 0);

/// Runs the FOM at parameters xi; failures are rethrown with xi attached.
TrainingRun run_training(const geostat::KleModel& kle, const fom::ReservoirConfig& config, const Vector& xi,
                         int steps = -1);

std::string format_xi(const Vector& xi);

/// Stores runs with full states and well responses so later stages can
/// rebuild surrogates without repeating simulations.
void save_runs(const std::filesystem::path& path, const std::vector<TrainingRun>& runs);
std::vector<TrainingRun> load_runs(const std::filesystem::path& path, const fom::ReservoirConfig& config);

} // namespace sdtpwl::rom
