#pragma once

#include "sdtpwl/common.hpp"
#include "sdtpwl/fom.hpp"
#include "sdtpwl/rbf.hpp"
#include "sdtpwl/rom.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

namespace sdtpwl::tpwl {

struct TpwlOptions
{
    rbf::KernelKind kernel = rbf::KernelKind::Multiquadric;
    bool tune_shape = true;
    std::vector<double> shape_factors{0.25, 0.5, 1.0, 2.0, 4.0}; // times the mean nearest-center distance
    int shape_refinements = 4;
    double max_condition = 1e12;
    double state_scale = 1.0; // multiplies psi inputs of the interpolants

    double xi_weight = 1.0;
    double psi_weight = -1.0; // negative: 1 / (number of reduced states)

    double coupling_tolerance = 1e-8;
    int coupling_max_iterations = 50;
    double damping = 1.0;
    double fallback_damping = 0.5;
    bool parallel_colors = false;
};

/// Reduced view of one training run.
struct TrainingTrajectory
{
    Vector xi;
    std::vector<rom::Reduced> psi;          // steps 0..N
    std::vector<std::vector<Vector>> wells; // per measurement time, per subdomain
};

struct StepJacobians
{
    Matrix e_self; // d psi^{d,n+1} / d psi^{d,n}
    Matrix e_nb;   // d psi^{d,n+1} / d psi^{sd,n+1}, neighbors concatenated in layout order
    Matrix g;      // d psi^{d,n+1} / d xi
};

struct WellJacobians
{
    Matrix a; // d y^{d,m} / d psi^{d,m}
    Matrix b; // d y^{d,m} / d xi
};

struct Anchor
{
    int trajectory = 0;
    int step = 0;
    double distance = 0;
};

/// RBF-linearized subdomain dynamics and well models around a set of
/// training trajectories.
class TpwlSystem
{
public:
    TpwlSystem() = default;
    TpwlSystem(const TpwlSystem& other);
    TpwlSystem& operator=(const TpwlSystem& other);
    TpwlSystem(TpwlSystem&&) noexcept = default;
    TpwlSystem& operator=(TpwlSystem&&) noexcept = default;

    const rom::SubdomainLayout& layout() const { return layout_; }
    const rom::PodBasis& basis() const { return basis_; }
    const TpwlOptions& options() const { return options_; }
    int steps() const { return steps_; }
    int parameters() const { return params_; }
    const std::vector<int>& measurement_steps() const { return measure_steps_; }
    const std::vector<TrainingTrajectory>& trajectories() const { return trajectories_; }
    int state_size(int d) const { return basis_.domains[static_cast<std::size_t>(d)].size(); }
    int neighbor_size(int d) const;
    int total_states() const { return basis_.total_size(); }
    /// Indices into the flattened observation vector owned by subdomain d.
    const std::vector<int>& data_index(int d) const { return data_index_[static_cast<std::size_t>(d)]; }
    int data_per_time() const { return data_per_time_; }
    bool coupled() const;

    /// Interpolant mapping (psi^{d,n}, psi^{sd,n+1}, xi) to psi^{d,n+1}.
    const rbf::RbfModel& step_model(int n, int d) const { return step_models_[idx(n, d)]; }
    const rbf::RbfModel* well_model(int m, int d) const;

    /// Jacobians at the center of trajectory k, computed on first use.
    const StepJacobians& step_jacobians(int n, int d, int k) const;
    const WellJacobians& well_jacobians(int m, int d, int k) const;

    double psi_weight() const;

    /// Appends a trajectory and refits every interpolant.
    void add_trajectory(TrainingTrajectory t);

    friend TpwlSystem build(const rom::PodBasis&, const rom::SubdomainLayout&, const std::vector<rom::TrainingRun>&,
                            const fom::ReservoirConfig&, const TpwlOptions&);

    void save(const std::filesystem::path& path) const;
    /// Restores the trajectories and refits (fits are deterministic).
    static TpwlSystem load(const std::filesystem::path& path, const rom::PodBasis& basis,
                           const rom::SubdomainLayout& layout, const TpwlOptions& options);
    std::string manifest_json() const;

private:
    std::size_t idx(int n, int d) const { return static_cast<std::size_t>(n * layout_.size() + d); }
    void fit_all();
    rbf::RbfModel fit_one(Matrix centers, const Matrix& values, const std::string& where) const;
    Vector step_input(int n, int d, const TrainingTrajectory& t) const;

    rom::SubdomainLayout layout_;
    rom::PodBasis basis_;
    TpwlOptions options_;
    int steps_ = 0;
    int params_ = 0;
    int data_per_time_ = 0;
    std::vector<int> measure_steps_;
    std::vector<std::vector<int>> data_index_;
    std::vector<TrainingTrajectory> trajectories_;
    std::vector<rbf::RbfModel> step_models_;              // [n][d]
    std::vector<std::unique_ptr<rbf::RbfModel>> well_models_; // [m][d], null without wells

    struct Cache
    {
        std::mutex mutex;
        std::map<std::tuple<int, int, int>, std::unique_ptr<StepJacobians>> step;
        std::map<std::tuple<int, int, int>, std::unique_ptr<WellJacobians>> well;
    };
    std::unique_ptr<Cache> cache_ = std::make_unique<Cache>();
};

TrainingTrajectory make_trajectory(const rom::TrainingRun& run, const rom::PodBasis& basis,
                                   const rom::SubdomainLayout& layout, const fom::ReservoirConfig& config);

TpwlSystem build(const rom::PodBasis& basis, const rom::SubdomainLayout& layout,
                 const std::vector<rom::TrainingRun>& runs, const fom::ReservoirConfig& config,
                 const TpwlOptions& options = {});

/// Training trajectory closest to (psi^n, xi) under the weighted metric; ties
/// go to the lowest index.
Anchor select_training(const TpwlSystem& system, int step, const rom::Reduced& psi, const Vector& xi);

enum class Evaluation { Coupled, Global };

struct ReducedRun
{
    std::vector<rom::Reduced> psi; // steps 0..N
    std::vector<Vector> responses; // flattened data per measurement time
    std::vector<int> anchors;      // anchors[n] produced step n + 1
    std::vector<int> iterations;   // coupling sweeps per step
};

struct SimulateOptions
{
    const std::vector<int>* frozen_anchors = nullptr;
    Evaluation evaluation = Evaluation::Coupled;
    double tolerance = -1; // negative: system option
};

ReducedRun simulate_reduced(const TpwlSystem& system, const Vector& xi, const SimulateOptions& options = {});

/// Copy of `system` with the run added as a new center. Rejects a run whose
/// xi duplicates an existing center.
TpwlSystem rebuild_with(const TpwlSystem& system, const rom::TrainingRun& run, const fom::ReservoirConfig& config);

} // namespace sdtpwl::tpwl
