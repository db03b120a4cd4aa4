#pragma once

#include "sdtpwl/common.hpp"

#include <Eigen/LU>

#include <string>
#include <vector>

namespace sdtpwl::rbf {

enum class KernelKind {
    Gaussian,
    Linear,
    Multiquadric,
    InverseQuadric,
    Cubic,
    ThinPlate,
    InverseMultiquadric,
};

KernelKind parse_kernel(const std::string& name);
std::string kernel_name(KernelKind kind);
bool uses_shape(KernelKind kind);

struct Kernel
{
    KernelKind kind = KernelKind::Multiquadric;
    double eps = 1.0;

    double operator()(double l) const;
    /// d theta / d l
    double derivative(double l) const;
    /// Limit of theta'(l) / l as l -> 0. Infinite for the linear spline.
    double derivative_over_l(double l) const;
};

struct FitOptions
{
    double max_condition = 1e12;
    double duplicate_tolerance = 1e-10; // relative to the diameter of the centers
};

/// s(x) = sum_j w_j theta(|x - c_j|), one weight row per center.
class RbfModel
{
public:
    /// centers: M x dim (one row per center), values: M x outputs.
    static RbfModel fit(Matrix centers, const Matrix& values, Kernel kernel, const FitOptions& options = {});

    Vector eval(const Vector& x) const;
    /// Jacobian (outputs x count) with respect to inputs [begin, begin + count)
    /// at an arbitrary point.
    Matrix grad(const Vector& x, int begin, int count) const;
    /// Same at center `index`, where the self-term contributes nothing.
    Matrix grad_at_center(int index, int begin, int count) const;

    int size() const { return static_cast<int>(centers_.rows()); }
    int dim() const { return static_cast<int>(centers_.cols()); }
    int outputs() const { return static_cast<int>(weights_.cols()); }
    const Matrix& centers() const { return centers_; }
    const Matrix& weights() const { return weights_; }
    const Kernel& kernel() const { return kernel_; }
    double condition() const { return condition_; }

private:
    Matrix centers_;
    Matrix weights_;
    Kernel kernel_;
    double condition_ = 1;
};

Matrix distance_matrix(const Matrix& centers);
Matrix kernel_matrix(const Matrix& distances, const Kernel& kernel);
double condition_number(const Matrix& m);
/// Cheap 1-norm estimate from an existing factorization.
double condition_estimate(const Eigen::PartialPivLU<Matrix>& lu);

/// Mean distance from each center to its nearest other center.
double mean_nearest_distance(const Matrix& centers);

/// Leave-one-out residual norm via Rippa's formula e_k = (D^-1 Z)_k / (D^-1)_kk.
/// Infinite when D is singular or beyond the conditioning limit.
double loo_error(const Matrix& distances, const Matrix& values, const Kernel& kernel, double max_condition = 1e12);

struct TuneResult
{
    double eps = 0;
    double error = 0;
    int evaluations = 0;
};

/// Picks the candidate with the smallest LOO error (first one on ties), then
/// greedily probes geometric midpoints toward its neighbors while that helps.
TuneResult tune_shape(const Matrix& centers, const Matrix& values, KernelKind kind, const std::vector<double>& candidates,
                      int refinements = 6, double max_condition = 1e12);

} // namespace sdtpwl::rbf
