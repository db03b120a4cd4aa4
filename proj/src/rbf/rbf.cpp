#include "sdtpwl/rbf.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace sdtpwl::rbf {

KernelKind parse_kernel(const std::string& name)
{
    if (name == "gaussian")
        return KernelKind::Gaussian;
    if (name == "linear")
        return KernelKind::Linear;
    if (name == "multiquadric")
        return KernelKind::Multiquadric;
    if (name == "inverse-quadric")
        return KernelKind::InverseQuadric;
    if (name == "cubic")
        return KernelKind::Cubic;
    if (name == "thin-plate")
        return KernelKind::ThinPlate;
    if (name == "inverse-multiquadric")
        return KernelKind::InverseMultiquadric;
    throw Error("rbf", fmt::format("unknown kernel '{}'", name));
}

std::string kernel_name(KernelKind kind)
{
    switch (kind) {
    case KernelKind::Gaussian: return "gaussian";
    case KernelKind::Linear: return "linear";
    case KernelKind::Multiquadric: return "multiquadric";
    case KernelKind::InverseQuadric: return "inverse-quadric";
    case KernelKind::Cubic: return "cubic";
    case KernelKind::ThinPlate: return "thin-plate";
    case KernelKind::InverseMultiquadric: return "inverse-multiquadric";
    }
    return "?";
}

bool uses_shape(KernelKind kind)
{
    return kind == KernelKind::Gaussian || kind == KernelKind::Multiquadric || kind == KernelKind::InverseQuadric ||
           kind == KernelKind::InverseMultiquadric;
}

double Kernel::operator()(double l) const
{
    const double e2 = eps * eps;
    switch (kind) {
    case KernelKind::Gaussian: return std::exp(-l * l / e2);
    case KernelKind::Linear: return l;
    case KernelKind::Multiquadric: return std::sqrt(l * l + e2);
    case KernelKind::InverseQuadric: return 1.0 / (l * l + e2);
    case KernelKind::Cubic: return l * l * l;
    case KernelKind::ThinPlate: return l > 0 ? l * l * std::log(l) : 0.0;
    case KernelKind::InverseMultiquadric: return 1.0 / std::sqrt(l * l + e2);
    }
    return 0;
}

double Kernel::derivative(double l) const { return derivative_over_l(l) * l; }

double Kernel::derivative_over_l(double l) const
{
    const double e2 = eps * eps;
    switch (kind) {
    case KernelKind::Gaussian: return -2.0 / e2 * std::exp(-l * l / e2);
    case KernelKind::Linear: return l > 0 ? 1.0 / l : std::numeric_limits<double>::infinity();
    case KernelKind::Multiquadric: return 1.0 / std::sqrt(l * l + e2);
    case KernelKind::InverseQuadric: {
        const double q = l * l + e2;
        return -2.0 / (q * q);
    }
    case KernelKind::Cubic: return 3.0 * l;
    case KernelKind::ThinPlate: return l > 0 ? 2.0 * std::log(l) + 1.0 : 0.0;
    case KernelKind::InverseMultiquadric: {
        const double q = l * l + e2;
        return -1.0 / (q * std::sqrt(q));
    }
    }
    return 0;
}

Matrix distance_matrix(const Matrix& centers)
{
    const Eigen::Index m = centers.rows();
    Matrix d(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        d(i, i) = 0;
        for (Eigen::Index j = i + 1; j < m; ++j) {
            const double l = (centers.row(i) - centers.row(j)).norm();
            d(i, j) = l;
            d(j, i) = l;
        }
    }
    return d;
}

Matrix kernel_matrix(const Matrix& distances, const Kernel& kernel)
{
    return distances.unaryExpr([&](double l) { return kernel(l); });
}

double condition_number(const Matrix& m)
{
    if (m.size() == 0)
        return 1;
    Eigen::JacobiSVD<Matrix> svd(m);
    const Vector& s = svd.singularValues();
    const double lo = s(s.size() - 1);
    return lo > 0 ? s(0) / lo : std::numeric_limits<double>::infinity();
}

double condition_estimate(const Eigen::PartialPivLU<Matrix>& lu)
{
    const double rc = lu.rcond();
    return rc > 0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
}

double mean_nearest_distance(const Matrix& centers)
{
    const Eigen::Index m = centers.rows();
    if (m < 2)
        return 1.0;
    const Matrix d = distance_matrix(centers);
    double sum = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < m; ++j)
            if (j != i)
                best = std::min(best, d(i, j));
        sum += best;
    }
    return sum / static_cast<double>(m);
}

RbfModel RbfModel::fit(Matrix centers, const Matrix& values, Kernel kernel, const FitOptions& options)
{
    const Eigen::Index m = centers.rows();
    if (m < 1)
        throw Error("rbf", "at least one center is required");
    if (values.rows() != m)
        throw Error("rbf", fmt::format("{} centers but {} value rows", m, values.rows()));
    if (uses_shape(kernel.kind) && !(kernel.eps > 0))
        throw Error("rbf", "shape parameter must be positive");
    if (!centers.allFinite() || !values.allFinite())
        throw Error("rbf", "non-finite training data");

    const Matrix dist = distance_matrix(centers);
    const double diameter = dist.maxCoeff();
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i + 1; j < m; ++j)
            if (dist(i, j) <= options.duplicate_tolerance * diameter)
                throw Error("rbf", fmt::format("centers {} and {} coincide (distance {:.3e}, diameter {:.3e}); "
                                               "deduplicate the training points",
                                               i, j, dist(i, j), diameter));

    const Matrix d = kernel_matrix(dist, kernel);
    RbfModel model;
    const Eigen::PartialPivLU<Matrix> lu(d);
    model.condition_ = condition_estimate(lu);
    if (!(model.condition_ <= options.max_condition))
        throw Error("rbf", fmt::format("interpolation matrix condition {:.3e} exceeds {:.1e}; increase the shape "
                                       "parameter spacing or deduplicate centers",
                                       model.condition_, options.max_condition));
    model.weights_ = lu.solve(values);
    model.centers_ = std::move(centers);
    model.kernel_ = kernel;
    return model;
}

Vector RbfModel::eval(const Vector& x) const
{
    if (x.size() != centers_.cols())
        throw Error("rbf", fmt::format("point has dimension {}, model expects {}", x.size(), centers_.cols()));
    Vector phi(size());
    for (int j = 0; j < size(); ++j)
        phi(j) = kernel_((x.transpose() - centers_.row(j)).norm());
    return weights_.transpose() * phi;
}

Matrix RbfModel::grad(const Vector& x, int begin, int count) const
{
    if (x.size() != centers_.cols() || begin < 0 || count < 0 || begin + count > dim())
        throw Error("rbf", "gradient block outside the input space");
    Matrix g = Matrix::Zero(outputs(), count);
    const double tiny = 1e-300;
    for (int j = 0; j < size(); ++j) {
        const Eigen::RowVectorXd diff = x.transpose() - centers_.row(j);
        const double l = diff.norm();
        if (l <= tiny) {
            if (kernel_.kind == KernelKind::Linear)
                throw Error("rbf", "the linear spline is not differentiable at a center");
            continue;
        }
        // d theta(|x - c|)/dx = theta'(l)/l * (x - c)
        const double s = kernel_.derivative_over_l(l);
        g.noalias() += weights_.row(j).transpose() * (s * diff.segment(begin, count));
    }
    return g;
}

Matrix RbfModel::grad_at_center(int index, int begin, int count) const
{
    if (index < 0 || index >= size())
        throw Error("rbf", fmt::format("center index {} out of range", index));
    return grad(centers_.row(index).transpose(), begin, count);
}

double loo_error(const Matrix& distances, const Matrix& values, const Kernel& kernel, double max_condition)
{
    const Matrix d = kernel_matrix(distances, kernel);
    if (!d.allFinite())
        return std::numeric_limits<double>::infinity();
    const Eigen::PartialPivLU<Matrix> lu(d);
    if (!(condition_estimate(lu) <= max_condition))
        return std::numeric_limits<double>::infinity();
    const Matrix inv = lu.inverse();
    const Matrix c = inv * values;
    double err = 0;
    for (Eigen::Index k = 0; k < d.rows(); ++k)
        err += c.row(k).squaredNorm() / (inv(k, k) * inv(k, k));
    return std::sqrt(err);
}

TuneResult tune_shape(const Matrix& centers, const Matrix& values, KernelKind kind, const std::vector<double>& candidates,
                      int refinements, double max_condition)
{
    if (candidates.empty())
        throw Error("rbf", "empty shape candidate list");
    TuneResult r;
    if (candidates.size() == 1 || centers.rows() < 3) {
        r.eps = candidates.front();
        return r;
    }
    const Matrix dist = distance_matrix(centers);
    auto score = [&](double eps) {
        ++r.evaluations;
        return loo_error(dist, values, Kernel{kind, eps}, max_condition);
    };
    std::vector<double> errors;
    std::size_t best = 0;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        errors.push_back(score(candidates[k]));
        if (errors[k] < errors[best])
            best = k;
    }
    if (std::isinf(errors[best]))
        throw Error("rbf", "every shape candidate gives an ill-conditioned interpolation matrix");
    r.eps = candidates[best];
    r.error = errors[best];
    double lo = best > 0 ? candidates[best - 1] : candidates[best];
    double hi = best + 1 < candidates.size() ? candidates[best + 1] : candidates[best];
    for (int it = 0; it < refinements && r.error > 0; ++it) {
        bool improved = false;
        for (double other : {lo, hi}) {
            if (other == r.eps)
                continue;
            const double mid = std::sqrt(other * r.eps);
            const double e = score(mid);
            if (e < r.error) {
                (other == lo ? hi : lo) = r.eps;
                r.eps = mid;
                r.error = e;
                improved = true;
                break;
            }
        }
        if (!improved) {
            lo = std::sqrt(lo * r.eps);
            hi = std::sqrt(hi * r.eps);
        }
    }
    return r;
}

} // namespace sdtpwl::rbf
