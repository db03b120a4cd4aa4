#include "sdtpwl/tpwl.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>

namespace sdtpwl::tpwl {

Anchor select_training(const TpwlSystem& system, int step, const rom::Reduced& psi, const Vector& xi)
{
    const auto& trajs = system.trajectories();
    if (trajs.empty())
        throw Error("tpwl", "no training trajectories");
    const double wx = system.options().xi_weight;
    const double wp = system.psi_weight();
    Anchor best{0, step, std::numeric_limits<double>::infinity()};
    for (std::size_t k = 0; k < trajs.size(); ++k) {
        const auto& t = trajs[k];
        double dist = wx * (xi - t.xi).squaredNorm();
        const auto& ref = t.psi[static_cast<std::size_t>(step)];
        for (std::size_t d = 0; d < psi.size(); ++d)
            dist += wp * (psi[d] - ref[d]).squaredNorm();
        if (dist < best.distance) {
            best.trajectory = static_cast<int>(k);
            best.distance = dist;
        }
    }
    return best;
}

namespace {

// Gathers psi^{sd} - psi_tr^{sd} for the neighbors of d in layout order.
Vector neighbor_increment(const TpwlSystem& sys, int d, const rom::Reduced& psi, const rom::Reduced& ref)
{
    Vector out(sys.neighbor_size(d));
    int pos = 0;
    for (int nb : sys.layout().domains[static_cast<std::size_t>(d)].neighbors) {
        const auto k = static_cast<std::size_t>(nb);
        out.segment(pos, sys.state_size(nb)) = psi[k] - ref[k];
        pos += sys.state_size(nb);
    }
    return out;
}

struct Coupling
{
    bool converged = false;
    int iterations = 0;
    double residual = 0;
};

Coupling couple(const TpwlSystem& sys, int n, int anchor, const std::vector<Vector>& base, const rom::Reduced& ref,
                rom::Reduced& next, double damping, double tol, int max_iter)
{
    const auto& layout = sys.layout();
    const std::vector<int> colors[2] = {layout.color_class(0), layout.color_class(1)};
    Coupling c;
    auto update = [&](int d) {
        const auto& jac = sys.step_jacobians(n, d, anchor);
        const Vector target = base[static_cast<std::size_t>(d)] + jac.e_nb * neighbor_increment(sys, d, next, ref);
        Vector& cur = next[static_cast<std::size_t>(d)];
        const Vector updated = (1.0 - damping) * cur + damping * target;
        const double change = (updated - cur).cwiseAbs().maxCoeff();
        cur = updated;
        return change;
    };
    for (c.iterations = 1; c.iterations <= max_iter; ++c.iterations) {
        double change = 0;
        for (const auto& cls : colors) {
            if (sys.options().parallel_colors && cls.size() > 1) {
                // Members of one color never read each other's values.
                std::vector<std::future<double>> jobs;
                for (int d : cls)
                    jobs.push_back(std::async(std::launch::async, update, d));
                for (auto& j : jobs)
                    change = std::max(change, j.get());
            } else {
                for (int d : cls)
                    change = std::max(change, update(d));
            }
        }
        double scale = 0;
        for (const auto& v : next)
            if (v.size())
                scale = std::max(scale, v.cwiseAbs().maxCoeff());
        c.residual = change / std::max(scale, 1e-300);
        if (!std::isfinite(c.residual))
            break;
        if (c.residual < tol) {
            c.converged = true;
            return c;
        }
    }
    c.iterations = std::min(c.iterations, max_iter);
    return c;
}

} // namespace

ReducedRun simulate_reduced(const TpwlSystem& sys, const Vector& xi, const SimulateOptions& options)
{
    if (xi.size() != sys.parameters())
        throw Error("tpwl", fmt::format("expected {} parameters, got {}", sys.parameters(), xi.size()));
    const int sd = sys.layout().size();
    const int steps = sys.steps();
    if (options.frozen_anchors && static_cast<int>(options.frozen_anchors->size()) != steps)
        throw Error("tpwl", "frozen anchor list does not cover every step");
    const double tol = options.tolerance > 0 ? options.tolerance : sys.options().coupling_tolerance;
    const bool global = options.evaluation == Evaluation::Global || !sys.coupled();
    if (options.evaluation == Evaluation::Global && sys.coupled())
        throw Error("tpwl", "global evaluation needs a single-subdomain system");

    ReducedRun out;
    // Every training run starts from the same initial state.
    out.psi.push_back(sys.trajectories().front().psi.front());
    for (int n = 0; n < steps; ++n) {
        const rom::Reduced& cur = out.psi.back();
        const int a = options.frozen_anchors ? (*options.frozen_anchors)[static_cast<std::size_t>(n)]
                                             : select_training(sys, n, cur, xi).trajectory;
        const auto& tr = sys.trajectories()[static_cast<std::size_t>(a)];
        const rom::Reduced& ref_now = tr.psi[static_cast<std::size_t>(n)];
        const rom::Reduced& ref_next = tr.psi[static_cast<std::size_t>(n + 1)];
        const Vector dxi = xi - tr.xi;

        std::vector<Vector> base(static_cast<std::size_t>(sd));
        for (int d = 0; d < sd; ++d) {
            const auto k = static_cast<std::size_t>(d);
            const auto& jac = sys.step_jacobians(n, d, a);
            base[k] = ref_next[k] + jac.e_self * (cur[k] - ref_now[k]) + jac.g * dxi;
        }
        rom::Reduced next(static_cast<std::size_t>(sd));
        if (global) {
            next = base;
            out.iterations.push_back(1);
        } else {
            // Start from the previous step's offsets to the anchor.
            rom::Reduced start(static_cast<std::size_t>(sd));
            for (int d = 0; d < sd; ++d) {
                const auto k = static_cast<std::size_t>(d);
                start[k] = ref_next[k] + (cur[k] - ref_now[k]);
            }
            next = start;
            auto c = couple(sys, n, a, base, ref_next, next, sys.options().damping, tol,
                            sys.options().coupling_max_iterations);
            if (!c.converged) {
                next = start;
                c = couple(sys, n, a, base, ref_next, next, sys.options().fallback_damping, tol,
                           sys.options().coupling_max_iterations);
            }
            if (!c.converged)
                throw Error("tpwl", fmt::format("step {}: subdomain coupling did not converge (residual {:.3e})",
                                                n + 1, c.residual));
            out.iterations.push_back(c.iterations);
        }
        out.anchors.push_back(a);
        out.psi.push_back(std::move(next));
    }

    const auto& ms = sys.measurement_steps();
    for (std::size_t m = 0; m < ms.size(); ++m) {
        const int step = ms[m];
        const int a = out.anchors[static_cast<std::size_t>(step - 1)];
        const auto& tr = sys.trajectories()[static_cast<std::size_t>(a)];
        const Vector dxi = xi - tr.xi;
        Vector y = Vector::Zero(sys.data_per_time());
        for (int d = 0; d < sd; ++d) {
            const auto& idx = sys.data_index(d);
            if (idx.empty())
                continue;
            const auto k = static_cast<std::size_t>(d);
            const auto& jac = sys.well_jacobians(static_cast<int>(m), d, a);
            const Vector yd = tr.wells[m][k] +
                              jac.a * (out.psi[static_cast<std::size_t>(step)][k] -
                                       tr.psi[static_cast<std::size_t>(step)][k]) +
                              jac.b * dxi;
            for (std::size_t i = 0; i < idx.size(); ++i)
                y(idx[i]) = yd(static_cast<Eigen::Index>(i));
        }
        out.responses.push_back(std::move(y));
    }
    return out;
}

} // namespace sdtpwl::tpwl
