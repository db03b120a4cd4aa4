#include "sdtpwl/harness.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fmt/format.h>

namespace sdtpwl::harness {

ExperimentConfig load_experiment(const std::filesystem::path& path)
{
    ExperimentConfig c;
    c.path = path;
    c.reservoir = fom::load_reservoir_config(path);

    boost::property_tree::ptree t;
    try {
        boost::property_tree::read_ini(path.string(), t);

        auto& cov = c.covariance;
        cov.sigma = t.get("geostat.sigma", cov.sigma);
        cov.corr_x = t.get("geostat.correlation_x", cov.corr_x);
        cov.corr_y = t.get("geostat.correlation_y", cov.corr_y);
        cov.mean = t.get("geostat.mean_log_perm", cov.mean);
        c.ensemble_size = t.get("geostat.ensemble_size", c.ensemble_size);
        c.ensemble_seed = t.get("geostat.ensemble_seed", c.ensemble_seed);
        c.truth_index = t.get("geostat.truth_index", c.truth_index);
        c.kle_energy = t.get("geostat.kle_energy", c.kle_energy);

        c.snapshot_seed = t.get("rom.snapshot_seed", c.snapshot_seed);
        c.collect.tolerance = t.get("rom.snapshot_tolerance", c.collect.tolerance);
        c.collect.min_runs = t.get("rom.snapshot_min_runs", c.collect.min_runs);
        c.collect.max_runs = t.get("rom.snapshot_max_runs", c.collect.max_runs);
        c.energy_p = t.get("rom.energy_pressure", c.energy_p);
        c.energy_s = t.get("rom.energy_saturation", c.energy_s);
        c.layout_rows = t.get("rom.layout_rows", c.layout_rows);
        c.layout_cols = t.get("rom.layout_cols", c.layout_cols);
        c.perturbation = t.get("rom.perturbation", c.perturbation);
        c.extra_points = t.get("rom.extra_points", c.extra_points);
        c.extra_seed = t.get("rom.extra_seed", c.extra_seed);
        c.snapshot_runs_as_centers = t.get("rom.snapshot_runs_as_centers", c.snapshot_runs_as_centers);

        auto& o = c.tpwl;
        o.kernel = rbf::parse_kernel(t.get("rbf.kernel", rbf::kernel_name(o.kernel)));
        o.tune_shape = t.get("rbf.tune_shape", o.tune_shape);
        o.max_condition = t.get("rbf.max_condition", o.max_condition);
        o.state_scale = t.get("rbf.state_scale", o.state_scale);
        o.coupling_tolerance = t.get("tpwl.coupling_tolerance", o.coupling_tolerance);
        o.coupling_max_iterations = t.get("tpwl.coupling_max_iterations", o.coupling_max_iterations);
        o.damping = t.get("tpwl.damping", o.damping);
        o.fallback_damping = t.get("tpwl.fallback_damping", o.fallback_damping);
        o.xi_weight = t.get("tpwl.xi_weight", o.xi_weight);
        o.psi_weight = t.get("tpwl.psi_weight", o.psi_weight);
        o.parallel_colors = t.get("tpwl.parallel_colors", o.parallel_colors);

        c.noise.fraction = t.get("assim.noise_fraction", c.noise.fraction);
        c.noise.floor_fraction = t.get("assim.noise_floor_fraction", c.noise.floor_fraction);
        c.noise_seed = t.get("assim.noise_seed", c.noise_seed);
        auto& h = c.hm;
        h.eta_cost = t.get("assim.eta_cost", h.eta_cost);
        h.eta_xi = t.get("assim.eta_parameters", h.eta_xi);
        h.max_iterations = t.get("assim.max_iterations", h.max_iterations);
        h.outer_max = t.get("assim.outer_max", h.outer_max);
        h.armijo = t.get("assim.armijo", h.armijo);
        h.line_search_max = t.get("assim.line_search_max", h.line_search_max);
        h.coupling_tolerance = t.get("assim.coupling_tolerance", h.coupling_tolerance);
        h.freeze_anchors = t.get("assim.freeze_anchors", h.freeze_anchors);
        c.fd.step = t.get("assim.fd_step", c.fd.step);
        c.fd_max_iterations = t.get("assim.fd_max_iterations", c.fd_max_iterations);
        c.rml_backgrounds = t.get("assim.rml_backgrounds", c.rml_backgrounds);
        c.rml_seed = t.get("assim.rml_seed", c.rml_seed);
    } catch (const boost::property_tree::ptree_error& e) {
        throw Error("config", fmt::format("{}: {}", path.string(), e.what()));
    }

    c.covariance.validate();
    c.hm.validate();
    if (c.truth_index < 0 || c.truth_index >= c.ensemble_size)
        throw Error("config", fmt::format("truth index {} outside an ensemble of {}", c.truth_index, c.ensemble_size));
    if (!(c.kle_energy > 0 && c.kle_energy <= 1))
        throw Error("config", "kle_energy must lie in (0, 1]");
    if (c.fd_max_iterations < 1 || c.rml_backgrounds < 0)
        throw Error("config", "fd_max_iterations and rml_backgrounds must be positive");
    return c;
}

} // namespace sdtpwl::harness
