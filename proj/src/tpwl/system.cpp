#include "sdtpwl/io.hpp"
#include "sdtpwl/tpwl.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace sdtpwl::tpwl {

TpwlSystem::TpwlSystem(const TpwlSystem& other)
    : layout_(other.layout_)
    , basis_(other.basis_)
    , options_(other.options_)
    , steps_(other.steps_)
    , params_(other.params_)
    , data_per_time_(other.data_per_time_)
    , measure_steps_(other.measure_steps_)
    , data_index_(other.data_index_)
    , trajectories_(other.trajectories_)
    , step_models_(other.step_models_)
{
    for (const auto& w : other.well_models_)
        well_models_.push_back(w ? std::make_unique<rbf::RbfModel>(*w) : nullptr);
}

TpwlSystem& TpwlSystem::operator=(const TpwlSystem& other)
{
    if (this != &other) {
        TpwlSystem copy(other);
        *this = std::move(copy);
    }
    return *this;
}

int TpwlSystem::neighbor_size(int d) const
{
    int n = 0;
    for (int nb : layout_.domains[static_cast<std::size_t>(d)].neighbors)
        n += state_size(nb);
    return n;
}

bool TpwlSystem::coupled() const
{
    return std::any_of(layout_.domains.begin(), layout_.domains.end(),
                       [](const rom::Subdomain& s) { return !s.neighbors.empty(); });
}

const rbf::RbfModel* TpwlSystem::well_model(int m, int d) const
{
    return well_models_[static_cast<std::size_t>(m * layout_.size() + d)].get();
}

double TpwlSystem::psi_weight() const
{
    if (options_.psi_weight >= 0)
        return options_.psi_weight;
    return 1.0 / std::max(1, total_states());
}

Vector TpwlSystem::step_input(int n, int d, const TrainingTrajectory& t) const
{
    const auto& dom = layout_.domains[static_cast<std::size_t>(d)];
    Vector x(state_size(d) + neighbor_size(d) + params_);
    const double s = options_.state_scale;
    int pos = 0;
    x.segment(pos, state_size(d)) = s * t.psi[static_cast<std::size_t>(n)][static_cast<std::size_t>(d)];
    pos += state_size(d);
    for (int nb : dom.neighbors) {
        x.segment(pos, state_size(nb)) = s * t.psi[static_cast<std::size_t>(n + 1)][static_cast<std::size_t>(nb)];
        pos += state_size(nb);
    }
    x.tail(params_) = t.xi;
    return x;
}

rbf::RbfModel TpwlSystem::fit_one(Matrix centers, const Matrix& values, const std::string& where) const
{
    try {
        rbf::Kernel k{options_.kernel, 1.0};
        if (rbf::uses_shape(options_.kernel)) {
            const double base = rbf::mean_nearest_distance(centers);
            std::vector<double> cand;
            for (double f : options_.shape_factors)
                cand.push_back(f * base);
            if (options_.tune_shape && centers.rows() >= 3) {
                k.eps = rbf::tune_shape(centers, values, options_.kernel, cand, options_.shape_refinements,
                                        options_.max_condition)
                            .eps;
            } else {
                k.eps = base;
            }
        }
        return rbf::RbfModel::fit(std::move(centers), values, k, {options_.max_condition, 1e-10});
    } catch (const Error& e) {
        throw Error("rbf", fmt::format("{}: {}", where, e.what()));
    }
}

void TpwlSystem::fit_all()
{
    const int sd = layout_.size();
    const auto m = static_cast<Eigen::Index>(trajectories_.size());
    step_models_.clear();
    step_models_.reserve(static_cast<std::size_t>(steps_ * sd));
    for (int n = 0; n < steps_; ++n)
        for (int d = 0; d < sd; ++d) {
            const Eigen::Index dim = state_size(d) + neighbor_size(d) + params_;
            Matrix centers(m, dim), values(m, state_size(d));
            for (Eigen::Index k = 0; k < m; ++k) {
                const auto& t = trajectories_[static_cast<std::size_t>(k)];
                centers.row(k) = step_input(n, d, t).transpose();
                values.row(k) = t.psi[static_cast<std::size_t>(n + 1)][static_cast<std::size_t>(d)].transpose();
            }
            step_models_.push_back(fit_one(std::move(centers), values, fmt::format("subdomain {}, step {}", d + 1, n + 1)));
        }
    well_models_.clear();
    for (std::size_t mi = 0; mi < measure_steps_.size(); ++mi)
        for (int d = 0; d < sd; ++d) {
            const auto& idx = data_index_[static_cast<std::size_t>(d)];
            if (idx.empty()) {
                well_models_.push_back(nullptr);
                continue;
            }
            const int step = measure_steps_[mi];
            const Eigen::Index dim = state_size(d) + params_;
            Matrix centers(m, dim), values(m, static_cast<Eigen::Index>(idx.size()));
            for (Eigen::Index k = 0; k < m; ++k) {
                const auto& t = trajectories_[static_cast<std::size_t>(k)];
                centers.row(k).head(state_size(d)) =
                    options_.state_scale * t.psi[static_cast<std::size_t>(step)][static_cast<std::size_t>(d)].transpose();
                centers.row(k).tail(params_) = t.xi.transpose();
                values.row(k) = t.wells[mi][static_cast<std::size_t>(d)].transpose();
            }
            well_models_.push_back(std::make_unique<rbf::RbfModel>(
                fit_one(std::move(centers), values, fmt::format("well model, subdomain {}, time {}", d + 1, step))));
        }
    std::lock_guard lock(cache_->mutex);
    cache_->step.clear();
    cache_->well.clear();
}

const StepJacobians& TpwlSystem::step_jacobians(int n, int d, int k) const
{
    const auto key = std::make_tuple(n, d, k);
    {
        std::lock_guard lock(cache_->mutex);
        if (auto it = cache_->step.find(key); it != cache_->step.end())
            return *it->second;
    }
    const auto& model = step_model(n, d);
    const int ls = state_size(d), ln = neighbor_size(d);
    auto jac = std::make_unique<StepJacobians>();
    const double s = options_.state_scale;
    jac->e_self = s * model.grad_at_center(k, 0, ls);
    jac->e_nb = s * model.grad_at_center(k, ls, ln);
    jac->g = model.grad_at_center(k, ls + ln, params_);
    if (!jac->e_self.allFinite() || !jac->e_nb.allFinite() || !jac->g.allFinite())
        throw Error("tpwl", fmt::format("non-finite derivative for subdomain {}, step {}", d + 1, n + 1));
    std::lock_guard lock(cache_->mutex);
    auto [it, inserted] = cache_->step.emplace(key, std::move(jac));
    return *it->second;
}

const WellJacobians& TpwlSystem::well_jacobians(int m, int d, int k) const
{
    const auto key = std::make_tuple(m, d, k);
    {
        std::lock_guard lock(cache_->mutex);
        if (auto it = cache_->well.find(key); it != cache_->well.end())
            return *it->second;
    }
    const auto* model = well_model(m, d);
    if (!model)
        throw Error("tpwl", fmt::format("subdomain {} has no wells", d + 1));
    auto jac = std::make_unique<WellJacobians>();
    jac->a = options_.state_scale * model->grad_at_center(k, 0, state_size(d));
    jac->b = model->grad_at_center(k, state_size(d), params_);
    std::lock_guard lock(cache_->mutex);
    auto [it, inserted] = cache_->well.emplace(key, std::move(jac));
    return *it->second;
}

void TpwlSystem::add_trajectory(TrainingTrajectory t)
{
    trajectories_.push_back(std::move(t));
    fit_all();
}

namespace {

std::vector<std::vector<int>> well_data_index(const fom::ReservoirConfig& config, const rom::SubdomainLayout& layout)
{
    std::vector<std::vector<int>> idx(static_cast<std::size_t>(layout.size()));
    const int ni = config.injector_count(), np = config.producer_count();
    int inj = 0, prod = 0;
    std::vector<std::pair<int, int>> producers; // (owner, producer index)
    for (const auto& w : config.wells) {
        const int owner = layout.owner[static_cast<std::size_t>(w.cell(config.nx))];
        if (w.kind == fom::WellKind::RateInjector)
            idx[static_cast<std::size_t>(owner)].push_back(inj++);
        else
            producers.emplace_back(owner, prod++);
    }
    for (const auto& [owner, p] : producers)
        idx[static_cast<std::size_t>(owner)].push_back(ni + p);
    for (const auto& [owner, p] : producers)
        idx[static_cast<std::size_t>(owner)].push_back(ni + np + p);
    for (auto& v : idx)
        std::sort(v.begin(), v.end());
    return idx;
}

} // namespace

TrainingTrajectory make_trajectory(const rom::TrainingRun& run, const rom::PodBasis& basis,
                                   const rom::SubdomainLayout& layout, const fom::ReservoirConfig& config)
{
    TrainingTrajectory t;
    t.xi = run.xi;
    for (const auto& s : run.sim.states)
        t.psi.push_back(rom::reduce(s, basis, layout));
    const auto idx = well_data_index(config, layout);
    const auto steps = config.measurement_steps();
    const int n = static_cast<int>(run.sim.states.size()) - 1;
    for (int step : steps) {
        if (step > n)
            break;
        const Vector y = fom::flatten(run.sim.responses[static_cast<std::size_t>(step - 1)]);
        std::vector<Vector> per;
        for (const auto& v : idx) {
            Vector part(static_cast<Eigen::Index>(v.size()));
            for (std::size_t k = 0; k < v.size(); ++k)
                part(static_cast<Eigen::Index>(k)) = y(v[k]);
            per.push_back(std::move(part));
        }
        t.wells.push_back(std::move(per));
    }
    return t;
}

TpwlSystem build(const rom::PodBasis& basis, const rom::SubdomainLayout& layout,
                 const std::vector<rom::TrainingRun>& runs, const fom::ReservoirConfig& config,
                 const TpwlOptions& options)
{
    if (runs.empty())
        throw Error("tpwl", "no training runs");
    TpwlSystem sys;
    sys.layout_ = layout;
    sys.basis_ = basis;
    sys.options_ = options;
    sys.steps_ = static_cast<int>(runs.front().sim.states.size()) - 1;
    sys.params_ = static_cast<int>(runs.front().xi.size());
    sys.data_per_time_ = config.data_per_time();
    for (int s : config.measurement_steps())
        if (s <= sys.steps_)
            sys.measure_steps_.push_back(s);
    sys.data_index_ = well_data_index(config, layout);
    for (const auto& r : runs) {
        if (static_cast<int>(r.sim.states.size()) - 1 != sys.steps_ || r.xi.size() != sys.params_)
            throw Error("tpwl", "training runs differ in length or parameter count");
        sys.trajectories_.push_back(make_trajectory(r, basis, layout, config));
    }
    sys.fit_all();
    return sys;
}

TpwlSystem rebuild_with(const TpwlSystem& system, const rom::TrainingRun& run, const fom::ReservoirConfig& config)
{
    double scale = 1.0;
    for (const auto& t : system.trajectories())
        scale = std::max(scale, t.xi.cwiseAbs().maxCoeff());
    for (std::size_t k = 0; k < system.trajectories().size(); ++k)
        if ((system.trajectories()[k].xi - run.xi).norm() <= 1e-10 * scale)
            throw Error("tpwl", fmt::format("xi={} duplicates training center {}", rom::format_xi(run.xi), k));
    TpwlSystem out(system);
    out.add_trajectory(make_trajectory(run, system.basis(), system.layout(), config));
    return out;
}

void TpwlSystem::save(const std::filesystem::path& path) const
{
    io::Bundle b;
    b.put_scalar("trajectories", static_cast<double>(trajectories_.size()));
    b.put_scalar("steps", steps_);
    b.put_scalar("data_per_time", data_per_time_);
    Vector ms(static_cast<Eigen::Index>(measure_steps_.size()));
    for (std::size_t k = 0; k < measure_steps_.size(); ++k)
        ms(static_cast<Eigen::Index>(k)) = measure_steps_[k];
    b.put("measure_steps", ms);
    for (int d = 0; d < layout_.size(); ++d) {
        const auto& v = data_index(d);
        Vector di(static_cast<Eigen::Index>(v.size()));
        for (std::size_t k = 0; k < v.size(); ++k)
            di(static_cast<Eigen::Index>(k)) = v[k];
        b.put(fmt::format("data_index.{}", d), di);
    }
    for (std::size_t k = 0; k < trajectories_.size(); ++k) {
        const auto& t = trajectories_[k];
        b.put(fmt::format("t{}.xi", k), t.xi);
        for (int d = 0; d < layout_.size(); ++d) {
            Matrix psi(state_size(d), steps_ + 1);
            for (int n = 0; n <= steps_; ++n)
                psi.col(n) = t.psi[static_cast<std::size_t>(n)][static_cast<std::size_t>(d)];
            b.put(fmt::format("t{}.psi.{}", k, d), psi);
            const auto nd = static_cast<Eigen::Index>(data_index(d).size());
            Matrix y(nd, static_cast<Eigen::Index>(t.wells.size()));
            for (std::size_t m = 0; m < t.wells.size(); ++m)
                y.col(static_cast<Eigen::Index>(m)) = t.wells[m][static_cast<std::size_t>(d)];
            b.put(fmt::format("t{}.wells.{}", k, d), y);
        }
    }
    b.save(path);
}

TpwlSystem TpwlSystem::load(const std::filesystem::path& path, const rom::PodBasis& basis,
                            const rom::SubdomainLayout& layout, const TpwlOptions& options)
{
    const auto b = io::Bundle::load(path);
    TpwlSystem sys;
    sys.layout_ = layout;
    sys.basis_ = basis;
    sys.options_ = options;
    sys.steps_ = static_cast<int>(b.scalar("steps"));
    sys.data_per_time_ = static_cast<int>(b.scalar("data_per_time"));
    const Vector ms = b.vector("measure_steps");
    for (Eigen::Index k = 0; k < ms.size(); ++k)
        sys.measure_steps_.push_back(static_cast<int>(ms(k)));
    for (int d = 0; d < layout.size(); ++d) {
        const Vector di = b.vector(fmt::format("data_index.{}", d));
        std::vector<int> v;
        for (Eigen::Index k = 0; k < di.size(); ++k)
            v.push_back(static_cast<int>(di(k)));
        sys.data_index_.push_back(std::move(v));
    }
    const int count = static_cast<int>(b.scalar("trajectories"));
    for (int k = 0; k < count; ++k) {
        TrainingTrajectory t;
        t.xi = b.vector(fmt::format("t{}.xi", k));
        t.psi.assign(static_cast<std::size_t>(sys.steps_ + 1), rom::Reduced(static_cast<std::size_t>(layout.size())));
        t.wells.assign(sys.measure_steps_.size(), std::vector<Vector>(static_cast<std::size_t>(layout.size())));
        for (int d = 0; d < layout.size(); ++d) {
            const Matrix& psi = b.get(fmt::format("t{}.psi.{}", k, d));
            for (int n = 0; n <= sys.steps_; ++n)
                t.psi[static_cast<std::size_t>(n)][static_cast<std::size_t>(d)] = psi.col(n);
            const Matrix& y = b.get(fmt::format("t{}.wells.{}", k, d));
            for (std::size_t m = 0; m < t.wells.size(); ++m)
                t.wells[m][static_cast<std::size_t>(d)] = y.col(static_cast<Eigen::Index>(m));
        }
        sys.trajectories_.push_back(std::move(t));
    }
    sys.params_ = count ? static_cast<int>(sys.trajectories_.front().xi.size()) : 0;
    sys.fit_all();
    return sys;
}

std::string TpwlSystem::manifest_json() const
{
    nlohmann::json j;
    j["centers"] = trajectories_.size();
    j["steps"] = steps_;
    j["parameters"] = params_;
    j["kernel"] = rbf::kernel_name(options_.kernel);
    j["measurement_steps"] = measure_steps_;
    auto& doms = j["subdomains"];
    for (int d = 0; d < layout_.size(); ++d) {
        const auto& dom = layout_.domains[static_cast<std::size_t>(d)];
        double worst = 1, best = 1e300;
        for (int n = 0; n < steps_; ++n) {
            worst = std::max(worst, step_model(n, d).condition());
            best = std::min(best, step_model(n, d).condition());
        }
        doms.push_back({{"id", d + 1},
                        {"l_p", basis_.domains[static_cast<std::size_t>(d)].p.width},
                        {"l_s", basis_.domains[static_cast<std::size_t>(d)].s.width},
                        {"neighbors", dom.neighbors},
                        {"color", dom.color},
                        {"e_self_shape", {state_size(d), state_size(d)}},
                        {"e_nb_shape", {state_size(d), neighbor_size(d)}},
                        {"g_shape", {state_size(d), params_}},
                        {"data", data_index(d).size()},
                        {"condition_min", best},
                        {"condition_max", worst}});
    }
    return j.dump(2);
}

} // namespace sdtpwl::tpwl
