#include "sdtpwl/fom.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fmt/format.h>

#include <sstream>

namespace sdtpwl::fom {

namespace {

Well parse_well(const std::string& name, const std::string& spec)
{
    // "<kind> <i> <j> <control> [shut]"; control in m^3/day or MPa
    std::istringstream in(spec);
    std::string kind;
    Well w;
    w.name = name;
    if (!(in >> kind >> w.i >> w.j >> w.control))
        throw Error("fom", fmt::format("cannot parse well '{} = {}'", name, spec));
    if (kind == "rate-injector") {
        w.kind = WellKind::RateInjector;
    } else if (kind == "bhp-producer") {
        w.kind = WellKind::BhpProducer;
        w.control *= units::mega_pascal;
    } else {
        throw Error("fom", fmt::format("unknown well type '{}' for {}", kind, name));
    }
    std::string flag;
    if (in >> flag) {
        if (flag != "shut")
            throw Error("fom", fmt::format("unknown well flag '{}' for {}", flag, name));
        w.open = false;
    }
    return w;
}

} // namespace

ReservoirConfig load_reservoir_config(const std::filesystem::path& path)
{
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw Error("config", e.what());
    }

    ReservoirConfig c;
    try {
        c.nx = tree.get<int>("grid.nx");
        c.ny = tree.get<int>("grid.ny");
        c.dx = tree.get<double>("grid.dx");
        c.dy = tree.get<double>("grid.dy");
        c.dz = tree.get<double>("grid.dz");

        c.mu_w = tree.get<double>("fluid.water_viscosity_cp", 0.4) * units::centipoise;
        c.mu_o = tree.get<double>("fluid.oil_viscosity_cp", 2.0) * units::centipoise;
        c.rho_w = tree.get<double>("fluid.water_density", 1014);
        c.rho_o = tree.get<double>("fluid.oil_density", 859);

        c.p_init = tree.get<double>("rock.initial_pressure_mpa", 30) * units::mega_pascal;
        c.sw_init = tree.get<double>("rock.initial_water_saturation", 0.2);
        c.swc = tree.get<double>("rock.connate_water_saturation", 0.2);
        c.sor = tree.get<double>("rock.residual_oil_saturation", 0.2);
        c.n_w = tree.get<double>("rock.corey_water", 4.0);
        c.n_o = tree.get<double>("rock.corey_oil", 4.0);
        c.krw_end = tree.get<double>("rock.krw_endpoint", 1.0);
        c.kro_end = tree.get<double>("rock.kro_endpoint", 1.0);
        c.well_radius = tree.get<double>("rock.well_radius", 0.1);

        c.dt_days = tree.get<double>("schedule.timestep_days", 36.5);
        c.history_steps = tree.get<int>("schedule.history_steps", 50);
        c.forecast_steps = tree.get<int>("schedule.forecast_steps", 100);
        c.measure_every = tree.get<int>("schedule.measurement_every", 2);
        c.cfl_safety = tree.get<double>("schedule.cfl_safety", 0.9);
    } catch (const boost::property_tree::ptree_error& e) {
        throw Error("config", fmt::format("{}: {}", path.string(), e.what()));
    }

    if (auto wells = tree.get_child_optional("wells"))
        for (const auto& [name, node] : *wells)
            c.wells.push_back(parse_well(name, node.get_value<std::string>()));

    c.validate();
    return c;
}

} // namespace sdtpwl::fom
