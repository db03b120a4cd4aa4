#include "sdtpwl/harness.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace sdtpwl;

TEST_CASE("error metrics on hand-made cases")
{
    const fom::LogPermField truth{Vector::LinSpaced(16, 3.0, 6.0)};
    fom::LogPermField shifted = truth;
    shifted.beta.array() += 0.7;
    CHECK(harness::e_beta(truth, shifted) == doctest::Approx(0.7));
    CHECK(harness::e_beta(truth, truth) == 0.0);
    CHECK_THROWS_AS(harness::e_beta(truth, {Vector::Zero(4)}), Error);

    std::vector<Vector> obs{Vector::Constant(3, 1.0), Vector::Constant(3, 2.0)};
    std::vector<Vector> sim{Vector::Constant(3, 1.0), Vector::Constant(3, 4.0)};
    // squared errors 0,0,0,4,4,4 over six scalars
    CHECK(harness::e_obs(obs, sim) == doctest::Approx(std::sqrt(2.0)));
    sim.pop_back();
    CHECK_THROWS_AS(harness::e_obs(obs, sim), Error);
}

TEST_CASE("method names round trip")
{
    for (auto m : {harness::Method::Sd, harness::Method::Gd, harness::Method::Fd})
        CHECK(harness::parse_method(harness::method_name(m)) == m);
    CHECK_THROWS_AS(harness::parse_method("lbfgs"), Error);
}

TEST_CASE("shipped experiment files load")
{
    const std::filesystem::path dir = SDTPWL_CONFIG_DIR;
    const auto desk = harness::load_experiment(dir / "desk_25x25.ini");
    CHECK(desk.reservoir.nx == 25);
    CHECK(desk.layout_rows * desk.layout_cols == 9);
    const auto big = harness::load_experiment(dir / "case1_50x50.ini");
    CHECK(big.reservoir.nx == 50);
    CHECK_THROWS_AS(harness::load_experiment(dir / "missing.ini"), Error);
}

TEST_CASE("export names the missing artifact")
{
    const auto dir = std::filesystem::temp_directory_path() / "sdtpwl_export_test";
    std::filesystem::remove_all(dir);
    CHECK_THROWS_WITH_AS(harness::export_plots(dir / "manifest.json"), doctest::Contains("manifest.json"), Error);
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "manifest.json") << R"({"artifacts": {"twin": "twin.bin"}, "grid": {"nx": 2, "ny": 2}})";
    CHECK_THROWS_WITH_AS(harness::export_plots(dir / "manifest.json"), doctest::Contains("twin.bin"), Error);
    std::ofstream(dir / "manifest.json") << R"({"artifacts": {"twin": 3}, "grid": {"nx": 2, "ny": 2}})";
    CHECK_THROWS_WITH_AS(harness::export_plots(dir / "manifest.json"), doctest::Contains("malformed"), Error);
    std::filesystem::remove_all(dir);
}
