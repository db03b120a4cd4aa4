#include "test_support.hpp"

#include "sdtpwl/rom.hpp"

#include <doctest.h>

#include <filesystem>
#include <limits>
#include <set>

using namespace sdtpwl;

TEST_CASE("3x3 layout has corner, edge and center neighbor counts")
{
    auto l = rom::partition(25, 25, 3, 3);
    REQUIRE(l.size() == 9);
    std::vector<std::size_t> expected{2, 3, 2, 3, 4, 3, 2, 3, 2};
    for (int d = 0; d < 9; ++d)
        CHECK(l.domains[d].neighbors.size() == expected[d]);
    CHECK(l.domains[4].neighbors == std::vector<int>{1, 3, 5, 7});
}

TEST_CASE("partition covers every cell exactly once")
{
    for (auto [r, c] : {std::pair{1, 1}, {2, 1}, {3, 3}, {4, 5}}) {
        auto l = rom::partition(25, 23, r, c);
        std::vector<int> hits(25 * 23, 0);
        for (int d = 0; d < l.size(); ++d)
            for (int k : l.domains[d].cells) {
                ++hits[k];
                CHECK(l.owner[k] == d);
            }
        for (int h : hits)
            CHECK(h == 1);
    }
    auto one = rom::partition(7, 5, 1, 1);
    CHECK(one.domains[0].neighbors.empty());
    auto two = rom::partition(7, 6, 2, 1);
    CHECK(two.domains[0].neighbors == std::vector<int>{1});
    CHECK(two.domains[1].neighbors == std::vector<int>{0});
}

TEST_CASE("checkerboard colors never touch")
{
    auto l = rom::partition(20, 20, 4, 3);
    for (const auto& d : l.domains)
        for (int nb : d.neighbors)
            CHECK(l.domains[nb].color != d.color);
    CHECK(l.color_class(0).size() + l.color_class(1).size() == 12);
}

TEST_CASE("invalid layouts are rejected")
{
    CHECK_THROWS_AS(rom::partition(5, 5, 6, 1), Error);
    CHECK_THROWS_AS(rom::partition(5, 5, 0, 1), Error);
    CHECK_THROWS_AS(rom::partition(0, 5, 1, 1), Error);
}

TEST_CASE("training point stencil sizes")
{
    CHECK(rom::rbf_training_points(18, 1.0).size() == 37);
    CHECK(rom::rbf_training_points(18, 1.0, 5, 3).size() == 42);
    CHECK(rom::rbf_training_points(1, 1.0).size() == 3);
    auto pts = rom::rbf_training_points(3, 0.5, 4, 9);
    CHECK(pts[0].isZero());
    CHECK(pts[1](0) == doctest::Approx(0.5));
    CHECK(pts[2](0) == doctest::Approx(-0.5));
    for (std::size_t k = 7; k < pts.size(); ++k)
        CHECK(pts[k].cwiseAbs().maxCoeff() <= 0.5);
    CHECK(rom::rbf_training_points(3, 0.5, 4, 9) == pts);
    CHECK_THROWS_AS(rom::rbf_training_points(3, 0.0), Error);
}

TEST_CASE("sign sampler is seeded and binary")
{
    rom::SignSampler a(6, 1), b(6, 1);
    for (int k = 0; k < 20; ++k) {
        Vector x = a();
        CHECK(x == b());
        for (int j = 0; j < 6; ++j)
            CHECK(std::abs(x(j)) == 1.0);
    }
}

namespace {

rom::SnapshotSet random_snapshots(int nx, int ny, int cols, int rank, unsigned seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0, 1);
    auto rnd = [&](int r, int c) {
        Matrix m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                m(i, j) = n(rng);
        return m;
    };
    rom::SnapshotSet s;
    s.nx = nx;
    s.ny = ny;
    s.pressure = (rnd(nx * ny, rank) * rnd(rank, cols)).array() + 3e7;
    s.saturation = (rnd(nx * ny, rank) * rnd(rank, cols)).array() * 0.01 + 0.5;
    s.run_xi.push_back(Vector::Zero(2));
    for (int c = 0; c < cols; ++c) {
        s.column_run.push_back(0);
        s.column_step.push_back(c + 1);
    }
    return s;
}

} // namespace

TEST_CASE("full energy keeps the centered rank and reconstructs snapshots")
{
    auto set = random_snapshots(8, 8, 12, 4, 3);
    auto layout = rom::partition(8, 8, 2, 2);
    auto basis = rom::build_pod(set, layout, 1.0, 1.0);
    for (const auto& b : basis.domains) {
        // rank 4 factors, centering can only lower it
        CHECK(b.p.width <= 4);
        CHECK(b.p.width >= 3);
        CHECK(b.s.width <= 4);
    }
    for (int c = 0; c < set.columns(); ++c) {
        fom::StateField st{set.pressure.col(c), set.saturation.col(c)};
        auto back = rom::reconstruct(rom::reduce(st, basis, layout), basis, layout);
        CHECK(testing::rel_diff(back.pressure, st.pressure) < 1e-10);
        CHECK(testing::rel_diff(back.saturation, st.saturation) < 1e-10);
    }
}

TEST_CASE("coefficients of the snapshots are rows of V")
{
    auto set = random_snapshots(6, 6, 10, 5, 4);
    auto layout = rom::partition(6, 6, 1, 1);
    auto basis = rom::build_pod(set, layout, 1.0, 1.0);
    const auto& vb = basis.domains[0].p;
    Matrix coeff(vb.width, set.columns());
    for (int c = 0; c < set.columns(); ++c)
        coeff.col(c) = vb.reduce(set.pressure.col(c));
    Matrix gram = coeff * coeff.transpose();
    CHECK((gram - Matrix::Identity(vb.width, vb.width)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("zero coefficients map to the snapshot mean")
{
    auto set = random_snapshots(6, 6, 10, 3, 5);
    auto layout = rom::partition(6, 6, 2, 3);
    auto basis = rom::build_pod(set, layout, 0.9, 0.9);
    rom::Reduced zero;
    for (const auto& b : basis.domains)
        zero.push_back(Vector::Zero(b.size()));
    auto st = rom::reconstruct(zero, basis, layout);
    CHECK(testing::rel_diff(st.pressure, set.pressure.rowwise().mean()) < 1e-12);
}

TEST_CASE("POD needs two columns and a valid energy")
{
    auto set = random_snapshots(4, 4, 1, 1, 6);
    auto layout = rom::partition(4, 4, 1, 1);
    CHECK_THROWS_AS(rom::build_pod(set, layout, 0.9, 0.9), Error);
    auto ok = random_snapshots(4, 4, 4, 2, 6);
    CHECK_THROWS_AS(rom::build_pod(ok, layout, 0.0, 0.9), Error);
    CHECK_THROWS_AS(rom::build_pod(ok, layout, 0.9, 1.5), Error);
}

TEST_CASE("spectrum change is zero for identical spectra")
{
    Vector a(3);
    a << 0.8, 0.5, 0.1;
    CHECK(rom::spectrum_change(a, a) == 0.0);
    Vector b(2);
    b << 0.8, 0.5;
    CHECK(rom::spectrum_change(a, b) > 0.0);
}

TEST_CASE("infinite tolerance stops after one run and duplicates are skipped")
{
    auto t = testing::tiny_case(7);
    rom::CollectOptions opt;
    opt.tolerance = std::numeric_limits<double>::infinity();
    opt.min_runs = 1;
    int calls = 0;
    auto col = rom::collect_snapshots(t.kle, t.config, [&] { ++calls; return Vector(Vector::Ones(t.kle.modes)); }, opt);
    CHECK(col.fom_runs == 1);
    CHECK(col.set.columns() == t.config.history_steps);

    rom::CollectOptions two;
    two.tolerance = 1e-300;
    two.min_runs = 2;
    two.max_runs = 2;
    two.max_draws = 10;
    std::vector<Vector> seq{Vector::Ones(t.kle.modes), Vector::Ones(t.kle.modes), -Vector::Ones(t.kle.modes)};
    std::size_t pos = 0;
    auto col2 = rom::collect_snapshots(t.kle, t.config, [&] { return seq[std::min(pos++, seq.size() - 1)]; }, two);
    CHECK(col2.duplicates_skipped == 1);
    CHECK(col2.fom_runs == 2);
    CHECK(col2.set.runs() == 2);
}

TEST_CASE("snapshot and basis files round trip")
{
    auto tmp = std::filesystem::temp_directory_path() / "sdtpwl_test_rom";
    std::filesystem::create_directories(tmp);
    auto set = random_snapshots(5, 4, 6, 3, 8);
    set.save(tmp / "snap.bin");
    auto back = rom::SnapshotSet::load(tmp / "snap.bin");
    CHECK(back.pressure == set.pressure);
    CHECK(back.saturation == set.saturation);
    CHECK(back.column_step == set.column_step);

    auto layout = rom::partition(5, 4, 2, 2);
    auto basis = rom::build_pod(set, layout, 0.95, 0.9);
    basis.save(tmp / "pod.bin");
    auto b2 = rom::PodBasis::load(tmp / "pod.bin");
    REQUIRE(b2.domains.size() == basis.domains.size());
    for (std::size_t d = 0; d < basis.domains.size(); ++d) {
        CHECK(b2.domains[d].p.u == basis.domains[d].p.u);
        CHECK(b2.domains[d].s.width == basis.domains[d].s.width);
        CHECK(b2.domains[d].p.mean == basis.domains[d].p.mean);
    }
    std::filesystem::remove_all(tmp);
}
