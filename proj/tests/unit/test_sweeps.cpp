#include "mimsur/sweeps.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace mimsur;
using namespace mimsur::sweeps;
using data::GeometrySample;
using data::MetalKind;
using data::Param;
using mimsur::testing::TempDir;

namespace {

data::Spectrum constant_spectrum(double re, double im) {
    data::Spectrum s;
    s.re.fill(re);
    s.im.fill(im);
    return s;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("sweep ranges") {
    CHECK(SweepRange{30, 100, 5}.values().size() == 15);
    CHECK(SweepRange{100, 150, 5}.values().size() == 11);
    CHECK(SweepRange{30, 150, 0.25}.values().size() == 481);
    CHECK(SweepRange{0.1, 0.3, 0.1}.values().size() == 3);
    CHECK(SweepRange{30, 34, 5}.values() == std::vector<double>{30});
    const auto v = SweepRange{30, 100, 5}.values();
    CHECK(v.front() == 30);
    CHECK(v.back() == 100);
    CHECK_THROWS_AS(SweepRange({30, 100, 0}).validate(), ContractViolation);
    CHECK_THROWS_AS(SweepRange({30, 100, -1}).validate(), ContractViolation);
    CHECK_THROWS_AS(SweepRange({100, 30, 5}).validate(), ContractViolation);
    CHECK_THROWS_AS(SweepRange({30, 30, 5}).validate(), ContractViolation);
}

TEST_CASE("oracle sweeps equal direct oracle calls") {
    SweepSpec spec{OracleBackend{MetalKind::Ag}, {30, 300, 0, 80}, Param::R, {30, 100, 5}, 788.0};
    const auto rows = run_sweep(spec);
    REQUIRE(rows.size() == 15);
    for (const auto& row : rows) {
        GeometrySample g{30, 300, row.value, 80};
        CHECK(row.spectrum == data::oracle_spectrum(MetalKind::Ag, g));
        CHECK_FALSE(row.extrapolated);
    }

    SweepSpec single{OracleBackend{MetalKind::Al}, {30, 300, 0, 80}, Param::H, {40, 44, 5}, std::nullopt};
    const auto one = run_sweep(single);
    REQUIRE(one.size() == 1);
    CHECK(one[0].spectrum == evaluate_backend(OracleBackend{MetalKind::Al}, {40, 300, 0, 80}));
}

TEST_CASE("probe outside the window is rejected") {
    SweepSpec spec{OracleBackend{MetalKind::Al}, {30, 300, 0, 80}, Param::R, {30, 100, 5}, 900.0};
    CHECK_THROWS_AS(run_sweep(spec), DomainError);
    spec.probe = 499.0;
    CHECK_THROWS_AS(run_sweep(spec), DomainError);
}

TEST_CASE("model backend matches predict and flags extrapolation") {
    auto params = model::init_params(model::ModelConfig{}, 3);
    params.norm_stats = {{20, 200, 30, 60}, {100, 400, 150, 100}};
    SweepSpec spec{ModelBackend{&params}, {30, 300, 0, 80}, Param::R, {140, 160, 5}, std::nullopt};
    const auto rows = run_sweep(spec);
    REQUIRE(rows.size() == 5);
    for (const auto& row : rows) {
        CHECK(row.extrapolated == (row.value > 150));
        const auto x = data::normalize({30, 300, row.value, 80}, params.norm_stats);
        const auto [re, im] = model::predict(params, DenseMatrix(1, 4, std::vector<double>(x.begin(), x.end())));
        for (std::size_t k = 0; k < 64; ++k) {
            CHECK(row.spectrum.re[k] == re(0, k));
            CHECK(row.spectrum.im[k] == im(0, k));
        }
    }
    CHECK_THROWS_AS(evaluate_backend(ModelBackend{nullptr}, {30, 300, 90, 80}), ContractViolation);
}

TEST_CASE("phase_at") {
    CHECK(phase_at(constant_spectrum(1, 0), 788) == 0.0);
    CHECK(std::abs(phase_at(constant_spectrum(0.425, 0.575), 612.3) - 0.934) < 1e-3);
    CHECK(phase_at(constant_spectrum(-1, 0), 700) == std::numbers::pi);
    CHECK(phase_at(constant_spectrum(-1, -0.0), 700) == std::numbers::pi);
    CHECK_THROWS_AS(phase_at(constant_spectrum(1, 0), 851), DomainError);

    const auto s = data::oracle_spectrum(MetalKind::Ag, {30, 300, 80, 80});
    auto conj = s;
    for (auto& v : conj.im) v = -v;
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const double w = rng.uniform(500, 850);
        const double p = phase_at(s, w);
        if (std::abs(p - std::numbers::pi) > 1e-9) CHECK(phase_at(conj, w) == doctest::Approx(-p));
        CHECK_UNARY(p > -std::numbers::pi);
        CHECK_UNARY(p <= std::numbers::pi);
    }
}

TEST_CASE("phase_at interpolates linearly between grid points") {
    const auto s = data::oracle_spectrum(MetalKind::Al, {50, 300, 90, 80});
    for (std::size_t k = 0; k < 64; ++k)
        CHECK(phase_at(s, data::canonical_wavelength(k)) == doctest::Approx(std::atan2(s.im[k], s.re[k])));
    const double mid = 0.5 * (data::canonical_wavelength(10) + data::canonical_wavelength(11));
    CHECK(phase_at(s, mid) ==
          doctest::Approx(std::atan2(0.5 * (s.im[10] + s.im[11]), 0.5 * (s.re[10] + s.re[11]))));
}

TEST_CASE("phase_at has no jumps inside a grid interval") {
    // Inside [k, k+1] the interpolated point moves along a segment, so the phase
    // varies monotonically between the two endpoint phases.
    for (auto metal : {MetalKind::Al, MetalKind::Ag}) {
        const auto s = data::oracle_spectrum(metal, {40, 280, 70, 90});
        for (std::size_t k = 0; k + 1 < 64; ++k) {
            const double a = phase_at(s, data::canonical_wavelength(k));
            const double b = phase_at(s, data::canonical_wavelength(k + 1));
            if (std::abs(b - a) > 3.0) continue;  // segment crosses the branch cut
            const double lo = std::min(a, b) - 1e-12;
            const double hi = std::max(a, b) + 1e-12;
            for (int j = 1; j < 20; ++j) {
                const double w = data::canonical_wavelength(k) + data::kWavelengthStep * j / 20.0;
                const double p = phase_at(s, w);
                CHECK_UNARY(p >= lo);
                CHECK_UNARY(p <= hi);
            }
        }
    }
}

TEST_CASE("find_resonance") {
    const auto s = data::oracle_spectrum(MetalKind::Al, {50, 300, 90, 80});
    const double r = find_resonance(s);
    CHECK(r == doctest::Approx(633.33).epsilon(1e-4));
    CHECK(std::abs(r - 634) <= data::kWavelengthStep / 2);
    CHECK(find_resonance(constant_spectrum(0.3, 0.4)) == 500.0);

    auto two = constant_spectrum(1, 0);
    two.re[40] = 0.1;
    two.re[20] = -0.1;
    CHECK(find_resonance(two) == data::canonical_wavelength(20));
}

TEST_CASE("single-mode resonance lands within one grid step of the analytic center") {
    for (auto metal : {MetalKind::Al, MetalKind::Au}) {
        const auto d = data::generate_grid(metal);
        const auto& mode = data::mode_table(metal)[0];
        std::size_t checked = 0;
        for (const auto& s : d.samples) {
            const double center = mode.center(data::base_resonance(s.geometry));
            if (center < 510 || center > 840) continue;
            CHECK(std::abs(find_resonance(s.spectrum) - center) <= data::kWavelengthStep);
            CHECK(std::abs(refined_resonance(s.spectrum) - center) <= data::kWavelengthStep / 2);
            ++checked;
        }
        CHECK(checked > 1000);
    }
}

TEST_CASE("refined_resonance stays near the grid minimum") {
    const auto edge = constant_spectrum(0.5, 0.0);
    CHECK(refined_resonance(edge) == 500.0);
    auto last = constant_spectrum(1.0, 0.0);
    last.re[63] = 0.0;
    CHECK(refined_resonance(last) == 850.0);
    auto sym = constant_spectrum(1.0, 0.0);
    sym.re[30] = 0.2;
    sym.re[29] = sym.re[31] = 0.6;
    CHECK(refined_resonance(sym) == data::canonical_wavelength(30));
}

TEST_CASE("oracle resonance drifts 2 nm per nm of radius") {
    const SweepSpec spec{OracleBackend{MetalKind::Al}, {30, 300, 0, 80}, Param::R, {80, 150, 0.5}, std::nullopt};
    const auto rows = run_sweep(spec);
    double prev = 0.0;
    for (const auto& row : rows) {
        const double res = find_resonance(row.spectrum);
        CHECK_UNARY(res >= prev);
        prev = res;
        const double center = data::base_resonance({30, 300, row.value, 80});
        if (center < 840) CHECK(std::abs(refined_resonance(row.spectrum) - center) < 0.5);
    }
    const double a = data::base_resonance({30, 300, 90, 80});
    const double b = data::base_resonance({30, 300, 91, 80});
    CHECK(b - a == doctest::Approx(2.0));
}

TEST_CASE("resonance is non-decreasing along radius sweeps") {
    for (auto metal : {MetalKind::Al, MetalKind::Au}) {
        for (double h : {20.0, 60.0, 100.0})
            for (double p : {200.0, 300.0, 400.0}) {
                const auto rows =
                    run_sweep({OracleBackend{metal}, {h, p, 0, 70}, Param::R, {30, 150, 1}, std::nullopt});
                for (std::size_t i = 1; i < rows.size(); ++i)
                    CHECK_UNARY(find_resonance(rows[i].spectrum) >= find_resonance(rows[i - 1].spectrum));
            }
    }
}

TEST_CASE("design_for_target inverts the resonance formula") {
    const Backend oracle = OracleBackend{MetalKind::Al};
    const GeometrySample fixed{20, 375, 0, 80};
    const double r = design_for_target(oracle, fixed, Param::R, 650, {30, 150, 0.25});
    CHECK(std::abs(r - 73.25) <= 0.25);

    const auto at_start = refined_resonance(data::oracle_spectrum(MetalKind::Al, {20, 375, 30, 80}));
    CHECK(design_for_target(oracle, fixed, Param::R, at_start, {30, 150, 0.25}) == 30);
    const auto at_stop = refined_resonance(data::oracle_spectrum(MetalKind::Al, {20, 375, 150, 80}));
    CHECK(design_for_target(oracle, fixed, Param::R, at_stop, {30, 150, 0.25}) == 150);

    CHECK_THROWS_AS(design_for_target(oracle, fixed, Param::R, 900, {30, 150, 0.25}), DomainError);
}

TEST_CASE("design_for_target is idempotent around its answer") {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const Backend oracle = OracleBackend{rng.below(2) == 0 ? MetalKind::Al : MetalKind::Au};
        const GeometrySample fixed{rng.uniform(20, 100), rng.uniform(200, 400), 0, rng.uniform(60, 100)};
        // Reachable target: the resonance of an interior radius.
        auto probe = fixed;
        probe.r = rng.uniform(50, 130);
        const double target = data::mode_table(std::get<OracleBackend>(oracle).metal)[0].center(data::base_resonance(probe));
        if (target < 520 || target > 830) continue;
        const double step = 0.5;
        const double r = design_for_target(oracle, fixed, Param::R, target, {30, 150, step});
        const double again = design_for_target(oracle, fixed, Param::R, target, {r - 20 * step, r + 20 * step, step});
        CHECK(again == doctest::Approx(r).epsilon(1e-12));
    }
}

TEST_CASE("write_sweep layout") {
    TempDir dir("sweep");
    SweepSpec spec{OracleBackend{MetalKind::Al}, {30, 300, 0, 80}, Param::R, {30, 100, 5}, 788.0};
    const auto rows = run_sweep(spec);
    write_sweep(rows, dir / "s.csv", {788.0, true, {"backend oracle al"}});
    const auto lines = lines_of(mimsur::testing::slurp(dir / "s.csv"));
    std::size_t comments = 0;
    while (comments < lines.size() && lines[comments].rfind("# ", 0) == 0) ++comments;
    CHECK(comments >= 1);
    REQUIRE(lines.size() == comments + 1 + 15);
    const auto& header = lines[comments];
    CHECK(header.rfind("param_value,re_0,re_1,", 0) == 0);
    CHECK(header.find("im_63,phase_at_probe,resonance_nm") != std::string::npos);
    const auto& first = lines[comments + 1];
    CHECK(std::count(first.begin(), first.end(), ',') == 130);
    CHECK(first.rfind("30,", 0) == 0);

    write_sweep(rows, dir / "plain.csv", {});
    const auto plain = lines_of(mimsur::testing::slurp(dir / "plain.csv"));
    CHECK(plain.back().find(',') != std::string::npos);
    CHECK(std::count(plain.back().begin(), plain.back().end(), ',') == 128);
}
