#include "mimsur/sweeps.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace mimsur::sweeps {

namespace {

using data::kSpectrumPoints;

double magnitude_sq(const data::Spectrum& s, std::size_t k) {
    return s.re[k] * s.re[k] + s.im[k] * s.im[k];
}

std::size_t argmin_magnitude(const data::Spectrum& s) {
    std::size_t best = 0;
    double best_val = magnitude_sq(s, 0);
    for (std::size_t k = 1; k < kSpectrumPoints; ++k) {
        const double v = magnitude_sq(s, k);
        if (v < best_val) {
            best_val = v;
            best = k;
        }
    }
    return best;
}

void check_window(double wavelength, const char* what) {
    if (!(wavelength >= data::kWavelengthMin && wavelength <= data::kWavelengthMax)) {
        throw DomainError(std::string(what) + ": wavelength " + std::to_string(wavelength) +
                          " nm outside [500, 850]");
    }
}

}  // namespace

void SweepRange::validate() const {
    if (!(step > 0.0)) throw ContractViolation("sweep range: step must be positive");
    if (!(start < stop)) throw ContractViolation("sweep range: start must be below stop");
}

std::vector<double> SweepRange::values() const {
    validate();
    const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = start + static_cast<double>(i) * step;
    return out;
}

data::Spectrum evaluate_backend(const Backend& backend, const data::GeometrySample& g, bool* extrapolated) {
    if (extrapolated) *extrapolated = false;
    if (const auto* oracle = std::get_if<OracleBackend>(&backend)) {
        return data::oracle_spectrum(oracle->metal, g);
    }
    const auto& mb = std::get<ModelBackend>(backend);
    if (!mb.params) throw ContractViolation("model backend without parameters");
    if (extrapolated) *extrapolated = mb.params->norm_stats.outside(g);

    DenseMatrix x(1, 4);
    const auto norm = data::normalize(g, mb.params->norm_stats);
    std::copy(norm.begin(), norm.end(), x.row(0).begin());
    const auto [re, im] = model::predict(*mb.params, x);
    if (re.cols() != kSpectrumPoints) throw ContractViolation("model backend: spectrum width differs from 64");
    data::Spectrum s;
    std::copy(re.row(0).begin(), re.row(0).end(), s.re.begin());
    std::copy(im.row(0).begin(), im.row(0).end(), s.im.begin());
    return s;
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec) {
    if (spec.probe) check_window(*spec.probe, "run_sweep");
    const auto values = spec.range.values();
    std::vector<SweepRow> rows;
    rows.reserve(values.size());
    for (double v : values) {
        auto g = spec.fixed;
        g.set(spec.vary, v);
        SweepRow row;
        row.value = v;
        row.spectrum = evaluate_backend(spec.backend, g, &row.extrapolated);
        rows.push_back(row);
    }
    return rows;
}

double phase_at(const data::Spectrum& spectrum, double wavelength) {
    check_window(wavelength, "phase_at");
    const double pos = (wavelength - data::kWavelengthMin) * static_cast<double>(kSpectrumPoints - 1) /
                       (data::kWavelengthMax - data::kWavelengthMin);
    const auto k = std::min(static_cast<std::size_t>(std::floor(pos)), kSpectrumPoints - 2);
    const double frac = pos - static_cast<double>(k);
    const double re = spectrum.re[k] + (spectrum.re[k + 1] - spectrum.re[k]) * frac;
    const double im = spectrum.im[k] + (spectrum.im[k + 1] - spectrum.im[k]) * frac;
    const double phase = std::atan2(im, re);
    return phase <= -std::numbers::pi ? std::numbers::pi : phase;
}

double find_resonance(const data::Spectrum& spectrum) {
    return data::canonical_wavelength(argmin_magnitude(spectrum));
}

double refined_resonance(const data::Spectrum& spectrum) {
    const std::size_t k = argmin_magnitude(spectrum);
    const double grid = data::canonical_wavelength(k);
    if (k == 0 || k + 1 == kSpectrumPoints) return grid;
    const double lo = magnitude_sq(spectrum, k - 1);
    const double mid = magnitude_sq(spectrum, k);
    const double hi = magnitude_sq(spectrum, k + 1);
    const double curvature = lo - 2.0 * mid + hi;
    if (!(curvature > 0.0)) return grid;
    const double offset = std::clamp(0.5 * (lo - hi) / curvature, -0.5, 0.5);
    return grid + offset * data::kWavelengthStep;
}

double design_for_target(const Backend& backend, const data::GeometrySample& fixed, data::Param vary,
                         double target_wavelength, const SweepRange& range) {
    check_window(target_wavelength, "design_for_target");
    SweepSpec spec{backend, fixed, vary, range, std::nullopt};
    const auto rows = run_sweep(spec);
    if (rows.empty()) throw ContractViolation("design_for_target: empty sweep");

    double best_value = rows.front().value;
    double best_dist = std::abs(refined_resonance(rows.front().spectrum) - target_wavelength);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double dist = std::abs(refined_resonance(rows[i].spectrum) - target_wavelength);
        if (dist < best_dist) {
            best_dist = dist;
            best_value = rows[i].value;
        }
    }
    return best_value;
}

void write_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& path,
                 const SweepFileOptions& options) {
    if (options.probe) check_window(*options.probe, "write_sweep");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");

    for (const auto& c : options.comments) out << "# " << c << '\n';
    out << "param_value";
    for (std::size_t k = 0; k < kSpectrumPoints; ++k) out << ",re_" << k;
    for (std::size_t k = 0; k < kSpectrumPoints; ++k) out << ",im_" << k;
    if (options.probe) out << ",phase_at_probe";
    if (options.find_resonance) out << ",resonance_nm";
    out << '\n';

    for (const auto& row : rows) {
        std::string line = data::format_double(row.value);
        for (double v : row.spectrum.re) line += ',' + data::format_double(v);
        for (double v : row.spectrum.im) line += ',' + data::format_double(v);
        if (options.probe) line += ',' + data::format_double(phase_at(row.spectrum, *options.probe));
        if (options.find_resonance) line += ',' + data::format_double(find_resonance(row.spectrum));
        out << line << '\n';
    }
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace mimsur::sweeps
