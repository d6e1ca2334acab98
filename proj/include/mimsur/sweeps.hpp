#pragma once

// Design-space workflows over either the analytic oracle or a trained network:
// single-parameter sweeps, phase probing at a wavelength, resonance location
// and resonance targeting.

#include "mimsur/data.hpp"
#include "mimsur/model.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mimsur::sweeps {

struct OracleBackend {
    data::MetalKind metal = data::MetalKind::Al;
};

/// Borrows the parameters; they must outlive the sweep.
struct ModelBackend {
    const model::ModelParams* params = nullptr;
};

using Backend = std::variant<OracleBackend, ModelBackend>;

struct SweepRange {
    double start = 0.0;
    double stop = 0.0;
    double step = 0.0;

    /// Throws ContractViolation unless step > 0 and start < stop.
    void validate() const;
    /// start + i * step for every i with the value <= stop (inclusive, with rounding slack).
    std::vector<double> values() const;
};

struct SweepSpec {
    Backend backend;
    data::GeometrySample fixed;  // the varied field is overwritten per row
    data::Param vary = data::Param::R;
    SweepRange range;
    std::optional<double> probe;  // wavelength for phase_at, nm
};

struct SweepRow {
    double value = 0.0;
    data::Spectrum spectrum;
    /// Model backend only: the geometry lies outside the checkpoint's normalization range.
    bool extrapolated = false;
};

/// Spectrum of one geometry. For the model backend, `extrapolated` reports range violations.
data::Spectrum evaluate_backend(const Backend& backend, const data::GeometrySample& g, bool* extrapolated = nullptr);

std::vector<SweepRow> run_sweep(const SweepSpec& spec);

/// Phase of S11 at a wavelength in (-pi, pi], with re/im interpolated linearly
/// between the bracketing canonical wavelengths.
double phase_at(const data::Spectrum& spectrum, double wavelength);

/// Canonical wavelength of the smallest |S11|; ties go to the shorter wavelength.
double find_resonance(const data::Spectrum& spectrum);

/// Sub-grid estimate of the |S11| minimum: vertex of the parabola through |S11|^2
/// at the grid minimum and its two neighbours (the grid value at the window edges).
double refined_resonance(const data::Spectrum& spectrum);

/// Sweep value whose refined resonance lies closest to the target; ties go to
/// the smaller value.
double design_for_target(const Backend& backend, const data::GeometrySample& fixed, data::Param vary,
                         double target_wavelength, const SweepRange& range);

struct SweepFileOptions {
    std::optional<double> probe;  // adds phase_at_probe
    bool find_resonance = false;  // adds resonance_nm
    std::vector<std::string> comments;
};

/// Comment lines, then `param_value,re_0..re_63,im_0..im_63[,phase_at_probe][,resonance_nm]`.
void write_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& path,
                 const SweepFileOptions& options);

}  // namespace mimsur::sweeps
