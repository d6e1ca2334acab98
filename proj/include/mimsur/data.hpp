#pragma once

// Synthetic ground truth and dataset handling.
//
// The reflection coefficient comes from a coupled-mode (Lorentzian) model:
//
//   S11(lambda) = 1 - sum_j K_j / (1 + i (lambda - center_j) / gamma_j)
//
// with every mode center tied to a base resonance that is linear in the
// geometry:  lambda0 = 300 + 2.0 R + 0.5 P - 0.4 H + 0.3 T  (nm).

#include "mimsur/numcore.hpp"

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mimsur::data {

inline constexpr std::size_t kSpectrumPoints = 64;
inline constexpr double kWavelengthMin = 500.0;
inline constexpr double kWavelengthMax = 850.0;
inline constexpr std::size_t kGridLevels = 9;
inline constexpr std::size_t kGridSize = 6561;  // 9^4
inline constexpr std::size_t kTestSize = 609;
inline constexpr std::string_view kGeneratorVersion = "cmt-grid-1";

/// k-th canonical wavelength: 500 + k * 350 / 63 nm.
constexpr double canonical_wavelength(std::size_t k) noexcept {
    return kWavelengthMin + (kWavelengthMax - kWavelengthMin) * static_cast<double>(k) /
                                static_cast<double>(kSpectrumPoints - 1);
}

/// Spacing of the canonical grid (350 / 63 nm).
inline constexpr double kWavelengthStep = (kWavelengthMax - kWavelengthMin) / (kSpectrumPoints - 1);

enum class Param { H, P, R, T };

/// Unit-cell geometry in nanometres.
struct GeometrySample {
    double h = 0.0;  // nanodisk height
    double p = 0.0;  // period
    double r = 0.0;  // radius
    double t = 0.0;  // spacer thickness

    double get(Param which) const noexcept;
    void set(Param which, double value) noexcept;
    std::array<double, 4> as_array() const noexcept { return {h, p, r, t}; }

    bool valid() const noexcept { return h > 0 && p > 0 && r > 0 && t > 0; }
    /// The disk fits inside its cell (R < P/2).
    bool plausible() const noexcept { return valid() && r < 0.5 * p; }

    bool operator==(const GeometrySample&) const = default;
};

std::optional<Param> parse_param(std::string_view name);
char param_name(Param which) noexcept;

struct Spectrum {
    std::array<double, kSpectrumPoints> re{};
    std::array<double, kSpectrumPoints> im{};

    std::complex<double> at(std::size_t k) const noexcept { return {re[k], im[k]}; }
    bool operator==(const Spectrum&) const = default;
};

enum class MetalKind { Al, Au, Ag };

std::string_view metal_name(MetalKind metal) noexcept;  // "al", "au", "ag"
std::optional<MetalKind> parse_metal(std::string_view name);

/// One Lorentzian mode. Its center is scale * lambda0 + offset.
struct ModeSpec {
    double scale = 1.0;
    double offset = 0.0;
    double coupling = 1.0;  // K, in (0, 2)
    double width = 1.0;     // gamma, nm

    double center(double lambda0) const noexcept { return scale * lambda0 + offset; }
};

/// Fixed per-metal mode table.
std::span<const ModeSpec> mode_table(MetalKind metal) noexcept;

double base_resonance(const GeometrySample& g) noexcept;

/// S11 of an explicit set of modes at the given base resonance. No window check.
std::complex<double> cmt_response(std::span<const ModeSpec> modes, double lambda0, double wavelength) noexcept;

/// S11 of a metal/geometry at a wavelength inside [500, 850] nm.
/// Throws DomainError outside the window.
std::complex<double> oracle_s11(MetalKind metal, const GeometrySample& g, double wavelength);

/// Oracle evaluated at all 64 canonical wavelengths.
Spectrum oracle_spectrum(MetalKind metal, const GeometrySample& g);

struct LabeledSample {
    std::size_t id = 0;  // position in the generating grid
    GeometrySample geometry;
    Spectrum spectrum;

    bool operator==(const LabeledSample&) const = default;
};

struct Provenance {
    std::uint64_t seed = 0;
    std::string generator_version{kGeneratorVersion};

    bool operator==(const Provenance&) const = default;
};

struct Dataset {
    MetalKind metal = MetalKind::Al;
    std::vector<LabeledSample> samples;
    Provenance provenance;

    bool operator==(const Dataset&) const = default;
};

/// Grid levels of one parameter (9 values each).
std::array<double, kGridLevels> grid_levels(Param which) noexcept;

/// Full 9^4 Cartesian grid, H outermost, T innermost.
Dataset generate_grid(MetalKind metal, std::uint64_t seed = 0);

struct Split {
    std::vector<LabeledSample> pool;
    std::vector<LabeledSample> test;
};

/// Seeded Fisher-Yates; the first 609 shuffled samples form the test set.
Split split(const Dataset& dataset, std::uint64_t seed);

/// Per-dimension min/max of the inputs.
struct NormStats {
    std::vector<double> min;
    std::vector<double> max;

    static NormStats placeholder(std::size_t dims);
    std::size_t dims() const noexcept { return min.size(); }
    /// True when the geometry lies outside [min, max] in some dimension.
    bool outside(const GeometrySample& g) const;

    bool operator==(const NormStats&) const = default;
};

NormStats fit_normalizer(std::span<const LabeledSample> pool);
std::array<double, 4> normalize(const GeometrySample& g, const NormStats& stats);

/// Order-sensitive 64-bit FNV-1a over metal and all sample values, as 16 hex digits.
std::string dataset_fingerprint(const Dataset& dataset);

class DatasetParseError : public std::runtime_error {
public:
    enum class Kind { Io, Header, Arity, NonNumeric, Content };

    DatasetParseError(Kind kind, std::size_t line, const std::string& what);

    Kind kind() const noexcept { return kind_; }
    std::size_t line() const noexcept { return line_; }

private:
    Kind kind_;
    std::size_t line_;
};

/// Comma-separated text: header then one row per sample, 17 significant digits.
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// JSON sidecar with generator version, seed, ranges and the oracle constants.
void write_dataset_metadata(const Dataset& dataset, const std::filesystem::path& path);

/// 17 significant digits in general notation; round-trips every double.
std::string format_double(double v);

}  // namespace mimsur::data
