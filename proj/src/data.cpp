#include "mimsur/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mimsur::data {

namespace {

constexpr std::array<ModeSpec, 1> kAlModes{{{1.0, 0.0, 1.15, 60.0}}};
constexpr std::array<ModeSpec, 1> kAuModes{{{1.0, 15.0, 0.95, 45.0}}};
constexpr std::array<ModeSpec, 2> kAgModes{{{1.0, -10.0, 1.05, 30.0}, {0.6, 180.0, 0.45, 18.0}}};

constexpr std::size_t kColumns = 1 + 4 + 2 * kSpectrumPoints;

std::string header_line() {
    std::string h = "metal,H,P,R,T";
    for (std::size_t k = 0; k < kSpectrumPoints; ++k) h += ",re_" + std::to_string(k);
    for (std::size_t k = 0; k < kSpectrumPoints; ++k) h += ",im_" + std::to_string(k);
    return h;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

std::optional<double> parse_double(std::string_view field) {
    double v = 0.0;
    const auto* first = field.data();
    const auto* last = field.data() + field.size();
    if (first != last && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || first == last) return std::nullopt;
    return v;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".meta.json";
    return p;
}

}  // namespace

double GeometrySample::get(Param which) const noexcept {
    switch (which) {
        case Param::H: return h;
        case Param::P: return p;
        case Param::R: return r;
        case Param::T: return t;
    }
    return 0.0;
}

void GeometrySample::set(Param which, double value) noexcept {
    switch (which) {
        case Param::H: h = value; break;
        case Param::P: p = value; break;
        case Param::R: r = value; break;
        case Param::T: t = value; break;
    }
}

std::optional<Param> parse_param(std::string_view name) {
    if (name == "H" || name == "h") return Param::H;
    if (name == "P" || name == "p" || name == "S" || name == "s") return Param::P;
    if (name == "R" || name == "r") return Param::R;
    if (name == "T" || name == "t") return Param::T;
    return std::nullopt;
}

char param_name(Param which) noexcept {
    switch (which) {
        case Param::H: return 'H';
        case Param::P: return 'P';
        case Param::R: return 'R';
        case Param::T: return 'T';
    }
    return '?';
}

std::string_view metal_name(MetalKind metal) noexcept {
    switch (metal) {
        case MetalKind::Al: return "al";
        case MetalKind::Au: return "au";
        case MetalKind::Ag: return "ag";
    }
    return "?";
}

std::optional<MetalKind> parse_metal(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "al") return MetalKind::Al;
    if (lower == "au") return MetalKind::Au;
    if (lower == "ag") return MetalKind::Ag;
    return std::nullopt;
}

std::span<const ModeSpec> mode_table(MetalKind metal) noexcept {
    switch (metal) {
        case MetalKind::Al: return kAlModes;
        case MetalKind::Au: return kAuModes;
        case MetalKind::Ag: return kAgModes;
    }
    return {};
}

double base_resonance(const GeometrySample& g) noexcept {
    return 300.0 + 2.0 * g.r + 0.5 * g.p - 0.4 * g.h + 0.3 * g.t;
}

std::complex<double> cmt_response(std::span<const ModeSpec> modes, double lambda0, double wavelength) noexcept {
    std::complex<double> s{1.0, 0.0};
    for (const auto& mode : modes) {
        const double detune = (wavelength - mode.center(lambda0)) / mode.width;
        s -= mode.coupling / std::complex<double>(1.0, detune);
    }
    return s;
}

std::complex<double> oracle_s11(MetalKind metal, const GeometrySample& g, double wavelength) {
    if (!(wavelength >= kWavelengthMin && wavelength <= kWavelengthMax)) {
        throw DomainError("oracle_s11: wavelength " + std::to_string(wavelength) + " nm outside [500, 850]");
    }
    return cmt_response(mode_table(metal), base_resonance(g), wavelength);
}

Spectrum oracle_spectrum(MetalKind metal, const GeometrySample& g) {
    Spectrum s;
    const double lambda0 = base_resonance(g);
    const auto modes = mode_table(metal);
    for (std::size_t k = 0; k < kSpectrumPoints; ++k) {
        const auto v = cmt_response(modes, lambda0, canonical_wavelength(k));
        s.re[k] = v.real();
        s.im[k] = v.imag();
    }
    return s;
}

std::array<double, kGridLevels> grid_levels(Param which) noexcept {
    double start = 0.0;
    double step = 0.0;
    switch (which) {
        case Param::H: start = 20.0; step = 10.0; break;
        case Param::P: start = 200.0; step = 25.0; break;
        case Param::R: start = 30.0; step = 15.0; break;
        case Param::T: start = 60.0; step = 5.0; break;
    }
    std::array<double, kGridLevels> levels{};
    for (std::size_t i = 0; i < kGridLevels; ++i) levels[i] = start + step * static_cast<double>(i);
    return levels;
}

Dataset generate_grid(MetalKind metal, std::uint64_t seed) {
    Dataset ds;
    ds.metal = metal;
    ds.provenance.seed = seed;
    ds.samples.reserve(kGridSize);
    const auto hs = grid_levels(Param::H);
    const auto ps = grid_levels(Param::P);
    const auto rs = grid_levels(Param::R);
    const auto ts = grid_levels(Param::T);
    std::size_t id = 0;
    for (double h : hs) {
        for (double p : ps) {
            for (double r : rs) {
                for (double t : ts) {
                    GeometrySample g{h, p, r, t};
                    ds.samples.push_back({id++, g, oracle_spectrum(metal, g)});
                }
            }
        }
    }
    return ds;
}

Split split(const Dataset& dataset, std::uint64_t seed) {
    if (dataset.samples.size() != kGridSize) {
        throw ContractViolation("split: expected " + std::to_string(kGridSize) + " samples, got " +
                                std::to_string(dataset.samples.size()));
    }
    std::vector<std::size_t> order(dataset.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::swap(order[i], order[rng.below(i + 1)]);
    }
    Split out;
    out.test.reserve(kTestSize);
    out.pool.reserve(order.size() - kTestSize);
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto& dest = i < kTestSize ? out.test : out.pool;
        dest.push_back(dataset.samples[order[i]]);
    }
    return out;
}

NormStats NormStats::placeholder(std::size_t dims) {
    return {std::vector<double>(dims, 0.0), std::vector<double>(dims, 1.0)};
}

bool NormStats::outside(const GeometrySample& g) const {
    const auto v = g.as_array();
    for (std::size_t i = 0; i < dims() && i < v.size(); ++i) {
        if (v[i] < min[i] || v[i] > max[i]) return true;
    }
    return false;
}

NormStats fit_normalizer(std::span<const LabeledSample> pool) {
    if (pool.empty()) throw ContractViolation("fit_normalizer: empty pool");
    NormStats stats{std::vector<double>(4), std::vector<double>(4)};
    const auto first = pool.front().geometry.as_array();
    std::copy(first.begin(), first.end(), stats.min.begin());
    std::copy(first.begin(), first.end(), stats.max.begin());
    for (const auto& s : pool) {
        const auto v = s.geometry.as_array();
        for (std::size_t i = 0; i < 4; ++i) {
            stats.min[i] = std::min(stats.min[i], v[i]);
            stats.max[i] = std::max(stats.max[i], v[i]);
        }
    }
    for (std::size_t i = 0; i < 4; ++i) {
        if (!(stats.min[i] < stats.max[i])) {
            throw DomainError(std::string("fit_normalizer: degenerate dimension ") +
                              param_name(static_cast<Param>(i)));
        }
    }
    return stats;
}

std::array<double, 4> normalize(const GeometrySample& g, const NormStats& stats) {
    if (stats.dims() != 4 || stats.max.size() != 4) {
        throw ContractViolation("normalize: statistics must cover 4 dimensions");
    }
    const auto v = g.as_array();
    std::array<double, 4> out{};
    for (std::size_t i = 0; i < 4; ++i) {
        const double span = stats.max[i] - stats.min[i];
        if (!(span > 0.0)) {
            throw DomainError(std::string("normalize: degenerate dimension ") + param_name(static_cast<Param>(i)));
        }
        out[i] = (v[i] - stats.min[i]) / span;
    }
    return out;
}

std::string dataset_fingerprint(const Dataset& dataset) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    auto feed = [&hash](const void* bytes, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            hash ^= b[i];
            hash *= 0x100000001b3ULL;
        }
    };
    const auto name = metal_name(dataset.metal);
    feed(name.data(), name.size());
    for (const auto& s : dataset.samples) {
        const auto g = s.geometry.as_array();
        feed(g.data(), sizeof(double) * g.size());
        feed(s.spectrum.re.data(), sizeof(double) * kSpectrumPoints);
        feed(s.spectrum.im.data(), sizeof(double) * kSpectrumPoints);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

DatasetParseError::DatasetParseError(Kind kind, std::size_t line, const std::string& what)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), kind_(kind), line_(line) {}

std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, ptr);
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetParseError(DatasetParseError::Kind::Io, 0, "cannot open " + path.string() + " for writing");
    const auto metal = std::string(metal_name(dataset.metal));
    out << header_line() << '\n';
    std::string row;
    for (const auto& s : dataset.samples) {
        row = metal;
        for (double v : s.geometry.as_array()) row += ',' + format_double(v);
        for (double v : s.spectrum.re) row += ',' + format_double(v);
        for (double v : s.spectrum.im) row += ',' + format_double(v);
        row += '\n';
        out << row;
    }
    out.flush();
    if (!out) throw DatasetParseError(DatasetParseError::Kind::Io, 0, "write failed: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
    using Kind = DatasetParseError::Kind;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetParseError(Kind::Io, 0, "cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw DatasetParseError(Kind::Header, 1, "missing header (empty file)");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header_line()) throw DatasetParseError(Kind::Header, 1, "unexpected header");

    Dataset ds;
    std::optional<MetalKind> metal;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != kColumns) {
            throw DatasetParseError(Kind::Arity, lineno,
                                    "expected " + std::to_string(kColumns) + " fields, found " +
                                        std::to_string(fields.size()));
        }
        const auto row_metal = parse_metal(fields[0]);
        if (!row_metal) throw DatasetParseError(Kind::Content, lineno, "unknown metal '" + std::string(fields[0]) + "'");
        if (metal && *metal != *row_metal) throw DatasetParseError(Kind::Content, lineno, "mixed metals in one file");
        metal = row_metal;

        std::array<double, kColumns - 1> values{};
        for (std::size_t i = 1; i < kColumns; ++i) {
            const auto v = parse_double(fields[i]);
            if (!v) {
                throw DatasetParseError(Kind::NonNumeric, lineno,
                                        "field " + std::to_string(i + 1) + " is not a number: '" +
                                            std::string(fields[i]) + "'");
            }
            values[i - 1] = *v;
        }
        LabeledSample s;
        s.id = ds.samples.size();
        s.geometry = {values[0], values[1], values[2], values[3]};
        std::copy_n(values.begin() + 4, kSpectrumPoints, s.spectrum.re.begin());
        std::copy_n(values.begin() + 4 + kSpectrumPoints, kSpectrumPoints, s.spectrum.im.begin());
        ds.samples.push_back(s);
    }
    if (!metal) throw DatasetParseError(Kind::Content, lineno, "no samples");
    ds.metal = *metal;

    const auto meta = sidecar_path(path);
    if (std::filesystem::exists(meta)) {
        std::ifstream mf(meta);
        const auto j = nlohmann::json::parse(mf, nullptr, false);
        if (!j.is_discarded() && j.is_object()) {
            ds.provenance.seed = j.value("seed", std::uint64_t{0});
            ds.provenance.generator_version = j.value("generator_version", std::string(kGeneratorVersion));
        }
    }
    return ds;
}

void write_dataset_metadata(const Dataset& dataset, const std::filesystem::path& path) {
    nlohmann::json j;
    j["generator_version"] = dataset.provenance.generator_version;
    j["seed"] = dataset.provenance.seed;
    j["metal"] = metal_name(dataset.metal);
    j["samples"] = dataset.samples.size();
    j["fingerprint"] = dataset_fingerprint(dataset);
    j["wavelength_grid_nm"] = {{"formula", "500 + k*350/63"}, {"k_min", 0}, {"k_max", kSpectrumPoints - 1}};
    nlohmann::json ranges;
    for (Param p : {Param::H, Param::P, Param::R, Param::T}) {
        const auto lv = grid_levels(p);
        ranges[std::string(1, param_name(p))] = {{"min", lv.front()}, {"max", lv.back()}, {"levels", lv.size()}};
    }
    j["ranges"] = ranges;
    nlohmann::json modes = nlohmann::json::array();
    for (const auto& m : mode_table(dataset.metal)) {
        modes.push_back({{"center_scale", m.scale}, {"center_offset_nm", m.offset}, {"coupling", m.coupling},
                         {"width_nm", m.width}});
    }
    j["oracle"] = {{"base_resonance_nm", "300 + 2.0*R + 0.5*P - 0.4*H + 0.3*T"},
                   {"response", "1 - sum_j K_j / (1 + i*(lambda - center_j)/width_j)"},
                   {"modes", modes}};
    j["implausible_samples"] = std::count_if(dataset.samples.begin(), dataset.samples.end(),
                                             [](const LabeledSample& s) { return !s.geometry.plausible(); });

    std::ofstream out(sidecar_path(path), std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetParseError(DatasetParseError::Kind::Io, 0, "cannot write metadata next to " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw DatasetParseError(DatasetParseError::Kind::Io, 0, "metadata write failed");
}

}  // namespace mimsur::data
