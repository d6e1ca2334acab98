#include "mimsur/cli.hpp"

#include "mimsur/data.hpp"
#include "mimsur/model.hpp"
#include "mimsur/sweeps.hpp"
#include "mimsur/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace mimsur::cli {

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<std::string_view> split_on(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::optional<double> to_double(std::string_view s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

data::GeometrySample parse_geometry(const std::string& text) {
    const auto parts = split_on(text, ',');
    if (parts.size() != 4) throw UsageError("--geometry expects H,P,R,T (four numbers), got '" + text + "'");
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
        const auto d = to_double(parts[i]);
        if (!d || !(*d > 0.0) || !std::isfinite(*d)) {
            throw UsageError("--geometry: '" + std::string(parts[i]) + "' is not a positive number");
        }
        v[i] = *d;
    }
    return {v[0], v[1], v[2], v[3]};
}

sweeps::SweepRange parse_range(const std::string& text) {
    const auto parts = split_on(text, ':');
    if (parts.size() != 3) throw UsageError("--range expects start:stop:step, got '" + text + "'");
    const auto a = to_double(parts[0]);
    const auto b = to_double(parts[1]);
    const auto c = to_double(parts[2]);
    if (!a || !b || !c) throw UsageError("--range: non-numeric value in '" + text + "'");
    sweeps::SweepRange r{*a, *b, *c};
    try {
        r.validate();
    } catch (const ContractViolation& e) {
        throw UsageError(std::string("--range: ") + e.what());
    }
    return r;
}

data::GeometrySample parse_fixed(const std::string& text, data::Param vary) {
    data::GeometrySample g;
    std::map<data::Param, bool> seen;
    for (const auto item : split_on(text, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) throw UsageError("--fixed: expected KEY=VALUE, got '" + std::string(item) + "'");
        const auto key = data::parse_param(item.substr(0, eq));
        const auto val = to_double(item.substr(eq + 1));
        if (!key) throw UsageError("--fixed: unknown parameter '" + std::string(item.substr(0, eq)) + "'");
        if (!val || !(*val > 0.0)) throw UsageError("--fixed: bad value in '" + std::string(item) + "'");
        if (*key == vary) throw UsageError("--fixed must not set the varied parameter");
        if (seen[*key]) throw UsageError("--fixed: parameter given twice");
        seen[*key] = true;
        g.set(*key, *val);
    }
    for (data::Param p : {data::Param::H, data::Param::P, data::Param::R, data::Param::T}) {
        if (p != vary && !seen[p]) throw UsageError(std::string("--fixed is missing ") + data::param_name(p));
    }
    return g;
}

std::string geometry_text(const data::GeometrySample& g) {
    return "H=" + data::format_double(g.h) + ",P=" + data::format_double(g.p) + ",R=" + data::format_double(g.r) +
           ",T=" + data::format_double(g.t);
}

data::Dataset load_dataset(const std::string& path) {
    try {
        return data::read_dataset(path);
    } catch (const data::DatasetParseError& e) {
        throw data::DatasetParseError(e.kind(), e.line(), path + ": " + e.what());
    }
}

class ProgressPrinter : public training::TrainingObserver {
public:
    ProgressPrinter(std::ostream& out, std::ostream& err, std::size_t k) : out_(out), err_(err), k_(k) {}

    void on_fold_end(std::size_t fold, const model::ModelParams&, double val_db) override {
        char buf[96];
        std::snprintf(buf, sizeof buf, "fold %zu/%zu val_db %.4f", fold + 1, k_, val_db);
        out_ << buf << std::endl;
    }

    void on_epoch_end(training::Stage stage, std::size_t fold, std::size_t epoch, double mean_loss) override {
        if ((epoch + 1) % 10 != 0) return;
        char buf[128];
        const double db = loss_db(std::max(mean_loss, training::kLossFloor));
        if (stage == training::Stage::KFold) {
            std::snprintf(buf, sizeof buf, "[fold %zu epoch %zu] train_db %.3f", fold + 1, epoch + 1, db);
        } else {
            std::snprintf(buf, sizeof buf, "[finetune epoch %zu] train_db %.3f", epoch + 1, db);
        }
        err_ << buf << std::endl;
    }

private:
    std::ostream& out_;
    std::ostream& err_;
    std::size_t k_;
};

struct GenDataArgs {
    std::string metal;
    std::string out;
    std::uint64_t seed = 0;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out, std::ostream& err) {
    const auto metal = data::parse_metal(a.metal);
    if (!metal) throw UsageError("--metal must be one of al, au, ag (got '" + a.metal + "')");
    const auto ds = data::generate_grid(*metal, a.seed);
    try {
        data::write_dataset(ds, a.out);
        data::write_dataset_metadata(ds, a.out);
    } catch (const data::DatasetParseError& e) {
        throw IoFailure(e.what());
    }
    err << "wrote " << ds.samples.size() << " samples to " << a.out << '\n';
    out << a.out << '\n';
    return kOk;
}

struct TrainArgs {
    std::string data;
    std::string init;
    std::size_t folds = 10;
    std::size_t epochs_per_fold = 100;
    double lr = training::kDefaultStage1Lr;
    bool lr_given = false;
    double finetune_lr = 1e-4;
    std::size_t finetune_epochs = 100;
    std::size_t batch = 128;
    std::uint64_t seed = 0;
    std::string out;
    std::string report;
    bool allow_over_budget = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    if (a.folds < 2) throw UsageError("--folds must be at least 2");
    if (a.batch < 1) throw UsageError("--batch must be at least 1");
    if (a.lr_given && !(a.lr >= 0.0)) throw UsageError("--lr must be non-negative");
    if (!(a.finetune_lr >= 0.0)) throw UsageError("--finetune-lr must be non-negative");

    training::TrainConfig cfg;
    cfg.k = a.folds;
    cfg.epochs_per_fold = a.epochs_per_fold;
    if (a.lr_given) cfg.stage1_lr = a.lr;
    cfg.finetune_lr = a.finetune_lr;
    cfg.finetune_epochs = a.finetune_epochs;
    cfg.batch_size = a.batch;
    cfg.seed = a.seed;
    cfg.allow_over_budget = a.allow_over_budget;
    if (!a.init.empty()) cfg.init_checkpoint = a.init;
    cfg.validate();

    const auto ds = load_dataset(a.data);
    ProgressPrinter progress(out, err, cfg.k);
    auto result = training::run_training(ds, cfg, &progress);

    model::CheckpointMeta meta;
    meta.metal = result.report.metal;
    meta.seed = cfg.seed;
    meta.epochs_total = result.epochs_total;
    meta.init = result.report.init;
    try {
        model::save_checkpoint(a.out, result.params, meta);
        training::write_report(result.report, a.report);
    } catch (const model::CheckpointError& e) {
        throw IoFailure(e.what());
    } catch (const std::runtime_error& e) {
        throw IoFailure(e.what());
    }

    char buf[160];
    std::snprintf(buf, sizeof buf, "stage1_train_db %.4f finetune_train_db %.4f test_db %.4f epochs %zu",
                  result.report.stage1_final_train_db, result.report.finetune_train_db, result.report.test_db,
                  result.report.epochs_run);
    out << buf << std::endl;
    return kOk;
}

struct EvaluateArgs {
    std::string ckpt;
    std::string data;
    std::string split = "all";
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string report;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream&) {
    if (a.split != "all" && !a.seed_given) throw UsageError("--split " + a.split + " requires --seed");
    const auto ck = model::load_checkpoint(a.ckpt);
    const auto ds = load_dataset(a.data);

    std::vector<data::LabeledSample> samples;
    if (a.split == "all") {
        samples = ds.samples;
    } else {
        auto parts = data::split(ds, a.seed);
        samples = a.split == "test" ? std::move(parts.test) : std::move(parts.pool);
    }
    const double linear = training::evaluate_loss(ck.params, samples);
    const double db = loss_db(std::max(linear, training::kLossFloor));

    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", db);
    out << buf << std::endl;

    if (!a.report.empty()) {
        nlohmann::ordered_json j;
        j["checkpoint"] = a.ckpt;
        j["data"] = a.data;
        j["split"] = a.split;
        if (a.seed_given) j["seed"] = a.seed;
        j["samples"] = samples.size();
        j["loss"] = linear;
        j["loss_db"] = db;
        j["dataset_fingerprint"] = data::dataset_fingerprint(ds);
        std::ofstream f(a.report, std::ios::binary | std::ios::trunc);
        if (!f) throw IoFailure("cannot open " + a.report + " for writing");
        f << j.dump(2) << '\n';
        if (!f) throw IoFailure("write failed: " + a.report);
    }
    return kOk;
}

struct PredictArgs {
    std::string ckpt;
    std::string geometry;
    std::string out;
};

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
    const auto g = parse_geometry(a.geometry);
    const auto ck = model::load_checkpoint(a.ckpt);
    bool extrapolated = false;
    const auto s = sweeps::evaluate_backend(sweeps::ModelBackend{&ck.params}, g, &extrapolated);
    if (extrapolated) err << "warning: geometry " << geometry_text(g) << " lies outside the training range\n";

    std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
    if (!f) throw IoFailure("cannot open " + a.out + " for writing");
    f << "# mimsur " << kVersion << " predict\n";
    f << "# checkpoint: " << a.ckpt << " (metal " << ck.meta.metal << ")\n";
    f << "# geometry: " << geometry_text(g) << '\n';
    f << "# wavelengths_nm: 500 + k*350/63 for k = 0..63\n";
    f << "# extrapolated: " << (extrapolated ? "true" : "false") << '\n';
    std::string line;
    for (std::size_t k = 0; k < data::kSpectrumPoints; ++k) line += (k ? ",re_" : "re_") + std::to_string(k);
    for (std::size_t k = 0; k < data::kSpectrumPoints; ++k) line += ",im_" + std::to_string(k);
    f << line << '\n';
    line.clear();
    for (std::size_t k = 0; k < data::kSpectrumPoints; ++k) line += (k ? "," : "") + data::format_double(s.re[k]);
    for (double v : s.im) line += ',' + data::format_double(v);
    f << line << '\n';
    f.flush();
    if (!f) throw IoFailure("write failed: " + a.out);
    out << a.out << '\n';
    return kOk;
}

struct SweepArgs {
    std::string oracle;
    std::string ckpt;
    std::string vary;
    std::string range;
    std::string fixed;
    double probe = 0.0;
    bool probe_given = false;
    bool find_resonance = false;
    std::string out;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
    if (a.oracle.empty() == a.ckpt.empty()) throw UsageError("give exactly one of --oracle METAL or --ckpt CKPT");
    const auto vary = data::parse_param(a.vary);
    if (!vary) throw UsageError("--vary must be one of H, P, R, T");
    const auto range = parse_range(a.range);
    const auto fixed = parse_fixed(a.fixed, *vary);
    if (a.probe_given && !(a.probe >= data::kWavelengthMin && a.probe <= data::kWavelengthMax)) {
        throw UsageError("--probe-phase must lie in [500, 850] nm");
    }

    std::optional<model::Checkpoint> ck;
    sweeps::Backend backend;
    std::string backend_text;
    if (!a.oracle.empty()) {
        const auto metal = data::parse_metal(a.oracle);
        if (!metal) throw UsageError("--oracle must be one of al, au, ag (got '" + a.oracle + "')");
        backend = sweeps::OracleBackend{*metal};
        backend_text = "oracle " + std::string(data::metal_name(*metal));
    } else {
        ck = model::load_checkpoint(a.ckpt);
        backend = sweeps::ModelBackend{&ck->params};
        backend_text = "model " + a.ckpt + " (metal " + ck->meta.metal + ")";
    }

    sweeps::SweepSpec spec{backend, fixed, *vary, range, std::nullopt};
    if (a.probe_given) spec.probe = a.probe;
    const auto rows = sweeps::run_sweep(spec);

    sweeps::SweepFileOptions opts;
    opts.probe = spec.probe;
    opts.find_resonance = a.find_resonance;
    opts.comments.push_back(std::string("mimsur ") + kVersion + " sweep");
    opts.comments.push_back("backend: " + backend_text);
    opts.comments.push_back(std::string("vary: ") + data::param_name(*vary) + " " + a.range);
    opts.comments.push_back("fixed: " + a.fixed);
    opts.comments.push_back("wavelengths_nm: 500 + k*350/63 for k = 0..63");
    if (spec.probe) opts.comments.push_back("probe_nm: " + data::format_double(*spec.probe));
    std::string flagged;
    for (const auto& r : rows) {
        if (r.extrapolated) flagged += (flagged.empty() ? "" : ";") + data::format_double(r.value);
    }
    if (!flagged.empty()) {
        opts.comments.push_back("extrapolated_values: " + flagged);
        err << "warning: some sweep values lie outside the checkpoint's training range\n";
    }
    try {
        sweeps::write_sweep(rows, a.out, opts);
    } catch (const std::runtime_error& e) {
        throw IoFailure(e.what());
    }
    out << a.out << " (" << rows.size() << " rows)\n";
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Residual-network surrogate for MIM metasurface S11 spectra", "mimsur"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate the 6561-sample grid dataset for one metal");
    gen_cmd->add_option("--metal", gen.metal, "al | au | ag")->required();
    gen_cmd->add_option("--out", gen.out, "Output CSV path")->required();
    gen_cmd->add_option("--seed", gen.seed, "Seed recorded in the provenance");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Run the k-fold + fine-tune recipe");
    train_cmd->add_option("--data", tr.data, "Dataset CSV")->required();
    train_cmd->add_option("--init", tr.init, "Start from this checkpoint (transfer learning)");
    train_cmd->add_option("--folds", tr.folds, "k")->capture_default_str();
    train_cmd->add_option("--epochs-per-fold", tr.epochs_per_fold)->capture_default_str();
    auto* lr_opt = train_cmd->add_option("--lr", tr.lr, "Stage-1 learning rate (default 5e-4, 3e-4 for ag)");
    train_cmd->add_option("--finetune-lr", tr.finetune_lr)->capture_default_str();
    train_cmd->add_option("--finetune-epochs", tr.finetune_epochs)->capture_default_str();
    train_cmd->add_option("--batch", tr.batch)->capture_default_str();
    train_cmd->add_option("--seed", tr.seed)->required();
    train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
    train_cmd->add_option("--report", tr.report, "Run report path (JSON)")->required();
    train_cmd->add_flag("--allow-over-budget", tr.allow_over_budget, "Permit more than 1100 epochs");

    EvaluateArgs ev;
    auto* eval_cmd = app.add_subcommand("evaluate", "Loss of a checkpoint on a dataset, in dB");
    eval_cmd->add_option("--ckpt", ev.ckpt)->required();
    eval_cmd->add_option("--data", ev.data)->required();
    eval_cmd->add_option("--split", ev.split)->check(CLI::IsMember({"test", "pool", "all"}))->capture_default_str();
    auto* eval_seed = eval_cmd->add_option("--seed", ev.seed, "Seed of the training split");
    eval_cmd->add_option("--report", ev.report, "Optional JSON report");

    PredictArgs pr;
    auto* pred_cmd = app.add_subcommand("predict", "Predict one spectrum");
    pred_cmd->add_option("--ckpt", pr.ckpt)->required();
    pred_cmd->add_option("--geometry", pr.geometry, "H,P,R,T in nm")->required();
    pred_cmd->add_option("--out", pr.out)->required();

    SweepArgs sw;
    auto* sweep_cmd = app.add_subcommand("sweep", "Sweep one geometry parameter");
    sweep_cmd->add_option("--oracle", sw.oracle, "Analytic backend for a metal");
    sweep_cmd->add_option("--ckpt", sw.ckpt, "Trained-model backend");
    sweep_cmd->add_option("--vary", sw.vary, "H | P | R | T")->required();
    sweep_cmd->add_option("--range", sw.range, "start:stop:step in nm")->required();
    sweep_cmd->add_option("--fixed", sw.fixed, "e.g. H=30,P=300,T=80")->required();
    auto* probe_opt = sweep_cmd->add_option("--probe-phase", sw.probe, "Wavelength for the phase column (nm)");
    sweep_cmd->add_flag("--find-resonance", sw.find_resonance, "Add the resonance wavelength column");
    sweep_cmd->add_option("--out", sw.out)->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    tr.lr_given = lr_opt->count() > 0;
    ev.seed_given = eval_seed->count() > 0;
    sw.probe_given = probe_opt->count() > 0;

    try {
        if (gen_cmd->parsed()) return cmd_gen_data(gen, out, err);
        if (train_cmd->parsed()) return cmd_train(tr, out, err);
        if (eval_cmd->parsed()) return cmd_evaluate(ev, out, err);
        if (pred_cmd->parsed()) return cmd_predict(pr, out, err);
        if (sweep_cmd->parsed()) return cmd_sweep(sw, out, err);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const training::ConfigRefused& e) {
        err << "refused: " << e.what() << " (pass --allow-over-budget to override)\n";
        return kRefused;
    } catch (const model::CheckpointError& e) {
        err << "checkpoint error: " << e.what() << '\n';
        return kBadInput;
    } catch (const data::DatasetParseError& e) {
        err << "dataset error: " << e.what() << '\n';
        return kBadInput;
    } catch (const IoFailure& e) {
        err << "i/o error: " << e.what() << '\n';
        return kIoFailure;
    } catch (const ContractViolation& e) {
        err << "invalid input: " << e.what() << '\n';
        return kBadInput;
    } catch (const DomainError& e) {
        err << "invalid input: " << e.what() << '\n';
        return kBadInput;
    }
    err << "no subcommand\n";
    return kUsage;
}

}  // namespace mimsur::cli
