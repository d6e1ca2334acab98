#include "mimsur/cli.hpp"
#include "mimsur/training.hpp"

#include "../support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdio>
#include <sstream>

using namespace mimsur;
using mimsur::testing::slurp;
using mimsur::testing::spit;
using mimsur::testing::TempDir;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(args, out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

std::vector<std::string> data_lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
        if (line.rfind("#", 0) != 0) out.push_back(line);
    return out;
}

std::vector<double> parse_row(const std::string& row) {
    std::vector<double> v;
    std::istringstream in(row);
    for (std::string cell; std::getline(in, cell, ',');) v.push_back(std::stod(cell));
    return v;
}

// A cheap training run shared by the tests below (2 folds x 1 epoch, no fine-tune).
struct TrainedFixture {
    TempDir dir{"cli-train"};
    std::string data = (dir / "al.csv").string();
    std::string ckpt = (dir / "al.ckpt").string();
    std::string report = (dir / "al.json").string();
    Outcome gen;
    Outcome train;

    TrainedFixture() {
        gen = run({"gen-data", "--metal", "al", "--out", data});
        train = run({"train", "--data", data, "--folds", "2", "--epochs-per-fold", "1", "--finetune-epochs", "0",
                     "--batch", "512", "--seed", "5", "--out", ckpt, "--report", report});
    }
};

TrainedFixture& trained() {
    static TrainedFixture f;
    return f;
}

}  // namespace

TEST_CASE("help and version exit cleanly") {
    CHECK(run({"--help"}).code == 0);
    const auto v = run({"--version"});
    CHECK(v.code == 0);
    CHECK(v.out.find(cli::kVersion) != std::string::npos);
    CHECK(run({}).code == cli::kUsage);
    CHECK(run({"frobnicate"}).code == cli::kUsage);
}

TEST_CASE("gen-data") {
    TempDir dir("cli-gen");
    const auto a = run({"gen-data", "--metal", "au", "--out", (dir / "a.csv").string(), "--seed", "3"});
    CHECK(a.code == 0);
    const auto text = slurp(dir / "a.csv");
    CHECK(std::count(text.begin(), text.end(), '\n') == 6562);
    CHECK(std::filesystem::exists(dir / "a.csv.meta.json"));

    CHECK(run({"gen-data", "--metal", "au", "--out", (dir / "b.csv").string(), "--seed", "3"}).code == 0);
    CHECK(slurp(dir / "b.csv") == text);
    CHECK(slurp(dir / "b.csv.meta.json") == slurp(dir / "a.csv.meta.json"));

    CHECK(run({"gen-data", "--metal", "cu", "--out", (dir / "c.csv").string()}).code == cli::kUsage);
    CHECK(run({"gen-data", "--out", (dir / "c.csv").string()}).code == cli::kUsage);
    CHECK(run({"gen-data", "--metal", "al", "--out", (dir / "no/such/dir/x.csv").string()}).code == cli::kIoFailure);
}

TEST_CASE("train writes a checkpoint and a report") {
    auto& f = trained();
    REQUIRE(f.gen.code == 0);
    REQUIRE(f.train.code == 0);
    CHECK(f.train.out.find("fold 1/2 val_db") != std::string::npos);
    CHECK(f.train.out.find("fold 2/2 val_db") != std::string::npos);

    const auto r = training::read_report(f.report);
    CHECK(r.init == "fresh");
    CHECK(r.per_fold_val_db.size() == 2);
    CHECK(r.epochs_run == 2);
    CHECK(r.seed == 5);
    const auto ck = model::load_checkpoint(f.ckpt);
    CHECK(ck.meta.metal == "al");
    CHECK(ck.meta.epochs_total == 2);
    CHECK(ck.params.parameter_count() == 140992);
}

TEST_CASE("train usage errors and refusals") {
    auto& f = trained();
    const auto base = [&](std::vector<std::string> extra) {
        std::vector<std::string> args{"train",  "--data", f.data, "--seed", "1", "--out",
                                      (f.dir / "x.ckpt").string(), "--report", (f.dir / "x.json").string()};
        args.insert(args.end(), extra.begin(), extra.end());
        return run(args);
    };
    CHECK(base({"--folds", "1"}).code == cli::kUsage);
    CHECK(base({"--batch", "0"}).code == cli::kUsage);
    CHECK(base({"--epochs-per-fold", "101"}).code == cli::kRefused);
    CHECK(base({"--finetune-epochs", "101"}).code == cli::kRefused);
    CHECK(run({"train", "--data", f.data, "--out", "x", "--report", "y"}).code == cli::kUsage);
    CHECK_FALSE(std::filesystem::exists(f.dir / "x.ckpt"));

    const auto missing = run({"train", "--data", (f.dir / "missing.csv").string(), "--seed", "1", "--folds", "2",
                              "--epochs-per-fold", "0", "--finetune-epochs", "0", "--out", "x", "--report", "y"});
    CHECK(missing.code == cli::kBadInput);

    spit(f.dir / "broken.csv", "metal,H\n");
    CHECK(run({"train", "--data", (f.dir / "broken.csv").string(), "--seed", "1", "--out", "x", "--report", "y"})
              .code == cli::kBadInput);
}

TEST_CASE("train --init marks a transfer run") {
    auto& f = trained();
    const auto au = (f.dir / "au.csv").string();
    REQUIRE(run({"gen-data", "--metal", "au", "--out", au}).code == 0);
    const auto t = run({"train", "--data", au, "--init", f.ckpt, "--lr", "5e-4", "--folds", "2", "--epochs-per-fold",
                        "0", "--finetune-epochs", "0", "--seed", "5", "--out", (f.dir / "au.ckpt").string(),
                        "--report", (f.dir / "au.json").string()});
    REQUIRE(t.code == 0);
    const auto r = training::read_report(f.dir / "au.json");
    CHECK(r.init == "from_checkpoint");
    CHECK(r.init_checkpoint == f.ckpt);
    CHECK(r.stage1_lr == 5e-4);
    CHECK(model::load_checkpoint(f.dir / "au.ckpt").meta.init == "from_checkpoint");

    spit(f.dir / "corrupt.ckpt", slurp(f.ckpt).substr(0, 1000));
    CHECK(run({"train", "--data", au, "--init", (f.dir / "corrupt.ckpt").string(), "--seed", "5", "--out", "z",
               "--report", "z.json"})
              .code == cli::kBadInput);
}

TEST_CASE("evaluate") {
    auto& f = trained();
    const auto r = training::read_report(f.report);
    const auto test = run({"evaluate", "--ckpt", f.ckpt, "--data", f.data, "--split", "test", "--seed", "5"});
    REQUIRE(test.code == 0);
    char expected[64];
    std::snprintf(expected, sizeof expected, "%.2f\n", r.test_db);
    CHECK(test.out == expected);

    const auto pool = run({"evaluate", "--ckpt", f.ckpt, "--data", f.data, "--split", "pool", "--seed", "5",
                           "--report", (f.dir / "eval.json").string()});
    REQUIRE(pool.code == 0);
    const auto j = nlohmann::json::parse(slurp(f.dir / "eval.json"));
    CHECK(j.at("loss_db").get<double>() == r.finetune_train_db);
    CHECK(j.at("samples") == 5952);

    CHECK(run({"evaluate", "--ckpt", f.ckpt, "--data", f.data}).code == 0);
    CHECK(run({"evaluate", "--ckpt", f.ckpt, "--data", f.data, "--split", "test"}).code == cli::kUsage);
    CHECK(run({"evaluate", "--ckpt", f.ckpt, "--data", f.data, "--split", "train"}).code == cli::kUsage);

    spit(f.dir / "bad.ckpt", "{\"format_version\": 1}");
    const auto bad = run({"evaluate", "--ckpt", (f.dir / "bad.ckpt").string(), "--data", f.data});
    CHECK(bad.code == cli::kBadInput);
    CHECK(bad.err.find("checkpoint") != std::string::npos);
}

TEST_CASE("predict matches the evaluation forward pass bit for bit") {
    auto& f = trained();
    const auto out = (f.dir / "pred.csv").string();
    const auto p = run({"predict", "--ckpt", f.ckpt, "--geometry", "60,300,90,80", "--out", out});
    REQUIRE(p.code == 0);
    const auto text = slurp(out);
    CHECK(text.find("# extrapolated: false") != std::string::npos);
    CHECK(text.find("wavelengths_nm") != std::string::npos);
    const auto lines = data_lines(text);
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].rfind("re_0,re_1,", 0) == 0);
    const auto values = parse_row(lines[1]);
    REQUIRE(values.size() == 128);

    const auto ck = model::load_checkpoint(f.ckpt);
    const auto ds = data::read_dataset(f.data);
    const auto it = std::find_if(ds.samples.begin(), ds.samples.end(), [](const data::LabeledSample& s) {
        return s.geometry == data::GeometrySample{60, 300, 90, 80};
    });
    REQUIRE(it != ds.samples.end());
    const auto batch = model::make_batch(std::span(&*it, 1), ck.params.norm_stats);
    const auto [re, im] = model::predict(ck.params, batch.inputs);
    for (std::size_t k = 0; k < 64; ++k) {
        CHECK(values[k] == re(0, k));
        CHECK(values[64 + k] == im(0, k));
    }

    const auto far = run({"predict", "--ckpt", f.ckpt, "--geometry", "60,300,200,80", "--out", out});
    CHECK(far.code == 0);
    CHECK(far.err.find("warning") != std::string::npos);
    CHECK(slurp(out).find("# extrapolated: true") != std::string::npos);

    CHECK(run({"predict", "--ckpt", f.ckpt, "--geometry", "60,300,90", "--out", out}).code == cli::kUsage);
    CHECK(run({"predict", "--ckpt", f.ckpt, "--geometry", "60,300,abc,80", "--out", out}).code == cli::kUsage);
    CHECK(run({"predict", "--ckpt", f.ckpt, "--geometry", "60,-300,90,80", "--out", out}).code == cli::kUsage);
    CHECK(run({"predict", "--ckpt", (f.dir / "none.ckpt").string(), "--geometry", "60,300,90,80", "--out", out})
              .code == cli::kBadInput);
}

TEST_CASE("sweep subcommand") {
    TempDir dir("cli-sweep");
    const auto a = (dir / "a.csv").string();
    const auto phase = run({"sweep", "--oracle", "al", "--vary", "R", "--range", "30:100:5", "--fixed",
                            "H=30,P=300,T=80", "--probe-phase", "788", "--out", a});
    REQUIRE(phase.code == 0);
    auto lines = data_lines(slurp(a));
    REQUIRE(lines.size() == 16);
    CHECK(lines[0].find(",phase_at_probe") != std::string::npos);
    CHECK(lines[0].find("resonance_nm") == std::string::npos);
    CHECK(parse_row(lines[1]).size() == 130);

    const auto b = (dir / "b.csv").string();
    REQUIRE(run({"sweep", "--range", "100:150:5", "--fixed", "H=20,P=370,T=82.5", "--oracle", "al",
                 "--find-resonance", "--vary", "R", "--out", b})
                .code == 0);
    lines = data_lines(slurp(b));
    REQUIRE(lines.size() == 12);
    CHECK(lines[0].find(",resonance_nm") != std::string::npos);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto row = parse_row(lines[i]);
        const double r = row.front();
        const double lambda0 = data::base_resonance({20, 370, r, 82.5});
        if (lambda0 <= 850) CHECK(std::abs(row.back() - lambda0) <= data::kWavelengthStep);
    }

    const auto again = (dir / "again.csv").string();
    REQUIRE(run({"sweep", "--oracle", "al", "--vary", "R", "--range", "30:100:5", "--fixed", "H=30,S=300,T=80",
                 "--probe-phase", "788", "--out", again})
                .code == 0);
    CHECK(slurp(again) != slurp(a));  // the fixed text is echoed in a comment
    CHECK(data_lines(slurp(again)) == data_lines(slurp(a)));
    REQUIRE(run({"sweep", "--oracle", "al", "--vary", "R", "--range", "30:100:5", "--fixed", "H=30,P=300,T=80",
                 "--probe-phase", "788", "--out", again})
                .code == 0);
    CHECK(slurp(again) == slurp(a));

    const auto usage = [&](std::vector<std::string> args) {
        args.insert(args.begin(), "sweep");
        args.push_back("--out");
        args.push_back((dir / "u.csv").string());
        return run(args).code;
    };
    CHECK(usage({"--vary", "R", "--range", "30:100:5", "--fixed", "H=30,P=300,T=80"}) == cli::kUsage);
    CHECK(usage({"--oracle", "al", "--ckpt", "x", "--vary", "R", "--range", "30:100:5", "--fixed", "H=30,P=300,T=80"}) ==
          cli::kUsage);
    CHECK(usage({"--oracle", "cu", "--vary", "R", "--range", "30:100:5", "--fixed", "H=30,P=300,T=80"}) == cli::kUsage);
    CHECK(usage({"--oracle", "al", "--vary", "Q", "--range", "30:100:5", "--fixed", "H=30,P=300,T=80"}) == cli::kUsage);
    CHECK(usage({"--oracle", "al", "--vary", "R", "--range", "100:30:5", "--fixed", "H=30,P=300,T=80"}) == cli::kUsage);
    CHECK(usage({"--oracle", "al", "--vary", "R", "--range", "30:100", "--fixed", "H=30,P=300,T=80"}) == cli::kUsage);
    CHECK(usage({"--oracle", "al", "--vary", "R", "--range", "30:100:5", "--fixed", "H=30,P=300"}) == cli::kUsage);
    CHECK(usage({"--oracle", "al", "--vary", "R", "--range", "30:100:5", "--fixed", "H=30,P=300,T=80,R=5"}) ==
          cli::kUsage);
    CHECK(usage({"--oracle", "al", "--vary", "R", "--range", "30:100:5", "--fixed", "H=30,P=300,T=80", "--probe-phase",
                 "900"}) == cli::kUsage);
    CHECK(run({"sweep", "--oracle", "al", "--vary", "R", "--range", "30:100:5", "--fixed", "H=30,P=300,T=80", "--out",
               (dir / "missing/dir/x.csv").string()})
              .code == cli::kIoFailure);
}

TEST_CASE("model-backend sweep flags extrapolated rows") {
    auto& f = trained();
    const auto out = (f.dir / "model-sweep.csv").string();
    const auto s = run({"sweep", "--ckpt", f.ckpt, "--vary", "R", "--range", "140:160:5", "--fixed", "H=30,P=300,T=80",
                        "--find-resonance", "--out", out});
    REQUIRE(s.code == 0);
    CHECK(s.err.find("warning") != std::string::npos);
    CHECK(slurp(out).find("# extrapolated_values: 155;160") != std::string::npos);
    CHECK(data_lines(slurp(out)).size() == 6);
}
