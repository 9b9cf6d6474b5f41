#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <sstream>

#include "softscore/cli.hpp"
#include "softscore/evaluation.hpp"
#include "softscore/io.hpp"
#include "support.hpp"

using namespace softscore;
using namespace testsupport;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

// A smaller copy of the demo generator config.
fs::path small_config(const fs::path& dir, int n)
{
    auto doc = io::load_json(data_dir() / "demo_generator.json");
    doc["n"] = n;
    doc["score_definition"] = (data_dir() / "demo_score.json").string();
    const auto path = dir / "generator.json";
    io::write_file(path, doc.dump(2));
    return path;
}

std::string score_def() { return (data_dir() / "demo_score.json").string(); }

std::map<std::string, std::string> output_digests(const fs::path& dir)
{
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().filename() == "manifest.json") continue;
        out[e.path().filename().string()] = cli::sha256_hex(io::read_file(e.path()));
    }
    return out;
}

}  // namespace

TEST_CASE("sha256 known answer")
{
    CHECK(cli::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("simulate")
{
    const auto dir = scratch_dir("simulate");
    const auto cfg = small_config(dir, 300);
    const auto a = run({"simulate", "--config", cfg.string(), "--out", (dir / "a").string()});
    REQUIRE(a.code == 0);
    CHECK(fs::exists(dir / "a" / "cohort.csv"));
    CHECK(fs::exists(dir / "a" / "truth.csv"));
    const auto manifest = io::load_json(dir / "a" / "manifest.json");
    CHECK(manifest["command"] == "simulate");
    CHECK(manifest["seed"] == 20240917);
    CHECK(manifest["outputs"].size() == 2);
    CHECK(manifest["inputs"][0]["sha256"] == cli::sha256_hex(io::read_file(cfg)));

    REQUIRE(run({"simulate", "--config", cfg.string(), "--out", (dir / "b").string()}).code == 0);
    CHECK(output_digests(dir / "a") == output_digests(dir / "b"));
    REQUIRE(run({"simulate", "--config", cfg.string(), "--seed", "7", "--out", (dir / "c").string()}).code == 0);
    CHECK(output_digests(dir / "a") != output_digests(dir / "c"));

    const auto missing = run({"simulate", "--config", (dir / "absent.json").string(), "--out", (dir / "d").string()});
    CHECK(missing.code == 1);
    CHECK(missing.err.find("absent.json") != std::string::npos);
}

TEST_CASE("fit")
{
    const auto dir = scratch_dir("fit");
    REQUIRE(run({"simulate", "--config", small_config(dir, 600).string(), "--out", (dir / "sim").string()}).code == 0);
    const auto cohort = (dir / "sim" / "cohort.csv").string();
    const auto def = io::load_definition(score_def());
    const auto init = def.initial_parameters(0.01);

    REQUIRE(run({"fit", "--cohort", cohort, "--score-def", score_def(), "--optimize", "a", "--out", (dir / "a").string()})
                .code == 0);
    const auto only_a = io::parameters_from_json(io::load_json(dir / "a" / "fitted.json"), def);
    CHECK(only_a.thresholds == init.thresholds);
    CHECK(only_a.weights == init.weights);
    CHECK(only_a.slopes != init.slopes);

    REQUIRE(run({"fit", "--cohort", cohort, "--score-def", score_def(), "--optimize", "a,w", "--out", (dir / "aw").string()})
                .code == 0);
    const auto aw = io::parameters_from_json(io::load_json(dir / "aw" / "fitted.json"), def);
    CHECK(aw.slopes != init.slopes);
    CHECK(aw.weights != init.weights);
    const auto doc = io::load_json(dir / "aw" / "fitted.json");
    CHECK(doc["config"]["optimize"] == "a,w");
    CHECK(doc["trace"]["final_objective"].get<double>() <= doc["trace"]["initial_objective"].get<double>());
    CHECK(io::read_file(dir / "aw" / "trace.csv").rfind("outer_iteration,kind,block", 0) == 0);

    REQUIRE(run({"fit", "--cohort", cohort, "--score-def", score_def(), "--optimize", "a,w", "--out", (dir / "aw2").string()})
                .code == 0);
    CHECK(output_digests(dir / "aw") == output_digests(dir / "aw2"));

    // single-class cohort
    auto text = io::read_file(cohort);
    std::string survivors;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
        if (line.find(",1,") == std::string::npos || line.rfind("id,", 0) == 0) survivors += line + "\n";
    }
    io::write_file(dir / "survivors.csv", survivors);
    const auto single = run({"fit", "--cohort", (dir / "survivors.csv").string(), "--score-def", score_def(), "--out",
                             (dir / "x").string()});
    CHECK(single.code == 1);

    // an objective that cannot be evaluated is a numeric failure
    io::write_file(dir / "extreme.json", R"({"prior_mu": 1e200})");
    const auto numeric = run({"fit", "--cohort", cohort, "--score-def", score_def(), "--config",
                              (dir / "extreme.json").string(), "--out", (dir / "y").string()});
    CHECK(numeric.code == 2);

    io::write_file(dir / "typo.json", R"({"alpah": 0.1})");
    CHECK(run({"fit", "--cohort", cohort, "--score-def", score_def(), "--config", (dir / "typo.json").string(), "--out",
               (dir / "z").string()})
              .code == 1);
}

TEST_CASE("evaluate and cv")
{
    const auto dir = scratch_dir("evaluate");
    REQUIRE(run({"simulate", "--config", small_config(dir, 500).string(), "--out", (dir / "sim").string()}).code == 0);
    const auto cohort = (dir / "sim" / "cohort.csv").string();
    REQUIRE(run({"fit", "--cohort", cohort, "--score-def", score_def(), "--out", (dir / "fit").string()}).code == 0);

    REQUIRE(run({"evaluate", "--cohort", cohort, "--score-def", score_def(), "--fitted",
                 (dir / "fit" / "fitted.json").string(), "--out", (dir / "soft").string()})
                .code == 0);
    REQUIRE(run({"evaluate", "--cohort", cohort, "--score-def", score_def(), "--hard", "--out", (dir / "hard").string()})
                .code == 0);
    const auto soft = io::load_json(dir / "soft" / "report.json");
    const auto hard = io::load_json(dir / "hard" / "report.json");
    std::set<std::string> soft_keys, hard_keys;
    for (const auto& [k, v] : soft.items()) soft_keys.insert(k);
    for (const auto& [k, v] : hard.items()) hard_keys.insert(k);
    CHECK(soft_keys == hard_keys);
    CHECK(hard["model"] == "hard");

    CHECK(run({"evaluate", "--cohort", cohort, "--score-def", score_def(), "--out", (dir / "none").string()}).code == 1);

    REQUIRE(run({"cv", "--cohort", cohort, "--score-def", score_def(), "--folds", "10", "--seed", "5",
                 "--parallel-folds", "2", "--out", (dir / "cv").string()})
                .code == 0);
    const auto report = io::load_json(dir / "cv" / "report.json");
    CHECK(report["folds"].size() == 10);

    // report AUC recomputed from the emitted scores
    std::istringstream csv(io::read_file(dir / "cv" / "scores.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "id,fold,score,probability,label");
    std::vector<double> prob;
    std::vector<int> labels;
    while (std::getline(csv, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        prob.push_back(std::stod(cells[3]));
        labels.push_back(std::stoi(cells[4]));
    }
    CHECK(prob.size() == 500);
    CHECK(roc_and_auc(prob, labels).auc == report["auc"].get<double>());

    REQUIRE(run({"cv", "--cohort", cohort, "--score-def", score_def(), "--folds", "10", "--seed", "5", "--out",
                 (dir / "cv_serial").string()})
                .code == 0);
    CHECK(output_digests(dir / "cv") == output_digests(dir / "cv_serial"));

    REQUIRE(run({"cv", "--cohort", cohort, "--score-def", score_def(), "--model", "hard", "--folds", "5", "--filter",
                 "age:child", "--out", (dir / "cv_hard").string()})
                .code == 0);
    CHECK(io::load_json(dir / "cv_hard" / "report.json")["subgroup"] == "age:child");
    REQUIRE(run({"cv", "--cohort", cohort, "--score-def", score_def(), "--model", "ridge", "--folds", "5", "--out",
                 (dir / "cv_ridge").string()})
                .code == 0);
    CHECK(run({"cv", "--cohort", cohort, "--score-def", score_def(), "--folds", "one", "--out", (dir / "bad").string()})
              .code == 1);
    CHECK(run({"cv", "--cohort", cohort, "--score-def", score_def(), "--filter", "age:elderly", "--out",
               (dir / "bad2").string()})
              .code == 1);
}

TEST_CASE("impute")
{
    const auto dir = scratch_dir("impute");
    REQUIRE(run({"simulate", "--config", small_config(dir, 200).string(), "--out", (dir / "sim").string()}).code == 0);
    const auto cohort = (dir / "sim" / "cohort.csv").string();

    REQUIRE(run({"impute", "--cohort", cohort, "--score-def", score_def(), "--out", (dir / "default").string()}).code == 0);
    REQUIRE(run({"impute", "--cohort", cohort, "--score-def", score_def(), "--method", "knn", "--k", "5", "--out",
                 (dir / "k5").string()})
                .code == 0);
    CHECK(output_digests(dir / "default") == output_digests(dir / "k5"));

    REQUIRE(run({"impute", "--cohort", (dir / "k5" / "cohort.csv").string(), "--score-def", score_def(), "--method",
                 "mean", "--out", (dir / "again").string()})
                .code == 0);
    CHECK(io::read_file(dir / "again" / "cohort.csv") == io::read_file(dir / "k5" / "cohort.csv"));

    CHECK(run({"impute", "--cohort", cohort, "--score-def", score_def(), "--method", "ppca", "--out",
               (dir / "bad").string()})
              .code == 1);
}

TEST_CASE("argument handling")
{
    CHECK(run({}).code == 1);
    CHECK(run({"train"}).code == 1);
    CHECK(run({"fit", "--cohort", "x.csv"}).code == 1);
    const auto help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("simulate") != std::string::npos);
    CHECK(run({"--version"}).out == std::string(cli::kToolVersion) + "\n");
}
