#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string cli = SURVKAN_CLI_PATH;

struct TmpDir {
    fs::path path;
    TmpDir() {
        path = fs::temp_directory_path() /
               ("survkan_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string operator/(const std::string& s) const {
        return (path / s).string();
    }
};

int run(const std::string& args) {
    const int rc = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("generate: row counts, byte-identical reruns, usage errors") {
    TmpDir tmp;
    CHECK(run("generate --formula gaussian --n-train 120 --n-test 40 --seed 7 --out " +
              (tmp / "a")) == 0);
    // header + rows
    std::ifstream f(tmp / "a/train.csv");
    int lines = 0;
    std::string line;
    while (std::getline(f, line)) ++lines;
    CHECK(lines == 121);
    CHECK(fs::exists(tmp / "a/test.csv"));
    CHECK(fs::exists(tmp / "a/meta.json"));

    CHECK(run("generate --formula gaussian --n-train 120 --n-test 40 --seed 7 --out " +
              (tmp / "b")) == 0);
    CHECK(slurp(tmp / "a/train.csv") == slurp(tmp / "b/train.csv"));
    CHECK(slurp(tmp / "a/test.csv") == slurp(tmp / "b/test.csv"));

    CHECK(run("generate --formula nonsense --out " + (tmp / "c")) == 2);
    CHECK(run("generate --formula \"custom:x1+bad(\" --out " + (tmp / "c")) == 2);
    CHECK(!fs::exists(tmp / "c/train.csv"));  // nothing written on usage error
    CHECK(run("bogus-subcommand") == 2);
}

TEST_CASE("stage-order violations and data errors") {
    TmpDir tmp;
    CHECK(run("generate --formula linear --n-train 100 --n-test 30 --seed 1 --out " +
              (tmp / "d")) == 0);
    // symbolic before train: invalid state
    CHECK(run("symbolic --run " + (tmp / "r") + " --data " + (tmp / "d/train.csv")) ==
          3);
    CHECK(run("evaluate --run " + (tmp / "r") + " --data " + (tmp / "d/test.csv")) ==
          3);
    CHECK(run("plot --run " + (tmp / "r") + " --data " + (tmp / "d/train.csv")) == 3);
    // missing file
    CHECK(run("train --data " + (tmp / "nope.csv") + " --out " + (tmp / "r")) == 3);
    // malformed CSV
    {
        std::ofstream bad(tmp / "bad.csv");
        bad << "x,duration,event\n1,abc,1\n";
    }
    CHECK(run("train --data " + (tmp / "bad.csv") + " --out " + (tmp / "r")) == 3);
}

TEST_CASE("full pipeline runs and is deterministic") {
    TmpDir tmp;
    REQUIRE(run("generate --formula linear --n-train 300 --n-test 100 --seed 5 --out " +
                (tmp / "data")) == 0);
    {
        std::ofstream cfg(tmp / "config.json");
        cfg << R"({"learning_rate":0.03,"steps":30,"lambda":0.001,)"
               R"("early_stopping":false,"grid":4,"seed":2,"hidden":[]})";
    }
    const std::string train_cmd = "train --data " + (tmp / "data/train.csv") +
                                  " --config " + (tmp / "config.json") +
                                  " --out ";
    REQUIRE(run(train_cmd + (tmp / "run1")) == 0);
    REQUIRE(run(train_cmd + (tmp / "run2")) == 0);
    CHECK(slurp(tmp / "run1/model.json") == slurp(tmp / "run2/model.json"));
    CHECK(slurp(tmp / "run1/history.csv") == slurp(tmp / "run2/history.csv"));
    CHECK(fs::exists(tmp / "run1/model_trained.json"));
    CHECK(fs::exists(tmp / "run1/model_pruned.json"));

    REQUIRE(run("symbolic --run " + (tmp / "run1") + " --data " +
                (tmp / "data/train.csv") + " --finetune-steps 10") == 0);
    CHECK(fs::exists(tmp / "run1/formula.txt"));
    CHECK(fs::exists(tmp / "run1/formula.json"));
    CHECK(fs::exists(tmp / "run1/model_symbolic.json"));

    const std::string eval_cmd = "evaluate --run " + (tmp / "run1") + " --data " +
                                 (tmp / "data/test.csv") + " --bootstrap 100 --seed 3";
    REQUIRE(run(eval_cmd + " --out " + (tmp / "rep1.json")) == 0);
    REQUIRE(run(eval_cmd + " --out " + (tmp / "rep2.json")) == 0);
    const std::string r1 = slurp(tmp / "rep1.json");
    // identical CIs across reruns: strip the timing field before comparing
    auto strip = [](std::string s) {
        const auto p = s.find("\"seconds\"");
        const auto q = s.find('\n', p);
        return s.erase(p, q - p);
    };
    CHECK(strip(r1) == strip(slurp(tmp / "rep2.json")));
    CHECK(r1.find("\"trained\"") != std::string::npos);
    CHECK(r1.find("\"pruned\"") != std::string::npos);
    CHECK(r1.find("\"symbolic\"") != std::string::npos);
    CHECK(r1.find("\"coxph\"") != std::string::npos);
    CHECK(r1.find("ci_low") != std::string::npos);

    REQUIRE(run("plot --run " + (tmp / "run1") + " --data " +
                (tmp / "data/train.csv")) == 0);
    int svgs = 0;
    for (const auto& e : fs::directory_iterator(tmp / "run1/plots"))
        if (e.path().extension() == ".svg") ++svgs;
    CHECK(svgs > 0);
}

TEST_CASE("search writes a leaderboard and best config") {
    TmpDir tmp;
    REQUIRE(run("generate --formula linear --n-train 160 --n-test 40 --seed 9 --out " +
                (tmp / "data")) == 0);
    REQUIRE(run("search --data " + (tmp / "data/train.csv") +
                " --trials 3 --folds 2 --seed 4 --out " + (tmp / "s1")) == 0);
    CHECK(fs::exists(tmp / "s1/leaderboard.csv"));
    CHECK(fs::exists(tmp / "s1/best_config.json"));
    std::ifstream lb(tmp / "s1/leaderboard.csv");
    int lines = 0;
    std::string line;
    while (std::getline(lb, line)) ++lines;
    CHECK(lines == 4);  // header + 3 trials

    // --jobs does not change the outcome
    REQUIRE(run("search --data " + (tmp / "data/train.csv") +
                " --trials 3 --folds 2 --seed 4 --jobs 2 --out " + (tmp / "s2")) == 0);
    CHECK(slurp(tmp / "s1/leaderboard.csv") == slurp(tmp / "s2/leaderboard.csv"));
    CHECK(slurp(tmp / "s1/best_config.json") == slurp(tmp / "s2/best_config.json"));
}
