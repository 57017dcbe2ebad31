#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "sva/grammar.hpp"
#include "sva/io.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace sva;

namespace {

std::string bin() {
  const char* b = std::getenv("SVA_BIN");
  REQUIRE_MESSAGE(b != nullptr, "SVA_BIN must point at the sva executable");
  return b;
}

struct Run {
  int status;
  std::string err;
};

Run run(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "stderr.txt";
  const std::string cmd = bin() + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " + log.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, read_file(log.string())};
}

std::vector<std::vector<std::string>> csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(p.string()));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> row;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

Lexicon tiny_lexicon() {
  Lexicon lex;
  lex.animate_nouns = {{"author", "authors"}, {"chef", "chefs"}};
  lex.inanimate_nouns = {{"key", "keys"}, {"book", "books"}};
  lex.trans_verbs = {{"likes", "like"}, {"sees", "see"}};
  lex.intrans_verbs = {{"laughs", "laugh"}, {"swims", "swim"}};
  lex.prepositions = {"near", "behind"};
  return lex;
}

// A grid small enough to train in seconds: 2 architectures x 2 regimes x 2 seeds.
fs::path write_config(const fs::path& dir, const std::string& out, const std::string& extra = "") {
  write_file_atomic((dir / "tiny_lexicon.json").string(), tiny_lexicon().to_json());
  const std::string text = R"({
  "out": ")" + (dir / out).string() + R"(",
  "tse_lexicon": ")" + (dir / "tiny_lexicon.json").string() + R"(",
  "corpus": {"pool_size": 5000, "train_size": 200, "test_size": 200, "probe_size": 20, "seed": 5},
  "architectures": ["lstm", "gru"],
  "sampling": ["natural", "selective"],
  "seeds": [1, 2],
  "train": {"hidden": 8, "embed": 6, "batch": 16, "epochs": 2},
  "finetune": {"sizes": [30], "epochs": [1]},
  "jobs": 2)" + extra + R"(
})";
  const fs::path p = dir / (out + ".json");
  write_file_atomic(p.string(), text);
  return p;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path().string());
  return out;
}

}  // namespace

TEST_CASE("invalid configs are rejected before any work") {
  const fs::path dir = testing::scratch_dir("cli-invalid");
  const fs::path sel = write_config(dir, "sel", R"(,
  "unused": 1)");
  Run r = run("gen --config " + sel.string(), dir);
  CHECK(r.status != 0);
  CHECK(r.err.find("unused") != std::string::npos);

  write_file_atomic((dir / "bad.json").string(), R"({"out": ")" + (dir / "x").string() +
                                                   R"(", "corpus": {"selective_profile": [0.1, 0.6, 0.2, 0.1]}})");
  r = run("gen --config " + (dir / "bad.json").string(), dir);
  CHECK(r.status != 0);
  CHECK(r.err.find("selective profile") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "x" / "data"));

  write_file_atomic((dir / "lr.json").string(), R"({"out": "x", "train": {"lr": -1}})");
  CHECK(run("train --config " + (dir / "lr.json").string(), dir).status != 0);
  CHECK(run("gen --preset huge --out " + (dir / "y").string(), dir).status != 0);
  CHECK(run("gen --config " + (dir / "nope.json").string(), dir).status != 0);
  CHECK(run("eval --arch transformer --out " + (dir / "y").string(), dir).status != 0);
}

TEST_CASE("end-to-end run on a tiny grid") {
  const fs::path dir = testing::scratch_dir("cli-grid");
  const fs::path cfg = write_config(dir, "a");
  const fs::path out = dir / "a";
  const std::string c = " --config " + cfg.string();

  REQUIRE(run("gen" + c, dir).status == 0);
  for (const char* f : {"vocab.txt", "lexicon.json", "train_natural.jsonl", "train_selective.jsonl", "test.jsonl",
                        "probe.jsonl", "tse.jsonl", "finetune_30.jsonl", "attractor_summary.csv"})
    CHECK(fs::exists(out / "data" / f));
  CHECK(fs::exists(out / "config.json"));

  SUBCASE("gen is byte-identical across runs") {
    const fs::path cfg2 = write_config(dir, "b");
    REQUIRE(run("gen --config " + cfg2.string(), dir).status == 0);
    CHECK(snapshot(out / "data") == snapshot(dir / "b" / "data"));
  }

  SUBCASE("train, rerun, evaluate") {
    REQUIRE(run("train" + c, dir).status == 0);
    std::size_t checkpoints = 0;
    for (const auto& e : fs::directory_iterator(out / "models")) checkpoints += fs::exists(e.path() / "checkpoint.json");
    CHECK(checkpoints == 8);

    // 200 sentences in batches of 16 is 13 batches per epoch.
    const auto loss = csv(out / "models" / "gru-lm-selective-s2" / "loss.csv");
    CHECK(loss.front() == std::vector<std::string>{"epoch", "batch", "loss", "grad_norm"});
    CHECK(loss.size() == 1 + 2 * 13);

    const auto before = snapshot(out / "models");
    const Run again = run("train" + c, dir);
    CHECK(again.status == 0);
    CHECK(again.err.find("up to date") != std::string::npos);
    CHECK(snapshot(out / "models") == before);

    REQUIRE(run("eval" + c, dir).status == 0);
    const auto eval = csv(out / "reports" / "eval.csv");
    CHECK(eval.front() ==
          std::vector<std::string>{"architecture", "objective", "sampling", "seed", "attractor_count", "accuracy", "n",
                                   "excluded"});
    CHECK(eval.size() == 1 + 8 * 4);
    const std::string first_eval = read_file((out / "reports" / "eval.csv").string());
    REQUIRE(run("eval" + c, dir).status == 0);
    CHECK(read_file((out / "reports" / "eval.csv").string()) == first_eval);

    REQUIRE(run("confidence" + c, dir).status == 0);
    const auto items = csv(out / "reports" / "confidence_items.csv");
    REQUIRE(items.size() > 1);
    for (std::size_t i = 1; i < items.size(); ++i) {
      const double conf = std::stod(items[i][6]), ratio = std::stod(items[i][7]);
      CHECK(std::abs(std::exp(conf) - ratio) <= 1e-9 * ratio);
    }
    CHECK(csv(out / "reports" / "confidence.csv").front() ==
          std::vector<std::string>{"architecture", "sampling", "mean_confidence", "mean_ratio", "n"});

    REQUIRE(run("tse" + c, dir).status == 0);
    const auto tse = csv(out / "reports" / "tse.csv");
    // Per (architecture, sampling): 3 single-noun rows x 2 cases + 11 rows x 4 cases.
    CHECK(tse.size() == 1 + 4 * (3 * 2 + 11 * 4));
    const Lexicon lex = tiny_lexicon();
    for (std::size_t i = 1; i < tse.size(); ++i) {
      const TseCondition cond{parse_condition(tse[i][2]), parse_animacy(tse[i][3])};
      const std::size_t cases = (cond.condition <= Condition::LongVP) ? 2 : 4;
      CHECK(std::stoul(tse[i][7]) == expected_item_count(lex, cond) / cases);
      CHECK(tse[i][8] == "2");
    }
    CHECK(csv(out / "reports" / "tse_summary.csv").size() == 1 + 4 * 14);

    REQUIRE(run("finetune" + c, dir).status == 0);
    CHECK(csv(out / "reports" / "finetune.csv").size() == 1 + 8);

    REQUIRE(run("rsa" + c, dir).status == 0);
    CHECK(csv(out / "reports" / "rsa_points.csv").size() == 1 + 8);
    CHECK(fs::exists(out / "reports" / "rsa_spread.csv"));
    CHECK(fs::exists(out / "reports" / "rsa_separability.csv"));

    const Run rep = run("report" + c, dir);
    CHECK(rep.status == 0);
    CHECK(read_file((dir / "stdout.txt").string()).find("LSTM") != std::string::npos);

    const Run missing = run("eval" + c + " --seeds 1,2,3", dir);
    CHECK(missing.status == 1);
    CHECK(missing.err.find("lstm-lm-natural-s3") != std::string::npos);
    CHECK(missing.err.find("gru-lm-selective-s3") != std::string::npos);
  }
}
