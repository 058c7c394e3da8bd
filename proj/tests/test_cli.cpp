#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>
#include <algorithm>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const std::string kCli = SLOTLOG_CLI;
const std::string kPrograms = std::string(SLOTLOG_SOURCE_DIR) + "/programs/";

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  Run r;
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("slotlog_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// "label value" lines, or a single bare value under the empty label.
std::map<std::string, double> values(const std::string& out) {
  std::map<std::string, double> m;
  std::istringstream in(out);
  for (std::string line; std::getline(in, line);) {
    const auto space = line.rfind(' ');
    if (space == std::string::npos)
      m[""] = std::stod(line);
    else
      m[line.substr(0, space)] = std::stod(line.substr(space + 1));
  }
  return m;
}

}  // namespace

TEST_CASE("query prints a single literal fact") {
  const auto dir = scratch("fact");
  write(dir / "f.pl", "0.5::f.\n");
  const Run r = run("query " + (dir / "f.pl").string() + " -q f");
  CHECK(r.code == 0);
  CHECK(r.out == "0.500000000000\n");
}

TEST_CASE("query reproduces the two-slot addition example") {
  const std::string args = kPrograms + "two_slot_add.pl " + kPrograms + "two_slot.params";
  CHECK(run("query " + args + " -q 'add(1)'").out == "0.509600000000\n");
  const Run all = run("query " + args);
  CHECK(all.out == "add(0) 0.255200000000\nadd(1) 0.509600000000\nadd(2) 0.235200000000\n");
  const Run grad = run("query " + args + " -q 'add(2)' --grad");
  CHECK(grad.code == 0);
  CHECK(grad.out.find("\nobject/1 0.294000000000\n") != std::string::npos);
}

TEST_CASE("query agrees with the enumeration oracle on shipped programs") {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"burglary.pl", ""},
      {"two_slot_add.pl", "two_slot.params"},
      {"chain_addition.pl", "chain_addition.params"},
  };
  for (const auto& [program, params] : cases) {
    CAPTURE(program);
    const std::string args = kPrograms + program + (params.empty() ? "" : " " + kPrograms + params);
    const Run q = run("query " + args), o = run("oracle " + args);
    REQUIRE(q.code == 0);
    REQUIRE(o.code == 0);
    const auto qv = values(q.out), ov = values(o.out);
    REQUIRE(qv.size() == ov.size());
    for (const auto& [label, p] : qv) {
      REQUIRE(ov.contains(label));
      CHECK(std::abs(p - ov.at(label)) <= 1e-9);
    }
  }
}

TEST_CASE("oracle world limit exits with the capacity code") {
  const std::string args = kPrograms + "two_slot_add.pl " + kPrograms + "two_slot.params";
  CHECK(run("oracle " + args + " --max-worlds 2").code == 5);
}

TEST_CASE("unprovable queries have probability zero") {
  const std::string args = kPrograms + "two_slot_add.pl " + kPrograms + "two_slot.params";
  CHECK(run("query " + args + " -q 'add(7)'").out == "0.000000000000\n");
  CHECK(run("oracle " + args + " -q 'add(7)'").out == "0.000000000000\n");
}

TEST_CASE("exit codes by error class") {
  const auto dir = scratch("codes");
  write(dir / "syntax.pl", "0.5::f\n");
  write(dir / "cycle.pl", "p :- \\+ p.\n?- p.\n");
  write(dir / "bad.params", "object/1 zero\n");
  write(dir / "partial.params", "object/1 0.8\n");
  CHECK(run("query " + (dir / "syntax.pl").string()).code == 2);
  CHECK(run("query --no-such-flag " + kPrograms + "burglary.pl").code == 2);
  CHECK(run("query " + (dir / "cycle.pl").string()).code == 3);
  CHECK(run("query " + kPrograms + "two_slot_add.pl " + (dir / "bad.params").string()).code == 2);
  CHECK(run("query " + kPrograms + "two_slot_add.pl " + (dir / "partial.params").string()).code == 4);
  CHECK(run("query " + kPrograms + "two_slot_add.pl").code == 4);
  CHECK(run("circuit-stats " + kPrograms + "chain_addition.pl --max-bits 4").code == 5);

  write(dir / "interp.json", R"({"split": "interpolation", "scene": {"max_objects": 1, "background_tokens": 9},
                                 "model": {"tokens": 12, "slots": 1}, "n_train": 4, "n_val": 4, "n_test": 4})");
  CHECK(run("gen-data -c " + (dir / "interp.json").string() + " -o " + (dir / "d").string()).code == 7);
  write(dir / "unknown.json", R"({"epochz": 1})");
  CHECK(run("gen-data -c " + (dir / "unknown.json").string() + " -o " + (dir / "d").string()).code == 3);
  write(dir / "diverge.json", R"({"epochs": 1, "learning_rate": 1e300, "n_train": 64, "n_val": 4, "n_test": 4})");
  CHECK(run("train -c " + (dir / "diverge.json").string() + " -o " + (dir / "t").string()).code == 6);
}

TEST_CASE("circuit-stats reports the compiled circuit") {
  const Run r = run("circuit-stats " + kPrograms + "two_slot_add.pl");
  CHECK(r.code == 0);
  CHECK(r.out.find("instances 3\n") != std::string::npos);
  CHECK(r.out.find("boolean_bits ") != std::string::npos);
}

TEST_CASE("gen-data is byte-identical for a fixed seed") {
  const auto dir = scratch("gen");
  write(dir / "c.json", R"({"n_train": 30, "n_val": 10, "n_test": 10})");
  const std::string cfg = "-c " + (dir / "c.json").string() + " --seed 7";
  REQUIRE(run("gen-data " + cfg + " -o " + (dir / "a").string()).code == 0);
  REQUIRE(run("gen-data " + cfg + " -o " + (dir / "b").string()).code == 0);
  REQUIRE(run("gen-data -c " + (dir / "c.json").string() + " --seed 8 -o " + (dir / "c").string()).code == 0);
  for (const char* f : {"train.data", "train.data.hidden", "val.data", "test.data", "test.data.hidden",
                        "config.json"}) {
    CAPTURE(f);
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  CHECK(slurp(dir / "a" / "train.data") != slurp(dir / "c" / "train.data"));
}

TEST_CASE("train writes artifacts and eval, swap-eval agree") {
  const auto dir = scratch("train");
  write(dir / "c.json", R"({"epochs": 2, "batch_size": 8, "n_train": 40, "n_val": 20, "n_test": 40})");
  const std::string cfg = "-c " + (dir / "c.json").string() + " --seed 3";
  REQUIRE(run("gen-data " + cfg + " -o " + (dir / "data").string()).code == 0);
  const std::string data = " --data " + (dir / "data").string();
  const Run t = run("train " + cfg + data + " -o " + (dir / "run").string());
  REQUIRE(t.code == 0);
  for (const char* f : {"checkpoint.txt", "metrics.jsonl", "metrics.csv", "config.json", "summary.json"})
    CHECK(fs::exists(dir / "run" / f));
  const std::string csv = slurp(dir / "run" / "metrics.csv");
  CHECK(csv.rfind("epoch,task_acc,concept_acc,count_mae,loss_task,loss_rec,loss_prior\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  const std::string ckpt = " --checkpoint " + (dir / "run" / "checkpoint.txt").string();
  const Run e = run("eval " + cfg + data + ckpt + " -o " + (dir / "eval").string());
  const Run s = run("swap-eval " + cfg + data + ckpt + " --program addition -o " + (dir / "eval").string());
  REQUIRE(e.code == 0);
  REQUIRE(s.code == 0);
  CHECK(e.out == s.out);
  // The training summary reports the same test metrics.
  CHECK(t.out.find(e.out) != std::string::npos);

  const Run again = run("train " + cfg + data + " -o " + (dir / "run2").string());
  CHECK(again.out == t.out);
  CHECK(slurp(dir / "run" / "checkpoint.txt") == slurp(dir / "run2" / "checkpoint.txt"));
  CHECK(slurp(dir / "run" / "metrics.jsonl") == slurp(dir / "run2" / "metrics.jsonl"));
}

TEST_CASE("eval on an untrained checkpoint is near chance") {
  const auto dir = scratch("untrained");
  write(dir / "c.json", R"({"epochs": 0, "n_train": 8, "n_val": 8, "n_test": 400})");
  const std::string cfg = "-c " + (dir / "c.json").string();
  REQUIRE(run("gen-data " + cfg + " -o " + (dir / "data").string()).code == 0);
  const std::string data = " --data " + (dir / "data").string();
  REQUIRE(run("train " + cfg + data + " -o " + (dir / "run").string()).code == 0);
  const Run e = run("eval " + cfg + data + " --checkpoint " + (dir / "run" / "checkpoint.txt").string() + " -o " +
                    (dir / "eval").string());
  REQUIRE(e.code == 0);
  const auto v = values(e.out);
  CHECK(v.at("n") == 400);

  std::map<long, int> freq;
  std::istringstream in(slurp(dir / "data" / "test.data"));
  for (std::string word; in >> word;)
    if (word == "example") {
      long y;
      in >> y;
      ++freq[y];
    }
  int majority = 0;
  for (const auto& [y, n] : freq) majority = std::max(majority, n);
  CHECK(v.at("task_acc") <= majority / 400.0 + 0.05);
}
