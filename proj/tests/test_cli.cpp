#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "concap/io.hpp"

namespace fs = std::filesystem;
using concap::io::file_hash;
using concap::io::read_file;

namespace {

std::string cli_path() {
  const char* env = std::getenv("CONCAP_CLI");
  REQUIRE(env != nullptr);
  return env;
}

int run(const std::string& args, const std::string& out_file = "/dev/null",
        const std::string& err_file = "/dev/null") {
  const std::string cmd = cli_path() + " " + args + " > " + out_file + " 2> " + err_file;
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("concap_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("unknown flags are usage errors with a message on stderr") {
  TempDir dir;
  CHECK(run("train --bogus-flag 1", dir / "out", dir / "err") == 1);
  CHECK(!read_file(dir / "err").empty());
  CHECK(run("no-such-command", dir / "out", dir / "err") == 1);
}

TEST_CASE("build-lexicon writes the documented TSV and does not touch its input") {
  TempDir dir;
  {
    std::ofstream corpus(dir / "corpus.txt");
    corpus << "a b\n";
    corpus << "a c\n";
    corpus << "b c\n";
  }
  const uint64_t before = file_hash(dir / "corpus.txt");
  CHECK(run("build-lexicon --corpus " + (dir / "corpus.txt") +
            " --window 3 --threshold 0.5 --out " + (dir / "lex.tsv")) == 0);
  CHECK(file_hash(dir / "corpus.txt") == before);

  // ln 3 ~ 1.0986 for each of the three pairs, sorted by words
  const std::string expect =
      "w1\tw2\tpmi\n"
      "a\tb\t1.098612\n"
      "a\tc\t1.098612\n"
      "b\tc\t1.098612\n";
  CHECK(read_file(dir / "lex.tsv") == expect);
}

TEST_CASE("gen-data is byte-deterministic under identical argv") {
  TempDir dir;
  const std::string flags = "gen-data --n 20 --concepts 8 --seed 9 --out ";
  CHECK(run(flags + (dir / "a.jsonl")) == 0);
  CHECK(run(flags + (dir / "b.jsonl")) == 0);
  CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
  CHECK(read_file(dir / "a.jsonl.corpus.txt") == read_file(dir / "b.jsonl.corpus.txt"));
}

TEST_CASE("gradcheck exits zero and prints one line per suite") {
  TempDir dir;
  CHECK(run("gradcheck --all", dir / "out") == 0);
  const std::string out = read_file(dir / "out");
  CHECK(out.find("matmul") != std::string::npos);
  CHECK(out.find("end_to_end") != std::string::npos);
  CHECK(out.find("FAIL") == std::string::npos);
}

TEST_CASE("train + evaluate + generate round trip with identical rerun") {
  TempDir dir;
  CHECK(run("gen-data --n 30 --concepts 8 --seed 4 --out " + (dir / "data.jsonl")) == 0);
  const std::string train_flags =
      " --quiet train --data " + (dir / "data.jsonl") +
      " --epochs 3 --lr 1e-3 --d_model 16 --heads 2 --n_enc 1 --n_concept 1 --n_dec 1"
      " --query_count 3 --gcn_layers 1 --top_k 3 --ffn_dim 16 --seed 2 --out ";
  CHECK(run(train_flags + (dir / "m1"), dir / "out1") == 0);
  CHECK(run(train_flags + (dir / "m2"), dir / "out2") == 0);
  CHECK(read_file(dir / "m1/model.ckpt") == read_file(dir / "m2/model.ckpt"));
  CHECK(read_file(dir / "m1/train_log.csv") == read_file(dir / "m2/train_log.csv"));
  CHECK(read_file(dir / "out1") == read_file(dir / "out2"));

  CHECK(run("evaluate --model " + (dir / "m1") + " --data " + (dir / "data.jsonl"),
            dir / "eval_out") == 0);
  const std::string eval_out = read_file(dir / "eval_out");
  CHECK(eval_out.find("token_accuracy=") != std::string::npos);
  CHECK(eval_out.find("exact_match=") != std::string::npos);

  CHECK(run("generate --model " + (dir / "m1") + " --data " + (dir / "data.jsonl") +
            " --limit 2 --mode beam", dir / "gen_out") == 0);
  // two non-empty caption lines
  const std::string gen_out = read_file(dir / "gen_out");
  CHECK(std::count(gen_out.begin(), gen_out.end(), '\n') == 2);

  // evaluating against a missing model directory is a runtime error
  CHECK(run("evaluate --model " + (dir / "nope") + " --data " + (dir / "data.jsonl"),
            dir / "out", dir / "err") == 2);
}
