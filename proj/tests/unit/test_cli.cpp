#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "crispedge/cli.hpp"
#include "crispedge/io.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace crispedge;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(std::move(args), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("crispedge_cli_" + name);
  fs::remove_all(p);
  return p;
}

/// relative path -> bytes of every file below `dir`.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
  }
  return files;
}

std::string s(const fs::path& p) { return p.string(); }

void ok(const Run& r) {
  INFO(r.err);
  REQUIRE(r.code == 0);
}

}  // namespace

TEST_CASE("gen output is byte-identical across runs and job counts") {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  ok(cli({"gen", "--out", s(a), "--count", "8", "--height", "24", "--width", "24"}));
  ok(cli({"gen", "--out", s(b), "--count", "8", "--height", "24", "--width", "24", "--jobs", "3"}));
  const auto fa = snapshot(a);
  CHECK(fa.size() == 1 + 8 + 8 * 3);
  CHECK(fa == snapshot(b));
  const fs::path c = scratch("gen_c");
  ok(cli({"gen", "--out", s(c), "--count", "8", "--height", "24", "--width", "24", "--seed", "2"}));
  CHECK(snapshot(c) != fa);
}

TEST_CASE("train, infer and eval are reproducible and agree across job counts") {
  const fs::path root = scratch("pipeline");
  ok(cli({"gen", "--out", s(root / "data"), "--count", "10", "--height", "32", "--width", "32", "--holdout-percent",
          "40"}));
  const std::string manifest = s(root / "data" / "manifest.tsv");
  for (const char* m : {"m1", "m2"}) {
    ok(cli({"train", "--data", manifest, "--out", s(root / m), "--epochs", "2", "--batch-size", "4", "--jobs",
            m[1] == '1' ? "1" : "3"}));
  }
  const auto model = snapshot(root / "m1");
  CHECK(model.count("params.crb") == 1);
  CHECK(model.count("scores.txt") == 1);
  CHECK(model.at("loss_trace.csv").rfind("epoch,loss,lr,kappa,tau\n", 0) == 0);
  CHECK(model == snapshot(root / "m2"));

  ok(cli({"infer", "--model", s(root / "m1"), "--data", manifest, "--out", s(root / "p_default")}));
  ok(cli({"infer", "--model", s(root / "m1"), "--data", manifest, "--out", s(root / "p_one"), "--scales", "1",
          "--jobs", "2"}));
  CHECK(snapshot(root / "p_default") == snapshot(root / "p_one"));

  ok(cli({"infer", "--model", s(root / "m1"), "--data", manifest, "--out", s(root / "p_ms1"), "--scales",
          "0.5,1,2"}));
  ok(cli({"infer", "--model", s(root / "m1"), "--data", manifest, "--out", s(root / "p_ms3"), "--scales",
          "0.5,1,2", "--jobs", "3"}));
  CHECK(snapshot(root / "p_ms1") == snapshot(root / "p_ms3"));
  CHECK(snapshot(root / "p_ms1") != snapshot(root / "p_one"));

  const std::string preds = s(root / "p_one" / "manifest.tsv");
  const auto before = snapshot(root / "p_one");
  const Run e1 = cli({"eval", "--predictions", preds, "--out", s(root / "e1")});
  ok(e1);
  const Run e2 = cli({"eval", "--predictions", preds, "--out", s(root / "e2"), "--jobs", "4"});
  ok(e2);
  CHECK(snapshot(root / "p_one") == before);
  CHECK(e1.out == e2.out);
  const auto scores = snapshot(root / "e1");
  CHECK(scores == snapshot(root / "e2"));
  CHECK(scores.size() == 4);
  CHECK(scores.at("pr_localness.csv").rfind("threshold,precision,recall,f\n", 0) == 0);

  const Run test_only = cli({"eval", "--predictions", preds, "--split", "test"});
  ok(test_only);
  CHECK(test_only.out != e1.out);

  const Run ab1 = cli({"ablate", "--data", manifest, "--out", s(root / "ab1.csv"), "--epochs", "1", "--modes",
                       "sce,awl"});
  ok(ab1);
  ok(cli({"ablate", "--data", manifest, "--out", s(root / "ab2.csv"), "--epochs", "1", "--modes", "sce,awl",
          "--jobs", "2"}));
  CHECK(read_file(root / "ab1.csv") == read_file(root / "ab2.csv"));
  CHECK(read_file(root / "ab1.csv").find("\nawl,") != std::string::npos);
}

TEST_CASE("eval reports the benchmark tolerance on a 481x321 set") {
  const fs::path root = scratch("bsds");
  ok(cli({"gen", "--out", s(root / "data"), "--count", "1", "--height", "321", "--width", "481"}));
  ok(cli({"train", "--data", s(root / "data" / "manifest.tsv"), "--out", s(root / "m"), "--epochs", "0"}));
  ok(cli({"infer", "--model", s(root / "m"), "--data", s(root / "data" / "manifest.tsv"), "--out",
          s(root / "p")}));
  const Run r = cli({"eval", "--predictions", s(root / "p" / "manifest.tsv"), "--max-dist-fraction", "0.0075",
                     "--thresholds", "5"});
  ok(r);
  CHECK(r.out.rfind("d0 = 4.34 px", 0) == 0);
}

TEST_CASE("gradcheck prints the same table twice and passes") {
  const Run a = cli({"gradcheck", "--seed", "7", "--seeds", "2"});
  const Run b = cli({"gradcheck", "--seed", "7", "--seeds", "2"});
  ok(a);
  CHECK(a.out == b.out);
  CHECK(a.out.find("network+adaptive_loss") != std::string::npos);
  CHECK(a.out.find("conv2d_stride2") != std::string::npos);
  CHECK(a.out.find("FAIL") == std::string::npos);
}

TEST_CASE("configuration layers: defaults, file, --set, flags") {
  const fs::path root = scratch("config");
  fs::create_directories(root);
  write_file(root / "a.cfg", "# comment\ntrain.lr = 0.5\ntrain.epochs = 7  # trailing\nseed = 4\n\n");
  const Run r = cli({"train", "--data", "x", "--out", "y", "--show-config", "--config", s(root / "a.cfg"), "--set",
                     "train.epochs=9", "--set", "seed=5", "--seed", "6"});
  ok(r);
  CHECK(r.out.find("train.lr = 0.5  # " + s(root / "a.cfg") + ":2") != std::string::npos);
  CHECK(r.out.find("train.epochs = 9  # --set") != std::string::npos);
  CHECK(r.out.find("seed = 6  # flag") != std::string::npos);
  CHECK(r.out.find("train.batch_size = 10  # default") != std::string::npos);
  CHECK(r.out.find("gen.count") == std::string::npos);

  write_file(root / "bad.cfg", "train.lr = 0.5\nnot an assignment\n");
  const Run bad = cli({"gen", "--out", s(root / "g"), "--config", s(root / "bad.cfg")});
  CHECK(bad.code == exit_config);
  CHECK(bad.err.find("bad.cfg:2") != std::string::npos);

  write_file(root / "unknown.cfg", "train.learning_rate = 0.5\n");
  CHECK(cli({"gen", "--out", s(root / "g"), "--config", s(root / "unknown.cfg")}).code == exit_config);
}

TEST_CASE("exit codes and error prefix") {
  const fs::path root = scratch("errors");
  ok(cli({"gen", "--out", s(root / "data"), "--count", "3", "--height", "24", "--width", "24"}));
  const std::string manifest = s(root / "data" / "manifest.tsv");

  CHECK(cli({}).code == exit_usage);
  CHECK(cli({"train", "--data", manifest}).code == exit_usage);
  CHECK(cli({"infer", "--model", "m", "--data", "d", "--out", "o", "--split", "dev"}).code == exit_usage);
  const Run help = cli({"train", "--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("--epochs") != std::string::npos);

  const Run unknown = cli({"train", "--data", manifest, "--out", s(root / "m"), "--set", "train.speed=3"});
  CHECK(unknown.code == exit_config);
  CHECK(unknown.err.rfind("crispedge: train: ", 0) == 0);
  CHECK(cli({"train", "--data", manifest, "--out", s(root / "m"), "--loss", "dice"}).code == exit_config);
  CHECK(cli({"train", "--data", manifest, "--out", s(root / "m"), "--set", "net.refine=r1a=skip(s1,s2)"}).code ==
        exit_config);
  CHECK(cli({"gen", "--out", s(root / "g"), "--height", "4"}).code == exit_config);

  const Run missing = cli({"eval", "--predictions", s(root / "nothing.tsv")});
  CHECK(missing.code == exit_data);
  CHECK(missing.err.rfind("crispedge: eval: ", 0) == 0);
  write_file(root / "data" / "annotations" / "s0001_0.pgm", "P5\n2 2\n255\nabcd");
  CHECK(cli({"train", "--data", manifest, "--out", s(root / "m")}).code == exit_data);

  const fs::path clean = scratch("errors_numeric");
  ok(cli({"gen", "--out", s(clean), "--count", "3", "--height", "24", "--width", "24"}));
  const Run blowup = cli({"train", "--data", s(clean / "manifest.tsv"), "--out", s(clean / "m"), "--epochs", "3",
                          "--batch-size", "1", "--loss", "ce", "--lr", "1e12"});
  CHECK(blowup.code == exit_numeric);
  CHECK(blowup.err.find("non-finite loss") != std::string::npos);
}
