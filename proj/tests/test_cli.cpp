// End-to-end checks of the command-line surface: artifacts, exit codes,
// output formats. Drives the real binary via std::system.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "testutil.hpp"

#ifndef FMLA_CLI_PATH
#error "FMLA_CLI_PATH must be defined"
#endif
#ifndef FMLA_SOURCE_DIR
#error "FMLA_SOURCE_DIR must be defined"
#endif

namespace {

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run(const std::string& args) {
  const auto out_file = testutil::temp_dir("cli") / "out.txt";
  const std::string cmd = std::string(FMLA_CLI_PATH) + " " + args + " > " +
                          out_file.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WEXITSTATUS(raw), ss.str()};
}

const std::string kDataDir = std::string(FMLA_SOURCE_DIR) + "/data";

std::string fast_flags() {
  return " --set train.epochs=2 --set train.batch_size=16"
         " --set model.num_blocks=1 --set model.d=16 --set model.c=8"
         " --set model.dcn_channels=8 --set model.self_distill_n=2";
}

}  // namespace

TEST_CASE("train smoke: exit 0 and the three artifacts exist") {
  const auto out = testutil::temp_dir("train_smoke");
  auto res = run("train --data-dir " + kDataDir + " --dataset TwoSine --seed 5"
                 " --out-dir " + out.string() + fast_flags());
  CAPTURE(res.output);
  CHECK(res.exit_code == 0);
  CHECK(std::filesystem::exists(out / "model.fmla"));
  CHECK(std::filesystem::exists(out / "metrics.csv"));
  CHECK(std::filesystem::exists(out / "config.resolved"));
  CHECK(res.output.find("resolved configuration:") != std::string::npos);
}

TEST_CASE("unknown config key exits 2 naming the key") {
  const auto out = testutil::temp_dir("badkey");
  auto res = run("train --data-dir " + kDataDir + " --dataset TwoSine"
                 " --out-dir " + out.string() + " --set model.bogus=1");
  CHECK(res.exit_code == 2);
  CHECK(res.output.find("model.bogus") != std::string::npos);
}

TEST_CASE("missing dataset exits 3") {
  const auto out = testutil::temp_dir("missing");
  auto res = run("train --data-dir " + kDataDir + " --dataset NoSuchSet"
                 " --out-dir " + out.string());
  CHECK(res.exit_code == 3);
}

TEST_CASE("eval right after train reproduces the final test_acc row exactly") {
  const auto out = testutil::temp_dir("eval_consistency");
  auto train = run("train --data-dir " + kDataDir + " --dataset TwoSine --seed 9"
                   " --out-dir " + out.string() + fast_flags());
  REQUIRE(train.exit_code == 0);

  // last test_acc column of the metrics csv
  std::ifstream metrics(out / "metrics.csv");
  std::string line, last;
  std::getline(metrics, line);  // header
  while (std::getline(metrics, line))
    if (!line.empty()) last = line;
  std::vector<std::string> cols;
  std::stringstream ss(last);
  std::string tok;
  while (std::getline(ss, tok, ',')) cols.push_back(tok);
  REQUIRE(cols.size() == 8);
  const double csv_acc = std::stod(cols[6]);

  auto eval = run("eval --checkpoint " + (out / "model.fmla").string() +
                  " --data-dir " + kDataDir + " --dataset TwoSine");
  CAPTURE(eval.output);
  CHECK(eval.exit_code == 0);
  // output format: dataset,accuracy,n_test with 6-decimal accuracy
  char name[64];
  double acc;
  int n_test;
  REQUIRE(std::sscanf(eval.output.c_str(), "%63[^,],%lf,%d", name, &acc,
                      &n_test) == 3);
  CHECK(std::string(name) == "TwoSine");
  CHECK(n_test == 120);
  CHECK(acc == doctest::Approx(csv_acc).epsilon(1e-9));
  CHECK(eval.output.find('.') != std::string::npos);
  const auto dot = eval.output.find('.');
  CHECK(eval.output.substr(dot + 1, 6).size() == 6);  // six decimals printed
}

TEST_CASE("corrupted checkpoint exits 3") {
  const auto out = testutil::temp_dir("corrupt");
  auto train = run("train --data-dir " + kDataDir + " --dataset TwoSine"
                   " --out-dir " + out.string() + fast_flags());
  REQUIRE(train.exit_code == 0);
  // flip one payload byte
  const auto path = out / "model.fmla";
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(200);
  char b;
  f.read(&b, 1);
  f.seekp(200);
  b = static_cast<char>(b ^ 0x3c);
  f.write(&b, 1);
  f.close();
  auto eval = run("eval --checkpoint " + path.string() + " --data-dir " +
                  kDataDir + " --dataset TwoSine");
  CHECK(eval.exit_code == 3);
}

TEST_CASE("checkpoint/dataset mismatch exits 2 printing both values") {
  const auto out = testutil::temp_dir("mismatch");
  auto train = run("train --data-dir " + kDataDir + " --dataset TwoSine"
                   " --out-dir " + out.string() + fast_flags());
  REQUIRE(train.exit_code == 0);
  // a second dataset with a different length
  const auto dir2 = testutil::temp_dir("mismatch_data");
  std::filesystem::create_directories(dir2 / "Short");
  {
    std::ofstream tr(dir2 / "Short" / "Short_TRAIN.tsv");
    std::ofstream te(dir2 / "Short" / "Short_TEST.tsv");
    for (int i = 0; i < 4; ++i) {
      tr << (i % 2) << "\t0.1\t0.9\t-0.4\t0.2\n";
      te << (i % 2) << "\t0.3\t-0.2\t0.8\t-0.6\n";
    }
  }
  auto eval = run("eval --checkpoint " + (out / "model.fmla").string() +
                  " --data-dir " + dir2.string() + " --dataset Short");
  CHECK(eval.exit_code == 2);
  CHECK(eval.output.find("seq_len=64") != std::string::npos);
  CHECK(eval.output.find("seq_len=4") != std::string::npos);
}

TEST_CASE("gradcheck: clean exit 0 with per-module report, bug hook exits 5") {
  auto ok = run("gradcheck");
  CAPTURE(ok.output);
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("module") != std::string::npos);
  CHECK(ok.output.find("max rel error") != std::string::npos);

  auto broken = run("gradcheck --inject-gradient-bug");
  CHECK(broken.exit_code == 5);
  CHECK(broken.output.find("gradient check failed") != std::string::npos);
}

TEST_CASE("flops: row count, growth rates, bad input") {
  const auto out = testutil::temp_dir("flops") / "flops.csv";
  auto res = run("flops --n-list 128,256,512 --out " + out.string());
  CHECK(res.exit_code == 0);
  std::ifstream in(out);
  std::string header;
  std::getline(in, header);
  CHECK(header == "n,flops_fmla,flops_vanilla,params_fmla");
  long long n, f[3], v[3], p;
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    REQUIRE(std::sscanf(line.c_str(), "%lld,%lld,%lld,%lld", &n, &f[rows],
                        &v[rows], &p) == 4);
    ++rows;
  }
  CHECK(rows == 3);
  // fmla roughly doubles per doubling of n; vanilla grows faster
  CHECK(static_cast<double>(f[1]) / f[0] == doctest::Approx(2.0).epsilon(0.1));
  CHECK(static_cast<double>(v[2]) / v[1] > 2.5);

  auto bad = run("flops --n-list 12x8");
  CHECK(bad.exit_code == 2);
}

TEST_CASE("identical seeds give identical metrics (wall time aside)") {
  const auto out1 = testutil::temp_dir("det1");
  const auto out2 = testutil::temp_dir("det2");
  for (const auto& o : {out1, out2}) {
    auto res = run("train --data-dir " + kDataDir + " --dataset TwoSine"
                   " --seed 3 --out-dir " + o.string() + fast_flags());
    REQUIRE(res.exit_code == 0);
  }
  auto strip_ms = [](const std::filesystem::path& p) {
    std::ifstream in(p / "metrics.csv");
    std::string line, acc;
    while (std::getline(in, line)) {
      const auto last = line.rfind(',');
      acc += line.substr(0, last) + "\n";
    }
    return acc;
  };
  CHECK(strip_ms(out1) == strip_ms(out2));
}
