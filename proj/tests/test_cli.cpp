#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gmixseq/io.hpp"
#include "gmixseq/metrics.hpp"
#include "gmixseq/synthdata.hpp"

using namespace gmixseq;
namespace fs = std::filesystem;

namespace {

const std::string kCli = GMIXSEQ_CLI_PATH;

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / "gmixseq_cli_test") {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args) {
  const int status = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<double> csv_row(const std::string& line) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
  return out;
}

}  // namespace

TEST_CASE("gen-data: contract, determinism, validation") {
  TempDir tmp;
  const std::string out = tmp.file("corpus.dat");
  CHECK(run("gen-data --kind emotion --k 3 --n 20 --t 32 --seed 7 --out " + out) == 0);
  SyntheticCorpus corpus = load_corpus(out);
  CHECK(corpus.sequences.size() == 60);
  CHECK(corpus.k == 3);
  CHECK(corpus.t == 32);

  const std::string out2 = tmp.file("corpus2.dat");
  CHECK(run("gen-data --kind emotion --k 3 --n 20 --t 32 --seed 7 --out " + out2) == 0);
  CHECK(fnv1a_file(out) == fnv1a_file(out2));

  CHECK(run("gen-data --kind emotion --k 1 --n 5 --t 8 --seed 1 --out " + tmp.file("bad.dat")) != 0);
  CHECK(run("gen-data --kind bogus --k 3 --n 5 --t 8 --seed 1 --out " + tmp.file("bad2.dat")) != 0);
  CHECK(run("gen-data --kind emotion --k 3 --n 5 --t 8 --seed 1 --out /nonexistent-dir/x.dat") != 0);
}

TEST_CASE("seed falls back to GMIXSEQ_SEED") {
  TempDir tmp;
  const std::string a = tmp.file("a.dat"), b = tmp.file("b.dat"), c = tmp.file("c.dat");
  CHECK(run("gen-data --kind emotion --k 2 --n 3 --t 8 --seed 99 --out " + a) == 0);
  const std::string env_cmd = "GMIXSEQ_SEED=99 " + kCli + " gen-data --kind emotion --k 2 --n 3 --t 8 --out " +
                              b + " >/dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(env_cmd.c_str())) == 0);
  CHECK(fnv1a_file(a) == fnv1a_file(b));

  // an explicit flag wins over the environment
  const std::string flag_cmd = "GMIXSEQ_SEED=1 " + kCli +
                               " gen-data --kind emotion --k 2 --n 3 --t 8 --seed 99 --out " + c +
                               " >/dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(flag_cmd.c_str())) == 0);
  CHECK(fnv1a_file(a) == fnv1a_file(c));
}

TEST_CASE("train: log schema, seed determinism, descent; sampling and interpolation endpoints") {
  TempDir tmp;
  const std::string data = tmp.file("train.dat");
  REQUIRE(run("gen-data --kind emotion --k 2 --n 6 --t 10 --dbeta 6 --daudio 4 --seed 91 --out " + data) == 0);

  const std::string ckpt = tmp.file("model.ckpt");
  const std::string log = tmp.file("train.csv");
  const std::string train_flags =
      " --model gmeg --data " + data + " --epochs 50 --lr 5e-3 --batch 12 --seed 17 --layers 1 --dim 16 "
      "--ff 32 --dz 4 --dw 4 --save-interval 20";
  REQUIRE(run("train" + train_flags + " --out " + ckpt + " --log " + log) == 0);

  auto lines = read_lines(log);
  REQUIRE(lines.size() == 52);  // header + epochs 0..50
  CHECK(lines[0] == "epoch,total,rec,cond,w,emo");
  const auto first = csv_row(lines[1]);
  const auto last = csv_row(lines.back());
  REQUIRE(first.size() == 6);
  CHECK(first[0] == 0.0);
  CHECK(last[0] == 50.0);
  CHECK(last[2] < first[2]);  // final rec < initial rec

  // identical seed reproduces the epoch-0 row bitwise
  const std::string log2 = tmp.file("train2.csv");
  REQUIRE(run("train" + train_flags + " --out " + tmp.file("model2.ckpt") + " --log " + log2) == 0);
  CHECK(read_lines(log2)[1] == lines[1]);

  // sample twice with one seed: byte-identical output
  const std::string s1 = tmp.file("s1.dat"), s2 = tmp.file("s2.dat");
  REQUIRE(run("sample --ckpt " + ckpt + " --data " + data + " --index 3 --label 1 --seed 5 --out " + s1) == 0);
  REQUIRE(run("sample --ckpt " + ckpt + " --data " + data + " --index 3 --label 1 --seed 5 --out " + s2) == 0);
  CHECK(fnv1a_file(s1) == fnv1a_file(s2));

  // interpolation sweep: 11 rows at the default grid; endpoints equal the
  // corresponding sample runs under the same seed
  const std::string csv = tmp.file("sweep.csv");
  const std::string path = tmp.file("path.dat");
  REQUIRE(run("interpolate --ckpt " + ckpt + " --data " + data +
              " --index 3 --e1 1 --e2 0 --seed 5 --out-csv " + csv + " --out " + path) == 0);
  auto sweep = read_lines(csv);
  REQUIRE(sweep.size() == 12);  // header + 11 alphas
  CHECK(sweep[0] == "alpha,p_e1,p_e2,eppl_so_far");

  SyntheticCorpus path_seqs = load_corpus(path);
  REQUIRE(path_seqs.sequences.size() == 11);
  SyntheticCorpus e1_sample = load_corpus(s1);  // label 1 = e1 endpoint (alpha = 1)
  CHECK((path_seqs.sequences.back().coef.array() == e1_sample.sequences[0].coef.array()).all());

  const std::string s0 = tmp.file("s0.dat");
  REQUIRE(run("sample --ckpt " + ckpt + " --data " + data + " --index 3 --label 0 --seed 5 --out " + s0) == 0);
  SyntheticCorpus e2_sample = load_corpus(s0);
  CHECK((path_seqs.sequences.front().coef.array() == e2_sample.sequences[0].coef.array()).all());

  // commands never mutate their inputs
  CHECK(run("eval --metric silhouette --input " + data + " --out " + tmp.file("sil.txt")) == 0);
  SyntheticCorpus reread = load_corpus(data);
  CHECK(reread.sequences.size() == 12);
}

TEST_CASE("eval: validation, pcm identity, consistency with library calls") {
  TempDir tmp;
  const std::string data = tmp.file("motion.dat");
  REQUIRE(run("gen-data --kind motion --speakers 1 --n 6 --t 48 --seed 13 --out " + data) == 0);

  // div on a single-sequence file is rejected (B < 2)
  const std::string one = tmp.file("one.dat");
  {
    SyntheticCorpus corpus = load_corpus(data);
    SyntheticCorpus single = corpus.subset({0});
    save_corpus(one, single);
  }
  CHECK(run("eval --metric div --input " + one + " --out " + tmp.file("r0.txt")) != 0);

  const std::string rep_div = tmp.file("div.txt");
  REQUIRE(run("eval --metric div --input " + data + " --out " + rep_div) == 0);
  MetricReport div_report = MetricReport::read(rep_div);
  REQUIRE(div_report.entries.size() == 1);
  {
    SyntheticCorpus corpus = load_corpus(data);
    std::vector<Eigen::VectorXd> emb;
    for (const auto& s : corpus.sequences) emb.push_back(motion_embedding_summary(s.coef));
    CHECK(div_report.entries[0].value == div_score(emb));
    CHECK(div_report.entries[0].provenance == [&] {
      std::ostringstream h;
      h << std::hex << fnv1a_file(data);
      return h.str();
    }());
  }

  const std::string rep_pcm = tmp.file("pcm.txt");
  REQUIRE(run("eval --metric pcm --input " + data + " --ref " + data + " --out " + rep_pcm) == 0);
  CHECK(MetricReport::read(rep_pcm).entries[0].value == 1.0);

  const std::string rep_ba = tmp.file("ba.txt");
  REQUIRE(run("eval --metric ba --input " + data + " --out " + rep_ba) == 0);
  {
    SyntheticCorpus corpus = load_corpus(data);
    double want = 0.0;
    for (const auto& s : corpus.sequences)
      want += beat_align(extract_motion_beats(s.coef), extract_audio_beats(s.audio), 3.0);
    want /= static_cast<double>(corpus.sequences.size());
    CHECK(MetricReport::read(rep_ba).entries[0].value == want);
  }

  CHECK(run("eval --metric bogus --input " + data + " --out " + tmp.file("r9.txt")) != 0);
  CHECK(run("eval --metric pcm --input " + data + " --out " + tmp.file("r10.txt")) != 0);  // missing --ref
}

TEST_CASE("checkpoint kind guards across commands") {
  TempDir tmp;
  const std::string emo = tmp.file("emo.dat");
  const std::string mot = tmp.file("mot.dat");
  REQUIRE(run("gen-data --kind emotion --k 2 --n 3 --t 8 --dbeta 6 --daudio 4 --seed 3 --out " + emo) == 0);
  REQUIRE(run("gen-data --kind motion --speakers 1 --n 3 --t 16 --seed 3 --out " + mot) == 0);

  const std::string nckpt = tmp.file("n.ckpt");
  REQUIRE(run("train --model nfmg --data " + mot + " --out " + nckpt +
              " --epochs 1 --lr 1e-3 --batch 3 --seed 4 --layers 1 --dim 16 --ff 32 --dlatent 4 "
              "--flow-steps 2") == 0);

  // an nfmg checkpoint cannot drive interpolation, and model/data kinds must agree
  CHECK(run("interpolate --ckpt " + nckpt + " --data " + emo + " --e1 0 --e2 1 --out-csv " +
            tmp.file("x.csv")) != 0);
  CHECK(run("train --model gmeg --data " + mot + " --out " + tmp.file("y.ckpt") + " --epochs 1") != 0);
  CHECK(run("train --model nfmg --data " + emo + " --out " + tmp.file("z.ckpt") + " --epochs 1") != 0);
}

TEST_CASE("usage errors are single-line and nonzero") {
  TempDir tmp;
  const std::string err_file = tmp.file("stderr.txt");
  const int status =
      std::system((kCli + " gen-data --kind emotion >/dev/null 2>" + err_file).c_str());
  CHECK(WEXITSTATUS(status) != 0);
  auto lines = read_lines(err_file);
  REQUIRE(lines.size() == 1);
  CHECK(lines[0].rfind("error: ", 0) == 0);
}
