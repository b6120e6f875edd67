#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hic/anchors.hpp"
#include "hic/boxes.hpp"
#include "hic/data.hpp"

using namespace hic;
namespace fs = std::filesystem;

namespace {

const std::string kBin = HICDET_BIN;
const std::string kFixtures = HICDET_FIXTURES;
const std::string kGolden = HICDET_GOLDEN;
const std::string kTmp = "cli_test_tmp";

int run(const std::string& args, const std::string& stdout_file = "") {
  std::string cmd = kBin + " " + args;
  cmd += " > " + (stdout_file.empty() ? std::string("/dev/null") : stdout_file) + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

const std::string kModelArgs = " --input-size 32 --width 0.125 --classes 2";
const std::string kToyTrainArgs = " --images " + kFixtures + "/toyset/images --labels " +
                                  kFixtures + "/toyset/labels" + kModelArgs;

struct Setup {
  Setup() { fs::create_directories(kTmp); }
  ~Setup() {
    std::error_code ec;
    fs::remove_all(kTmp, ec);
  }
} const setup;

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("stats") == 1);  // missing required --labels
  CHECK(run("--help") == 0);
}

TEST_CASE("data errors exit 2") {
  CHECK(run("stats --labels /definitely/not/here") == 2);
  CHECK(run("eval" + kToyTrainArgs + " --checkpoint /dev/null") == 2);
}

TEST_CASE("stats on the committed fixture matches the golden report") {
  const std::string out = kTmp + "/stats.txt";
  CHECK(run("stats --labels " + kFixtures + "/stats1000 --classes 10", out) == 0);
  CHECK(read_file(out) == read_file(kGolden + "/stats1000_report.txt"));
}

TEST_CASE("stats on a single-image set has flat quantiles") {
  fs::create_directories(kTmp + "/one");
  {
    std::ofstream f(kTmp + "/one/a.txt");
    f << "0 0.5 0.5 0.1 0.1\n";
  }
  const std::string out = kTmp + "/one_stats.txt";
  CHECK(run("stats --labels " + kTmp + "/one --classes 1", out) == 0);
  const std::string text = read_file(out);
  CHECK(text.find("labels: 1") != std::string::npos);
  CHECK(text.find("p25 0.010000 p50 0.010000 p75 0.010000") != std::string::npos);
}

TEST_CASE("anchors: labels at the stock sizes keep the defaults with BPR 1") {
  fs::create_directories(kTmp + "/anchor_labels");
  {
    std::ofstream f(kTmp + "/anchor_labels/a.txt");
    for (const AnchorPair& a : AnchorSet::defaults().flat())
      f << "0 0.5 0.5 " << a.w / 640.0 << " " << a.h / 640.0 << "\n";
  }
  const std::string out = kTmp + "/anchors_out.txt";
  CHECK(run("anchors --labels " + kTmp + "/anchor_labels --img-size 640 --out " + kTmp +
                "/anchors.txt",
            out) == 0);
  const std::string text = read_file(out);
  CHECK(text.find("anchors kept: BPR 1.0000") != std::string::npos);
  // anchor file: 4 lines of 6 floats
  std::istringstream af(read_file(kTmp + "/anchors.txt"));
  std::string line;
  int lines = 0;
  while (std::getline(af, line)) {
    std::istringstream ls(line);
    double v;
    int vals = 0;
    while (ls >> v) ++vals;
    CHECK(vals == 6);
    ++lines;
  }
  CHECK(lines == 4);
}

TEST_CASE("anchors: k=3 emits a single-head set") {
  const std::string out = kTmp + "/anchors_k3.txt";
  CHECK(run("anchors --labels " + kFixtures + "/stats1000 --k 3 --out " + kTmp +
                "/k3.txt",
            out) == 0);
  CHECK(read_file(out).find("k-means (k=3)") != std::string::npos);
  std::istringstream af(read_file(kTmp + "/k3.txt"));
  std::string line;
  REQUIRE(std::getline(af, line));
  std::istringstream ls(line);
  double v;
  int vals = 0;
  while (ls >> v) ++vals;
  CHECK(vals == 6);
}

TEST_CASE("train is byte-reproducible and eval matches the committed golden") {
  const std::string train_cmd = "train" + kToyTrainArgs +
                                " --epochs 3 --batch 2 --lr 0.002 --patience 1000 --seed 1";
  CHECK(run(train_cmd + " --out " + kTmp + "/a.ckpt --curve " + kTmp + "/a_curve.txt") == 0);
  CHECK(run(train_cmd + " --out " + kTmp + "/b.ckpt --curve " + kTmp + "/b_curve.txt") == 0);
  CHECK(read_file(kTmp + "/a.ckpt") == read_file(kTmp + "/b.ckpt"));
  CHECK(read_file(kTmp + "/a_curve.txt") == read_file(kTmp + "/b_curve.txt"));

  // loss curve: 3 epochs, three columns
  std::istringstream curve(read_file(kTmp + "/a_curve.txt"));
  std::string line;
  int rows = 0;
  while (std::getline(curve, line)) {
    int epoch;
    double tr, va;
    CHECK(std::sscanf(line.c_str(), "%d %lf %lf", &epoch, &tr, &va) == 3);
    ++rows;
  }
  CHECK(rows == 3);

  CHECK(run("eval" + kToyTrainArgs + " --checkpoint " + kTmp + "/a.ckpt --out " + kTmp +
            "/eval_report.txt") == 0);
  CHECK(read_file(kTmp + "/eval_report.txt") == read_file(kGolden + "/toyset_eval_report.txt"));
}

TEST_CASE("eval with injected perfect detections reports mAP 1") {
  // build a perfect detections file from the toyset labels (32x32 images)
  std::ostringstream dets;
  for (const DatasetEntry& e :
       discover_dataset(kFixtures + "/toyset/images", kFixtures + "/toyset/labels")) {
    for (const GtBox& g : load_internal_labels(e.label_path)) {
      Detection d{Box{g.cx * 32, g.cy * 32, g.w * 32, g.h * 32}, 0.99, g.class_id};
      dets << format_detection(e.id, d) << "\n";
    }
  }
  {
    std::ofstream f(kTmp + "/perfect.txt");
    f << dets.str();
  }
  const std::string out = kTmp + "/perfect_eval.txt";
  CHECK(run("eval" + kToyTrainArgs + " --dets " + kTmp + "/perfect.txt", out) == 0);
  const std::string text = read_file(out);
  CHECK(text.find("mAP@0.5 1.000000  mAP@[.5:.95] 1.000000") != std::string::npos);
}

TEST_CASE("infer: threshold above 1 is empty, runs are identical, overlay pixels land") {
  const std::string ckpt = kTmp + "/infer.ckpt";
  CHECK(run("train" + kToyTrainArgs +
            " --epochs 2 --batch 2 --lr 0.002 --patience 1000 --seed 3 --out " + ckpt) == 0);
  const std::string image = kFixtures + "/toyset/images/toy_00.ppm";
  const std::string base_args = "infer" + kModelArgs + " --checkpoint " + ckpt +
                                " --image " + image;

  CHECK(run(base_args + " --conf 1.1", kTmp + "/none.txt") == 0);
  CHECK(read_file(kTmp + "/none.txt").empty());

  CHECK(run(base_args + " --conf 0.001", kTmp + "/d1.txt") == 0);
  CHECK(run(base_args + " --conf 0.001", kTmp + "/d2.txt") == 0);
  const std::string d1 = read_file(kTmp + "/d1.txt");
  CHECK(d1 == read_file(kTmp + "/d2.txt"));
  REQUIRE(!d1.empty());

  CHECK(run(base_args + " --conf 0.001 --overlay " + kTmp + "/overlay.ppm",
            kTmp + "/d3.txt") == 0);
  // the last printed detection is drawn last, so its outline wins overlaps
  std::istringstream lines(read_file(kTmp + "/d3.txt"));
  std::string line, last;
  while (std::getline(lines, line))
    if (!line.empty()) last = line;
  std::string id;
  Detection det;
  REQUIRE(parse_detection_line(last, id, det));

  Tensor overlay = load_ppm(kTmp + "/overlay.ppm");
  const double palette[10][3] = {
      {0.90, 0.10, 0.10}, {0.10, 0.75, 0.10}, {0.15, 0.35, 0.95}, {0.95, 0.80, 0.10},
      {0.80, 0.15, 0.80}, {0.10, 0.85, 0.85}, {0.95, 0.55, 0.10}, {0.55, 0.30, 0.10},
      {0.45, 0.95, 0.45}, {0.30, 0.30, 0.30}};
  const double* col = palette[det.class_id % 10];
  auto clampi = [](double v, int hi) {
    return std::clamp(static_cast<int>(std::lround(v)), 0, hi);
  };
  const int x1 = clampi(det.box.x1(), 31), x2 = clampi(det.box.x2(), 31);
  const int y1 = clampi(det.box.y1(), 31), y2 = clampi(det.box.y2(), 31);
  for (int c = 0; c < 3; ++c) {
    const double want = std::lround(col[c] * 255.0) / 255.0;
    CHECK(overlay.at(0, c, y1, x1) == doctest::Approx(want).epsilon(1e-12));
    CHECK(overlay.at(0, c, y2, x2) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("describe prints the schedule for the configured variant") {
  const std::string out = kTmp + "/describe.txt";
  CHECK(run("describe --input-size 64 --width 0.125 --classes 2", out) == 0);
  const std::string text = read_file(out);
  CHECK(text.find("neck.involution") != std::string::npos);
  CHECK(text.find("head.p2") != std::string::npos);
  CHECK(run("describe --input-size 64 --width 0.125 --classes 2 --heads 3 --involution 0",
            out) == 0);
  const std::string text3 = read_file(out);
  CHECK(text3.find("neck.involution") == std::string::npos);
  CHECK(text3.find("head.p2") == std::string::npos);
  CHECK(text3.find("head.p3") != std::string::npos);
}

TEST_CASE("params reports the comparison variant with its reference deviation") {
  const std::string out = kTmp + "/params.txt";
  CHECK(run("params --variant baseline-cbam --classes 10 --reference 8391641", out) == 0);
  const std::string text = read_file(out);
  CHECK(text.find("total 7080010") != std::string::npos);
  CHECK(text.find("reference total 8391641") != std::string::npos);
  CHECK(text.find("-15.63%") != std::string::npos);

  // toy closed-form: a head conv 3->8ch... covered in unit tests; here check the
  // config variant honours flags
  CHECK(run("params --input-size 64 --width 0.125 --classes 2", out) == 0);
  CHECK(read_file(out).find("total") != std::string::npos);
}

TEST_CASE("config file values lose to flags") {
  const std::string cfg = kTmp + "/cfg.txt";
  {
    std::ofstream f(cfg);
    f << "input_size = 64\nwidth_multiple = 0.125\nnum_classes = 5\n";
  }
  const std::string out = kTmp + "/cfgd.txt";
  CHECK(run("describe --config " + cfg, out) == 0);
  CHECK(read_file(out).find("classes 5") != std::string::npos);
  CHECK(run("describe --config " + cfg + " --classes 7", out) == 0);
  CHECK(read_file(out).find("classes 7") != std::string::npos);
}
