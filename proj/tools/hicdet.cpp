#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hic/data.hpp"
#include "hic/metrics.hpp"
#include "hic/model.hpp"
#include "hic/train.hpp"

namespace fs = std::filesystem;
using namespace hic;

namespace {

struct ConfigFlags {
  std::string path;
  int num_classes = -1;
  int input_size = -1;
  int num_heads = -1;
  double width = -1.0, depth = -1.0;
  int cbam = -1, involution = -1;
  uint64_t seed = static_cast<uint64_t>(-1);

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "model config file (key = value)");
    cmd->add_option("--classes", num_classes, "number of classes");
    cmd->add_option("--input-size", input_size, "square input size (multiple of 32)");
    cmd->add_option("--heads", num_heads, "3 or 4 prediction heads");
    cmd->add_option("--width", width, "width multiple");
    cmd->add_option("--depth", depth, "depth multiple");
    cmd->add_option("--cbam", cbam, "1/0: attention block at the backbone end");
    cmd->add_option("--involution", involution, "1/0: involution bridge");
    cmd->add_option("--model-seed", seed, "parameter init seed");
  }

  // config file values lose to explicit flags
  ModelConfig resolve() const {
    ModelConfig cfg = path.empty() ? ModelConfig{} : ModelConfig::load(path);
    if (num_classes >= 0) cfg.num_classes = num_classes;
    if (input_size >= 0) cfg.input_size = input_size;
    if (num_heads >= 0) cfg.num_heads = num_heads;
    if (width > 0) cfg.width_multiple = width;
    if (depth > 0) cfg.depth_multiple = depth;
    if (cbam >= 0) cfg.use_cbam = cbam != 0;
    if (involution >= 0) cfg.use_involution = involution != 0;
    if (seed != static_cast<uint64_t>(-1)) cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

std::vector<std::string> sorted_files(const std::string& dir, const std::string& ext) {
  check_data(fs::is_directory(dir), "not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<LabeledImage> load_dataset(const std::string& images_dir,
                                       const std::string& labels_dir,
                                       const std::string& format) {
  std::vector<LabeledImage> out;
  for (const DatasetEntry& e : discover_dataset(images_dir, labels_dir)) {
    if (format == "visdrone") {
      check_data(!e.label_path.empty(), "missing annotation for image " + e.id);
      out.push_back(load_visdrone(e.image_path, e.label_path));
    } else {
      out.push_back(load_internal(e.image_path, e.label_path));
    }
  }
  check_data(!out.empty(), "no images found under " + images_dir);
  return out;
}

std::vector<std::vector<GtBox>> load_label_files(const std::string& labels_dir) {
  std::vector<std::vector<GtBox>> out;
  for (const std::string& f : sorted_files(labels_dir, ".txt"))
    out.push_back(load_internal_labels(f));
  check_data(!out.empty(), "no label files under " + labels_dir);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  check_data(f.good(), "cannot open for writing: " + path);
  f << text;
  check_data(f.good(), "write failed: " + path);
}

struct LetterboxMap {
  double scale;
  int pad_x, pad_y;
};

LetterboxMap letterbox_map(int w, int h, int size) {
  const double r = std::min(static_cast<double>(size) / w, static_cast<double>(size) / h);
  const int nw = std::max(1, static_cast<int>(std::lround(w * r)));
  const int nh = std::max(1, static_cast<int>(std::lround(h * r)));
  return {r, (size - nw) / 2, (size - nh) / 2};
}

Box unmap_box(const Box& b, const LetterboxMap& m) {
  return Box{(b.cx - m.pad_x) / m.scale, (b.cy - m.pad_y) / m.scale, b.w / m.scale,
             b.h / m.scale};
}

std::vector<Detection> run_model(ModelGraph& graph, const LabeledImage& img, double conf,
                                 double iou_thresh) {
  const int input = graph.config().input_size;
  LabeledImage work = img;
  const LetterboxMap map = letterbox_map(img.width(), img.height(), input);
  if (img.width() != input || img.height() != input) work = letterbox(img, input);
  auto raw = graph.forward(work.pixels, nullptr, false);
  std::vector<Detection> dets;
  for (size_t h = 0; h < raw.size(); ++h) {
    auto part = decode(raw[h], graph.head_anchors_grid(static_cast<int>(h)),
                       graph.strides()[h], conf);
    dets.insert(dets.end(), part.begin(), part.end());
  }
  dets = nms(dets, iou_thresh, true);
  for (Detection& d : dets) d.box = unmap_box(d.box, map);
  return dets;
}

const double kPalette[10][3] = {
    {0.90, 0.10, 0.10}, {0.10, 0.75, 0.10}, {0.15, 0.35, 0.95}, {0.95, 0.80, 0.10},
    {0.80, 0.15, 0.80}, {0.10, 0.85, 0.85}, {0.95, 0.55, 0.10}, {0.55, 0.30, 0.10},
    {0.45, 0.95, 0.45}, {0.30, 0.30, 0.30}};

void draw_box(Tensor& pixels, const Box& b, int class_id) {
  const Shape s = pixels.shape();
  const double* col = kPalette[class_id % 10];
  const int x1 = std::clamp(static_cast<int>(std::lround(b.x1())), 0, s.w - 1);
  const int x2 = std::clamp(static_cast<int>(std::lround(b.x2())), 0, s.w - 1);
  const int y1 = std::clamp(static_cast<int>(std::lround(b.y1())), 0, s.h - 1);
  const int y2 = std::clamp(static_cast<int>(std::lround(b.y2())), 0, s.h - 1);
  for (int x = x1; x <= x2; ++x)
    for (int y : {y1, y2})
      for (int c = 0; c < 3; ++c) pixels.at(0, c, y, x) = col[c];
  for (int y = y1; y <= y2; ++y)
    for (int x : {x1, x2})
      for (int c = 0; c < 3; ++c) pixels.at(0, c, y, x) = col[c];
}

// ---- subcommand bodies ----

int cmd_stats(const std::string& labels_dir, const std::string& images_dir,
              const std::string& format, int classes, const std::string& out,
              const std::string& hist_out) {
  std::vector<std::vector<GtBox>> labels;
  if (format == "visdrone") {
    check_data(!images_dir.empty(), "visdrone stats need --images for pixel geometry");
    for (const LabeledImage& img : load_dataset(images_dir, labels_dir, "visdrone"))
      labels.push_back(img.labels);
  } else {
    labels = load_label_files(labels_dir);
  }
  DatasetStats st = compute_stats(labels, classes);
  const std::string text = "images: " + std::to_string(labels.size()) + "\n" + st.report();
  std::cout << text;
  if (!out.empty()) write_text(out, text);
  if (!hist_out.empty()) {
    std::ostringstream os;
    for (const auto& row : st.center_hist) {
      for (size_t x = 0; x < row.size(); ++x) os << (x ? " " : "") << row[x];
      os << "\n";
    }
    write_text(hist_out, os.str());
  }
  return 0;
}

int cmd_anchors(const std::string& labels_dir, double img_size, int k, uint64_t seed,
                const std::string& out, double gate, bool force) {
  std::vector<AnchorPair> pixels;
  for (const auto& image_labels : load_label_files(labels_dir))
    for (const GtBox& g : image_labels)
      pixels.push_back(AnchorPair{g.w * img_size, g.h * img_size});
  check_data(!pixels.empty(), "no labels found under " + labels_dir);

  std::ostringstream body;
  char line[256];
  if (k == 12 && !force) {
    AnchorCheck chk = check_or_regenerate(pixels, AnchorSet::defaults(), gate, 4.0, seed);
    std::cout << chk.report;
    for (const auto& group : chk.anchors.groups) {
      std::snprintf(line, sizeof(line), "%.4f %.4f %.4f %.4f %.4f %.4f\n", group[0].w,
                    group[0].h, group[1].w, group[1].h, group[2].w, group[2].h);
      body << line;
    }
  } else {
    KmeansResult km = kmeans_anchors(pixels, k, seed);
    const double bpr = best_possible_recall(pixels, km.centers);
    std::snprintf(line, sizeof(line), "k-means (k=%d): BPR %.4f, %d iterations\n", k, bpr,
                  km.iterations);
    std::cout << line;
    for (size_t i = 0; i < km.centers.size(); ++i) {
      std::snprintf(line, sizeof(line), "%.4f %.4f%s", km.centers[i].w, km.centers[i].h,
                    (i % 3 == 2 || i + 1 == km.centers.size()) ? "\n" : " ");
      body << line;
    }
  }
  std::cout << body.str();
  if (!out.empty()) write_text(out, body.str());
  return 0;
}

int cmd_train(const ModelConfig& mcfg, const TrainConfig& tcfg, const std::string& images,
              const std::string& labels, const std::string& val_images,
              const std::string& val_labels, const std::string& format) {
  auto train_set = load_dataset(images, labels, format);
  std::vector<LabeledImage> val_set;
  if (!val_images.empty()) val_set = load_dataset(val_images, val_labels, format);

  ModelGraph graph = ModelGraph::build(mcfg);
  TrainResult r = train(graph, train_set, val_set, tcfg);
  std::printf("trained %d epochs; best val %.6f at epoch %d%s\n", r.epochs_run, r.best_val,
              r.best_epoch, r.early_stopped ? " (early stop)" : "");
  if (!tcfg.out_checkpoint.empty()) std::printf("checkpoint: %s\n", tcfg.out_checkpoint.c_str());
  return 0;
}

int cmd_eval(const ModelConfig& mcfg, const std::string& ckpt, const std::string& images,
             const std::string& labels, const std::string& format,
             const std::string& dets_file, double conf, double iou_thresh,
             const std::string& out, const std::string& machine_out) {
  auto entries = discover_dataset(images, labels);
  check_data(!entries.empty(), "no images found under " + images);

  std::vector<GtRecord> gts;
  std::vector<std::string> ids;
  std::vector<LabeledImage> dataset;
  for (const DatasetEntry& e : entries) {
    LabeledImage img = format == "visdrone" ? load_visdrone(e.image_path, e.label_path)
                                            : load_internal(e.image_path, e.label_path);
    ids.push_back(img.id);
    for (const GtBox& g : img.labels)
      gts.push_back(GtRecord{img.id, g.class_id,
                             Box{g.cx * img.width(), g.cy * img.height(), g.w * img.width(),
                                 g.h * img.height()}});
    dataset.push_back(std::move(img));
  }

  std::vector<DetRecord> dets;
  if (!dets_file.empty()) {
    std::ifstream f(dets_file);
    check_data(f.good(), "cannot open detections: " + dets_file);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      DetRecord d;
      check_data(parse_detection_line(line, d.image_id, d.det),
                 dets_file + ":" + std::to_string(lineno) + ": malformed detection line");
      dets.push_back(std::move(d));
    }
  } else {
    check_data(!ckpt.empty(), "eval needs --checkpoint or --dets");
    ModelGraph graph = ModelGraph::load_checkpoint(ckpt, mcfg);
    for (const LabeledImage& img : dataset)
      for (const Detection& d : run_model(graph, img, conf, iou_thresh))
        dets.push_back(DetRecord{img.id, d});
  }

  EvalReport rep = evaluate(dets, gts, mcfg.num_classes, ids);
  std::cout << rep.text();
  if (!out.empty()) write_text(out, rep.text());
  if (!machine_out.empty()) write_text(machine_out, rep.machine());
  return 0;
}

int cmd_infer(const ModelConfig& mcfg, const std::string& ckpt, const std::string& image,
              double conf, double iou_thresh, const std::string& overlay) {
  ModelGraph graph = ModelGraph::load_checkpoint(ckpt, mcfg);
  LabeledImage img;
  img.pixels = load_image(image);
  img.id = fs::path(image).stem().string();
  auto dets = run_model(graph, img, conf, iou_thresh);
  for (const Detection& d : dets) std::cout << format_detection(img.id, d) << "\n";
  if (!overlay.empty()) {
    Tensor canvas = img.pixels.clone();
    for (const Detection& d : dets) draw_box(canvas, d.box, d.class_id);
    save_ppm(canvas, overlay);
  }
  return 0;
}

int cmd_gradcheck(double tol, uint64_t seed) {
  struct Item {
    std::string name;
    std::function<Tensor(const Tensor&, Tape*)> fn;
    Shape shape;
  };
  Rng rng(seed);
  Tensor w = Tensor::uniform(Shape{4, 3, 3, 3}, rng, -0.5, 0.5);
  Tensor none;
  auto conv_block = std::make_shared<ConvBlock>(3, 6, 3, 1, rng);
  auto c3 = std::make_shared<C3Block>(4, 4, 1, true, rng);
  auto sppf = std::make_shared<SPPFBlock>(4, 4, 5, rng);
  auto inv = std::make_shared<InvolutionBlock>(4, 3, 2, 2, rng);
  auto cbam = std::make_shared<CBAMBlock>(4, 2, rng);
  auto block_fn = [](std::shared_ptr<Block> b) {
    return [b](const Tensor& x, Tape* tp) {
      const Tensor in[] = {x};
      return b->forward(in, tp, false);
    };
  };
  std::vector<Item> items = {
      {"conv2d", [&](const Tensor& x, Tape* tp) { return ops::conv2d(x, w, none, 1, 1, tp); },
       Shape{2, 3, 6, 6}},
      {"silu", [](const Tensor& x, Tape* tp) { return ops::silu(x, tp); }, Shape{2, 3, 6, 6}},
      {"sigmoid", [](const Tensor& x, Tape* tp) { return ops::sigmoid(x, tp); },
       Shape{2, 3, 6, 6}},
      {"maxpool", [](const Tensor& x, Tape* tp) { return ops::maxpool2d(x, 2, 2, 0, tp); },
       Shape{2, 3, 6, 6}},
      {"upsample", [](const Tensor& x, Tape* tp) { return ops::upsample_nearest2x(x, tp); },
       Shape{2, 3, 6, 6}},
      {"conv_block", block_fn(conv_block), Shape{2, 3, 6, 6}},
      {"c3", block_fn(c3), Shape{2, 4, 6, 6}},
      {"sppf", block_fn(sppf), Shape{2, 4, 6, 6}},
      {"involution", block_fn(inv), Shape{2, 4, 6, 6}},
      {"cbam", block_fn(cbam), Shape{2, 4, 6, 6}},
  };
  bool ok = true;
  for (const Item& item : items) {
    Tensor x = Tensor::uniform(item.shape, rng, -1, 1);
    GradCheckReport rep = grad_check(item.fn, x, tol);
    std::printf("%-12s max rel err %.3e  %s\n", item.name.c_str(), rep.max_rel_err,
                rep.pass ? "ok" : "FAIL");
    ok = ok && rep.pass;
  }
  if (!ok) throw NumericError("gradient check failed");
  return 0;
}

int cmd_params(const ModelConfig& mcfg, const std::string& variant, int64_t reference,
               const std::string& out) {
  ModelConfig cfg = mcfg;
  if (variant == "baseline-cbam") {
    cfg.num_heads = 3;
    cfg.use_involution = false;
    cfg.use_cbam = true;
  }
  ModelGraph g = ModelGraph::build(cfg);
  ParamCountReport rep = g.count_parameters();
  std::string text = rep.table();
  if (reference > 0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "reference total %lld  deviation %+.2f%%\n",
                  static_cast<long long>(reference),
                  100.0 * (static_cast<double>(rep.total) - static_cast<double>(reference)) /
                      static_cast<double>(reference));
    text += buf;
  }
  std::cout << text;
  if (!out.empty()) write_text(out, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hicdet: a small-object detection engine"};
  app.require_subcommand(1);

  std::function<int()> run;

  // stats
  auto* stats = app.add_subcommand("stats", "dataset label statistics");
  static std::string st_labels, st_images, st_format = "internal", st_out, st_hist;
  static int st_classes = 10;
  stats->add_option("--labels", st_labels, "label directory")->required();
  stats->add_option("--images", st_images, "image directory (visdrone format)");
  stats->add_option("--format", st_format, "internal|visdrone")
      ->check(CLI::IsMember({"internal", "visdrone"}));
  stats->add_option("--classes", st_classes, "number of classes");
  stats->add_option("--out", st_out, "write the text report here");
  stats->add_option("--hist-out", st_hist, "write the 32x32 center histogram here");
  stats->callback([&]() {
    run = [&]() { return cmd_stats(st_labels, st_images, st_format, st_classes, st_out, st_hist); };
  });

  // anchors
  auto* anchors = app.add_subcommand("anchors", "anchor generation and the recall gate");
  static std::string an_labels, an_out;
  static double an_img_size = 640.0, an_gate = 0.98;
  static int an_k = 12;
  static uint64_t an_seed = 0;
  static bool an_force = false;
  anchors->add_option("--labels", an_labels, "label directory (internal format)")->required();
  anchors->add_option("--img-size", an_img_size, "pixel scale for normalized labels");
  anchors->add_option("--k", an_k, "number of clusters");
  anchors->add_option("--seed", an_seed, "k-means seed");
  anchors->add_option("--gate", an_gate, "best-possible-recall gate");
  anchors->add_option("--out", an_out, "write anchors here");
  anchors->add_flag("--force", an_force, "always re-cluster, skip the gate");
  anchors->callback([&]() {
    run = [&]() {
      return cmd_anchors(an_labels, an_img_size, an_k, an_seed, an_out, an_gate, an_force);
    };
  });

  // train
  auto* tr = app.add_subcommand("train", "toy training with Adam and early stopping");
  static ConfigFlags tr_cfg;
  tr_cfg.attach(tr);
  static std::string tr_images, tr_labels, tr_vimages, tr_vlabels, tr_format = "internal";
  static std::string tr_out = "hicdet.ckpt", tr_curve, tr_resume;
  static TrainConfig tr_tc;
  tr->add_option("--images", tr_images, "training images")->required();
  tr->add_option("--labels", tr_labels, "training labels")->required();
  tr->add_option("--val-images", tr_vimages, "validation images");
  tr->add_option("--val-labels", tr_vlabels, "validation labels");
  tr->add_option("--format", tr_format, "internal|visdrone")
      ->check(CLI::IsMember({"internal", "visdrone"}));
  tr->add_option("--epochs", tr_tc.epochs, "epoch limit");
  tr->add_option("--batch", tr_tc.batch_size, "batch size");
  tr->add_option("--lr", tr_tc.lr, "Adam learning rate");
  tr->add_option("--patience", tr_tc.patience, "early-stop patience");
  tr->add_option("--seed", tr_tc.seed, "training seed");
  tr->add_option("--w-obj", tr_tc.weights.obj, "objectness weight");
  tr->add_option("--w-box", tr_tc.weights.box, "box weight");
  tr->add_option("--w-cls", tr_tc.weights.cls, "class weight");
  tr->add_flag("--center-crop", tr_tc.center_crop, "enable center-crop augmentation");
  tr->add_flag("--hsv", tr_tc.hsv, "enable hsv jitter");
  tr->add_option("--hsv-h", tr_tc.hsv_h, "hue gain");
  tr->add_option("--hsv-s", tr_tc.hsv_s, "saturation gain");
  tr->add_option("--hsv-v", tr_tc.hsv_v, "value gain");
  tr->add_option("--out", tr_out, "checkpoint path");
  tr->add_option("--curve", tr_curve, "loss curve file");
  tr->add_option("--resume", tr_resume, "resume from a checkpoint");
  tr->add_flag("--verbose", tr_tc.verbose, "per-epoch log lines");
  tr->callback([&]() {
    run = [&]() {
      ModelConfig mcfg = tr_cfg.resolve();
      TrainConfig tc = tr_tc;
      tc.out_checkpoint = tr_out;
      tc.curve_path = tr_curve;
      tc.resume_from = tr_resume;
      return cmd_train(mcfg, tc, tr_images, tr_labels, tr_vimages, tr_vlabels, tr_format);
    };
  });

  // eval
  auto* ev = app.add_subcommand("eval", "detection metrics over a dataset");
  static ConfigFlags ev_cfg;
  ev_cfg.attach(ev);
  static std::string ev_ckpt, ev_images, ev_labels, ev_format = "internal";
  static std::string ev_dets, ev_out, ev_machine;
  static double ev_conf = 0.001, ev_iou = 0.45;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint");
  ev->add_option("--images", ev_images, "image directory")->required();
  ev->add_option("--labels", ev_labels, "label directory")->required();
  ev->add_option("--format", ev_format, "internal|visdrone")
      ->check(CLI::IsMember({"internal", "visdrone"}));
  ev->add_option("--dets", ev_dets, "evaluate these detection lines instead of a model");
  ev->add_option("--conf", ev_conf, "confidence threshold");
  ev->add_option("--iou", ev_iou, "NMS IoU threshold");
  ev->add_option("--out", ev_out, "text report path");
  ev->add_option("--machine-out", ev_machine, "machine-readable report path");
  ev->callback([&]() {
    run = [&]() {
      return cmd_eval(ev_cfg.resolve(), ev_ckpt, ev_images, ev_labels, ev_format, ev_dets,
                      ev_conf, ev_iou, ev_out, ev_machine);
    };
  });

  // infer
  auto* in = app.add_subcommand("infer", "single-image inference");
  static ConfigFlags in_cfg;
  in_cfg.attach(in);
  static std::string in_ckpt, in_image, in_overlay;
  static double in_conf = 0.25, in_iou = 0.45;
  in->add_option("--checkpoint", in_ckpt, "model checkpoint")->required();
  in->add_option("--image", in_image, "input image (.ppm or .hict)")->required();
  in->add_option("--conf", in_conf, "confidence threshold");
  in->add_option("--iou", in_iou, "NMS IoU threshold");
  in->add_option("--overlay", in_overlay, "write an annotated ppm here");
  in->callback([&]() {
    run = [&]() {
      return cmd_infer(in_cfg.resolve(), in_ckpt, in_image, in_conf, in_iou, in_overlay);
    };
  });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks over all blocks");
  static double gc_tol = 1e-4;
  static uint64_t gc_seed = 0;
  gc->add_option("--tol", gc_tol, "max relative error");
  gc->add_option("--seed", gc_seed, "input seed");
  gc->callback([&]() {
    run = [&]() { return cmd_gradcheck(gc_tol, gc_seed); };
  });

  // params
  auto* pa = app.add_subcommand("params", "per-layer parameter counts");
  static ConfigFlags pa_cfg;
  pa_cfg.attach(pa);
  static std::string pa_variant = "config", pa_out;
  static int64_t pa_reference = 0;
  pa->add_option("--variant", pa_variant, "config|baseline-cbam")
      ->check(CLI::IsMember({"config", "baseline-cbam"}));
  pa->add_option("--reference", pa_reference, "print deviation against this total");
  pa->add_option("--out", pa_out, "write the table here");
  pa->callback([&]() {
    run = [&]() { return cmd_params(pa_cfg.resolve(), pa_variant, pa_reference, pa_out); };
  });

  // describe
  auto* de = app.add_subcommand("describe", "print the layer schedule");
  static ConfigFlags de_cfg;
  de_cfg.attach(de);
  de->callback([&]() {
    run = [&]() {
      ModelGraph g = ModelGraph::build(de_cfg.resolve());
      g.describe(std::cout);
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
    return run ? run() : 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  }
}
