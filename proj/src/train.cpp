#include "hic/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace hic {

Adam::Adam(std::vector<Parameter> trainable, double lr, double beta1, double beta2, double eps)
    : params_(std::move(trainable)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter& p : params_) {
    m_.push_back(Tensor(p.tensor.shape()));
    v_.push_back(Tensor(p.tensor.shape()));
  }
}

void Adam::zero_grad() {
  for (Parameter& p : params_) {
    p.tensor.ensure_grad();
    p.tensor.zero_grad();
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    double* val = p.data();
    const double* g = p.grad();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const int64_t n = p.numel();
    for (int64_t j = 0; j < n; ++j) {
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      val[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

std::vector<Parameter> Adam::state_entries() const {
  std::vector<Parameter> out;
  for (size_t i = 0; i < params_.size(); ++i) {
    out.push_back(Parameter{"optim.m." + params_[i].name, m_[i], false});
    out.push_back(Parameter{"optim.v." + params_[i].name, v_[i], false});
  }
  Tensor meta(Shape{1, 1, 1, 1});
  meta.data()[0] = static_cast<double>(t_);
  out.push_back(Parameter{"optim.meta", meta, false});
  return out;
}

void Adam::load_state(const std::vector<Parameter>& entries) {
  std::map<std::string, const Tensor*> by_name;
  for (const Parameter& e : entries) by_name[e.name] = &e.tensor;
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto m_it = by_name.find("optim.m." + params_[i].name);
    const auto v_it = by_name.find("optim.v." + params_[i].name);
    check_data(m_it != by_name.end() && v_it != by_name.end(),
               "resume: checkpoint lacks optimizer state for " + params_[i].name);
    std::copy(m_it->second->values().begin(), m_it->second->values().end(), m_[i].data());
    std::copy(v_it->second->values().begin(), v_it->second->values().end(), v_[i].data());
  }
  const auto meta = by_name.find("optim.meta");
  check_data(meta != by_name.end(), "resume: checkpoint lacks optimizer metadata");
  t_ = static_cast<int64_t>(meta->second->data()[0]);
}

std::vector<HeadGeometry> head_geometry(const ModelGraph& g) {
  std::vector<HeadGeometry> out;
  for (size_t h = 0; h < g.strides().size(); ++h) {
    HeadGeometry geo;
    geo.stride = g.strides()[h];
    geo.grid = g.config().input_size / geo.stride;
    geo.anchors = g.head_anchors_grid(static_cast<int>(h));
    out.push_back(geo);
  }
  return out;
}

namespace {

LabeledImage prepare(const LabeledImage& img, const TrainConfig& cfg, bool augment,
                     uint64_t epoch_seed, size_t index, int input_size) {
  LabeledImage work = img;
  if (augment && cfg.center_crop) work = center_crop(work);
  if (augment && cfg.hsv)
    work = hsv_jitter(work, cfg.hsv_h, cfg.hsv_s, cfg.hsv_v, Rng::mix(epoch_seed, index));
  if (work.width() != input_size || work.height() != input_size)
    work = letterbox(work, input_size);
  return work;
}

struct BatchEval {
  double loss_sum = 0.0;  // total loss weighted by image count
  int64_t images = 0;
};

}  // namespace

TrainResult train(ModelGraph& graph, const std::vector<LabeledImage>& train_set,
                  const std::vector<LabeledImage>& val_set, const TrainConfig& cfg) {
  check_data(!train_set.empty(), "train: empty training set");
  check_data(cfg.batch_size >= 1 && cfg.epochs >= 1, "train: bad batch size or epoch count");
  const int input = graph.config().input_size;
  const int nc = graph.config().num_classes;
  const auto heads = head_geometry(graph);

  std::vector<Parameter> trainable;
  for (Parameter& p : graph.parameters())
    if (p.trainable) trainable.push_back(p);
  Adam adam(trainable, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);

  int start_epoch = 0;
  if (!cfg.resume_from.empty()) {
    auto entries = read_checkpoint_entries(cfg.resume_from, graph.config().hash());
    std::map<std::string, const Tensor*> by_name;
    for (const Parameter& e : entries) by_name[e.name] = &e.tensor;
    for (Parameter& p : graph.parameters()) {
      const auto it = by_name.find(p.name);
      check_data(it != by_name.end(), "resume: checkpoint missing " + p.name);
      std::copy(it->second->values().begin(), it->second->values().end(), p.tensor.data());
    }
    adam.load_state(entries);
    const auto meta = by_name.find("train.meta");
    check_data(meta != by_name.end(), "resume: checkpoint lacks train metadata");
    start_epoch = static_cast<int>(meta->second->data()[0]);
  }

  const std::vector<LabeledImage>& val = val_set.empty() ? train_set : val_set;

  auto run_batches = [&](const std::vector<LabeledImage>& set, bool training,
                         uint64_t epoch_seed, const std::vector<size_t>& order) {
    BatchEval ev;
    for (size_t ofs = 0; ofs < order.size(); ofs += static_cast<size_t>(cfg.batch_size)) {
      const size_t bn = std::min(static_cast<size_t>(cfg.batch_size), order.size() - ofs);
      Tensor batch(Shape{static_cast<int>(bn), 3, input, input});
      std::vector<std::vector<GtBox>> gts(bn);
      for (size_t b = 0; b < bn; ++b) {
        const size_t idx = order[ofs + b];
        LabeledImage img = prepare(set[idx], cfg, training, epoch_seed, idx, input);
        std::copy(img.pixels.values().begin(), img.pixels.values().end(),
                  batch.data() + static_cast<int64_t>(b) * 3 * input * input);
        gts[b] = img.labels;
      }
      auto targets = assign(gts, heads);
      if (training) {
        Tape tape;
        std::vector<Tensor> raw = graph.forward(batch, &tape, true);
        adam.zero_grad();
        LossResult l = loss(raw, heads, targets, cfg.weights, nc, true);
        if (!std::isfinite(l.total))
          throw NumericError("train: loss diverged (non-finite) at step " +
                             std::to_string(adam.steps()));
        tape.backward();
        adam.step();
        ev.loss_sum += l.total * static_cast<double>(bn);
      } else {
        std::vector<Tensor> raw = graph.forward(batch, nullptr, false);
        LossResult l = loss(raw, heads, targets, cfg.weights, nc, false);
        ev.loss_sum += l.total * static_cast<double>(bn);
      }
      ev.images += static_cast<int64_t>(bn);
    }
    return ev;
  };

  TrainResult res;
  std::ofstream curve;
  if (!cfg.curve_path.empty()) {
    curve.open(cfg.curve_path, start_epoch > 0 ? std::ios::app : std::ios::out);
    check_data(curve.good(), "cannot open curve file: " + cfg.curve_path);
  }

  int since_best = 0;
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const uint64_t epoch_seed = Rng::mix(cfg.seed, static_cast<uint64_t>(epoch));
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(epoch_seed);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(static_cast<int>(i)))]);

    const BatchEval tr = run_batches(train_set, true, epoch_seed, order);

    std::vector<size_t> val_order(val.size());
    for (size_t i = 0; i < val_order.size(); ++i) val_order[i] = i;
    const BatchEval va = run_batches(val, false, 0, val_order);

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = tr.loss_sum / static_cast<double>(tr.images);
    st.val_loss = va.loss_sum / static_cast<double>(va.images);
    res.curve.push_back(st);
    res.epochs_run = epoch + 1;
    if (curve.is_open()) {
      char line[128];
      std::snprintf(line, sizeof(line), "%d %.9f %.9f\n", epoch, st.train_loss, st.val_loss);
      curve << line;
      curve.flush();
    }
    if (cfg.verbose)
      std::printf("epoch %d train %.6f val %.6f\n", epoch, st.train_loss, st.val_loss);

    if (st.val_loss < res.best_val) {
      res.best_val = st.val_loss;
      res.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best > cfg.patience) {
        res.early_stopped = true;
      }
    }

    if (!cfg.out_checkpoint.empty()) {
      std::vector<Parameter> extras = adam.state_entries();
      Tensor meta(Shape{1, 1, 1, 1});
      meta.data()[0] = static_cast<double>(epoch + 1);  // completed epochs
      extras.push_back(Parameter{"train.meta", meta, false});
      graph.save_checkpoint(cfg.out_checkpoint, extras);
    }
    if (res.early_stopped) break;
  }
  return res;
}

}  // namespace hic
