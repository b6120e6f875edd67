#include "hic/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace hic {

void ModelConfig::validate() const {
  check_data(input_size % 32 == 0 && input_size > 0,
             "input_size must be a positive multiple of 32, got " + std::to_string(input_size));
  check_data(num_classes >= 1, "num_classes must be >= 1");
  check_data(depth_multiple > 0.0 && width_multiple > 0.0,
             "depth/width multiples must be positive");
  check_data(num_heads == 3 || num_heads == 4, "num_heads must be 3 or 4");
  check_data(involution.k >= 1 && involution.k % 2 == 1, "involution k must be odd");
  check_data(involution.g >= 1 && involution.r >= 1, "involution g/r must be >= 1");
  check_data(cbam.rc >= 1, "cbam rc must be >= 1");
  anchors.validate();
}

namespace {

const char* kAnchorKeys[4] = {"anchors_tiny", "anchors_small", "anchors_medium",
                              "anchors_large"};

}  // namespace

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "depth_multiple = %.17g\nwidth_multiple = %.17g\nnum_classes = %d\n"
                "input_size = %d\nnum_heads = %d\nuse_cbam = %d\nuse_involution = %d\n"
                "involution_k = %d\ninvolution_g = %d\ninvolution_r = %d\ncbam_rc = %d\n"
                "seed = %llu\n",
                depth_multiple, width_multiple, num_classes, input_size, num_heads,
                use_cbam ? 1 : 0, use_involution ? 1 : 0, involution.k, involution.g,
                involution.r, cbam.rc, static_cast<unsigned long long>(seed));
  os << buf;
  for (int g = 0; g < 4; ++g) {
    os << kAnchorKeys[g] << " =";
    for (const AnchorPair& p : anchors.groups[static_cast<size_t>(g)]) {
      std::snprintf(buf, sizeof(buf), " %.17g %.17g", p.w, p.h);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

void ModelConfig::save(const std::string& path) const {
  std::ofstream f(path);
  check_data(f.good(), "cannot open for writing: " + path);
  f << canonical();
  check_data(f.good(), "write failed: " + path);
}

ModelConfig ModelConfig::load(const std::string& path) {
  std::ifstream f(path);
  check_data(f.good(), "cannot open config: " + path);
  ModelConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const size_t eq = line.find('=');
    check_data(eq != std::string::npos,
               path + ":" + std::to_string(lineno) + ": expected `key = value`");
    auto trim = [](std::string s) {
      const size_t a = s.find_first_not_of(" \t\r");
      const size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "depth_multiple") cfg.depth_multiple = std::stod(val);
      else if (key == "width_multiple") cfg.width_multiple = std::stod(val);
      else if (key == "num_classes") cfg.num_classes = std::stoi(val);
      else if (key == "input_size") cfg.input_size = std::stoi(val);
      else if (key == "num_heads") cfg.num_heads = std::stoi(val);
      else if (key == "use_cbam") cfg.use_cbam = std::stoi(val) != 0;
      else if (key == "use_involution") cfg.use_involution = std::stoi(val) != 0;
      else if (key == "involution_k") cfg.involution.k = std::stoi(val);
      else if (key == "involution_g") cfg.involution.g = std::stoi(val);
      else if (key == "involution_r") cfg.involution.r = std::stoi(val);
      else if (key == "cbam_rc") cfg.cbam.rc = std::stoi(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else {
        bool matched = false;
        for (int g = 0; g < 4; ++g) {
          if (key != kAnchorKeys[g]) continue;
          std::istringstream vs(val);
          for (AnchorPair& p : cfg.anchors.groups[static_cast<size_t>(g)])
            check_data(static_cast<bool>(vs >> p.w >> p.h),
                       path + ":" + std::to_string(lineno) + ": need 6 floats for " + key);
          matched = true;
          break;
        }
        check_data(matched, path + ":" + std::to_string(lineno) + ": unknown key `" + key + "`");
      }
    } catch (const std::invalid_argument&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad value for `" + key + "`");
    }
  }
  cfg.validate();
  return cfg;
}

namespace {

int scale_ch(int c, double wm) {
  return static_cast<int>(std::ceil(c * wm / 8.0)) * 8;
}

int scale_depth(int n, double dm) {
  return std::max(1, static_cast<int>(std::lround(n * dm)));
}

}  // namespace

ModelGraph ModelGraph::build(const ModelConfig& cfg) {
  cfg.validate();
  ModelGraph g;
  g.cfg_ = cfg;
  Rng rng(cfg.seed);

  const double wm = cfg.width_multiple, dm = cfg.depth_multiple;
  auto ch = [&](int c) { return scale_ch(c, wm); };
  auto dn = [&](int n) { return scale_depth(n, dm); };

  auto add = [&](const std::string& name, std::vector<int> from,
                 std::unique_ptr<Block> block) {
    g.layers_.push_back(Layer{name, std::move(from), std::move(block)});
    return static_cast<int>(g.layers_.size()) - 1;
  };
  auto out_ch = [&](int idx) { return g.layers_[static_cast<size_t>(idx)].block->out_ch; };

  // backbone
  const int b0 = add("backbone.p1_conv", {-1}, std::make_unique<ConvBlock>(3, ch(64), 6, 2, rng, 2));
  const int b1 = add("backbone.p2_conv", {b0}, std::make_unique<ConvBlock>(ch(64), ch(128), 3, 2, rng));
  const int b2 = add("backbone.p2_c3", {b1},
                     std::make_unique<C3Block>(ch(128), ch(128), dn(3), true, rng));
  const int b3 = add("backbone.p3_conv", {b2}, std::make_unique<ConvBlock>(ch(128), ch(256), 3, 2, rng));
  const int b4 = add("backbone.p3_c3", {b3},
                     std::make_unique<C3Block>(ch(256), ch(256), dn(6), true, rng));
  const int b5 = add("backbone.p4_conv", {b4}, std::make_unique<ConvBlock>(ch(256), ch(512), 3, 2, rng));
  const int b6 = add("backbone.p4_c3", {b5},
                     std::make_unique<C3Block>(ch(512), ch(512), dn(9), true, rng));
  const int b7 = add("backbone.p5_conv", {b6}, std::make_unique<ConvBlock>(ch(512), ch(1024), 3, 2, rng));
  const int b8 = add("backbone.p5_c3", {b7},
                     std::make_unique<C3Block>(ch(1024), ch(1024), dn(3), true, rng));
  int top = add("backbone.sppf", {b8}, std::make_unique<SPPFBlock>(ch(1024), ch(1024), 5, rng));
  if (cfg.use_cbam)
    top = add("backbone.cbam", {top}, std::make_unique<CBAMBlock>(ch(1024), cfg.cbam.rc, rng));

  // neck: involution bridge, top-down fusion, bottom-up aggregation
  if (cfg.use_involution)
    top = add("neck.involution", {top},
              std::make_unique<InvolutionBlock>(ch(1024), cfg.involution.k, cfg.involution.g,
                                                cfg.involution.r, rng));
  const int p5_lat = add("neck.p5_lateral", {top},
                         std::make_unique<ConvBlock>(ch(1024), ch(512), 1, 1, rng));
  int up = add("neck.p5_up", {p5_lat}, std::make_unique<UpsampleBlock>(ch(512)));
  int cat = add("neck.p4_cat", {up, b6},
                std::make_unique<ConcatBlock>(out_ch(up) + out_ch(b6)));
  const int p4_td = add("neck.p4_td_c3", {cat},
                        std::make_unique<C3Block>(out_ch(cat), ch(512), dn(3), false, rng));
  const int p4_lat = add("neck.p4_lateral", {p4_td},
                         std::make_unique<ConvBlock>(ch(512), ch(256), 1, 1, rng));
  up = add("neck.p4_up", {p4_lat}, std::make_unique<UpsampleBlock>(ch(256)));
  cat = add("neck.p3_cat", {up, b4}, std::make_unique<ConcatBlock>(out_ch(up) + out_ch(b4)));
  const int p3_td = add("neck.p3_td_c3", {cat},
                        std::make_unique<C3Block>(out_ch(cat), ch(256), dn(3), false, rng));

  std::vector<int> pyramid;  // layers feeding heads, stride-ascending
  if (cfg.num_heads == 4) {
    const int p3_lat = add("neck.p3_lateral", {p3_td},
                           std::make_unique<ConvBlock>(ch(256), ch(128), 1, 1, rng));
    up = add("neck.p3_up", {p3_lat}, std::make_unique<UpsampleBlock>(ch(128)));
    cat = add("neck.p2_cat", {up, b2}, std::make_unique<ConcatBlock>(out_ch(up) + out_ch(b2)));
    const int p2_out = add("neck.p2_c3", {cat},
                           std::make_unique<C3Block>(out_ch(cat), ch(128), dn(3), false, rng));
    const int d0 = add("neck.p2_down", {p2_out},
                       std::make_unique<ConvBlock>(ch(128), ch(128), 3, 2, rng));
    cat = add("neck.p3_bu_cat", {d0, p3_lat},
              std::make_unique<ConcatBlock>(out_ch(d0) + out_ch(p3_lat)));
    const int p3_out = add("neck.p3_bu_c3", {cat},
                           std::make_unique<C3Block>(out_ch(cat), ch(256), dn(3), false, rng));
    const int d1 = add("neck.p3_down", {p3_out},
                       std::make_unique<ConvBlock>(ch(256), ch(256), 3, 2, rng));
    cat = add("neck.p4_bu_cat", {d1, p4_lat},
              std::make_unique<ConcatBlock>(out_ch(d1) + out_ch(p4_lat)));
    const int p4_out = add("neck.p4_bu_c3", {cat},
                           std::make_unique<C3Block>(out_ch(cat), ch(512), dn(3), false, rng));
    const int d2 = add("neck.p4_down", {p4_out},
                       std::make_unique<ConvBlock>(ch(512), ch(512), 3, 2, rng));
    cat = add("neck.p5_bu_cat", {d2, p5_lat},
              std::make_unique<ConcatBlock>(out_ch(d2) + out_ch(p5_lat)));
    const int p5_out = add("neck.p5_bu_c3", {cat},
                           std::make_unique<C3Block>(out_ch(cat), ch(1024), dn(3), false, rng));
    pyramid = {p2_out, p3_out, p4_out, p5_out};
    g.strides_ = {4, 8, 16, 32};
  } else {
    const int d1 = add("neck.p3_down", {p3_td},
                       std::make_unique<ConvBlock>(ch(256), ch(256), 3, 2, rng));
    cat = add("neck.p4_bu_cat", {d1, p4_lat},
              std::make_unique<ConcatBlock>(out_ch(d1) + out_ch(p4_lat)));
    const int p4_out = add("neck.p4_bu_c3", {cat},
                           std::make_unique<C3Block>(out_ch(cat), ch(512), dn(3), false, rng));
    const int d2 = add("neck.p4_down", {p4_out},
                       std::make_unique<ConvBlock>(ch(512), ch(512), 3, 2, rng));
    cat = add("neck.p5_bu_cat", {d2, p5_lat},
              std::make_unique<ConcatBlock>(out_ch(d2) + out_ch(p5_lat)));
    const int p5_out = add("neck.p5_bu_c3", {cat},
                           std::make_unique<C3Block>(out_ch(cat), ch(1024), dn(3), false, rng));
    pyramid = {p3_td, p4_out, p5_out};
    g.strides_ = {8, 16, 32};
  }

  const int per_anchor = 5 + cfg.num_classes;
  static const char* head_names[4] = {"head.p2", "head.p3", "head.p4", "head.p5"};
  const int name_off = cfg.num_heads == 4 ? 0 : 1;
  for (size_t h = 0; h < pyramid.size(); ++h) {
    auto head = std::make_unique<HeadConv>(out_ch(pyramid[h]), 3 * per_anchor, rng);
    // prior-probability bias init keeps early objectness sparse
    const int stride = g.strides_[h];
    const double cells = std::pow(static_cast<double>(cfg.input_size) / stride, 2.0);
    for (int a = 0; a < 3; ++a) {
      head->cv.bias.data()[a * per_anchor + 4] = std::log(8.0 / cells);
      if (cfg.num_classes > 1)
        for (int c = 0; c < cfg.num_classes; ++c)
          head->cv.bias.data()[a * per_anchor + 5 + c] =
              std::log(0.6 / (cfg.num_classes - 0.99));
    }
    g.head_layers_.push_back(
        add(head_names[h + name_off], {pyramid[h]}, std::move(head)));
  }
  return g;
}

std::vector<Tensor> ModelGraph::forward(const Tensor& images, Tape* tape, bool train) {
  const Shape s = images.shape();
  check_shape(s.c == 3, "forward: expected 3 input channels, got " + std::to_string(s.c));
  check_shape(s.h == cfg_.input_size && s.w == cfg_.input_size,
              "forward: expected " + std::to_string(cfg_.input_size) + "x" +
                  std::to_string(cfg_.input_size) + " input, got " + s.str());
  std::vector<Tensor> cache(layers_.size());
  std::vector<Tensor> inputs;
  for (size_t i = 0; i < layers_.size(); ++i) {
    inputs.clear();
    for (int f : layers_[i].from) inputs.push_back(f < 0 ? images : cache[static_cast<size_t>(f)]);
    cache[i] = layers_[i].block->forward(inputs, tape, train);
  }
  std::vector<Tensor> heads;
  heads.reserve(head_layers_.size());
  for (int h : head_layers_) heads.push_back(cache[static_cast<size_t>(h)]);
  return heads;
}

std::array<AnchorPair, 3> ModelGraph::head_anchors_grid(int head) const {
  // pixel priors over this head's stride
  const size_t group = cfg_.num_heads == 4 ? static_cast<size_t>(head)
                                           : static_cast<size_t>(head) + 1;
  const double stride = strides_[static_cast<size_t>(head)];
  std::array<AnchorPair, 3> out;
  for (size_t a = 0; a < 3; ++a) {
    out[a].w = cfg_.anchors.groups[group][a].w / stride;
    out[a].h = cfg_.anchors.groups[group][a].h / stride;
  }
  return out;
}

std::vector<Parameter> ModelGraph::parameters() {
  std::vector<Parameter> out;
  for (Layer& l : layers_)
    l.block->visit_params(l.name, [&](const std::string& name, Tensor& t, bool trainable) {
      out.push_back(Parameter{name, t, trainable});
    });
  return out;
}

ParamCountReport ModelGraph::count_parameters() const {
  ParamCountReport rep;
  for (size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    LayerCount lc;
    lc.index = static_cast<int>(i);
    lc.name = l.name;
    lc.type = l.block->type_name();
    lc.args = l.block->args_str();
    lc.out_ch = l.block->out_ch;
    lc.params = count_trainable(*l.block);
    if (l.name.rfind("backbone.", 0) == 0) rep.backbone += lc.params;
    else if (l.name.rfind("neck.", 0) == 0) rep.neck += lc.params;
    else rep.heads += lc.params;
    rep.total += lc.params;
    rep.layers.push_back(std::move(lc));
  }
  return rep;
}

std::string ParamCountReport::table() const {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-4s %-22s %-12s %-20s %8s %12s\n", "idx", "layer", "type",
                "args", "out_ch", "params");
  os << buf;
  for (const LayerCount& lc : layers) {
    std::snprintf(buf, sizeof(buf), "%-4d %-22s %-12s %-20s %8d %12lld\n", lc.index,
                  lc.name.c_str(), lc.type.c_str(), lc.args.c_str(), lc.out_ch,
                  static_cast<long long>(lc.params));
    os << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "backbone %lld  neck %lld  heads %lld  total %lld\n",
                static_cast<long long>(backbone), static_cast<long long>(neck),
                static_cast<long long>(heads), static_cast<long long>(total));
  os << buf;
  return os.str();
}

void ModelGraph::describe(std::ostream& os) const {
  os << "model: " << (cfg_.num_heads == 4 ? "hic-4head" : "stock-3head")
     << (cfg_.use_cbam ? " +cbam" : "") << (cfg_.use_involution ? " +involution" : "") << "\n";
  os << "input " << cfg_.input_size << "  classes " << cfg_.num_classes << "  strides";
  for (int s : strides_) os << " " << s;
  os << "\n\n";
  ParamCountReport rep = count_parameters();
  std::ostringstream from;
  for (size_t i = 0; i < layers_.size(); ++i) {
    from.str("");
    for (int f : layers_[i].from) from << (from.str().empty() ? "" : ",") << f;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-4zu %-22s from[%s]\n", i, layers_[i].name.c_str(),
                  from.str().c_str());
    os << buf;
  }
  os << "\n" << rep.table();
}

namespace {

void put_u16(std::ostream& os, uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}
void put_u32(std::ostream& os, uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, static_cast<uint32_t>(v));
  put_u32(os, static_cast<uint32_t>(v >> 32));
}
uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
uint64_t get_u64(std::istream& is) {
  const uint64_t lo = get_u32(is);
  const uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

constexpr uint16_t kCheckpointVersion = 1;

void write_entry(std::ostream& os, const std::string& name, const Tensor& t) {
  check_data(name.size() < 65536, "checkpoint entry name too long");
  put_u16(os, static_cast<uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  const Shape s = t.shape();
  put_u32(os, static_cast<uint32_t>(s.n));
  put_u32(os, static_cast<uint32_t>(s.c));
  put_u32(os, static_cast<uint32_t>(s.h));
  put_u32(os, static_cast<uint32_t>(s.w));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

}  // namespace

void ModelGraph::save_checkpoint(const std::string& path,
                                 const std::vector<Parameter>& extras) const {
  std::ofstream f(path, std::ios::binary);
  check_data(f.good(), "cannot open for writing: " + path);
  f.write("HICD", 4);
  put_u16(f, kCheckpointVersion);
  put_u64(f, cfg_.hash());
  auto params = const_cast<ModelGraph*>(this)->parameters();
  put_u32(f, static_cast<uint32_t>(params.size() + extras.size()));
  for (const Parameter& p : params) write_entry(f, p.name, p.tensor);
  for (const Parameter& p : extras) write_entry(f, p.name, p.tensor);
  check_data(f.good(), "write failed: " + path);
}

std::vector<Parameter> read_checkpoint_entries(const std::string& path,
                                               uint64_t expected_hash) {
  std::ifstream f(path, std::ios::binary);
  check_data(f.good(), "cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  check_data(f.good() && std::memcmp(magic, "HICD", 4) == 0,
             "bad magic, not a HICD checkpoint: " + path);
  const uint16_t version = get_u16(f);
  check_data(version == kCheckpointVersion,
             "unsupported checkpoint version " + std::to_string(version) + " in " + path);
  const uint64_t hash = get_u64(f);
  check_data(hash == expected_hash,
             "checkpoint config hash mismatch: model configuration differs from " + path);
  const uint32_t count = get_u32(f);
  check_data(f.good(), "truncated checkpoint header: " + path);
  std::vector<Parameter> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t len = get_u16(f);
    std::string name(len, '\0');
    f.read(name.data(), len);
    Shape s;
    s.n = static_cast<int>(get_u32(f));
    s.c = static_cast<int>(get_u32(f));
    s.h = static_cast<int>(get_u32(f));
    s.w = static_cast<int>(get_u32(f));
    check_data(f.good(), "truncated checkpoint entry header: " + path);
    Tensor t{s};
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
    check_data(f.gcount() == t.numel() * static_cast<int64_t>(sizeof(double)),
               "truncated checkpoint payload at entry `" + name + "`: " + path);
    out.push_back(Parameter{std::move(name), std::move(t), true});
  }
  return out;
}

ModelGraph ModelGraph::load_checkpoint(const std::string& path, const ModelConfig& cfg) {
  ModelGraph g = build(cfg);
  std::vector<Parameter> entries = read_checkpoint_entries(path, cfg.hash());
  std::map<std::string, Tensor*> by_name;
  for (Parameter& e : entries) by_name[e.name] = &e.tensor;
  for (Parameter& p : g.parameters()) {
    auto it = by_name.find(p.name);
    check_data(it != by_name.end(), "checkpoint missing parameter `" + p.name + "`");
    check_data(it->second->shape() == p.tensor.shape(),
               "checkpoint shape mismatch for `" + p.name + "`");
    std::memcpy(p.tensor.data(), it->second->data(),
                sizeof(double) * static_cast<size_t>(p.tensor.numel()));
  }
  return g;
}

}  // namespace hic
