#include "hic/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace hic {

namespace {

int ppm_token(std::istream& is) {
  // skips whitespace and '#' comments
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    if (c != EOF) c = is.get();
  }
  check_data(c != EOF, "ppm: unexpected end of header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = is.get();
  }
  return value;
}

}  // namespace

Tensor load_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check_data(f.good(), "cannot open image: " + path);
  char p, six;
  f.get(p);
  f.get(six);
  check_data(p == 'P' && six == '6', "not a binary P6 ppm: " + path);
  const int w = ppm_token(f);
  const int h = ppm_token(f);
  const int maxval = ppm_token(f);
  check_data(w > 0 && h > 0, "ppm: bad dimensions in " + path);
  check_data(maxval == 255, "ppm: only maxval 255 supported, got " +
                                std::to_string(maxval) + " in " + path);
  std::vector<unsigned char> bytes(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check_data(f.gcount() == static_cast<std::streamsize>(bytes.size()),
             "ppm: truncated pixel data in " + path);
  Tensor t(Shape{1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) =
            bytes[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(c)] / 255.0;
  return t;
}

void save_ppm(const Tensor& pixels, const std::string& path) {
  const Shape s = pixels.shape();
  check_shape(s.n == 1 && s.c == 3, "save_ppm: expected (1,3,H,W), got " + s.str());
  std::ofstream f(path, std::ios::binary);
  check_data(f.good(), "cannot open for writing: " + path);
  f << "P6\n" << s.w << " " << s.h << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<size_t>(s.w) * s.h * 3);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(pixels.at(0, c, y, x), 0.0, 1.0);
        bytes[(static_cast<size_t>(y) * s.w + x) * 3 + static_cast<size_t>(c)] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check_data(f.good(), "write failed: " + path);
}

Tensor load_image(const std::string& path) {
  if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".hict") == 0) {
    Tensor t = load_hict(path);
    check_shape(t.shape().n == 1 && t.shape().c == 3,
                "image tensor must be (1,3,H,W), got " + t.shape().str());
    return t;
  }
  return load_ppm(path);
}

LabeledImage load_visdrone(const std::string& image_path, const std::string& annotation_path,
                           VisdroneLoadStats* stats) {
  LabeledImage img;
  img.pixels = load_image(image_path);
  img.id = fs::path(image_path).stem().string();
  const double W = img.width(), H = img.height();

  std::ifstream f(annotation_path);
  check_data(f.good(), "cannot open annotation: " + annotation_path);
  VisdroneLoadStats local;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r,") == std::string::npos) continue;
    double left, top, w, h, score;
    int category, truncation, occlusion;
    const int got = std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%d,%d,%d", &left, &top, &w,
                                &h, &score, &category, &truncation, &occlusion);
    check_data(got == 8, annotation_path + ":" + std::to_string(lineno) +
                             ": malformed annotation line `" + line + "`");
    if (category < 1 || category > 10) {
      ++local.dropped_category;
      continue;
    }
    // clip the corner box to the image, drop if degenerate
    const double x1 = std::clamp(left, 0.0, W);
    const double y1 = std::clamp(top, 0.0, H);
    const double x2 = std::clamp(left + w, 0.0, W);
    const double y2 = std::clamp(top + h, 0.0, H);
    if (x1 != left || y1 != top || x2 != left + w || y2 != top + h) ++local.clipped;
    if (x2 - x1 <= 0.0 || y2 - y1 <= 0.0) {
      ++local.dropped_empty;
      continue;
    }
    GtBox g;
    g.class_id = category - 1;
    g.cx = (x1 + x2) / 2.0 / W;
    g.cy = (y1 + y2) / 2.0 / H;
    g.w = (x2 - x1) / W;
    g.h = (y2 - y1) / H;
    img.labels.push_back(g);
  }
  if (stats) *stats = local;
  return img;
}

std::vector<GtBox> load_internal_labels(const std::string& path) {
  std::ifstream f(path);
  check_data(f.good(), "cannot open labels: " + path);
  std::vector<GtBox> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    GtBox g;
    const int got =
        std::sscanf(line.c_str(), "%d %lf %lf %lf %lf", &g.class_id, &g.cx, &g.cy, &g.w, &g.h);
    check_data(got == 5,
               path + ":" + std::to_string(lineno) + ": malformed label line `" + line + "`");
    out.push_back(g);
  }
  return out;
}

void save_internal_labels(const LabeledImage& img, const std::string& path) {
  std::ofstream f(path);
  check_data(f.good(), "cannot open for writing: " + path);
  for (const GtBox& g : img.labels) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %.6f\n", g.class_id, g.cx, g.cy, g.w,
                  g.h);
    f << buf;
  }
  check_data(f.good(), "write failed: " + path);
}

LabeledImage load_internal(const std::string& image_path, const std::string& label_path) {
  LabeledImage img;
  img.pixels = load_image(image_path);
  img.id = fs::path(image_path).stem().string();
  if (!label_path.empty()) img.labels = load_internal_labels(label_path);
  return img;
}

LabeledImage center_crop(const LabeledImage& img) {
  const int H = img.height(), W = img.width();
  check_shape(H >= 2 && W >= 2, "center_crop: image smaller than 2x2");
  const int ch = H / 2, cw = W / 2;
  const int y0 = (H - ch) / 2, x0 = (W - cw) / 2;

  LabeledImage out;
  out.id = img.id;
  out.pixels = Tensor(Shape{1, 3, ch, cw});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x)
        out.pixels.at(0, c, y, x) = img.pixels.at(0, c, y0 + y, x0 + x);

  for (const GtBox& g : img.labels) {
    const double pcx = g.cx * W, pcy = g.cy * H;
    // survival: original center inside the window (half-open)
    if (pcx < x0 || pcx >= x0 + cw || pcy < y0 || pcy >= y0 + ch) continue;
    const double x1 = std::max(pcx - g.w * W / 2.0, static_cast<double>(x0));
    const double x2 = std::min(pcx + g.w * W / 2.0, static_cast<double>(x0 + cw));
    const double y1 = std::max(pcy - g.h * H / 2.0, static_cast<double>(y0));
    const double y2 = std::min(pcy + g.h * H / 2.0, static_cast<double>(y0 + ch));
    const double kept = (x2 - x1) * (y2 - y1);
    if (kept < 0.2 * (g.w * W) * (g.h * H)) continue;
    GtBox n;
    n.class_id = g.class_id;
    n.cx = ((x1 + x2) / 2.0 - x0) / cw;
    n.cy = ((y1 + y2) / 2.0 - y0) / ch;
    n.w = (x2 - x1) / cw;
    n.h = (y2 - y1) / ch;
    out.labels.push_back(n);
  }
  return out;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) h = (g - b) / d;
  else if (mx == g) h = 2.0 + (b - r) / d;
  else h = 4.0 + (r - g) / d;
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  if (s <= 0.0) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  const double x = h * 6.0;
  const int i = std::min(5, static_cast<int>(x));
  const double f = x - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

LabeledImage hsv_jitter(const LabeledImage& img, double gain_h, double gain_s, double gain_v,
                        uint64_t seed) {
  check_data(gain_h >= 0.0 && gain_h <= 1.0 && gain_s >= 0.0 && gain_s <= 1.0 &&
                 gain_v >= 0.0 && gain_v <= 1.0,
             "hsv_jitter: gains must lie in [0,1]");
  Rng rng(seed);
  const double rh = 1.0 + rng.uniform(-1.0, 1.0) * gain_h;
  const double rs = 1.0 + rng.uniform(-1.0, 1.0) * gain_s;
  const double rv = 1.0 + rng.uniform(-1.0, 1.0) * gain_v;

  LabeledImage out;
  out.id = img.id;
  out.labels = img.labels;
  out.pixels = img.pixels.clone();
  if (gain_h == 0.0 && gain_s == 0.0 && gain_v == 0.0) return out;

  const Shape s = out.pixels.shape();
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      double h, sat, val;
      rgb_to_hsv(img.pixels.at(0, 0, y, x), img.pixels.at(0, 1, y, x),
                 img.pixels.at(0, 2, y, x), h, sat, val);
      h = h + (rh - 1.0);
      h -= std::floor(h);
      sat = std::clamp(sat * rs, 0.0, 1.0);
      val = std::clamp(val * rv, 0.0, 1.0);
      double r, g, b;
      hsv_to_rgb(h, sat, val, r, g, b);
      out.pixels.at(0, 0, y, x) = r;
      out.pixels.at(0, 1, y, x) = g;
      out.pixels.at(0, 2, y, x) = b;
    }
  return out;
}

LabeledImage letterbox(const LabeledImage& img, int size) {
  const int W = img.width(), H = img.height();
  const double r = std::min(static_cast<double>(size) / W, static_cast<double>(size) / H);
  const int nw = std::max(1, static_cast<int>(std::lround(W * r)));
  const int nh = std::max(1, static_cast<int>(std::lround(H * r)));
  const int px = (size - nw) / 2, py = (size - nh) / 2;

  LabeledImage out;
  out.id = img.id;
  out.pixels = Tensor::full(Shape{1, 3, size, size}, 0.5);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < nh; ++y)
      for (int x = 0; x < nw; ++x) {
        // nearest-neighbor sample
        const int sy = std::min(H - 1, static_cast<int>(y / r));
        const int sx = std::min(W - 1, static_cast<int>(x / r));
        out.pixels.at(0, c, py + y, px + x) = img.pixels.at(0, c, sy, sx);
      }
  for (const GtBox& g : img.labels) {
    GtBox n = g;
    n.cx = (g.cx * W * r + px) / size;
    n.cy = (g.cy * H * r + py) / size;
    n.w = g.w * W * r / size;
    n.h = g.h * H * r / size;
    out.labels.push_back(n);
  }
  return out;
}

DatasetStats compute_stats(std::span<const std::vector<GtBox>> labels_per_image,
                           int num_classes) {
  DatasetStats st;
  st.class_counts.assign(static_cast<size_t>(num_classes), 0);
  std::vector<double> areas;
  for (const auto& labels : labels_per_image)
    for (const GtBox& g : labels) {
      areas.push_back(g.w * g.h);
      if (g.class_id >= 0 && g.class_id < num_classes)
        ++st.class_counts[static_cast<size_t>(g.class_id)];
      const int bx = std::min(31, static_cast<int>(g.cx * 32.0));
      const int by = std::min(31, static_cast<int>(g.cy * 32.0));
      ++st.center_hist[static_cast<size_t>(std::max(0, by))][static_cast<size_t>(std::max(0, bx))];
    }
  check_data(!areas.empty(), "compute_stats: dataset has no labels");
  st.total_labels = static_cast<int64_t>(areas.size());

  double sum = 0.0;
  for (double a : areas) sum += a;
  st.area_mean = sum / static_cast<double>(areas.size());
  double sq = 0.0;
  for (double a : areas) sq += (a - st.area_mean) * (a - st.area_mean);
  st.area_std = std::sqrt(sq / static_cast<double>(areas.size()));

  std::sort(areas.begin(), areas.end());
  auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(areas.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    if (lo + 1 >= areas.size()) return areas.back();
    const double frac = pos - static_cast<double>(lo);
    return areas[lo] + frac * (areas[lo + 1] - areas[lo]);
  };
  st.area_min = areas.front();
  st.area_max = areas.back();
  st.area_p25 = quantile(0.25);
  st.area_p50 = quantile(0.50);
  st.area_p75 = quantile(0.75);
  return st;
}

std::string DatasetStats::report() const {
  std::ostringstream os;
  os << "labels: " << total_labels << "\n";
  for (size_t c = 0; c < class_counts.size(); ++c)
    os << "class " << c << ": " << class_counts[c] << "\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "area mean %.6f std %.6f min %.6f p25 %.6f p50 %.6f p75 %.6f max %.6f\n",
                area_mean, area_std, area_min, area_p25, area_p50, area_p75, area_max);
  os << buf;
  int64_t center_mass = 0, total = 0;
  for (int y = 8; y < 24; ++y)
    for (int x = 8; x < 24; ++x) center_mass += center_hist[static_cast<size_t>(y)][static_cast<size_t>(x)];
  for (const auto& row : center_hist)
    for (int64_t v : row) total += v;
  std::snprintf(buf, sizeof(buf), "center half of the 32x32 location histogram holds %.1f%%\n",
                total > 0 ? 100.0 * static_cast<double>(center_mass) / static_cast<double>(total)
                          : 0.0);
  os << buf;
  return os.str();
}

std::vector<DatasetEntry> discover_dataset(const std::string& images_dir,
                                           const std::string& labels_dir) {
  check_data(fs::is_directory(images_dir), "not a directory: " + images_dir);
  std::vector<DatasetEntry> out;
  for (const auto& e : fs::directory_iterator(images_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext != ".ppm" && ext != ".hict") continue;
    DatasetEntry d;
    d.id = e.path().stem().string();
    d.image_path = e.path().string();
    const fs::path lp = fs::path(labels_dir) / (d.id + ".txt");
    if (fs::exists(lp)) d.label_path = lp.string();
    out.push_back(std::move(d));
  }
  std::sort(out.begin(), out.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.id < b.id; });
  return out;
}

}  // namespace hic
