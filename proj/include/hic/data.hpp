#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "hic/loss.hpp"
#include "hic/tensor.hpp"

namespace hic {

// Dataset unit: pixels in [0,1], labels normalized center-format.
struct LabeledImage {
  std::string id;
  Tensor pixels;  // (1,3,H,W)
  std::vector<GtBox> labels;

  int width() const { return pixels.shape().w; }
  int height() const { return pixels.shape().h; }
};

// Binary P6 PPM, maxval 255.
Tensor load_ppm(const std::string& path);
void save_ppm(const Tensor& pixels, const std::string& path);
// Dispatch on extension: .ppm or .hict (which must hold a (1,3,H,W) tensor).
Tensor load_image(const std::string& path);

struct VisdroneLoadStats {
  int dropped_category = 0;  // ignored-regions (0) and others (11)
  int dropped_empty = 0;     // zero area after clipping
  int clipped = 0;
};

// Annotation lines `left,top,width,height,score,category,truncation,occlusion`;
// categories 1..10 map to classes 0..9.
LabeledImage load_visdrone(const std::string& image_path, const std::string& annotation_path,
                           VisdroneLoadStats* stats = nullptr);

// Internal format: one `class cx cy w h` line per label, normalized, 6 decimals.
std::vector<GtBox> load_internal_labels(const std::string& path);
void save_internal_labels(const LabeledImage& img, const std::string& path);
LabeledImage load_internal(const std::string& image_path, const std::string& label_path);

// Half-size centered crop. A label survives when its original center lies in
// the crop window and its clipped area keeps at least 20% of the original.
LabeledImage center_crop(const LabeledImage& img);

// Per-channel factors 1 + U(-1,1)*gain; hue shifts modulo 1, saturation and
// value scale with clipping. Deterministic for a fixed seed.
LabeledImage hsv_jitter(const LabeledImage& img, double gain_h, double gain_s, double gain_v,
                        uint64_t seed);

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

// Aspect-preserving resize onto a size x size canvas, gray padding, labels
// remapped; used to batch mixed-size inputs.
LabeledImage letterbox(const LabeledImage& img, int size);

struct DatasetStats {
  std::vector<int64_t> class_counts;
  int64_t total_labels = 0;
  double area_mean = 0, area_std = 0, area_min = 0;
  double area_p25 = 0, area_p50 = 0, area_p75 = 0, area_max = 0;
  std::array<std::array<int64_t, 32>, 32> center_hist{};  // [row][col]

  std::string report() const;
};

// Normalized area = w*h; quantiles by linear interpolation between order
// statistics; population standard deviation.
DatasetStats compute_stats(std::span<const std::vector<GtBox>> labels_per_image,
                           int num_classes);

struct DatasetEntry {
  std::string id, image_path, label_path;  // label_path empty when absent
};

// Images (.ppm/.hict) matched to labels by stem, sorted by id.
std::vector<DatasetEntry> discover_dataset(const std::string& images_dir,
                                           const std::string& labels_dir);

}  // namespace hic
