#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hic/common.hpp"

namespace hic {

// Dense 4-D layout (batch, channel, row, col), row-major.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  int64_t numel() const {
    return static_cast<int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Shared-handle dense tensor of 64-bit floats with an optional gradient
// buffer of identical shape. Copies share storage; clone() deep-copies.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(const Shape& s);

  static Tensor zeros(const Shape& s) { return Tensor(s); }
  static Tensor full(const Shape& s, double v);
  static Tensor ones(const Shape& s) { return full(s, 1.0); }
  static Tensor uniform(const Shape& s, Rng& rng, double lo, double hi);
  static Tensor from(const Shape& s, std::initializer_list<double> vals);

  bool defined() const { return static_cast<bool>(r_); }
  const Shape& shape() const { return r_->shape; }
  int64_t numel() const { return r_->shape.numel(); }

  double* data() { return r_->val.data(); }
  const double* data() const { return r_->val.data(); }
  std::span<double> values() { return r_->val; }
  std::span<const double> values() const { return r_->val; }

  int64_t index(int n, int c, int y, int x) const {
    const Shape& s = r_->shape;
    return ((static_cast<int64_t>(n) * s.c + c) * s.h + y) * s.w + x;
  }
  double& at(int n, int c, int y, int x) { return r_->val[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const { return r_->val[index(n, c, y, x)]; }

  bool has_grad() const { return defined() && !r_->grad.empty(); }
  double* grad() { return r_->grad.data(); }
  const double* grad() const { return r_->grad.data(); }
  std::span<double> grad_span() { return r_->grad; }
  std::span<const double> grad_span() const { return r_->grad; }

  // Allocates a zero gradient buffer when absent.
  void ensure_grad();
  void zero_grad();
  void drop_grad();

  Tensor clone() const;
  bool all_finite() const;
  bool same_storage(const Tensor& other) const { return r_ == other.r_; }

 private:
  struct Rec {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
  };
  std::shared_ptr<Rec> r_;
};

// Raw tensor container: magic "HICT", one version byte, 4 u32 little-endian
// shape fields, then the f64 little-endian payload.
void save_hict(const Tensor& t, const std::string& path);
Tensor load_hict(const std::string& path);

}  // namespace hic
