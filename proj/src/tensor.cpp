#include "hic/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace hic {

std::string Shape::str() const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%dx%dx%dx%d", n, c, h, w);
  return buf;
}

Tensor::Tensor(const Shape& s) : r_(std::make_shared<Rec>()) {
  check_shape(s.n >= 1 && s.c >= 1 && s.h >= 1 && s.w >= 1,
              "tensor shape must be positive, got " + s.str());
  r_->shape = s;
  r_->val.assign(static_cast<size_t>(s.numel()), 0.0);
}

Tensor Tensor::full(const Shape& s, double v) {
  Tensor t(s);
  std::fill(t.r_->val.begin(), t.r_->val.end(), v);
  return t;
}

Tensor Tensor::uniform(const Shape& s, Rng& rng, double lo, double hi) {
  Tensor t(s);
  for (double& v : t.r_->val) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::from(const Shape& s, std::initializer_list<double> vals) {
  Tensor t(s);
  check_shape(static_cast<int64_t>(vals.size()) == s.numel(),
              "initializer size does not match shape " + s.str());
  std::copy(vals.begin(), vals.end(), t.r_->val.begin());
  return t;
}

void Tensor::ensure_grad() {
  if (r_->grad.empty()) r_->grad.assign(r_->val.size(), 0.0);
}

void Tensor::zero_grad() {
  std::fill(r_->grad.begin(), r_->grad.end(), 0.0);
}

void Tensor::drop_grad() { r_->grad.clear(); }

Tensor Tensor::clone() const {
  Tensor t(r_->shape);
  t.r_->val = r_->val;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : r_->val)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_hict(const Tensor& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  check_data(f.good(), "cannot open for writing: " + path);
  f.write("HICT", 4);
  f.put(static_cast<char>(1));  // version
  const Shape& s = t.shape();
  put_u32(f, static_cast<uint32_t>(s.n));
  put_u32(f, static_cast<uint32_t>(s.c));
  put_u32(f, static_cast<uint32_t>(s.h));
  put_u32(f, static_cast<uint32_t>(s.w));
  // doubles are written little-endian; this targets little-endian hosts
  f.write(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(double));
  check_data(f.good(), "write failed: " + path);
}

Tensor load_hict(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check_data(f.good(), "cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  check_data(f.good() && std::memcmp(magic, "HICT", 4) == 0,
             "bad magic, not a HICT container: " + path);
  int version = f.get();
  check_data(version == 1, "unsupported HICT version in " + path);
  Shape s;
  s.n = static_cast<int>(get_u32(f));
  s.c = static_cast<int>(get_u32(f));
  s.h = static_cast<int>(get_u32(f));
  s.w = static_cast<int>(get_u32(f));
  check_data(f.good(), "truncated HICT header: " + path);
  Tensor t{s};
  f.read(reinterpret_cast<char*>(t.data()), t.numel() * sizeof(double));
  check_data(f.gcount() == t.numel() * static_cast<int64_t>(sizeof(double)),
             "truncated HICT payload: " + path);
  return t;
}

}  // namespace hic
