#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "descan/error.hpp"
#include "descan/nn/tensor.hpp"
#include "descan/ppm.hpp"
#include "descan/rng.hpp"

namespace descan::nn {

// Ordered collection of named trainable tensors.
template <class T>
class ParamSet {
 public:
  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> init) {
    Tensor<T> t(std::move(shape), std::move(init), true);
    entries_.emplace_back(name, t);
    return t;
  }

  // Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in).
  Tensor<T> add_kaiming(const std::string& name, Shape shape, int fan_in, CounterRng& rng) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return add(name, std::move(shape), std::move(v));
  }

  Tensor<T> add_zeros(const std::string& name, Shape shape) {
    const auto n = numel(shape);
    return add(name, std::move(shape), std::vector<T>(n, T(0)));
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }

  Tensor<T> get(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return t;
    fail(ErrorKind::invalid_argument, "no parameter named " + name);
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  // FNV-1a over names, shapes and values.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    };
    for (const auto& [name, t] : entries_) {
      mix(name.data(), name.size());
      mix(t.shape().data(), t.shape().size() * sizeof(int));
      mix(t.data().data(), t.size() * sizeof(T));
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Bias-corrected Adam update. Parameters without a gradient buffer are left
// untouched (frozen).
template <class T>
void adam_step(std::vector<Tensor<T>>& params, OptimizerState& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  require(state.m.size() == params.size(), "adam_step: parameter count changed");
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (state.m[k].size() != p.size())
      fail(ErrorKind::invalid_argument, "adam_step: moment shape mismatch for parameter " + std::to_string(k));
    if (!p.has_grad()) continue;
    auto data = p.data();
    const auto grad = p.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] = static_cast<T>(data[i] - c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

template <class T>
std::vector<Tensor<T>> tensors_of(const ParamSet<T>& set) {
  std::vector<Tensor<T>> out;
  for (const auto& e : set.entries()) out.push_back(e.second);
  return out;
}

// ---------------------------------------------------------------------------
// DSCW weights file
//
//   "DSCW" | u16 version | u32 tensor count |
//   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank], f32 data[]
//
// All integers and floats are little-endian.

inline constexpr std::uint16_t kWeightsVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail(ErrorKind::io, origin_ + ": truncated weights file");
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_weights(const std::vector<NamedArray>& arrays) {
  std::vector<std::uint8_t> out{'D', 'S', 'C', 'W'};
  detail::put_u16(out, kWeightsVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (int d : a.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : a.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::put_u32(out, bits);
    }
  }
  return out;
}

inline std::vector<NamedArray> decode_weights(const std::vector<std::uint8_t>& bytes,
                                              const std::string& origin = "<memory>") {
  detail::Reader r(bytes, origin);
  if (r.str(4) != "DSCW") fail(ErrorKind::io, origin + ": not a DSCW weights file");
  const auto version = r.u16();
  if (version != kWeightsVersion)
    fail(ErrorKind::io, origin + ": unsupported weights version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<NamedArray> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str(r.u32());
    const auto rank = r.u32();
    if (rank > 8) fail(ErrorKind::io, origin + ": implausible tensor rank");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      a.shape.push_back(static_cast<int>(r.u32()));
      n *= static_cast<std::size_t>(a.shape.back());
    }
    r.need(n * 4);
    a.data.resize(n);
    for (auto& f : a.data) {
      const std::uint32_t bits = r.u32();
      std::memcpy(&f, &bits, 4);
    }
    out.push_back(std::move(a));
  }
  if (!r.done()) fail(ErrorKind::io, origin + ": trailing bytes after weights payload");
  return out;
}

template <class T>
std::vector<NamedArray> export_params(const ParamSet<T>& set) {
  std::vector<NamedArray> out;
  for (const auto& [name, t] : set.entries())
    out.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  return out;
}

template <class T>
void import_params(ParamSet<T>& set, const std::vector<NamedArray>& arrays, const std::string& origin) {
  if (arrays.size() != set.entries().size())
    fail(ErrorKind::data, origin + ": expected " + std::to_string(set.entries().size()) + " tensors, found " +
                              std::to_string(arrays.size()));
  for (auto& [name, t] : set.entries()) {
    const NamedArray* match = nullptr;
    for (const auto& a : arrays)
      if (a.name == name) match = &a;
    if (!match) fail(ErrorKind::data, origin + ": missing tensor " + name);
    if (match->shape != t.shape())
      fail(ErrorKind::data, origin + ": tensor " + name + " has shape " + shape_str(match->shape) + ", expected " +
                                shape_str(t.shape()));
    std::copy(match->data.begin(), match->data.end(), t.data().begin());
  }
}

template <class T>
void save_params(const ParamSet<T>& set, const std::filesystem::path& path) {
  write_file_bytes(path, encode_weights(export_params(set)));
}

template <class T>
void load_params(ParamSet<T>& set, const std::filesystem::path& path) {
  import_params(set, decode_weights(read_file_bytes(path), path.string()), path.string());
}

}  // namespace descan::nn
