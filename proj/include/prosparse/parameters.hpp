#pragma once

// Named trainable parameters, the Adam optimizer and the binary checkpoint
// format (named parameter -> shape + little-endian float32 values).

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "prosparse/tensor.hpp"

namespace prosparse {

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  bool trainable = true;

  void zero_grad() { grad.fill(Real(0)); }
};

enum class Init { kZeros, kOnes, kXavier, kNormal };

template <typename Real>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter<Real>& add(const std::string& name, Shape shape, Init init, std::mt19937_64& rng,
                       double stddev = 0.02) {
    if (index_.count(name)) fail(ErrorKind::kConfig, "duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<Real>>();
    p->name = name;
    p->value = Tensor<Real>(shape, Real(0));
    p->grad = Tensor<Real>(shape, Real(0));
    switch (init) {
      case Init::kZeros:
        break;
      case Init::kOnes:
        p->value.fill(Real(1));
        break;
      case Init::kXavier: {
        double fan_in = shape.size() >= 2 ? static_cast<double>(shape[0]) : 1.0;
        double fan_out = shape.size() >= 2 ? static_cast<double>(shape[1]) : static_cast<double>(shape_size(shape));
        double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (auto& v : p->value.values()) v = static_cast<Real>(dist(rng));
        break;
      }
      case Init::kNormal: {
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : p->value.values()) v = static_cast<Real>(dist(rng));
        break;
      }
    }
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<Real>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<Real>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  Parameter<Real>& get(const std::string& name) {
    auto* p = find(name);
    if (!p) fail(ErrorKind::kCheckpoint, "unknown parameter: " + name);
    return *p;
  }

  std::vector<Parameter<Real>*> all() {
    std::vector<Parameter<Real>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const Parameter<Real>*> all() const {
    std::vector<const Parameter<Real>*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 0;  // 0 disables global-norm clipping
};

template <typename Real>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  // Returns the global gradient norm before clipping.
  double step(ParameterStore<Real>& store, double lr) {
    ++t_;
    double sq = 0;
    for (auto* p : store.all()) {
      if (!p->trainable) continue;
      for (Real g : p->grad.values()) sq += static_cast<double>(g) * g;
    }
    double norm = std::sqrt(sq);
    double scale = 1.0;
    if (opts_.clip_norm > 0 && norm > opts_.clip_norm) scale = opts_.clip_norm / norm;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (auto* p : store.all()) {
      if (!p->trainable) continue;
      auto& st = state_[p->name];
      if (st.m.size() != p->value.size()) {
        st.m.assign(p->value.size(), 0.0);
        st.v.assign(p->value.size(), 0.0);
      }
      auto& w = p->value.values();
      const auto& g = p->grad.values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = static_cast<double>(g[i]) * scale;
        st.m[i] = opts_.beta1 * st.m[i] + (1 - opts_.beta1) * gi;
        st.v[i] = opts_.beta2 * st.v[i] + (1 - opts_.beta2) * gi * gi;
        double mh = st.m[i] / bc1;
        double vh = st.v[i] / bc2;
        w[i] = static_cast<Real>(w[i] - lr * mh / (std::sqrt(vh) + opts_.eps));
      }
    }
    return norm;
  }

  long steps() const { return t_; }

 private:
  struct State {
    std::vector<double> m, v;
  };
  AdamOptions opts_;
  std::map<std::string, State> state_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint file:
//   "PPCK" | u32 version | u64 metadata length | metadata bytes |
//   u32 count | count x (u32 name length | name | u32 rank | u64 dims[rank] |
//   float32 values, little-endian)

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct CheckpointData {
  std::uint32_t version = kCheckpointVersion;
  std::string metadata;
  std::vector<NamedTensor> tensors;
};

namespace detail {

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const std::string& path) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    fail(ErrorKind::kCheckpoint, "truncated checkpoint: " + path);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

inline std::uint32_t float_bits(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof(u));
  return u;
}

inline float bits_float(std::uint32_t u) {
  float f;
  std::memcpy(&f, &u, sizeof(f));
  return f;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const CheckpointData& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kCheckpoint, "cannot write checkpoint: " + path);
  out.write("PPCK", 4);
  detail::put_le<std::uint32_t>(out, ck.version);
  detail::put_le<std::uint64_t>(out, ck.metadata.size());
  out.write(ck.metadata.data(), static_cast<std::streamsize>(ck.metadata.size()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) detail::put_le<std::uint64_t>(out, d);
    for (float f : t.value.values()) detail::put_le<std::uint32_t>(out, detail::float_bits(f));
  }
  if (!out) fail(ErrorKind::kCheckpoint, "error writing checkpoint: " + path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kCheckpoint, "cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "PPCK") {
    fail(ErrorKind::kCheckpoint, "not a checkpoint file: " + path);
  }
  CheckpointData ck;
  ck.version = detail::get_le<std::uint32_t>(in, path);
  if (ck.version != kCheckpointVersion) {
    fail(ErrorKind::kCheckpoint, "unsupported checkpoint version " + std::to_string(ck.version) + ": " + path);
  }
  auto meta_len = detail::get_le<std::uint64_t>(in, path);
  ck.metadata.resize(meta_len);
  if (!in.read(ck.metadata.data(), static_cast<std::streamsize>(meta_len))) {
    fail(ErrorKind::kCheckpoint, "truncated checkpoint metadata: " + path);
  }
  auto count = detail::get_le<std::uint32_t>(in, path);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    auto name_len = detail::get_le<std::uint32_t>(in, path);
    t.name.resize(name_len);
    if (!in.read(t.name.data(), name_len)) fail(ErrorKind::kCheckpoint, "truncated checkpoint: " + path);
    auto rank = detail::get_le<std::uint32_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(in, path));
    std::vector<float> data(shape_size(shape));
    for (auto& f : data) f = detail::bits_float(detail::get_le<std::uint32_t>(in, path));
    t.value = Tensor<float>(shape, std::move(data));
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

template <typename Real>
std::vector<NamedTensor> snapshot(const ParameterStore<Real>& store) {
  std::vector<NamedTensor> out;
  for (const auto* p : store.all()) out.push_back({p->name, p->value.template cast<float>()});
  return out;
}

// Loads values by name. Every parameter must be present with its shape;
// mismatches are reported together.
template <typename Real>
void restore(ParameterStore<Real>& store, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  std::string problems;
  for (auto* p : store.all()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      problems += " missing " + p->name + ";";
    } else if (it->second->value.shape() != p->value.shape()) {
      problems += " " + p->name + " expected " + shape_string(p->value.shape()) + " found " +
                  shape_string(it->second->value.shape()) + ";";
    }
  }
  for (const auto& t : tensors) {
    if (!store.find(t.name)) problems += " unexpected " + t.name + ";";
  }
  if (!problems.empty()) fail(ErrorKind::kCheckpoint, "architecture mismatch:" + problems);
  for (auto* p : store.all()) {
    const auto& src = by_name[p->name]->value.values();
    auto& dst = p->value.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(src[i]);
  }
}

}  // namespace prosparse
