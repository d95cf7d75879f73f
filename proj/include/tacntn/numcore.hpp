#pragma once

// Dense 64-bit array math shared by the topic model, the matching network and
// the training loop. Gradients elsewhere are derived by hand; this header only
// provides storage, a handful of kernels, Adam, and a central-difference
// checker used to validate those hand-derived gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tacntn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Row-major array of up to three dimensions.
class DenseArray {
 public:
  DenseArray() = default;
  explicit DenseArray(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 3) {
      throw Error("DenseArray supports 1 to 3 dimensions, got " + std::to_string(shape_.size()));
    }
    data_.assign(shape_volume(shape_), fill);
  }
  DenseArray(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_.empty() || shape_.size() > 3) {
      throw Error("DenseArray supports 1 to 3 dimensions, got " + std::to_string(shape_.size()));
    }
    if (data_.size() != shape_volume(shape_)) {
      throw Error("DenseArray value count " + std::to_string(data_.size()) + " does not match shape " +
                  shape_string(shape_));
    }
  }

  static DenseArray vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return DenseArray({n}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const double& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  const double& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& raw() noexcept { return data_; }
  const std::vector<double>& raw() const noexcept { return data_; }

  /// Contiguous view of row `i` of a 2-D array.
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * shape_[1], shape_[1]}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * shape_[1], shape_[1]}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const DenseArray&, const DenseArray&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Trainable array with its gradient accumulator and Adam moments.
struct Param {
  std::string name;
  DenseArray value;
  DenseArray grad;
  DenseArray adam_m;
  DenseArray adam_v;
  std::uint64_t step = 0;

  Param() = default;
  Param(std::string n, DenseArray v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.shape()),
        adam_m(value.shape()),
        adam_v(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const noexcept { return value.size(); }
};

// ---------------------------------------------------------------------------
// Counter-based RNG. Every draw is splitmix64(seed, counter), so a stream is
// fully described by two integers and reproduces bit-for-bit on any platform.

struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
  friend bool operator==(const RngState&, const RngState&) = default;
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_{seed, 0} {}
  explicit Rng(RngState state) : state_(state) {}

  const RngState& state() const noexcept { return state_; }

  std::uint64_t next_u64() {
    std::uint64_t z = state_.seed + 0x9E3779B97F4A7C15ULL * (++state_.counter);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw Error("Rng::index on empty range");
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::size_t>(wide >> 64);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  /// Derives an independent stream, e.g. one per subsystem.
  Rng fork(std::uint64_t salt) {
    Rng mix(state_.seed ^ (salt * 0xD1B54A32D192ED03ULL));
    return Rng(mix.next_u64());
  }

 private:
  RngState state_;
};

inline DenseArray rng_uniform(Rng& rng, double lo, double hi, const Shape& shape) {
  if (!(lo < hi)) throw Error("rng_uniform requires lo < hi");
  DenseArray out(shape);
  for (double& v : out.values()) v = rng.uniform(lo, hi);
  return out;
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { relu, tanh, softmax };

inline void softmax_inplace(std::span<double> x) {
  if (x.empty()) throw Error("softmax of an empty array");
  const double peak = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (double& v : x) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : x) v /= total;
}

inline DenseArray apply_activation(Activation kind, const DenseArray& x) {
  DenseArray out = x;
  switch (kind) {
    case Activation::relu:
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::tanh:
      for (double& v : out.values()) v = std::tanh(v);
      break;
    case Activation::softmax:
      if (x.empty()) throw Error("softmax of an empty array");
      if (x.rank() != 1) throw Error("softmax requires a 1-D array, got " + shape_string(x.shape()));
      softmax_inplace(out.values());
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear tensor product: out[k] = a^T M[:, k, :] c.

inline std::vector<double> bilinear_tensor(std::span<const double> a, const DenseArray& tensor,
                                           std::span<const double> c) {
  if (tensor.rank() != 3 || tensor.dim(0) != a.size() || tensor.dim(2) != c.size()) {
    throw Error("bilinear_tensor shape mismatch: left " + std::to_string(a.size()) + ", tensor " +
                shape_string(tensor.shape()) + ", right " + std::to_string(c.size()));
  }
  const std::size_t slices = tensor.dim(1);
  std::vector<double> out(slices, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    for (std::size_t k = 0; k < slices; ++k) {
      const double* slice_row = &tensor.at(i, k, 0);
      double acc = 0.0;
      for (std::size_t j = 0; j < c.size(); ++j) acc += slice_row[j] * c[j];
      out[k] += a[i] * acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update. Zeroes the gradient afterwards.
inline void adam_step(Param& p, const AdamConfig& cfg) {
  if (!p.grad.all_finite()) throw Error("non-finite gradient in parameter '" + p.name + "'");
  ++p.step;
  const double t = static_cast<double>(p.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  auto value = p.value.values();
  auto grad = p.grad.values();
  auto m = p.adam_m.values();
  auto v = p.adam_v.values();
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    value[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
  p.zero_grad();
}

// ---------------------------------------------------------------------------
// Finite differences

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares p.grad (already populated by the caller) against central
/// differences of `loss`, which must read p.value. Values are restored.
inline GradCheckResult finite_diff_check(const std::function<double()>& loss, Param& p, double epsilon) {
  GradCheckResult result;
  auto value = p.value.values();
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double saved = value[i];
    value[i] = saved + epsilon;
    const double up = loss();
    value[i] = saved - epsilon;
    const double down = loss();
    value[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double err = relative_error(p.grad[i], numeric);
    if (i == 0 || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
      result.worst_analytic = p.grad[i];
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace tacntn
