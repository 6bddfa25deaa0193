#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "dvnet/core/error.hpp"

namespace dvnet {

/// Live/peak byte counters for all tensor storage. Used to check that tiled
/// inference has a memory high-water mark independent of the volume size.
class TensorMemory {
 public:
  static void allocated(std::size_t bytes) {
    const auto now = live().fetch_add(bytes) + bytes;
    auto prev = peak().load();
    while (now > prev && !peak().compare_exchange_weak(prev, now)) {
    }
  }
  static void released(std::size_t bytes) { live().fetch_sub(bytes); }
  static std::size_t live_bytes() { return live().load(); }
  static std::size_t peak_bytes() { return peak().load(); }
  static void reset_peak() { peak().store(live().load()); }

 private:
  static std::atomic<std::size_t>& live() {
    static std::atomic<std::size_t> v{0};
    return v;
  }
  static std::atomic<std::size_t>& peak() {
    static std::atomic<std::size_t> v{0};
    return v;
  }
};

template <class T>
struct TrackingAllocator {
  using value_type = T;
  TrackingAllocator() = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    TensorMemory::allocated(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    TensorMemory::released(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }
  /// Default-initializes, so resize() leaves trivial element types unset.
  template <class U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Network tensors are laid out as
/// [batch, channels, spatial...] with 1 to 3 spatial axes, last axis fastest.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, TrackingAllocator<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    for (auto e : shape_)
      if (e < 0) throw Error("tensor", "negative extent in shape " + shape_str(shape_));
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  /// Tensor whose contents are unspecified until written.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    for (auto e : shape)
      if (e < 0) throw Error("tensor", "negative extent in shape " + shape_str(shape));
    t.shape_ = std::move(shape);
    t.data_.resize(static_cast<std::size_t>(shape_numel(t.shape_)));
    return t;
  }

  Tensor(Shape shape, std::span<const T> values) : shape_(std::move(shape)) {
    require(static_cast<std::int64_t>(values.size()) == shape_numel(shape_), "tensor",
            "value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape_));
    data_.assign(values.begin(), values.end());
  }

  Tensor(Shape shape, std::initializer_list<T> values)
      : Tensor(std::move(shape), std::span<const T>(values.begin(), values.size())) {}

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  int spatial_rank() const noexcept { return static_cast<int>(shape_.size()) - 2; }
  std::int64_t batch() const { return shape_.at(0); }
  std::int64_t channels() const { return shape_.at(1); }
  /// Number of voxels per channel.
  std::int64_t spatial_size() const {
    return std::accumulate(shape_.begin() + 2, shape_.end(), std::int64_t{1}, std::multiplies<>());
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const T> values() const noexcept { return {data_.data(), data_.size()}; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor reshaped(Shape shape) const {
    require(shape_numel(shape) == numel(), "tensor",
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && std::equal(a.data_.begin(), a.data_.end(), b.data_.begin());
  }

 private:
  Shape shape_;
  Storage data_;
};

inline Shape spatial_shape(const Shape& shape) { return Shape(shape.begin() + 2, shape.end()); }

}  // namespace dvnet
