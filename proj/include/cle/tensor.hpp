#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cle {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned storage, so vectorised kernels see the same alignment
/// on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Raised when tensor extents disagree with what an operation expects.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward pass produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major array with an optional gradient buffer of the same shape.
///
/// Values are owned; copies are deep. All extents are positive.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  AlignedVector<T>& storage() { return data_; }
  const AlignedVector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;

  /// Same data, new extents; the element count must not change.
  BasicTensor reshaped(Shape shape) const&;
  BasicTensor reshaped(Shape shape) &&;

  void fill(T value);

  bool has_grad() const { return !grad_.empty(); }
  /// Allocates a zeroed gradient buffer if absent.
  std::span<T> grad();
  std::span<const T> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

  /// True when every scalar is finite.
  bool all_finite() const;

  bool same_values(const BasicTensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  struct Adopt {};
  BasicTensor(Adopt, Shape shape, AlignedVector<T> data);
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  AlignedVector<T> data_;
  AlignedVector<T> grad_;
};

/// Named handle to a tensor owned elsewhere (trainable parameter or buffer).
template <typename T>
struct ParamRef {
  std::string name;
  BasicTensor<T>* tensor = nullptr;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Converts between precisions (used by gradient-check builds).
template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& src) {
  std::vector<To> out(src.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(src[i]);
  return BasicTensor<To>(src.shape(), std::move(out));
}

template <typename T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Throws NonFiniteError naming `where` if the tensor holds NaN/Inf.
template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& where);

}  // namespace cle
