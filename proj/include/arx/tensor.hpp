#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <iterator>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>

#include "arx/context.hpp"
#include "arx/errors.hpp"

// Index checks on operator() and operator[]. at() and offset_of(span) always
// check.
#ifndef ARX_CHECK_BOUNDS
#ifdef NDEBUG
#define ARX_CHECK_BOUNDS 0
#else
#define ARX_CHECK_BOUNDS 1
#endif
#endif

namespace arx {

template <class T>
class Expr;

template <class T, std::size_t depth>
struct nested_list {
  using type = std::initializer_list<typename nested_list<T, depth - 1>::type>;
};
template <class T>
struct nested_list<T, 1> {
  using type = std::initializer_list<T>;
};
template <class T, std::size_t depth>
using nested_list_t = typename nested_list<T, depth>::type;

/// Read-only, rank-erased reference to a tensor's storage.
template <class T>
struct TensorRef {
  const T* data = nullptr;
  std::span<const std::size_t> extents;
  const void* object = nullptr;

  std::size_t rank() const noexcept { return extents.size(); }
  std::size_t size() const noexcept {
    std::size_t s = 1;
    for (auto e : extents) s *= e;
    return s;
  }
  std::size_t extent(std::size_t d) const noexcept { return extents[d]; }

  /// Same storage viewed with the same shape.
  bool same_storage(const TensorRef& o) const noexcept {
    return data == o.data &&
           std::equal(extents.begin(), extents.end(), o.extents.begin(),
                      o.extents.end());
  }
  bool overlaps(const T* begin, std::size_t n) const noexcept {
    if (size() == 0 || n == 0) return false;
    std::less<const T*> lt;
    return lt(data, begin + n) && lt(begin, data + size());
  }
};

/// Writable counterpart of TensorRef, used for statement destinations.
template <class T>
struct DestRef {
  T* data = nullptr;
  std::span<const std::size_t> extents;
  const void* object = nullptr;

  std::size_t rank() const noexcept { return extents.size(); }
  std::size_t size() const noexcept {
    std::size_t s = 1;
    for (auto e : extents) s *= e;
    return s;
  }
  TensorRef<T> as_ref() const noexcept { return {data, extents, object}; }
};

/// Steps through one dimension of a column-major buffer.
template <class T>
class DimIterator {
 public:
  using iterator_category = std::bidirectional_iterator_tag;
  using value_type = std::remove_const_t<T>;
  using difference_type = std::ptrdiff_t;
  using pointer = T*;
  using reference = T&;

  DimIterator() = default;
  DimIterator(T* p, std::size_t stride) : p_(p), stride_(stride) {}

  reference operator*() const { return *p_; }
  pointer operator->() const { return p_; }

  DimIterator& operator++() {
    p_ += stride_;
    return *this;
  }
  DimIterator operator++(int) {
    DimIterator it = *this;
    p_ += stride_;
    return it;
  }
  DimIterator& operator--() {
    p_ -= stride_;
    return *this;
  }
  DimIterator operator--(int) {
    DimIterator it = *this;
    p_ -= stride_;
    return it;
  }
  DimIterator& operator+=(difference_type n) {
    p_ += n * static_cast<difference_type>(stride_);
    return *this;
  }
  friend DimIterator operator+(DimIterator it, difference_type n) {
    return it += n;
  }
  friend bool operator==(const DimIterator& a, const DimIterator& b) {
    return a.p_ == b.p_;
  }

  std::size_t stride() const noexcept { return stride_; }
  T* base() const noexcept { return p_; }

 private:
  T* p_ = nullptr;
  std::size_t stride_ = 1;
};

template <class T>
struct DimRange {
  DimIterator<T> first, last;
  DimIterator<T> begin() const { return first; }
  DimIterator<T> end() const { return last; }
  std::size_t size() const {
    return first.stride() == 0
               ? 0
               : static_cast<std::size_t>(last.base() - first.base()) /
                     first.stride();
  }
};

namespace detail {

template <class T, std::size_t k, std::size_t remaining>
class IndexProxy {
 public:
  IndexProxy(T* data, const std::size_t* extents, std::size_t offset,
             std::size_t stride)
      : data_(data), extents_(extents), offset_(offset), stride_(stride) {}

  decltype(auto) operator[](std::size_t i) const {
    constexpr std::size_t dim = k - remaining;
#if ARX_CHECK_BOUNDS
    if (i >= extents_[dim])
      throw std::out_of_range("index " + std::to_string(i) +
                              " out of range for dimension " +
                              std::to_string(dim));
#endif
    if constexpr (remaining == 1) {
      return (data_[offset_ + i * stride_]);
    } else {
      return IndexProxy<T, k, remaining - 1>(data_, extents_,
                                             offset_ + i * stride_,
                                             stride_ * extents_[dim]);
    }
  }

 private:
  T* data_;
  const std::size_t* extents_;
  std::size_t offset_, stride_;
};

template <std::size_t k, class... Args>
constexpr std::size_t leading_extents() {
  constexpr bool integral[] = {std::is_integral_v<std::remove_cvref_t<Args>>...,
                               false};
  std::size_t n = 0;
  while (n < sizeof...(Args) && n < k && integral[n]) ++n;
  return n;
}

template <class>
inline constexpr bool always_false = false;

}  // namespace detail

/// Dense tensor of rank k with column-major storage.
///
/// The first index varies fastest: element (i0, ..., i_{k-1}) is stored at
/// sum_d i_d * stride(d), stride(0) = 1, stride(d) = n_0 * ... * n_{d-1}.
/// A tensor either owns its buffer or wraps caller-owned storage, in which
/// case it never frees it.
template <std::floating_point T, std::size_t k>
class Tensor {
  static_assert(k >= 1, "tensor rank must be at least 1");

 public:
  using value_type = T;
  using pointer = T*;
  using const_pointer = const T*;
  using reference = T&;
  using const_reference = const T&;
  using iterator = T*;
  using const_iterator = const T*;
  using extents_type = std::array<std::size_t, k>;

  static constexpr std::size_t rank() noexcept { return k; }

  Tensor() = default;

  /// Extents, optionally followed by one of: fill value, generator
  /// f(i0, ..., i_{k-1}), raw pointer or span to wrap. Fewer than k extents
  /// replicate the last one.
  template <std::integral First, class... Rest>
  explicit Tensor(First first, const Rest&... rest) {
    using Args = std::tuple<First, Rest...>;
    constexpr std::size_t count = 1 + sizeof...(Rest);
    constexpr std::size_t n_ext = detail::leading_extents<k, First, Rest...>();
    static_assert(count - n_ext <= 1,
                  "too many arguments for tensor rank");
    auto args = std::forward_as_tuple(first, rest...);
    [&]<std::size_t... I>(std::index_sequence<I...>) {
      (set_extent(I, std::get<I>(args)), ...);
    }(std::make_index_sequence<n_ext>{});
    for (std::size_t d = n_ext; d < k; ++d) extents_[d] = extents_[n_ext - 1];
    size_ = product();

    if constexpr (count == n_ext) {
      allocate(true);
    } else {
      using Last = std::remove_cvref_t<std::tuple_element_t<n_ext, Args>>;
      const auto& last = std::get<n_ext>(args);
      if constexpr (std::is_pointer_v<Last>) {
        static_assert(std::is_same_v<Last, T*>,
                      "wrapped storage must match the element type");
        data_ = last;
        owns_ = false;
      } else if constexpr (std::is_same_v<Last, std::span<T>>) {
        wrap_span(last);
      } else if constexpr (std::is_arithmetic_v<Last>) {
        allocate(false);
        std::fill_n(data_, size_, static_cast<T>(last));
      } else {
        allocate(false);
        generate(last);
      }
    }
  }

  /// Nested literal; the outermost list is dimension 0. Ragged nesting throws
  /// std::domain_error.
  Tensor(nested_list_t<T, k> list) {
    std::array<bool, k> seen{};
    measure<k>(list, seen);
    size_ = product();
    allocate(false);
    scatter<k>(list, 0, 1);
  }

  /// Runtime-checked construction: 1..k extents, replicate-last rule.
  static Tensor create(std::span<const std::ptrdiff_t> extents, T fill = T(0)) {
    if (extents.empty() || extents.size() > k)
      throw arity_error("expected 1.." + std::to_string(k) + " extents, got " +
                        std::to_string(extents.size()));
    Tensor t;
    for (std::size_t d = 0; d < k; ++d)
      t.set_extent(d, extents[std::min(d, extents.size() - 1)]);
    t.size_ = t.product();
    t.allocate(false);
    std::fill_n(t.data_, t.size_, fill);
    return t;
  }
  static Tensor create(std::initializer_list<std::ptrdiff_t> extents,
                       T fill = T(0)) {
    return create(std::span<const std::ptrdiff_t>(extents.begin(), extents.size()),
                  fill);
  }

  /// Views `buffer` in place. Throws std::domain_error if it is too short.
  template <std::integral... I>
  static Tensor wrap(std::span<T> buffer, I... extents) {
    static_assert(sizeof...(I) >= 1 && sizeof...(I) <= k,
                  "expected 1..k extents");
    return Tensor(extents..., buffer);
  }

  Tensor(const Tensor& other) : extents_(other.extents_), size_(other.size_) {
    allocate(false);
    std::copy_n(other.data_, size_, data_);
  }

  Tensor(Tensor&& other) noexcept
      : extents_(other.extents_),
        size_(other.size_),
        storage_(std::move(other.storage_)),
        data_(other.data_),
        owns_(other.owns_) {
    other.release();
  }

  /// Evaluates `e` directly into freshly allocated storage.
  Tensor(const Expr<T>& e);

  ~Tensor() = default;

  /// Same shape: element copy through the copy kernel. Different shape:
  /// reallocates, unless this tensor wraps external storage.
  Tensor& operator=(const Tensor& other) {
    if (this == &other) return *this;
    if (extents_ != other.extents_) {
      if (!owns_)
        throw shape_error("cannot reshape a wrapped tensor");
      extents_ = other.extents_;
      size_ = other.size_;
      allocate(false);
    }
    if (size_ != 0) active_context().copy(size_, other.data_, data_);
    return *this;
  }

  Tensor& operator=(Tensor&& other) noexcept {
    if (this != &other) {
      extents_ = other.extents_;
      size_ = other.size_;
      storage_ = std::move(other.storage_);
      data_ = other.data_;
      owns_ = other.owns_;
      other.release();
    }
    return *this;
  }

  Tensor& operator=(const Expr<T>& e);
  Tensor& operator+=(const Expr<T>& e);
  Tensor& operator+=(const Tensor& x);

  // shape

  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }
  const extents_type& extents() const noexcept { return extents_; }
  std::size_t extent(std::size_t d) const {
    if (d >= k) throw std::domain_error("dimension out of range");
    return extents_[d];
  }

  /// Linear step along dimension d, for 0 <= d <= k; stride(k) == size().
  std::size_t stride(std::size_t d) const {
    if (d > k)
      throw std::domain_error("stride(" + std::to_string(d) +
                              ") out of range for rank " + std::to_string(k));
    std::size_t s = 1;
    for (std::size_t j = 0; j < d; ++j) s *= extents_[j];
    return s;
  }

  bool owns_storage() const noexcept { return owns_; }
  T* data() noexcept { return data_; }
  const T* data() const noexcept { return data_; }

  // rank-specific interface

  std::size_t rows() const noexcept
    requires(k == 2)
  {
    return extents_[0];
  }
  std::size_t columns() const noexcept
    requires(k == 2)
  {
    return extents_[1];
  }
  /// Euclidean norm through the nrm2 kernel.
  T norm() const
    requires(k == 1)
  {
    return active_context().nrm2(size_, data_);
  }

  // element access

  std::size_t offset_of(const std::array<std::size_t, k>& idx) const noexcept {
    std::size_t off = 0, s = 1;
    for (std::size_t d = 0; d < k; ++d) {
      off += idx[d] * s;
      s *= extents_[d];
    }
    return off;
  }

  /// Checked variant for indices whose count is only known at run time.
  std::size_t offset_of(std::span<const std::size_t> idx) const {
    if (idx.size() != k)
      throw arity_error("expected " + std::to_string(k) + " indices, got " +
                        std::to_string(idx.size()));
    std::array<std::size_t, k> a;
    std::copy_n(idx.begin(), k, a.begin());
    check_bounds(a);
    return offset_of(a);
  }

  template <std::integral... I>
  T& operator()(I... idx) {
    static_assert(sizeof...(I) == k,
                  "number of indices does not match tensor rank");
    const std::array<std::size_t, k> a{static_cast<std::size_t>(idx)...};
#if ARX_CHECK_BOUNDS
    check_bounds(a);
#endif
    return data_[offset_of(a)];
  }
  template <std::integral... I>
  const T& operator()(I... idx) const {
    return const_cast<Tensor&>(*this)(idx...);
  }

  template <std::integral... I>
  T& at(I... idx) {
    static_assert(sizeof...(I) == k,
                  "number of indices does not match tensor rank");
    const std::array<std::size_t, k> a{static_cast<std::size_t>(idx)...};
    check_bounds(a);
    return data_[offset_of(a)];
  }
  template <std::integral... I>
  const T& at(I... idx) const {
    return const_cast<Tensor&>(*this).at(idx...);
  }

  /// Chained single-index access: t[i0][i1]...[i_{k-1}].
  decltype(auto) operator[](std::size_t i) { return index_first<T>(data_, i); }
  decltype(auto) operator[](std::size_t i) const {
    return index_first<const T>(data_, i);
  }

  // iteration

  iterator begin() noexcept { return data_; }
  iterator end() noexcept { return data_ + size_; }
  const_iterator begin() const noexcept { return data_; }
  const_iterator end() const noexcept { return data_ + size_; }
  auto rbegin() noexcept { return std::reverse_iterator<T*>(end()); }
  auto rend() noexcept { return std::reverse_iterator<T*>(begin()); }
  auto rbegin() const noexcept { return std::reverse_iterator<const T*>(end()); }
  auto rend() const noexcept { return std::reverse_iterator<const T*>(begin()); }

  template <std::size_t d>
  using diterator = DimIterator<T>;

  template <std::size_t d>
  DimIterator<T> dbegin() {
    static_assert(d < k, "dimension out of range");
    return {data_, stride(d)};
  }
  template <std::size_t d>
  DimIterator<T> dend() {
    static_assert(d < k, "dimension out of range");
    return {empty() ? data_ : data_ + stride(d + 1), stride(d)};
  }
  /// Iteration along d starting at the element an outer iterator points to.
  template <std::size_t d, class It>
  DimIterator<T> dbegin(It it) {
    static_assert(d < k, "dimension out of range");
    return {&*it, stride(d)};
  }
  template <std::size_t d, class It>
  DimIterator<T> dend(It it) {
    static_assert(d < k, "dimension out of range");
    return {&*it + stride(d + 1), stride(d)};
  }

  DimRange<T> dim_range(std::size_t d) { return dim_range(d, data_); }
  DimRange<T> dim_range(std::size_t d, const DimIterator<T>& base) {
    return dim_range(d, base.base());
  }
  DimRange<T> dim_range(std::size_t d, T* base) {
    if (d >= k)
      throw std::domain_error("dimension " + std::to_string(d) +
                              " out of range for rank " + std::to_string(k));
    const std::size_t s = stride(d);
    if (empty()) return {{base, s}, {base, s}};
    return {{base, s}, {base + stride(d + 1), s}};
  }
  DimRange<const T> dim_range(std::size_t d) const {
    auto r = const_cast<Tensor&>(*this).dim_range(d);
    return {{r.first.base(), r.first.stride()}, {r.last.base(), r.last.stride()}};
  }

  void fill(T value) { std::fill_n(data_, size_, value); }

  TensorRef<T> ref() const noexcept {
    return {data_, std::span<const std::size_t>(extents_), this};
  }
  DestRef<T> dest() noexcept {
    return {data_, std::span<const std::size_t>(extents_), this};
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.extents_ == b.extents_ && std::equal(a.begin(), a.end(), b.begin());
  }

 private:
  template <class U>
  void set_extent(std::size_t d, U e) {
    if constexpr (std::is_signed_v<U>) {
      if (e < 0)
        throw std::domain_error("negative extent " + std::to_string(e));
    }
    extents_[d] = static_cast<std::size_t>(e);
  }

  std::size_t product() const noexcept {
    std::size_t s = 1;
    for (auto e : extents_) s *= e;
    return s;
  }

  void allocate(bool zero) {
    owns_ = true;
    if (size_ == 0) {
      storage_.reset();
      data_ = nullptr;
      return;
    }
    storage_ = zero ? std::make_unique<T[]>(size_)
                    : std::make_unique_for_overwrite<T[]>(size_);
    data_ = storage_.get();
    active_context().note_allocation();
  }

  void release() noexcept {
    extents_.fill(0);
    size_ = 0;
    data_ = nullptr;
    owns_ = true;
  }

  void wrap_span(std::span<T> buffer) {
    if (buffer.size() < size_)
      throw std::domain_error("buffer of " + std::to_string(buffer.size()) +
                              " elements cannot hold " + std::to_string(size_));
    data_ = buffer.data();
    owns_ = false;
  }

  template <class Gen>
  void generate(Gen& gen) {
    static_assert(
        []<std::size_t... I>(std::index_sequence<I...>) {
          return std::is_invocable_v<Gen&, decltype(I, std::size_t{})...>;
        }(std::make_index_sequence<k>{}),
        "last argument must be a fill value, a generator taking k indices, or "
        "storage to wrap");
    if (size_ == 0) return;
    std::array<std::size_t, k> idx{};
    for (std::size_t off = 0; off < size_; ++off) {
      data_[off] = static_cast<T>(std::apply(gen, idx));
      for (std::size_t d = 0; d < k; ++d) {
        if (++idx[d] < extents_[d]) break;
        idx[d] = 0;
      }
    }
  }

  void check_bounds(const std::array<std::size_t, k>& idx) const {
    for (std::size_t d = 0; d < k; ++d)
      if (idx[d] >= extents_[d])
        throw std::out_of_range("index " + std::to_string(idx[d]) +
                                " out of range for dimension " +
                                std::to_string(d) + " of extent " +
                                std::to_string(extents_[d]));
  }

  template <class U>
  decltype(auto) index_first(U* data, std::size_t i) const {
#if ARX_CHECK_BOUNDS
    if (i >= extents_[0])
      throw std::out_of_range("index " + std::to_string(i) +
                              " out of range for dimension 0");
#endif
    if constexpr (k == 1)
      return (data[i]);
    else
      return detail::IndexProxy<U, k, k - 1>(data, extents_.data(), i,
                                             extents_[0]);
  }

  template <std::size_t depth>
  void measure(const nested_list_t<T, depth>& list, std::array<bool, k>& seen) {
    constexpr std::size_t dim = k - depth;
    if (!seen[dim]) {
      extents_[dim] = list.size();
      seen[dim] = true;
    } else if (extents_[dim] != list.size()) {
      throw std::domain_error("ragged nested literal at dimension " +
                              std::to_string(dim));
    }
    if constexpr (depth > 1)
      for (const auto& sub : list) measure<depth - 1>(sub, seen);
  }

  template <std::size_t depth>
  void scatter(const nested_list_t<T, depth>& list, std::size_t offset,
               std::size_t stride) {
    constexpr std::size_t dim = k - depth;
    std::size_t j = 0;
    for (const auto& sub : list) {
      if constexpr (depth == 1)
        data_[offset + stride * j] = sub;
      else
        scatter<depth - 1>(sub, offset + stride * j, stride * extents_[dim]);
      ++j;
    }
  }

  extents_type extents_{};
  std::size_t size_ = 0;
  std::unique_ptr<T[]> storage_;
  T* data_ = nullptr;
  bool owns_ = true;
};

template <class T>
using Vector = Tensor<T, 1>;
template <class T>
using Matrix = Tensor<T, 2>;

template <class X>
inline constexpr bool is_tensor_v = false;
template <class T, std::size_t k>
inline constexpr bool is_tensor_v<Tensor<T, k>> = true;

}  // namespace arx
