#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "adaprune/errors.hpp"

namespace adaprune {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
long long shape_numel(const Shape& s);

/// Dense row-major tensor of doubles with an optional same-shape gradient
/// buffer. Copies are shallow handles: two Tensors may alias one storage.
/// A default-constructed Tensor is "undefined" and stands for an absent
/// optional argument (e.g. a conv without bias).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(st_); }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const;
  long long size() const;

  std::span<double> values();
  std::span<const double> values() const;
  double value() const;  // single-element accessor
  double& at(std::initializer_list<int> idx);
  double at(std::initializer_list<int> idx) const;

  bool requires_grad() const;
  /// Enabling allocates a zero gradient buffer of the same shape.
  void set_requires_grad(bool on);
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  bool same_storage(const Tensor& other) const { return st_ == other.st_; }
  /// Deep copy of values only (no gradient buffer, requires_grad off).
  Tensor clone() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> v;
    std::vector<double> g;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> st_;
  Storage& st();
  const Storage& st() const;
};

/// Throws NumericError naming `where` if any element is NaN or infinite.
void ensure_finite(const Tensor& t, const char* where);

}  // namespace adaprune
