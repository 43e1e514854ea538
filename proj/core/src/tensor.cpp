#include "adaprune/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace adaprune {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

long long shape_numel(const Shape& s) {
  long long n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) {
  long long n = shape_numel(shape);
  st_ = std::make_shared<Storage>();
  st_->shape = std::move(shape);
  st_->v.assign(static_cast<size_t>(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  long long n = shape_numel(shape);
  if (n != static_cast<long long>(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  st_ = std::make_shared<Storage>();
  st_->shape = std::move(shape);
  st_->v = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor::Storage& Tensor::st() {
  if (!st_) throw UsageError("operation on an undefined tensor");
  return *st_;
}

const Tensor::Storage& Tensor::st() const {
  if (!st_) throw UsageError("operation on an undefined tensor");
  return *st_;
}

const Shape& Tensor::shape() const { return st().shape; }

int Tensor::dim(int i) const {
  const Shape& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size()))
    throw ShapeError("dim index " + std::to_string(i) + " out of range for " + shape_str(s));
  return s[i];
}

long long Tensor::size() const { return static_cast<long long>(st().v.size()); }

std::span<double> Tensor::values() { return st().v; }
std::span<const double> Tensor::values() const { return st().v; }

double Tensor::value() const {
  if (size() != 1) throw UsageError("value() on tensor of shape " + shape_str(shape()));
  return st().v[0];
}

static size_t flat_index(const Shape& shape, std::initializer_list<int> idx) {
  if (idx.size() != shape.size())
    throw ShapeError("index rank " + std::to_string(idx.size()) + " vs shape " + shape_str(shape));
  size_t flat = 0;
  size_t d = 0;
  for (int i : idx) {
    if (i < 0 || i >= shape[d]) throw ShapeError("index out of bounds in " + shape_str(shape));
    flat = flat * static_cast<size_t>(shape[d]) + static_cast<size_t>(i);
    ++d;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<int> idx) { return st().v[flat_index(shape(), idx)]; }
double Tensor::at(std::initializer_list<int> idx) const { return st().v[flat_index(shape(), idx)]; }

bool Tensor::requires_grad() const { return st_ && st_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  Storage& s = st();
  s.requires_grad = on;
  if (on && s.g.size() != s.v.size()) s.g.assign(s.v.size(), 0.0);
  if (!on) s.g.clear();
}

std::span<double> Tensor::grad() {
  Storage& s = st();
  if (!s.requires_grad) throw UsageError("grad() on tensor without requires_grad");
  return s.g;
}

std::span<const double> Tensor::grad() const {
  const Storage& s = st();
  if (!s.requires_grad) throw UsageError("grad() on tensor without requires_grad");
  return s.g;
}

void Tensor::zero_grad() {
  Storage& s = st();
  if (s.requires_grad) s.g.assign(s.v.size(), 0.0);
}

Tensor Tensor::clone() const {
  const Storage& s = st();
  return Tensor(s.shape, s.v);
}

void ensure_finite(const Tensor& t, const char* where) {
  for (double v : t.values()) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by ") + where);
  }
}

}  // namespace adaprune
