#include "naslab/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "naslab/core/error.hpp"

namespace naslab {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw InputError("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_)) {
    throw InputError("tensor of shape " + shape_string(shape_) + " given " + std::to_string(values_.size()) +
                     " values");
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    throw InputError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double linf_norm(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw InputError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

Tensor slice_rows(const Tensor& t, int first, int count) {
  if (t.rank() < 1 || first < 0 || count < 0 || first + count > t.dim(0)) {
    throw InputError("slice_rows out of range for shape " + shape_string(t.shape()));
  }
  Shape shape = t.shape();
  const std::size_t row = t.size() / static_cast<std::size_t>(std::max(1, t.dim(0)));
  shape[0] = count;
  std::vector<double> values(t.data() + row * static_cast<std::size_t>(first),
                             t.data() + row * static_cast<std::size_t>(first + count));
  return Tensor(std::move(shape), std::move(values));
}

Tensor gather_rows(const Tensor& t, std::span<const int> rows) {
  if (t.rank() < 1) throw InputError("gather_rows on rank-0 tensor");
  Shape shape = t.shape();
  const std::size_t row = t.dim(0) > 0 ? t.size() / static_cast<std::size_t>(t.dim(0)) : 0;
  shape[0] = static_cast<int>(rows.size());
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= t.dim(0)) throw InputError("gather_rows index out of range");
    std::copy_n(t.data() + row * static_cast<std::size_t>(rows[i]), row, out.data() + row * i);
  }
  return out;
}

}  // namespace naslab
