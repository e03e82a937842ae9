#include "ncadapt/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "ncadapt/errors.hpp"

namespace ncadapt {

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
void check_extents(const Shape& shape) {
  if (shape.empty()) throw UsageError("tensor shape must have at least one axis");
  for (std::size_t e : shape)
    if (e == 0) throw UsageError("tensor extent must be >= 1, got " + shape_str(shape));
}
}  // namespace

template <class T>
BasicTensor<T> BasicTensor<T>::full(const Shape& shape, T value) {
  check_extents(shape);
  return BasicTensor(shape, std::vector<T>(numel(shape), value));
}

template <class T>
BasicTensor<T> BasicTensor<T>::from_values(const Shape& shape, std::vector<T> values) {
  check_extents(shape);
  if (values.size() != numel(shape))
    throw UsageError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  return BasicTensor(shape, std::move(values));
}

template <class T>
BasicTensor<T> BasicTensor<T>::uniform(const Shape& shape, double lo, double hi, Rng& rng) {
  check_extents(shape);
  if (!(lo < hi)) throw UsageError("uniform fill requires lo < hi");
  std::vector<T> v(numel(shape));
  for (T& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return BasicTensor(shape, std::move(v));
}

template <class T>
bool BasicTensor<T>::all_finite() const {
  for (T x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshaped(const Shape& shape) const {
  check_extents(shape);
  if (numel(shape) != data_.size())
    throw UsageError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return BasicTensor(shape, data_);
}

template <class T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(T)) == 0;
}

template <class T>
BasicTensor<T> bernoulli_mask(const Shape& spatial, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw UsageError("bernoulli probability outside [0,1]");
  auto mask = BasicTensor<T>::zeros(spatial);
  for (T& x : mask.data()) x = rng.uniform() < p ? T(1) : T(0);
  return mask;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template bool bitwise_equal(const BasicTensor<float>&, const BasicTensor<float>&);
template bool bitwise_equal(const BasicTensor<double>&, const BasicTensor<double>&);
template BasicTensor<float> bernoulli_mask<float>(const Shape&, double, Rng&);
template BasicTensor<double> bernoulli_mask<double>(const Shape&, double, Rng&);

}  // namespace ncadapt
