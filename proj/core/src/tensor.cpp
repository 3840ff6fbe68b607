#include "kno/tensor.hpp"

#include <cmath>
#include <sstream>

#include "kno/errors.hpp"

namespace kno {

std::int64_t shape_product(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(std::vector<std::int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_product(shape) != static_cast<std::int64_t>(data.size()))
    throw ContractViolation("Tensor: shape " + shape_str() + " does not match data length " +
                            std::to_string(data.size()));
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) {
  auto n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  auto n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

void Tensor::check_finite(const char* what) const {
  for (double v : data)
    if (!std::isfinite(v))
      throw NumericError(std::string(what) + ": non-finite value encountered");
}

}  // namespace kno
