#include "unlearn/tensor.hpp"

#include <cstring>

namespace unlearn {

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
bool bit_identical(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 || std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(T)) == 0;
}

template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError(what + " contains non-finite values");
}

template bool bit_identical(const Tensor&, const Tensor&);
template bool bit_identical(const Tensor64&, const Tensor64&);
template void require_finite(const Tensor&, const std::string&);
template void require_finite(const Tensor64&, const std::string&);

}  // namespace unlearn
