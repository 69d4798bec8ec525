#include "cssloc/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace cssloc {

std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
std::vector<T> l2_normalize(std::span<const T> x) {
  const T norm = std::sqrt(dot(x, x));
  if (norm <= static_cast<T>(kNormEpsilon)) throw DegenerateVectorError("l2_normalize: zero-norm vector");
  std::vector<T> out(x.begin(), x.end());
  for (auto& v : out) v /= norm;
  return out;
}

template <typename T>
T cosine_sim(std::span<const T> a, std::span<const T> b) {
  const T na = std::sqrt(dot(a, a)), nb = std::sqrt(dot(b, b));
  if (!(na > static_cast<T>(kNormEpsilon)) || !(nb > static_cast<T>(kNormEpsilon)))
    throw DegenerateVectorError("cosine_sim: zero-norm vector");
  return dot(a, b) / (na * nb);
}

template <typename T>
std::vector<T> softmax(std::span<const T> x) {
  std::vector<T> out(x.begin(), x.end());
  if (out.empty()) return out;
  const T mx = *std::max_element(out.begin(), out.end());
  T sum{0};
  for (auto& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : out) v /= sum;
  return out;
}

template std::vector<float> l2_normalize<float>(std::span<const float>);
template std::vector<double> l2_normalize<double>(std::span<const double>);
template float cosine_sim<float>(std::span<const float>, std::span<const float>);
template double cosine_sim<double>(std::span<const double>, std::span<const double>);
template std::vector<float> softmax<float>(std::span<const float>);
template std::vector<double> softmax<double>(std::span<const double>);

}  // namespace cssloc
