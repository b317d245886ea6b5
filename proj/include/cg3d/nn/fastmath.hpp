#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace cg3d::nn {

// Inline exp for float loops; libm's expf does not vectorize. Relative error
// is a few ulp over the clamped range. Double stays on std::exp so the
// 64-bit gradient checks see the exact function.
inline float exp_fast(float x) {
  x = x < -87.0f ? -87.0f : x;
  x = x > 88.0f ? 88.0f : x;
  const float n = std::floor(x * 1.44269504088896341f + 0.5f);
  float r = x - n * 0.693359375f;
  r = r + n * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

inline double exp_fast(double x) { return std::exp(x); }

inline float tanh_fast(float x) {
  x = x < -10.0f ? -10.0f : x;
  x = x > 10.0f ? 10.0f : x;
  const float e = exp_fast(2.0f * x);
  return 1.0f - 2.0f / (e + 1.0f);
}

inline double tanh_fast(double x) { return std::tanh(x); }

}  // namespace cg3d::nn
