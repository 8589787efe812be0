#pragma once

// Literal scalar-loop SPADE: per-channel statistics over (batch, y, x),
// then gamma(m) * (h - mu) / (sigma + eps) + beta(m) with the modulation
// maps computed by explicit 3x3 same-padding convolutions.

#include <cmath>
#include <vector>

#include "fargan/spade.hpp"

namespace fargan::testing {

struct Volume {
  int n, c, h, w;
  std::vector<double> v;
  double& at(int a, int b, int y, int x) { return v[((a * c + b) * h + y) * w + x]; }
  double at(int a, int b, int y, int x) const { return v[((a * c + b) * h + y) * w + x]; }
};

inline Volume to_volume(const Tensor<double>& t) {
  return {static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)),
          static_cast<int>(t.dim(3)), t.values()};
}

inline Volume conv3_same(const Volume& in, const Tensor<double>& weight, const Tensor<double>& bias) {
  const int out_c = static_cast<int>(weight.dim(0));
  Volume out{in.n, out_c, in.h, in.w, std::vector<double>(static_cast<std::size_t>(in.n * out_c * in.h * in.w))};
  for (int n = 0; n < in.n; ++n)
    for (int o = 0; o < out_c; ++o)
      for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
          double acc = bias[o];
          for (int c = 0; c < in.c; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = y + ky - 1, ix = x + kx - 1;
                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                acc += weight.at(o, c, ky, kx) * in.at(n, c, iy, ix);
              }
          out.at(n, o, y, x) = acc;
        }
  return out;
}

inline Tensor<double> spade_oracle(const SpadeModule<double>& spade, const Tensor<double>& feature,
                                   const Tensor<double>& cond) {
  const Volume h = to_volume(feature);
  Volume hidden = conv3_same(to_volume(cond), spade.shared.weight, spade.shared.bias);
  for (double& e : hidden.v) e = e > 0 ? e : 0.2 * e;
  const Volume gamma = conv3_same(hidden, spade.gamma_head.weight, spade.gamma_head.bias);
  const Volume beta = conv3_same(hidden, spade.beta_head.weight, spade.beta_head.bias);

  Tensor<double> out = Tensor<double>::zeros(feature.shape());
  const double count = static_cast<double>(h.n * h.h * h.w);
  for (int c = 0; c < h.c; ++c) {
    double mu = 0.0;
    for (int n = 0; n < h.n; ++n)
      for (int y = 0; y < h.h; ++y)
        for (int x = 0; x < h.w; ++x) mu += h.at(n, c, y, x);
    mu /= count;
    double var = 0.0;
    for (int n = 0; n < h.n; ++n)
      for (int y = 0; y < h.h; ++y)
        for (int x = 0; x < h.w; ++x) var += h.at(n, c, y, x) * h.at(n, c, y, x) - mu * mu;
    const double sigma = std::sqrt(var / count);
    for (int n = 0; n < h.n; ++n)
      for (int y = 0; y < h.h; ++y)
        for (int x = 0; x < h.w; ++x) {
          out.at(n, c, y, x) =
              gamma.at(n, c, y, x) * (h.at(n, c, y, x) - mu) / (sigma + SpadeModule<double>::kEpsilon) +
              beta.at(n, c, y, x);
        }
  }
  return out;
}

}  // namespace fargan::testing
