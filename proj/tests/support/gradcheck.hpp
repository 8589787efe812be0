#pragma once

// Central finite-difference checks for scalar-valued tape computations.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fargan/layers.hpp"

namespace fargan::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;  // name of the tensor with the largest error
  std::size_t probed = 0;
  std::size_t skipped = 0;  // coordinates sitting on a kink
};

/// Compares backward() against central differences for every named tensor.
/// At most `max_entries` coordinates per tensor are probed (chosen by `rng`);
/// the error for a tensor is |analytic - numeric| / max(|analytic|, |numeric|)
/// measured as Euclidean norms over the probed coordinates.
inline GradCheck check_gradients(const std::function<Tensor<double>()>& loss_fn,
                                 const std::vector<std::pair<std::string, Tensor<double>>>& params, Rng& rng,
                                 std::size_t max_entries = 16, double step = 1e-5) {
  for (auto [name, t] : params) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss_fn());

  struct Probe {
    std::string name;
    double diff = 0, analytic = 0, numeric = 0;
  };
  double peak = 0.0;
  for (auto [name, t] : params) {
    for (double g : t.grad()) peak = std::max(peak, std::abs(g));
  }
  std::vector<Probe> probes;
  std::size_t probed = 0, skipped = 0;
  NoGradGuard guard;
  for (auto [name, t] : params) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> order(static_cast<std::size_t>(t.numel()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    std::size_t used = 0;
    for (std::size_t i : order) {
      if (used == max_entries) break;
      auto central = [&](double h) {
        const double saved = t.values()[i];
        t.values()[i] = saved + h;
        const double plus = loss_fn().item();
        t.values()[i] = saved - h;
        const double minus = loss_fn().item();
        t.values()[i] = saved;
        return (plus - minus) / (2.0 * h);
      };
      // A leaky-relu / abs / max kink inside [x - h, x + h] shows up as
      // disagreement between the estimates at h and h / 2 (smooth points
      // agree to O(h^2)); those coordinates are not differentiable at this
      // resolution and are skipped.
      const double numeric = central(step);
      const double refined = central(step / 2);
      if (std::abs(numeric - refined) > 1e-6 * std::max(std::abs(numeric), 1e-3 * peak)) {
        ++skipped;
        continue;
      }
      ++used;
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    probed += used;
    probes.push_back({name, std::sqrt(diff2), std::sqrt(a2), std::sqrt(n2)});
  }

  // Gradients that vanish by construction (a key bias under softmax, a
  // per-channel shift ahead of normalisation) are measured against 1e-3 of
  // the largest gradient norm in the check instead of their own.
  double largest = 0.0;
  for (const auto& p : probes) largest = std::max({largest, p.analytic, p.numeric});
  GradCheck result;
  result.probed = probed;
  result.skipped = skipped;
  for (const auto& p : probes) {
    const double scale = std::max({p.analytic, p.numeric, 1e-3 * largest, 1e-12});
    const double rel = p.diff / scale;
    if (rel >= result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst = p.name;
    }
  }
  return result;
}

/// sum(out * r) for a fixed random r: a scalar that depends on every output.
inline Tensor<double> project(const Tensor<double>& out, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x9D);
  Tensor<double> r(out.shape(), normal_vector<double>(rng, static_cast<std::size_t>(out.numel())));
  return sum(mul(out, r));
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return Tensor<double>(std::move(shape), normal_vector<double>(rng, n, stddev));
}

/// Named trainable tensors of a module, for check_gradients.
inline std::vector<std::pair<std::string, Tensor<double>>> trainable_of(const ParamList<double>& list) {
  std::vector<std::pair<std::string, Tensor<double>>> out;
  for (const auto& p : list) {
    if (p.trainable) out.emplace_back(p.name, p.tensor);
  }
  return out;
}

}  // namespace fargan::testing
