#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "roiedit/networks.hpp"
#include "roiedit/training.hpp"

namespace roiedit::testing {

/// Miniature architecture for gradient checks: 4x4 images, two stages, a few
/// hundred parameters per network.
inline ArchSpec tiny_arch() {
  ArchSpec a;
  a.image_size = 4;
  a.encoder_widths = {2, 2};
  a.decoder_widths = {2, 2};
  a.structure_channels = kStructureChannels;
  a.texture_dim = 4;
  a.disc_widths = {2, 2};
  a.patch_widths = {2};
  a.patch_size = 2;
  a.patch_hidden = 3;
  return a;
}

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Tensor<T> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

struct GradMismatch {
  std::string name;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel = 0;
};

/// Compares analytic gradients of `loss` against central differences for
/// every parameter entry. `loss` must rebuild the graph on each call.
inline GradMismatch worst_gradient_error(ParamSet<double>& params, const std::function<ag::Var<double>()>& loss,
                                         double step = 1e-4) {
  params.set_trainable(true);
  params.zero_grad();
  ag::backward(loss());
  GradMismatch worst;
  for (const auto& [name, p] : params.entries()) {
    const Tensor<double> analytic = p->has_grad() ? p->grad : Tensor<double>(p->value.shape());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      double plus, minus;
      {
        ag::NoGradGuard g;
        p->value[i] = saved + step;
        plus = loss()->value[0];
        p->value[i] = saved - step;
        minus = loss()->value[0];
      }
      p->value[i] = saved;
      const double numeric = (plus - minus) / (2 * step);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max(1e-6, std::max(std::abs(a), std::abs(numeric)));
      if (rel > worst.rel) worst = {name, i, a, numeric, rel};
    }
  }
  return worst;
}

}  // namespace roiedit::testing
