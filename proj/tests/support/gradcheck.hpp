#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ambiseg/rng.hpp"
#include "ambiseg/tensor.hpp"

namespace ambiseg::testing {

inline Tensor64 random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  Tensor64 t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

using ScalarFn = std::function<Tensor64(const std::vector<Tensor64>&)>;

struct GradDiff {
  double diff2 = 0.0;      // squared L2 distance analytic vs numeric
  double analytic2 = 0.0;  // squared L2 norms
  double numeric2 = 0.0;

  double relative(double floor = 1e-8) const {
    return std::sqrt(diff2) / std::max({std::sqrt(analytic2), std::sqrt(numeric2), floor});
  }
};

/// Analytic gradient of `f` against central differences, one entry per
/// input. `f` must rebuild its graph from the current input values on every
/// call.
inline std::vector<GradDiff> grad_diffs(const ScalarFn& f, std::vector<Tensor64>& inputs,
                                        double h = 1e-3) {
  for (auto& x : inputs) x.zero_grad();
  f(inputs).backward();
  std::vector<GradDiff> out;
  for (auto& x : inputs) {
    std::vector<double> analytic(x.grad().begin(), x.grad().end());
    auto data = x.data();
    GradDiff d;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = f(inputs).item();
      data[i] = saved - h;
      const double down = f(inputs).item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      d.diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      d.analytic2 += analytic[i] * analytic[i];
      d.numeric2 += numeric * numeric;
    }
    out.push_back(d);
  }
  return out;
}

/// Largest relative L2 error over the inputs. Norms below 1e-8 count as an
/// exactly zero gradient.
inline double gradcheck(const ScalarFn& f, std::vector<Tensor64>& inputs, double h = 1e-3) {
  double worst = 0.0;
  for (const auto& d : grad_diffs(f, inputs, h)) worst = std::max(worst, d.relative());
  return worst;
}

/// Relative L2 error of the concatenated gradient of all inputs.
inline double gradcheck_joint(const ScalarFn& f, std::vector<Tensor64>& inputs, double h = 1e-3) {
  GradDiff total;
  for (const auto& d : grad_diffs(f, inputs, h)) {
    total.diff2 += d.diff2;
    total.analytic2 += d.analytic2;
    total.numeric2 += d.numeric2;
  }
  return total.relative();
}

}  // namespace ambiseg::testing
