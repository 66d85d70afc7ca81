#include "mmfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mmfuse/error.hpp"

namespace mmfuse {

GradcheckResult gradcheck(const std::function<Tensor()>& f, std::span<Tensor> params, double eps) {
  for (Tensor& p : params) {
    if (!p.is_leaf()) throw GraphError("gradcheck: parameters must be leaves");
    p.set_requires_grad(true);
    p.zero_grad();
  }
  const Tensor out = f();
  if (out.numel() != 1) {
    throw DimensionError("gradcheck: function output must be scalar, got " + shape_str(out.shape()));
  }
  out.backward();

  std::vector<std::vector<double>> analytic;
  for (const Tensor& p : params) {
    auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.numel(), 0.0);
  }

  NoGradGuard no_grad;
  GradcheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto central = [&](double h) {
        values[i] = saved + h;
        const double plus = f().item();
        values[i] = saved - h;
        const double minus = f().item();
        values[i] = saved;
        return (plus - minus) / (2.0 * h);
      };
      const double coarse = central(eps);
      const double fine = central(0.5 * eps);
      const double fd = (4.0 * fine - coarse) / 3.0;
      const double scale = std::max(1.0, std::fabs(fd));
      if (std::fabs(coarse - fine) / scale > kGradcheckTolerance) {
        ++result.skipped;
        continue;
      }
      ++result.checked;
      result.max_rel_error = std::max(result.max_rel_error, std::fabs(analytic[k][i] - fd) / scale);
    }
  }
  return result;
}

GradcheckResult gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double eps) {
  Tensor x = point.clone();
  std::vector<Tensor> params{x};
  return gradcheck([&] { return f(x); }, params, eps);
}

}  // namespace mmfuse
