#include "rage/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace rage {

double finite_diff_check(const ScalarFn& f, const Tensor<double>& x,
                         double eps) {
  Tensor<double> leaf = x.detach();
  leaf.set_requires_grad(true);
  f(leaf).backward();
  const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  NoGradGuard no_grad;
  std::vector<double> probe(x.data().begin(), x.data().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double plus = f(Tensor<double>(x.shape(), probe)).item();
    probe[i] = saved - eps;
    const double minus = f(Tensor<double>(x.shape(), probe)).item();
    probe[i] = saved;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace rage
