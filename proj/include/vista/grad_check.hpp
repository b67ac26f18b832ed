#pragma once

#include "vista/tensor.hpp"

#include <algorithm>
#include <functional>
#include <random>

namespace vista {

struct GradCheckReport {
  double max_rel_error = 0.0;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  Index checked = 0;
};

/// How probe coordinates are chosen when not checking all of them: a seeded
/// random subset, or the coordinates with the largest analytic gradient. The
/// latter keeps long-pipeline checks conditioned: central differences cannot
/// resolve components below the evaluation-noise floor of f, so tiny entries
/// report noise rather than gradient quality.
enum class ProbeSelection { random, top_magnitude };

namespace detail {

/// Central-difference comparison without the eps-range guard; the public
/// grad_check enforces the contract, the CLI exposes free-range eps sweeps.
template <class Scalar>
GradCheckReport grad_check_impl(const std::function<TensorT<Scalar>(const TensorT<Scalar>&)>& f,
                                TensorT<Scalar> x, Scalar eps, Index max_checks,
                                std::uint64_t sample_seed,
                                ProbeSelection selection = ProbeSelection::random) {
  x.set_requires_grad(true);
  x.zero_grad();
  TensorT<Scalar> y = f(x);
  if (y.size() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
  y.backward();
  typename TensorT<Scalar>::Array analytic = x.grad();
  if (analytic.size() == 0) analytic = TensorT<Scalar>::Array::Zero(x.size());

  std::vector<Index> probe(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) probe[static_cast<std::size_t>(i)] = i;
  if (max_checks > 0 && max_checks < x.size()) {
    if (selection == ProbeSelection::top_magnitude) {
      std::partial_sort(probe.begin(), probe.begin() + max_checks, probe.end(),
                        [&](Index a, Index b) {
                          return std::abs(analytic[a]) > std::abs(analytic[b]);
                        });
    } else {
      std::mt19937_64 rng(sample_seed);
      std::shuffle(probe.begin(), probe.end(), rng);
    }
    probe.resize(static_cast<std::size_t>(max_checks));
  }

  GradCheckReport report;
  for (Index i : probe) {
    const Scalar saved = x.data()[i];
    x.data()[i] = saved + eps;
    const Scalar f_plus = f(x).value();
    x.data()[i] = saved - eps;
    const Scalar f_minus = f(x).value();
    x.data()[i] = saved;
    const double numeric = static_cast<double>((f_plus - f_minus) / (Scalar(2) * eps));
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    ++report.checked;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.analytic = a;
      report.numeric = numeric;
    }
  }
  return report;
}

}  // namespace detail

/// Central-difference check of the reverse-mode gradient of a scalar-valued
/// function at x. Relative error uses denominator max(|analytic|, |numeric|,
/// 1e-8). With max_checks > 0 a deterministic random subset of coordinates is
/// probed; 0 probes all of them.
template <class Scalar>
GradCheckReport grad_check(const std::function<TensorT<Scalar>(const TensorT<Scalar>&)>& f,
                           TensorT<Scalar> x, Scalar eps, Index max_checks = 0,
                           std::uint64_t sample_seed = 0x9e3779b9) {
  if (!(eps >= Scalar(1e-7) && eps <= Scalar(1e-3))) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  return detail::grad_check_impl(f, std::move(x), eps, max_checks, sample_seed);
}

}  // namespace vista
