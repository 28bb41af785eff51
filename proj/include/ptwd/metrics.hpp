#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ptwd/error.hpp"
#include "ptwd/tensor_store.hpp"
#include "ptwd/twd.hpp"

namespace ptwd {

struct EvalReport {
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
};

/// RMSE and MAE of a residual vector, accumulated in index order.
inline EvalReport metrics_from_residuals(std::span<const double> residuals) {
  if (residuals.empty()) throw ParameterError("cannot evaluate on an empty set");
  double sq = 0.0;
  double abs = 0.0;
  for (double r : residuals) {
    sq += r * r;
    abs += std::abs(r);
  }
  const auto n = static_cast<double>(residuals.size());
  return {std::sqrt(sq / n), abs / n, residuals.size()};
}

/// Residuals y - y_hat over the test set, in the tensor's own value domain.
inline std::vector<double> residuals(const TwdFactors& f, const SparseTensor& test) {
  std::vector<double> out;
  out.reserve(test.size());
  Contraction work(f.ranks());
  for (const Entry& e : test.entries()) {
    check_index(f, e.i, e.j, e.k);
    out.push_back(e.value - work.value(f, e.i, e.j, e.k));
  }
  return out;
}

inline EvalReport evaluate(const TwdFactors& f, const SparseTensor& test) {
  if (test.empty()) throw ParameterError("cannot evaluate on an empty test set");
  return metrics_from_residuals(residuals(f, test));
}

/// Metrics in the raw interaction domain for a model trained on normalized
/// data: both y and y_hat are mapped through exp(v) - 1 before differencing.
inline EvalReport evaluate_raw(const TwdFactors& f, const SparseTensor& normalized_test) {
  if (normalized_test.empty()) throw ParameterError("cannot evaluate on an empty test set");
  if (!normalized_test.normalized()) throw StateError("raw-domain metrics need a normalized test set");
  std::vector<double> res;
  res.reserve(normalized_test.size());
  Contraction work(f.ranks());
  for (const Entry& e : normalized_test.entries()) {
    check_index(f, e.i, e.j, e.k);
    res.push_back(std::expm1(e.value) - std::expm1(work.value(f, e.i, e.j, e.k)));
  }
  return metrics_from_residuals(res);
}

}  // namespace ptwd
