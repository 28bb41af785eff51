#pragma once

// Planted-model generator: draws a ground-truth TWD model, samples a fixed
// fraction of positions without replacement and observes the model there,
// optionally with additive Gaussian noise.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "ptwd/error.hpp"
#include "ptwd/tensor_store.hpp"
#include "ptwd/twd.hpp"

namespace ptwd {

struct SynthSpec {
  Dims dims{10, 10, 8};
  Ranks ranks{{2, 2, 2}, {2, 2, 2}};
  double density = 0.3;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  double value_scale = 1.0;
  std::size_t max_elements = kDefaultDenseCap;

  void validate() const {
    if (!(density > 0.0 && density <= 1.0)) throw ParameterError("density must be in (0, 1]");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ParameterError("noise_sigma must be >= 0");
    if (!(value_scale > 0.0) || !std::isfinite(value_scale)) throw ParameterError("value_scale must be > 0");
    if (dims.i == 0 || dims.j == 0 || dims.k == 0) throw ParameterError("dims must be >= 1");
    if (!ranks.valid()) throw ParameterError("all ranks must be >= 1");
    if (dims.total() > max_elements) {
      throw SizeError("synthetic tensor of " + std::to_string(dims.total()) + " elements exceeds cap " +
                      std::to_string(max_elements));
    }
  }

  std::size_t observed_count() const {
    return static_cast<std::size_t>(std::ceil(density * static_cast<double>(dims.total())));
  }
};

/// Seed of the planted-factor stream. Distinct from the seed itself so a
/// model trained with init_factors(seed) never starts at a scaled copy of the
/// planted factors.
inline std::uint64_t planted_seed(std::uint64_t seed) { return seed ^ 0xa0761d6478bd642fULL; }

struct SynthData {
  SparseTensor observed;
  TwdFactors truth;
};

inline SynthData generate(const SynthSpec& spec) {
  spec.validate();
  TwdFactors truth = init_factors(spec.dims, spec.ranks, planted_seed(spec.seed), spec.value_scale);

  const std::size_t total = spec.dims.total();
  const std::size_t count = std::min(spec.observed_count(), total);

  // Partial Fisher-Yates over linear positions.
  std::vector<std::size_t> pos(total);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  std::mt19937_64 pick(spec.seed ^ 0xd1b54a32d192ed03ULL);
  for (std::size_t n = 0; n < count; ++n) {
    std::uniform_int_distribution<std::size_t> u(n, total - 1);
    std::swap(pos[n], pos[u(pick)]);
  }
  pos.resize(count);
  std::sort(pos.begin(), pos.end());

  std::mt19937_64 noise_rng(spec.seed ^ 0x8cb92ba72f3d8dd7ULL);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);

  const Dims& d = spec.dims;
  Contraction work(spec.ranks);
  std::vector<Entry> entries;
  entries.reserve(count);
  for (std::size_t p : pos) {
    const std::size_t k = p % d.k;
    const std::size_t j = (p / d.k) % d.j;
    const std::size_t i = p / (d.k * d.j);
    double v = work.value(truth, i, j, k);
    if (spec.noise_sigma > 0.0) v += noise(noise_rng);
    entries.push_back({i, j, k, v});
  }
  return {SparseTensor(d, std::move(entries)), std::move(truth)};
}

/// Every position of the planted model not present in `observed`, valued by
/// the noiseless model. Used as the held-out set in recovery experiments.
inline SparseTensor complement_truth(const TwdFactors& truth, const SparseTensor& observed) {
  const Dims& d = truth.dims();
  std::vector<char> seen(d.total(), 0);
  for (const Entry& e : observed.entries()) seen[(e.i * d.j + e.j) * d.k + e.k] = 1;
  Contraction work(truth.ranks());
  std::vector<Entry> out;
  for (std::size_t i = 0; i < d.i; ++i)
    for (std::size_t j = 0; j < d.j; ++j)
      for (std::size_t k = 0; k < d.k; ++k)
        if (!seen[(i * d.j + j) * d.k + k]) out.push_back({i, j, k, work.value(truth, i, j, k)});
  return SparseTensor(d, std::move(out));
}

}  // namespace ptwd
