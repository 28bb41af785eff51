#pragma once

// Tensor wheel decomposition of a third-order tensor:
//
//   x(i,j,k) = sum_{r1,r2,r3,h1,h2,h3} g[h1,h2,h3] a[r3,i,r1,h1] b[r1,j,r2,h2] c[r2,k,r3,h3]
//
// The ring factors a, b, c are chained through the ring ranks (r1, r2, r3) and
// each is tied to the core g through one core-link rank (h1, h2, h3).
// All arrays are dense, row-major, in the index order written above.

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptwd/error.hpp"
#include "ptwd/tensor_store.hpp"

namespace ptwd {

struct Ranks {
  std::array<std::size_t, 3> r{5, 5, 5};  // ring ranks R1, R2, R3
  std::array<std::size_t, 3> h{2, 2, 2};  // core-link ranks H1, H2, H3

  /// Expands a single latent dimension d into (d, d, d, 2, 2, 2).
  static Ranks from_dimension(std::size_t d) { return Ranks{{d, d, d}, {2, 2, 2}}; }

  bool valid() const noexcept {
    for (std::size_t v : r)
      if (v == 0) return false;
    for (std::size_t v : h)
      if (v == 0) return false;
    return true;
  }
  friend bool operator==(const Ranks&, const Ranks&) = default;
};

/// Parses "R1,R2,R3,H1,H2,H3".
inline Ranks parse_ranks(std::string_view text) {
  std::array<std::size_t, 6> v{};
  std::size_t n = 0;
  std::size_t p = 0;
  while (p <= text.size()) {
    auto q = text.find(',', p);
    if (q == std::string_view::npos) q = text.size();
    auto field = text.substr(p, q - p);
    if (n >= 6) throw ParameterError("ranks need six comma-separated values: '" + std::string(text) + "'");
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v[n]);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
      throw ParameterError("bad rank value '" + std::string(field) + "'");
    }
    ++n;
    p = q + 1;
  }
  if (n != 6) throw ParameterError("ranks need six comma-separated values: '" + std::string(text) + "'");
  Ranks r{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
  if (!r.valid()) throw ParameterError("all ranks must be >= 1");
  return r;
}

/// Core tensor plus the three ring factors. Shapes are fixed at construction:
///   g: H1 x H2 x H3
///   a: R3 x |I| x R1 x H1
///   b: R1 x |J| x R2 x H2
///   c: R2 x |K| x R3 x H3
class TwdFactors {
 public:
  TwdFactors() = default;

  TwdFactors(Dims dims, Ranks ranks) : dims_(dims), ranks_(ranks) {
    if (dims.i == 0 || dims.j == 0 || dims.k == 0) throw ParameterError("factor dims must be >= 1");
    if (!ranks.valid()) throw ParameterError("all ranks must be >= 1");
    const auto [r1, r2, r3] = ranks.r;
    const auto [h1, h2, h3] = ranks.h;
    g_.assign(h1 * h2 * h3, 0.0);
    a_.assign(r3 * dims.i * r1 * h1, 0.0);
    b_.assign(r1 * dims.j * r2 * h2, 0.0);
    c_.assign(r2 * dims.k * r3 * h3, 0.0);
  }

  const Dims& dims() const noexcept { return dims_; }
  const Ranks& ranks() const noexcept { return ranks_; }

  std::span<double> g() noexcept { return g_; }
  std::span<double> a() noexcept { return a_; }
  std::span<double> b() noexcept { return b_; }
  std::span<double> c() noexcept { return c_; }
  std::span<const double> g() const noexcept { return g_; }
  std::span<const double> a() const noexcept { return a_; }
  std::span<const double> b() const noexcept { return b_; }
  std::span<const double> c() const noexcept { return c_; }

  std::size_t g_index(std::size_t h1, std::size_t h2, std::size_t h3) const noexcept {
    return (h1 * ranks_.h[1] + h2) * ranks_.h[2] + h3;
  }
  std::size_t a_index(std::size_t r3, std::size_t i, std::size_t r1, std::size_t h1) const noexcept {
    return ((r3 * dims_.i + i) * ranks_.r[0] + r1) * ranks_.h[0] + h1;
  }
  std::size_t b_index(std::size_t r1, std::size_t j, std::size_t r2, std::size_t h2) const noexcept {
    return ((r1 * dims_.j + j) * ranks_.r[1] + r2) * ranks_.h[1] + h2;
  }
  std::size_t c_index(std::size_t r2, std::size_t k, std::size_t r3, std::size_t h3) const noexcept {
    return ((r2 * dims_.k + k) * ranks_.r[2] + r3) * ranks_.h[2] + h3;
  }

  std::size_t parameter_count() const noexcept { return g_.size() + a_.size() + b_.size() + c_.size(); }

  bool all_finite() const noexcept {
    for (const auto* v : {&g_, &a_, &b_, &c_})
      for (double x : *v)
        if (!std::isfinite(x)) return false;
    return true;
  }

  friend bool operator==(const TwdFactors&, const TwdFactors&) = default;

 private:
  Dims dims_{};
  Ranks ranks_{};
  std::vector<double> g_, a_, b_, c_;
};

/// Every element drawn independently from U[0, scale), in storage order
/// g, a, b, c.
inline TwdFactors init_factors(Dims dims, Ranks ranks, std::uint64_t seed, double scale) {
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ParameterError("init scale must be finite and >= 0");
  TwdFactors f(dims, ranks);
  if (scale == 0.0) return f;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, scale);
  for (auto part : {f.g(), f.a(), f.b(), f.c()})
    for (double& x : part) x = unif(rng);
  return f;
}

inline void check_index(const TwdFactors& f, std::size_t i, std::size_t j, std::size_t k) {
  if (!f.dims().contains(i, j, k)) {
    throw BoundsError("index (" + std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(k) +
                      ") outside dims " + detail::dims_string(f.dims()));
  }
}

/// Scratch buffers for the staged contraction at one (i, j, k). Reusable
/// across calls with the same ranks.
class Contraction {
 public:
  explicit Contraction(const Ranks& ranks) : ranks_(ranks) {
    const auto [r1, r2, r3] = ranks.r;
    const auto [h1, h2, h3] = ranks.h;
    ab_.resize(r3 * h1 * r2 * h2);
    abc_.resize(h1 * h2 * h3);
    gc_.resize(h1 * h2 * r2 * r3);
    da_.resize(r3 * r1 * h1);
    db_.resize(r1 * r2 * h2);
    dc_.resize(r2 * r3 * h3);
  }

  /// x-hat at (i, j, k). Leaves ab and abc (which is d x-hat / d g) populated.
  double value(const TwdFactors& f, std::size_t i, std::size_t j, std::size_t k) {
    const auto [R1, R2, R3] = ranks_.r;
    const auto [H1, H2, H3] = ranks_.h;
    auto a = f.a();
    auto b = f.b();
    auto c = f.c();
    auto g = f.g();

    // ab[r3,h1,r2,h2] = sum_r1 a[r3,i,r1,h1] b[r1,j,r2,h2]
    std::fill(ab_.begin(), ab_.end(), 0.0);
    for (std::size_t r3 = 0; r3 < R3; ++r3)
      for (std::size_t r1 = 0; r1 < R1; ++r1) {
        const double* arow = &a[f.a_index(r3, i, r1, 0)];
        const double* bblk = &b[f.b_index(r1, j, 0, 0)];
        for (std::size_t h1 = 0; h1 < H1; ++h1) {
          double* out = &ab_[((r3 * H1 + h1) * R2) * H2];
          const double av = arow[h1];
          for (std::size_t q = 0; q < R2 * H2; ++q) out[q] += av * bblk[q];
        }
      }

    // abc[h1,h2,h3] = sum_{r2,r3} ab[r3,h1,r2,h2] c[r2,k,r3,h3]
    std::fill(abc_.begin(), abc_.end(), 0.0);
    for (std::size_t r2 = 0; r2 < R2; ++r2)
      for (std::size_t r3 = 0; r3 < R3; ++r3) {
        const double* crow = &c[f.c_index(r2, k, r3, 0)];
        for (std::size_t h1 = 0; h1 < H1; ++h1)
          for (std::size_t h2 = 0; h2 < H2; ++h2) {
            const double w = ab_[((r3 * H1 + h1) * R2 + r2) * H2 + h2];
            double* out = &abc_[(h1 * H2 + h2) * H3];
            for (std::size_t h3 = 0; h3 < H3; ++h3) out[h3] += w * crow[h3];
          }
      }

    double x = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n) x += g[n] * abc_[n];
    return x;
  }

  /// Partial derivatives of x-hat with respect to the a, b, c slices touched
  /// by (i, j, k). Must follow value() on the same arguments.
  void slice_partials(const TwdFactors& f, std::size_t i, std::size_t j, std::size_t k) {
    const auto [R1, R2, R3] = ranks_.r;
    const auto [H1, H2, H3] = ranks_.h;
    auto a = f.a();
    auto b = f.b();
    auto c = f.c();
    auto g = f.g();

    // gc[h1,h2,r2,r3] = sum_h3 g[h1,h2,h3] c[r2,k,r3,h3]
    for (std::size_t h1 = 0; h1 < H1; ++h1)
      for (std::size_t h2 = 0; h2 < H2; ++h2) {
        const double* grow = &g[f.g_index(h1, h2, 0)];
        for (std::size_t r2 = 0; r2 < R2; ++r2)
          for (std::size_t r3 = 0; r3 < R3; ++r3) {
            const double* crow = &c[f.c_index(r2, k, r3, 0)];
            double s = 0.0;
            for (std::size_t h3 = 0; h3 < H3; ++h3) s += grow[h3] * crow[h3];
            gc_[((h1 * H2 + h2) * R2 + r2) * R3 + r3] = s;
          }
      }

    // da[r3,r1,h1] = sum_{r2,h2} b[r1,j,r2,h2] gc[h1,h2,r2,r3]
    // db[r1,r2,h2] = sum_{r3,h1} a[r3,i,r1,h1] gc[h1,h2,r2,r3]
    std::fill(da_.begin(), da_.end(), 0.0);
    std::fill(db_.begin(), db_.end(), 0.0);
    for (std::size_t r3 = 0; r3 < R3; ++r3)
      for (std::size_t r1 = 0; r1 < R1; ++r1)
        for (std::size_t h1 = 0; h1 < H1; ++h1) {
          const double av = a[f.a_index(r3, i, r1, h1)];
          double acc = 0.0;
          for (std::size_t r2 = 0; r2 < R2; ++r2)
            for (std::size_t h2 = 0; h2 < H2; ++h2) {
              const double w = gc_[((h1 * H2 + h2) * R2 + r2) * R3 + r3];
              acc += b[f.b_index(r1, j, r2, h2)] * w;
              db_[(r1 * R2 + r2) * H2 + h2] += av * w;
            }
          da_[(r3 * R1 + r1) * H1 + h1] = acc;
        }

    // dc[r2,r3,h3] = sum_{h1,h2} g[h1,h2,h3] ab[r3,h1,r2,h2]
    std::fill(dc_.begin(), dc_.end(), 0.0);
    for (std::size_t r2 = 0; r2 < R2; ++r2)
      for (std::size_t r3 = 0; r3 < R3; ++r3)
        for (std::size_t h1 = 0; h1 < H1; ++h1)
          for (std::size_t h2 = 0; h2 < H2; ++h2) {
            const double w = ab_[((r3 * H1 + h1) * R2 + r2) * H2 + h2];
            const double* grow = &g[f.g_index(h1, h2, 0)];
            double* out = &dc_[(r2 * R3 + r3) * H3];
            for (std::size_t h3 = 0; h3 < H3; ++h3) out[h3] += grow[h3] * w;
          }
  }

  /// d x-hat / d g, laid out like g.
  std::span<const double> d_core() const noexcept { return abc_; }
  /// d x-hat / d a[r3,i,r1,h1], laid out (r3, r1, h1).
  std::span<const double> d_a() const noexcept { return da_; }
  /// d x-hat / d b[r1,j,r2,h2], laid out (r1, r2, h2).
  std::span<const double> d_b() const noexcept { return db_; }
  /// d x-hat / d c[r2,k,r3,h3], laid out (r2, r3, h3).
  std::span<const double> d_c() const noexcept { return dc_; }

 private:
  Ranks ranks_;
  std::vector<double> ab_, abc_, gc_, da_, db_, dc_;
};

inline double reconstruct_entry(const TwdFactors& f, std::size_t i, std::size_t j, std::size_t k) {
  check_index(f, i, j, k);
  Contraction work(f.ranks());
  return work.value(f, i, j, k);
}

/// Deliberately naive six-fold loop over all rank indices. Test oracle for
/// the staged contraction; do not use it on a hot path.
inline double oracle_entry(const TwdFactors& f, std::size_t i, std::size_t j, std::size_t k) {
  check_index(f, i, j, k);
  const auto [R1, R2, R3] = f.ranks().r;
  const auto [H1, H2, H3] = f.ranks().h;
  double x = 0.0;
  for (std::size_t r1 = 0; r1 < R1; ++r1)
    for (std::size_t r2 = 0; r2 < R2; ++r2)
      for (std::size_t r3 = 0; r3 < R3; ++r3)
        for (std::size_t h1 = 0; h1 < H1; ++h1)
          for (std::size_t h2 = 0; h2 < H2; ++h2)
            for (std::size_t h3 = 0; h3 < H3; ++h3)
              x += f.g()[f.g_index(h1, h2, h3)] * f.a()[f.a_index(r3, i, r1, h1)] *
                   f.b()[f.b_index(r1, j, r2, h2)] * f.c()[f.c_index(r2, k, r3, h3)];
  return x;
}

struct DenseTensor3 {
  Dims dims;
  std::vector<double> data;  // row-major (i, j, k)

  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * dims.j + j) * dims.k + k];
  }
};

inline constexpr std::size_t kDefaultDenseCap = 10'000'000;

inline DenseTensor3 reconstruct_full(const TwdFactors& f, std::size_t max_elements = kDefaultDenseCap) {
  const Dims& d = f.dims();
  if (d.total() > max_elements) {
    throw SizeError("dense reconstruction of " + std::to_string(d.total()) + " elements exceeds cap " +
                    std::to_string(max_elements));
  }
  DenseTensor3 out{d, std::vector<double>(d.total())};
  Contraction work(f.ranks());
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.i; ++i)
    for (std::size_t j = 0; j < d.j; ++j)
      for (std::size_t k = 0; k < d.k; ++k) out.data[n++] = work.value(f, i, j, k);
  return out;
}

// Checkpoint text format:
//   TWD v1 I J K R1 R2 R3 H1 H2 H3
//   <g values> <a values> <b values> <c values>
// one value per line, shortest round-trip decimal.

inline void write_checkpoint(std::ostream& out, const TwdFactors& f) {
  const Dims& d = f.dims();
  const Ranks& r = f.ranks();
  out << "TWD v1 " << d.i << ' ' << d.j << ' ' << d.k << ' ' << r.r[0] << ' ' << r.r[1] << ' ' << r.r[2]
      << ' ' << r.h[0] << ' ' << r.h[1] << ' ' << r.h[2] << '\n';
  char buf[64];
  for (auto part : {f.g(), f.a(), f.b(), f.c()})
    for (double x : part) {
      auto res = std::to_chars(buf, buf + sizeof(buf), x);
      out.write(buf, res.ptr - buf);
      out.put('\n');
    }
}

inline TwdFactors read_checkpoint(std::istream& in) {
  std::string magic, version;
  if (!(in >> magic >> version) || magic != "TWD" || version != "v1") {
    throw ParseError(1, "not a TWD v1 checkpoint");
  }
  std::array<std::size_t, 9> h{};
  for (auto& v : h)
    if (!(in >> v)) throw ParseError(1, "truncated checkpoint header");
  TwdFactors f(Dims{h[0], h[1], h[2]}, Ranks{{h[3], h[4], h[5]}, {h[6], h[7], h[8]}});
  std::string tok;
  std::size_t read = 0;
  for (auto part : {f.g(), f.a(), f.b(), f.c()})
    for (double& x : part) {
      if (!(in >> tok)) throw ParseError(1, "checkpoint truncated after " + std::to_string(read) + " values");
      auto v = detail::parse_real(tok);
      if (!v || !std::isfinite(*v)) throw ParseError(1, "bad checkpoint value '" + tok + "'");
      x = *v;
      ++read;
    }
  if (in >> tok) throw ParseError(1, "trailing data after checkpoint values");
  return f;
}

inline void save_checkpoint(const std::string& path, const TwdFactors& f) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open output file '" + path + "'");
  write_checkpoint(out, f);
  if (!out) throw Error("failed writing '" + path + "'");
}

inline TwdFactors load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

/// FNV-1a over shape and raw parameter bytes. Equal fingerprints mean
/// bitwise-identical factors (up to hash collision).
inline std::uint64_t fingerprint(const TwdFactors& f) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t q = 0; q < n; ++q) {
      h ^= bytes[q];
      h *= 1099511628211ULL;
    }
  };
  const std::array<std::size_t, 9> shape{f.dims().i,    f.dims().j,    f.dims().k,
                                         f.ranks().r[0], f.ranks().r[1], f.ranks().r[2],
                                         f.ranks().h[0], f.ranks().h[1], f.ranks().h[2]};
  mix(shape.data(), sizeof(shape));
  for (auto part : {f.g(), f.a(), f.b(), f.c()}) mix(part.data(), part.size_bytes());
  return h;
}

}  // namespace ptwd
