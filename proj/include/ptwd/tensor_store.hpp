#pragma once

// Sparse third-order tensor of observed interactions in a dynamic weighted
// network: entry (i, j, k) is the weight between nodes i and j in time slot k.
// Indices are 0-based everywhere, including in files.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ptwd/error.hpp"

namespace ptwd {

struct Dims {
  std::size_t i = 1;
  std::size_t j = 1;
  std::size_t k = 1;

  std::size_t total() const noexcept { return i * j * k; }
  bool contains(std::size_t ii, std::size_t jj, std::size_t kk) const noexcept {
    return ii < i && jj < j && kk < k;
  }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Entry {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t k = 0;
  double value = 0.0;

  friend bool operator==(const Entry&, const Entry&) = default;
};

namespace detail {

struct KeyHash {
  std::size_t operator()(const std::array<std::size_t, 3>& key) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t v : key) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

using KeySet = std::unordered_set<std::array<std::size_t, 3>, KeyHash>;

inline std::array<std::size_t, 3> key_of(const Entry& e) { return {e.i, e.j, e.k}; }

inline std::string dims_string(const Dims& d) {
  return "(" + std::to_string(d.i) + "," + std::to_string(d.j) + "," + std::to_string(d.k) + ")";
}

}  // namespace detail

/// COO store of observed entries. Immutable after construction; the
/// constructor enforces positive dims, in-bounds indices, finite values and
/// unique keys.
class SparseTensor {
 public:
  SparseTensor() = default;

  SparseTensor(Dims dims, std::vector<Entry> entries, bool normalized = false)
      : dims_(dims), entries_(std::move(entries)), normalized_(normalized) {
    if (dims_.i == 0 || dims_.j == 0 || dims_.k == 0) {
      throw ParameterError("tensor dims must be >= 1, got " + detail::dims_string(dims_));
    }
    detail::KeySet seen;
    seen.reserve(entries_.size());
    for (const Entry& e : entries_) {
      if (!dims_.contains(e.i, e.j, e.k)) {
        throw BoundsError("entry (" + std::to_string(e.i) + "," + std::to_string(e.j) + "," +
                          std::to_string(e.k) + ") outside dims " + detail::dims_string(dims_));
      }
      if (!std::isfinite(e.value)) {
        throw DomainError("non-finite value at (" + std::to_string(e.i) + "," + std::to_string(e.j) +
                          "," + std::to_string(e.k) + ")");
      }
      if (!seen.insert(detail::key_of(e)).second) {
        throw ParameterError("duplicate entry (" + std::to_string(e.i) + "," + std::to_string(e.j) +
                             "," + std::to_string(e.k) + ")");
      }
    }
  }

  const Dims& dims() const noexcept { return dims_; }
  std::span<const Entry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  bool normalized() const noexcept { return normalized_; }
  const Entry& operator[](std::size_t n) const { return entries_[n]; }

  friend bool operator==(const SparseTensor&, const SparseTensor&) = default;

 private:
  Dims dims_{};
  std::vector<Entry> entries_;
  bool normalized_ = false;
};

struct IngestOptions {
  /// Explicit dims; when unset, a "# dims I J K" header is used if present,
  /// otherwise dims are inferred as max index + 1 per mode.
  std::optional<Dims> dims;
  /// On a repeated (i,j,k) keep the last value instead of failing.
  bool keep_last = false;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t p = 0;
  while (p < line.size()) {
    while (p < line.size() && std::isspace(static_cast<unsigned char>(line[p]))) ++p;
    std::size_t q = p;
    while (q < line.size() && !std::isspace(static_cast<unsigned char>(line[q]))) ++q;
    if (q > p) out.push_back(line.substr(p, q - p));
    p = q;
  }
  return out;
}

inline std::optional<std::size_t> parse_index(std::string_view s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_real(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// "# dims I J K" -> Dims; any other comment -> nullopt.
inline std::optional<Dims> parse_dims_header(std::string_view comment, std::size_t line_no) {
  auto tok = split_ws(comment.substr(1));
  if (tok.empty() || tok[0] != "dims") return std::nullopt;
  if (tok.size() != 4) throw ParseError(line_no, "dims header needs exactly three values");
  Dims d;
  auto a = parse_index(tok[1]), b = parse_index(tok[2]), c = parse_index(tok[3]);
  if (!a || !b || !c || *a == 0 || *b == 0 || *c == 0) {
    throw ParseError(line_no, "dims header values must be positive integers");
  }
  d.i = *a;
  d.j = *b;
  d.k = *c;
  return d;
}

}  // namespace detail

/// Parses the COO text format: one "i j k value" record per line, '#' starts a
/// comment line, blank lines are skipped.
inline SparseTensor parse_coo(std::istream& in, const IngestOptions& opts = {}) {
  std::optional<Dims> header_dims;
  std::vector<Entry> entries;
  std::vector<std::size_t> entry_line;
  std::unordered_map<std::array<std::size_t, 3>, std::size_t, detail::KeyHash> first_seen;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string_view view(line);
    auto first = view.find_first_not_of(" \t");
    if (first == std::string_view::npos) continue;
    view.remove_prefix(first);
    if (view.front() == '#') {
      if (auto d = detail::parse_dims_header(view, line_no)) header_dims = d;
      continue;
    }
    auto tok = detail::split_ws(view);
    if (tok.size() != 4) {
      throw ParseError(line_no, "expected 4 fields (i j k value), got " + std::to_string(tok.size()));
    }
    auto i = detail::parse_index(tok[0]);
    auto j = detail::parse_index(tok[1]);
    auto k = detail::parse_index(tok[2]);
    if (!i || !j || !k) throw ParseError(line_no, "indices must be non-negative integers");
    auto v = detail::parse_real(tok[3]);
    if (!v) throw ParseError(line_no, "value '" + std::string(tok[3]) + "' is not a number");
    if (!std::isfinite(*v)) throw ParseError(line_no, "value must be finite");

    Entry e{*i, *j, *k, *v};
    auto [it, inserted] = first_seen.try_emplace(detail::key_of(e), entries.size());
    if (!inserted) {
      if (!opts.keep_last) throw DuplicateKeyError(line_no, entry_line[it->second]);
      entries[it->second].value = e.value;
      continue;
    }
    entries.push_back(e);
    entry_line.push_back(line_no);
  }

  Dims dims;
  if (opts.dims) {
    dims = *opts.dims;
  } else if (header_dims) {
    dims = *header_dims;
  } else {
    dims = {1, 1, 1};
    for (const Entry& e : entries) {
      dims.i = std::max(dims.i, e.i + 1);
      dims.j = std::max(dims.j, e.j + 1);
      dims.k = std::max(dims.k, e.k + 1);
    }
  }
  if (dims.i == 0 || dims.j == 0 || dims.k == 0) {
    throw ParameterError("tensor dims must be >= 1, got " + detail::dims_string(dims));
  }
  for (std::size_t n = 0; n < entries.size(); ++n) {
    const Entry& e = entries[n];
    if (!dims.contains(e.i, e.j, e.k)) {
      throw BoundsError("line " + std::to_string(entry_line[n]) + ": index (" + std::to_string(e.i) +
                        "," + std::to_string(e.j) + "," + std::to_string(e.k) + ") outside dims " +
                        detail::dims_string(dims));
    }
  }
  return SparseTensor(dims, std::move(entries));
}

inline SparseTensor ingest(const std::string& path, const IngestOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open input file '" + path + "'");
  return parse_coo(in, opts);
}

/// Writes the COO format with a dims header; values use shortest round-trip
/// formatting so parse_coo(write_coo(t)) reproduces t exactly.
inline void write_coo(std::ostream& out, const SparseTensor& t) {
  const Dims& d = t.dims();
  out << "# dims " << d.i << ' ' << d.j << ' ' << d.k << '\n';
  char buf[64];
  for (const Entry& e : t.entries()) {
    auto res = std::to_chars(buf, buf + sizeof(buf), e.value);
    out << e.i << ' ' << e.j << ' ' << e.k << ' ' << std::string_view(buf, res.ptr - buf) << '\n';
  }
}

inline void save_coo(const std::string& path, const SparseTensor& t) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open output file '" + path + "'");
  write_coo(out, t);
  if (!out) throw Error("failed writing '" + path + "'");
}

/// Replaces every value v by ln(v + 1).
inline SparseTensor normalize(const SparseTensor& t) {
  if (t.normalized()) throw StateError("tensor is already normalized");
  std::vector<Entry> out(t.entries().begin(), t.entries().end());
  for (Entry& e : out) {
    if (e.value < 0.0) {
      throw DomainError("cannot normalize negative value " + std::to_string(e.value) + " at (" +
                        std::to_string(e.i) + "," + std::to_string(e.j) + "," + std::to_string(e.k) + ")");
    }
    e.value = std::log1p(e.value);
  }
  return SparseTensor(t.dims(), std::move(out), true);
}

/// Inverse of normalize: v -> exp(v) - 1.
inline SparseTensor denormalize(const SparseTensor& t) {
  if (!t.normalized()) throw StateError("tensor is not normalized");
  std::vector<Entry> out(t.entries().begin(), t.entries().end());
  for (Entry& e : out) e.value = std::expm1(e.value);
  return SparseTensor(t.dims(), std::move(out), false);
}

struct SplitSpec {
  std::array<unsigned, 3> ratios{1, 2, 7};  // train : validation : test
  std::uint64_t seed = 0;
};

struct SplitResult {
  SparseTensor train;
  SparseTensor valid;
  SparseTensor test;
};

/// Apportions n items to the ratio parts by the largest-remainder method.
/// Leftover units go to the parts with the largest fractional quota; ties go
/// to the earlier part.
inline std::array<std::size_t, 3> largest_remainder_sizes(std::size_t n,
                                                          const std::array<unsigned, 3>& ratios) {
  const std::uint64_t sum = std::uint64_t{ratios[0]} + ratios[1] + ratios[2];
  if (sum == 0) throw ParameterError("split ratios must not all be zero");
  std::array<std::size_t, 3> sizes{};
  std::array<std::uint64_t, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t p = 0; p < 3; ++p) {
    const auto num = static_cast<unsigned __int128>(n) * ratios[p];
    sizes[p] = static_cast<std::size_t>(num / sum);
    rem[p] = static_cast<std::uint64_t>(num % sum);
    assigned += sizes[p];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t u = 0; assigned < n; ++u, ++assigned) ++sizes[order[u % 3]];
  return sizes;
}

/// Seeded shuffle of the entries, cut into train/validation/test by
/// largest-remainder sizes. Each part keeps the input's relative order.
inline SplitResult split(const SparseTensor& t, const SplitSpec& spec) {
  if (t.empty()) throw EmptyInputError("cannot split an empty tensor");
  const auto sizes = largest_remainder_sizes(t.size(), spec.ratios);

  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(spec.seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::array<std::vector<std::size_t>, 3> picks;
  std::size_t cursor = 0;
  for (std::size_t p = 0; p < 3; ++p) {
    picks[p].assign(perm.begin() + static_cast<std::ptrdiff_t>(cursor),
                    perm.begin() + static_cast<std::ptrdiff_t>(cursor + sizes[p]));
    std::sort(picks[p].begin(), picks[p].end());
    cursor += sizes[p];
  }
  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::vector<Entry> out;
    out.reserve(idx.size());
    for (std::size_t n : idx) out.push_back(t[n]);
    return SparseTensor(t.dims(), std::move(out), t.normalized());
  };
  return {gather(picks[0]), gather(picks[1]), gather(picks[2])};
}

/// Parses "a:b:c" split ratios.
inline std::array<unsigned, 3> parse_ratios(std::string_view text) {
  std::array<unsigned, 3> r{};
  std::size_t part = 0;
  std::size_t p = 0;
  while (true) {
    auto q = text.find(':', p);
    auto field = text.substr(p, q == std::string_view::npos ? std::string_view::npos : q - p);
    if (part >= 3) throw ParameterError("split ratio needs exactly three parts: '" + std::string(text) + "'");
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), r[part]);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
      throw ParameterError("bad split ratio component '" + std::string(field) + "'");
    }
    ++part;
    if (q == std::string_view::npos) break;
    p = q + 1;
  }
  if (part != 3) throw ParameterError("split ratio needs exactly three parts: '" + std::string(text) + "'");
  if (std::uint64_t{r[0]} + r[1] + r[2] == 0) throw ParameterError("split ratios must not all be zero");
  return r;
}

}  // namespace ptwd
