#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "invlearn/errors.hpp"

namespace invlearn {

inline constexpr double kOrderEps = 1e-12;

enum class PolicyClass { BaseStock, Ss, Eoq, NonStationary };

inline std::string to_string(PolicyClass c) {
  switch (c) {
    case PolicyClass::BaseStock: return "base-stock";
    case PolicyClass::Ss: return "ss";
    case PolicyClass::Eoq: return "eoq";
    case PolicyClass::NonStationary: return "st";
  }
  return "?";
}

inline PolicyClass parse_policy_class(const std::string& s) {
  if (s == "base-stock" || s == "S") return PolicyClass::BaseStock;
  if (s == "ss" || s == "sS") return PolicyClass::Ss;
  if (s == "eoq") return PolicyClass::Eoq;
  if (s == "st" || s == "St") return PolicyClass::NonStationary;
  throw InputError(fmt::format("unknown policy class '{}'", s));
}

struct SystemParams {
  int T = 1;
  int L = 0;
  double h = 1.0;
  double b = 1.0;
  double K = 0.0;
  double U = 1.0;
  double x1 = 0.0;
  double H = 1.0;
  double Hlo = 0.0;
  bool capped = false;  // H or Hlo came from the zero-cost cap

  int horizon() const { return T + L; }

  double cost(double x) const { return x >= 0.0 ? h * x : -b * x; }

  void validate() const {
    if (T < 1) throw ValidationError(fmt::format("T must be >= 1 (got {})", T));
    if (L < 0) throw ValidationError(fmt::format("L must be >= 0 (got {})", L));
    if (!(h >= 0.0)) throw ValidationError(fmt::format("h must be >= 0 (got {})", h));
    if (!(b >= 0.0)) throw ValidationError(fmt::format("b must be >= 0 (got {})", b));
    if (!(K >= 0.0)) throw ValidationError(fmt::format("K must be >= 0 (got {})", K));
    if (!(U > 0.0)) throw ValidationError(fmt::format("U must be > 0 (got {})", U));
    if (!(H > 0.0)) throw ValidationError(fmt::format("H must be > 0 (got {})", H));
    if (!(Hlo <= H)) throw ValidationError(fmt::format("Hlo must be <= H (got {} > {})", Hlo, H));
    if (!(x1 <= 0.0)) throw ValidationError(fmt::format("x1 must be <= 0 (got {})", x1));
  }
};

// Default cap multiplier used when h = 0 or b = 0 would make the (s,S) bounds infinite.
inline constexpr double kZeroCostCap = 10.0;

// Bounds for base-stock and non-stationary classes: H = (L+1)U, x1 = 0.
inline SystemParams base_stock_params(int T, int L, double h, double b, double K, double U) {
  SystemParams p;
  p.T = T;
  p.L = L;
  p.h = h;
  p.b = b;
  p.K = K;
  p.U = U;
  p.H = (L + 1) * U;
  p.Hlo = 0.0;
  p.x1 = 0.0;
  return p;
}

// Bounds for the (s,S) class. Costs are scaled by max(1, h, b) first, so that
// h, b <= 1 reproduces H = (L+1)U/h and Hlo = min(0, (L+1)U(1 - 1/b)).
inline SystemParams ss_params(int T, int L, double h, double b, double K, double U,
                              double capMultiplier = kZeroCostCap) {
  SystemParams p = base_stock_params(T, L, h, b, K, U);
  double lead = (L + 1) * U;
  double scale = std::max({1.0, h, b});
  if (h > 0.0) {
    p.H = lead * scale / h;
  } else {
    p.H = capMultiplier * lead;
    p.capped = true;
  }
  if (b > 0.0) {
    p.Hlo = std::min(0.0, lead * (1.0 - scale / b));
  } else {
    p.Hlo = -capMultiplier * lead;
    p.capped = true;
  }
  p.x1 = p.Hlo;
  return p;
}

inline SystemParams params_for(PolicyClass c, int T, int L, double h, double b, double K,
                               double U) {
  if (c == PolicyClass::Ss || c == PolicyClass::Eoq) return ss_params(T, L, h, b, K, U);
  return base_stock_params(T, L, h, b, K, U);
}

using DemandSequence = std::vector<double>;

// Discrete distribution with ascending support.
struct Pmf {
  std::vector<double> values;
  std::vector<double> probs;

  std::size_t size() const { return values.size(); }
  double max() const { return values.empty() ? 0.0 : values.back(); }
  double mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) m += values[k] * probs[k];
    return m;
  }
  static Pmf point(double v) { return Pmf{{v}, {1.0}}; }
};

struct Dataset {
  std::vector<DemandSequence> sequences;

  Dataset() = default;
  explicit Dataset(std::vector<DemandSequence> s) : sequences(std::move(s)) {}

  std::size_t size() const { return sequences.size(); }
  bool empty() const { return sequences.empty(); }
  std::size_t length() const { return sequences.empty() ? 0 : sequences.front().size(); }
  const DemandSequence& operator[](std::size_t i) const { return sequences[i]; }
  DemandSequence& operator[](std::size_t i) { return sequences[i]; }
  auto begin() const { return sequences.begin(); }
  auto end() const { return sequences.end(); }

  void validate() const {
    if (sequences.empty()) throw InputError("dataset is empty");
    std::size_t n = sequences.front().size();
    for (std::size_t i = 0; i < sequences.size(); ++i)
      if (sequences[i].size() != n)
        throw InputError(fmt::format("sequence {} has length {} (expected {})", i,
                                     sequences[i].size(), n));
  }

  void validate(const SystemParams& p) const {
    validate();
    if (length() != static_cast<std::size_t>(p.horizon()))
      throw InputError(fmt::format("sequences have length {} but T+L = {}", length(),
                                   p.horizon()));
  }
};

struct BaseStock {
  double S = 0.0;
};

struct SsPolicy {
  double s = 0.0;
  double S = 0.0;
  double delta() const { return S - s; }
};

struct NonStationary {
  std::vector<double> levels;
};

using Policy = std::variant<BaseStock, SsPolicy, NonStationary>;

inline PolicyClass class_of(const Policy& pi) {
  if (std::holds_alternative<BaseStock>(pi)) return PolicyClass::BaseStock;
  if (std::holds_alternative<SsPolicy>(pi)) return PolicyClass::Ss;
  return PolicyClass::NonStationary;
}

inline std::vector<double> parameters(const Policy& pi) {
  if (auto* a = std::get_if<BaseStock>(&pi)) return {a->S};
  if (auto* c = std::get_if<SsPolicy>(&pi)) return {c->s, c->S};
  return std::get<NonStationary>(pi).levels;
}

inline std::string describe(const Policy& pi) {
  if (auto* a = std::get_if<BaseStock>(&pi)) return fmt::format("base-stock:{}", a->S);
  if (auto* c = std::get_if<SsPolicy>(&pi)) return fmt::format("ss:{},{}", c->s, c->S);
  return fmt::format("st:{}", fmt::join(std::get<NonStationary>(pi).levels, ","));
}

namespace detail {
inline double bound_slack(double v) { return 1e-9 * std::max(1.0, std::abs(v)); }
}  // namespace detail

inline void validate_policy(const Policy& pi, const SystemParams& p) {
  using detail::bound_slack;
  if (auto* a = std::get_if<BaseStock>(&pi)) {
    if (a->S < -bound_slack(0) || a->S > p.H + bound_slack(p.H))
      throw ValidationError(fmt::format("base-stock level S={} outside [0, {}]", a->S, p.H));
  } else if (auto* c = std::get_if<SsPolicy>(&pi)) {
    if (c->S < -bound_slack(0) || c->S > p.H + bound_slack(p.H))
      throw ValidationError(fmt::format("(s,S) level S={} outside [0, {}]", c->S, p.H));
    if (c->s > c->S)
      throw ValidationError(fmt::format("(s,S) reorder point s={} exceeds S={}", c->s, c->S));
    if (c->s < p.Hlo - bound_slack(p.Hlo))
      throw ValidationError(fmt::format("(s,S) reorder point s={} below Hlo={}", c->s, p.Hlo));
    if (p.x1 > p.Hlo + bound_slack(p.Hlo))
      throw ValidationError(
          fmt::format("(s,S) simulation requires x1 <= Hlo (x1={}, Hlo={})", p.x1, p.Hlo));
  } else {
    const auto& lv = std::get<NonStationary>(pi).levels;
    if (lv.size() != static_cast<std::size_t>(p.horizon()))
      throw InputError(fmt::format("non-stationary policy has {} levels (expected T+L = {})",
                                   lv.size(), p.horizon()));
    for (std::size_t t = 0; t < lv.size(); ++t)
      if (lv[t] < -bound_slack(0) || lv[t] > p.H + bound_slack(p.H))
        throw ValidationError(
            fmt::format("level S^{}={} outside [0, {}]", t + 1, lv[t], p.H));
  }
}

}  // namespace invlearn
