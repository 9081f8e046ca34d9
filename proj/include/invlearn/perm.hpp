#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "invlearn/csv.hpp"
#include "invlearn/demand.hpp"
#include "invlearn/dynamics.hpp"
#include "invlearn/fitters.hpp"
#include "invlearn/rng.hpp"

namespace invlearn {

struct EmpiricalMarginals {
  std::vector<Pmf> perPeriod;
  std::size_t periods() const { return perPeriod.size(); }
};

inline Pmf empirical_pmf(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  Pmf p;
  const double w = 1.0 / static_cast<double>(values.size());
  for (double v : values) {
    if (!p.values.empty() && p.values.back() == v) {
      p.probs.back() += w;
    } else {
      p.values.push_back(v);
      p.probs.push_back(w);
    }
  }
  return p;
}

inline EmpiricalMarginals build_marginals(const Dataset& data) {
  data.validate();
  EmpiricalMarginals m;
  for (std::size_t t = 0; t < data.length(); ++t) {
    std::vector<double> col;
    for (const auto& d : data) col.push_back(d[t]);
    m.perPeriod.push_back(empirical_pmf(std::move(col)));
  }
  return m;
}

inline void write_marginals_csv(std::ostream& os, const EmpiricalMarginals& m) {
  os << "period,value,probability\n";
  for (std::size_t t = 0; t < m.perPeriod.size(); ++t)
    for (std::size_t k = 0; k < m.perPeriod[t].size(); ++k)
      os << t + 1 << ',' << format_double(m.perPeriod[t].values[k]) << ','
         << format_double(m.perPeriod[t].probs[k]) << '\n';
}

inline EmpiricalMarginals read_marginals_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || split_csv_line(line) != std::vector<std::string>{"period", "value", "probability"})
    throw InputError("marginals CSV must start with 'period,value,probability'");
  EmpiricalMarginals m;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    auto c = split_csv_line(line);
    if (c.size() != 3) throw InputError(fmt::format("marginals CSV row {} needs 3 columns", row));
    auto t = static_cast<std::size_t>(parse_double(c[0], "period"));
    if (t < 1 || t > m.perPeriod.size() + 1)
      throw InputError(fmt::format("marginals CSV row {}: periods must be listed in order", row));
    if (t > m.perPeriod.size()) m.perPeriod.emplace_back();
    m.perPeriod[t - 1].values.push_back(parse_double(c[1], "value"));
    m.perPeriod[t - 1].probs.push_back(parse_double(c[2], "probability"));
  }
  for (std::size_t t = 0; t < m.perPeriod.size(); ++t) {
    double s = 0.0;
    for (double q : m.perPeriod[t].probs) s += q;
    if (std::abs(s - 1.0) > 1e-9)
      throw InputError(fmt::format("marginals CSV: period {} probabilities sum to {}", t + 1, s));
  }
  return m;
}

// Partition of [N]^periods into N^(periods-1) groups of N tuples (0-based row indices
// per period); tuple i of group j has entry (i + j_t) mod N in period t, j_1 = 0.
using IndexTuple = std::vector<int>;
using PartitionGroup = std::vector<IndexTuple>;

inline std::vector<PartitionGroup> product_partition(int N, int periods, double budget = 1e7) {
  if (N < 1 || periods < 1) throw InputError("product_partition needs N >= 1 and periods >= 1");
  if (periods * std::log(static_cast<double>(N)) > std::log(budget))
    throw BudgetError(fmt::format("N^periods = {}^{} exceeds the budget", N, periods));
  std::vector<PartitionGroup> groups;
  std::vector<int> j(periods, 0);
  while (true) {
    PartitionGroup g;
    for (int i = 0; i < N; ++i) {
      IndexTuple tup(periods);
      for (int t = 0; t < periods; ++t) tup[t] = (i + j[t]) % N;
      g.push_back(std::move(tup));
    }
    groups.push_back(std::move(g));
    int t = periods - 1;
    while (t >= 1 && j[t] == N - 1) j[t--] = 0;
    if (t < 1) break;
    ++j[t];
  }
  return groups;
}

namespace detail {

inline Pmf convolve(const Pmf& a, const Pmf& b) {
  std::map<double, double> acc;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k) acc[a.values[i] + b.values[k]] += a.probs[i] * b.probs[k];
  Pmf out;
  for (auto [v, q] : acc) {
    out.values.push_back(v);
    out.probs.push_back(q);
  }
  return out;
}

// Law of d^t + ... + d^{t+L} under the product measure (t is 1-based).
inline Pmf lead_time_pmf(const std::vector<Pmf>& m, int t, int L) {
  Pmf out = m[t - 1];
  for (int u = t + 1; u <= t + L; ++u) out = convolve(out, m[u - 1]);
  return out;
}

inline double expected_cost(const Pmf& lead, double z, const SystemParams& p) {
  double v = 0.0;
  for (std::size_t k = 0; k < lead.size(); ++k) v += lead.probs[k] * p.cost(z - lead.values[k]);
  return v;
}

inline void check_pmfs(const std::vector<Pmf>& m, const SystemParams& p) {
  if (m.size() != static_cast<std::size_t>(p.horizon()))
    throw InputError(fmt::format("marginals cover {} periods but T+L = {}", m.size(), p.horizon()));
  for (std::size_t t = 0; t < m.size(); ++t) {
    if (m[t].values.empty()) throw InputError(fmt::format("period {} has an empty support", t + 1));
    double s = 0.0;
    for (double q : m[t].probs) s += q;
    if (std::abs(s - 1.0) > 1e-9)
      throw InputError(fmt::format("period {} probabilities sum to {}", t + 1, s));
  }
}

inline void check_integer(const std::vector<Pmf>& m, double x1) {
  for (std::size_t t = 0; t < m.size(); ++t)
    for (double v : m[t].values)
      if (!is_integral(v))
        throw InputError(fmt::format("period {} support value {} is not an integer", t + 1, v));
  if (!is_integral(x1)) throw InputError(fmt::format("x1 = {} is not an integer", x1));
}

// Integer inventory-level grid [lo, hi] for the backward recursions.
struct Grid {
  long lo = 0;
  long hi = 0;
  std::size_t size() const { return static_cast<std::size_t>(hi - lo + 1); }
  std::size_t at(long z) const { return static_cast<std::size_t>(std::clamp(z, lo, hi) - lo); }
};

inline Grid make_grid(const std::vector<Pmf>& m, const SystemParams& p, long top, double budget) {
  double drop = 0.0;
  for (const auto& q : m) drop += q.max();
  Grid g;
  g.lo = static_cast<long>(std::floor(p.x1)) - static_cast<long>(std::ceil(drop));
  g.hi = std::max(top, 0L);
  if (static_cast<double>(g.size()) * m.size() > budget)
    throw BudgetError(fmt::format("DP state space {} x {} exceeds the budget", g.size(), m.size()));
  return g;
}

// J_t(z) = G_t(z) + E V_{t+1}(z - d^t) on the grid.
inline std::vector<double> stage_value(const std::vector<Pmf>& m, int t, const SystemParams& p,
                                       const Grid& g, const std::vector<double>& next) {
  Pmf lead = lead_time_pmf(m, t, p.L);
  const Pmf& dt = m[t - 1];
  std::vector<double> J(g.size());
  for (long z = g.lo; z <= g.hi; ++z) {
    double v = expected_cost(lead, static_cast<double>(z), p);
    for (std::size_t k = 0; k < dt.size(); ++k)
      v += dt.probs[k] * next[g.at(z - static_cast<long>(std::nearbyint(dt.values[k])))];
    J[g.at(z)] = v;
  }
  return J;
}

inline double order_quantity(const Policy& pi, int t, double I) {
  double q = 0.0;
  if (auto* a = std::get_if<BaseStock>(&pi)) {
    q = std::max(a->S - I, 0.0);
  } else if (auto* c = std::get_if<SsPolicy>(&pi)) {
    q = I <= c->s ? c->S - I : 0.0;
  } else {
    q = std::max(std::get<NonStationary>(pi).levels[t - 1] - I, 0.0);
  }
  return q < kOrderEps ? 0.0 : q;
}

}  // namespace detail

inline constexpr double kDefaultDpBudget = 5e7;

// Expected average loss of a policy when periods are independent with the given laws.
// Exact forward propagation of the inventory-position distribution.
inline double product_risk(const Policy& pi, const std::vector<Pmf>& m, const SystemParams& p,
                           Bounds bounds = Bounds::Checked, double budget = 1e6) {
  detail::check_pmfs(m, p);
  if (bounds == Bounds::Checked) {
    p.validate();
    validate_policy(pi, p);
  }
  std::map<double, double> dist{{p.x1, 1.0}};
  double total = 0.0;
  for (int t = 1; t <= p.T; ++t) {
    Pmf lead = detail::lead_time_pmf(m, t, p.L);
    std::map<double, double> next;
    for (auto [I, w] : dist) {
      double q = detail::order_quantity(pi, t, I);
      double z = I + q;
      total += w * (detail::expected_cost(lead, z, p) + (q > 0.0 ? p.K : 0.0));
      if (t < p.T)
        for (std::size_t k = 0; k < m[t - 1].size(); ++k) next[z - m[t - 1].values[k]] += w * m[t - 1].probs[k];
    }
    if (static_cast<double>(next.size()) > budget)
      throw BudgetError(fmt::format("position distribution has {} atoms at t={}", next.size(), t));
    dist = std::move(next);
  }
  return total / p.T;
}

enum class PermRiskMode { ExactDp, MonteCarlo };

struct RiskEstimate {
  double value = 0.0;
  double stdErr = 0.0;
};

inline RiskEstimate perm_risk(const Policy& pi, const EmpiricalMarginals& m, const SystemParams& p,
                              PermRiskMode mode = PermRiskMode::ExactDp, std::size_t n = 100000,
                              std::uint64_t seed = 0) {
  if (mode == PermRiskMode::ExactDp) return {product_risk(pi, m.perPeriod, p), 0.0};
  detail::check_pmfs(m.perPeriod, p);
  if (n < 2) throw InputError("Monte-Carlo risk needs n >= 2");
  Rng rng(seed);
  double s = 0.0, s2 = 0.0;
  DemandSequence d(p.horizon());
  for (std::size_t i = 0; i < n; ++i) {
    for (int t = 0; t < p.horizon(); ++t) {
      const Pmf& q = m.perPeriod[t];
      double u = rng.uniform(), c = 0.0;
      std::size_t k = 0;
      while (k + 1 < q.size() && (c += q.probs[k]) <= u) ++k;
      d[t] = q.values[k];
    }
    double v = simulate(pi, d, p).avgLoss;
    s += v;
    s2 += v * v;
  }
  double mean = s / n;
  double var = std::max(0.0, (s2 - n * mean * mean) / (n - 1));
  return {mean, std::sqrt(var / n)};
}

// PERM over non-stationary base-stock levels: backward DP on the product measure, levels
// restricted to integers in [0, H].
inline FitResult perm_fit_st(const EmpiricalMarginals& marg, const SystemParams& p,
                             double budget = kDefaultDpBudget) {
  const auto& m = marg.perPeriod;
  detail::check_pmfs(m, p);
  p.validate();
  detail::check_integer(m, p.x1);
  if (p.K != 0.0) throw UnsupportedError("PERM over non-stationary levels requires K = 0");
  const long top = static_cast<long>(std::floor(p.H + 1e-9));
  auto g = detail::make_grid(m, p, top, budget);
  std::vector<double> V(g.size(), 0.0);
  std::vector<double> levels(p.horizon(), 0.0);
  for (int t = p.T; t >= 1; --t) {
    auto J = detail::stage_value(m, t, p, g, V);
    long best = 0;
    for (long z = 1; z <= top; ++z)
      if (J[g.at(z)] < J[g.at(best)] - tie_tolerance(J[g.at(best)])) best = z;
    levels[t - 1] = static_cast<double>(best);
    for (long x = g.lo; x <= g.hi; ++x) V[g.at(x)] = J[g.at(std::max(x, best))];
  }
  FitResult r;
  r.policy = NonStationary{levels};
  r.method = FitMethod::PermSt;
  r.evalParams = p;
  r.inSampleRisk = V[g.at(static_cast<long>(std::nearbyint(p.x1)))] / p.T;
  r.diagnostics.candidateCount = static_cast<std::size_t>(top + 1) * p.T;
  return r;
}

// PERM over (s,S): integer grid with exact policy evaluation. Experimental.
inline FitResult perm_fit_ss(const EmpiricalMarginals& marg, const SystemParams& p,
                             double budget = 1e6) {
  const auto& m = marg.perPeriod;
  detail::check_pmfs(m, p);
  p.validate();
  detail::check_integer(m, p.x1);
  const long hiS = static_cast<long>(std::floor(p.H + 1e-9));
  const long loS = static_cast<long>(std::ceil(p.Hlo - 1e-9));
  double pairs = static_cast<double>(hiS + 1) * (hiS - loS + 1);
  if (pairs * p.T > budget) throw BudgetError("(s,S) PERM grid exceeds the budget");
  double best = std::numeric_limits<double>::infinity();
  SsPolicy arg;
  std::size_t count = 0;
  for (long S = 0; S <= hiS; ++S)
    for (long D = 0; S - D >= loS; ++D) {
      SsPolicy c{static_cast<double>(S - D), static_cast<double>(S)};
      double v = product_risk(c, m, p);
      ++count;
      bool take = !std::isfinite(best) || v < best - tie_tolerance(best) ||
                  (v <= best + tie_tolerance(best) && (c.delta() < arg.delta() ||
                                                       (c.delta() == arg.delta() && c.S < arg.S)));
      if (take) {
        best = std::min(best, v);
        arg = c;
      }
    }
  FitResult r;
  r.policy = arg;
  r.method = FitMethod::PermSs;
  r.evalParams = p;
  r.inSampleRisk = product_risk(arg, m, p);
  r.diagnostics.candidateCount = count;
  return r;
}

inline FitResult perm_fit(const EmpiricalMarginals& m, const SystemParams& p, PolicyClass cls) {
  if (cls == PolicyClass::NonStationary) return perm_fit_st(m, p);
  if (cls == PolicyClass::Ss) return perm_fit_ss(m, p);
  throw UnsupportedError("PERM is provided for the st and ss classes");
}

struct OptimalDp {
  double risk = 0.0;
  long gridLo = 0;
  // orderUpTo[t-1]: unconstrained minimizer of J_t (order-up-to level when K = 0).
  std::vector<long> orderUpTo;
  // decision[t-1][x - gridLo]: post-order position chosen at level x.
  std::vector<std::vector<long>> decision;
};

// Minimum expected average loss over all policies for independent integer periods.
inline OptimalDp optimal_dp(const std::vector<Pmf>& m, const SystemParams& p,
                            double budget = kDefaultDpBudget) {
  detail::check_pmfs(m, p);
  p.validate();
  detail::check_integer(m, p.x1);
  double reach = 0.0;
  if (p.K > 0.0) {
    for (const auto& q : m) reach += q.max();
  } else {
    for (int t = 1; t <= p.T; ++t) reach = std::max(reach, detail::lead_time_pmf(m, t, p.L).max());
  }
  long top = std::max(static_cast<long>(std::ceil(p.H)), static_cast<long>(std::ceil(reach)));
  auto g = detail::make_grid(m, p, top, budget);
  std::vector<double> V(g.size(), 0.0);
  OptimalDp out;
  out.gridLo = g.lo;
  out.orderUpTo.assign(p.T, 0);
  out.decision.assign(p.T, std::vector<long>(g.size(), 0));
  for (int t = p.T; t >= 1; --t) {
    auto J = detail::stage_value(m, t, p, g, V);
    // suffix minimum of J over z > x
    std::vector<double> sufVal(g.size() + 1, std::numeric_limits<double>::infinity());
    std::vector<long> sufArg(g.size() + 1, g.hi);
    for (long z = g.hi; z >= g.lo; --z) {
      std::size_t i = g.at(z);
      if (J[i] <= sufVal[i + 1] + tie_tolerance(J[i])) {
        sufVal[i] = J[i];
        sufArg[i] = z;
      } else {
        sufVal[i] = sufVal[i + 1];
        sufArg[i] = sufArg[i + 1];
      }
    }
    out.orderUpTo[t - 1] = sufArg[0];
    for (long x = g.lo; x <= g.hi; ++x) {
      std::size_t i = g.at(x);
      double order = p.K + sufVal[i + 1];
      if (order < J[i] - tie_tolerance(J[i])) {
        V[i] = order;
        out.decision[t - 1][i] = sufArg[i + 1];
      } else {
        V[i] = J[i];
        out.decision[t - 1][i] = x;
      }
    }
  }
  out.risk = V[g.at(static_cast<long>(std::nearbyint(p.x1)))] / p.T;
  return out;
}

inline OptimalDp optimal_dp(const DemandModel& model, const SystemParams& p,
                            double budget = kDefaultDpBudget) {
  if (!is_independent(model)) throw UnsupportedError("optimal_dp needs an independent demand model");
  return optimal_dp(period_pmfs(model), p, budget);
}

}  // namespace invlearn
