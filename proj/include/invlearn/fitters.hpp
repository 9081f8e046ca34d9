#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invlearn/dynamics.hpp"
#include "invlearn/piecewise.hpp"
#include "invlearn/rng.hpp"
#include "invlearn/types.hpp"

namespace invlearn {

enum class FitMethod { ErmBaseStock, ErmEoq, ErmSsExact, ErmSsGrid, ErmSt, GridOracle, PermSt, PermSs };

inline std::string to_string(FitMethod m) {
  switch (m) {
    case FitMethod::ErmBaseStock: return "erm-base-stock";
    case FitMethod::ErmEoq: return "erm-eoq";
    case FitMethod::ErmSsExact: return "erm-ss-exact";
    case FitMethod::ErmSsGrid: return "erm-ss-integer-grid";
    case FitMethod::ErmSt: return "erm-st";
    case FitMethod::GridOracle: return "grid-oracle";
    case FitMethod::PermSt: return "perm-st";
    case FitMethod::PermSs: return "perm-ss";
  }
  return "?";
}

struct FitDiagnostics {
  std::size_t candidateCount = 0;
  int restarts = 0;
  int sweeps = 0;
  bool converged = true;
};

struct FitResult {
  Policy policy;
  double inSampleRisk = 0.0;
  FitMethod method = FitMethod::ErmBaseStock;
  FitDiagnostics diagnostics;
  // Parameters under which the policy is meant to be simulated. Differs from the
  // fit input only for the EOQ class, whose reorder point can fall below Hlo and x1.
  SystemParams evalParams;
};

// Flat record: class, method, parameters, risk, diagnostics.
inline std::string to_record(const FitResult& r) {
  return fmt::format("{},{},\"{}\",{:.17g},{},{},{},{}", to_string(class_of(r.policy)),
                     to_string(r.method), fmt::join(parameters(r.policy), ";"), r.inSampleRisk,
                     r.diagnostics.candidateCount, r.diagnostics.restarts,
                     r.diagnostics.sweeps, r.diagnostics.converged ? 1 : 0);
}

namespace detail {

inline double lead_sum(std::span<const double> d, int from, int to) {
  double s = 0.0;
  for (int u = from; u <= to; ++u) s += d[u - 1];
  return s;
}

inline std::size_t positive_demands(std::span<const double> d, int upto) {
  std::size_t n = 0;
  for (int t = 1; t <= upto; ++t)
    if (d[t - 1] > kOrderEps) ++n;
  return n;
}

// Adds the per-arrival-period cost terms of a fixed reorder schedule to ks and
// returns the number of positive reorders after the first.
inline std::size_t add_schedule_terms(const ReorderSchedule& r, std::span<const double> d,
                                      const SystemParams& p, KinkSum& ks) {
  std::size_t positive = 0;
  const std::size_t J = r.times.size();
  for (std::size_t j = 0; j < J; ++j) {
    int tj = r.times[j];
    int tn = j + 1 < J ? r.times[j + 1] : p.T + 1;
    double acc = 0.0;
    for (int u = tj; u <= tn + p.L - 1; ++u) {
      acc += d[u - 1];
      if (u >= tj + p.L) ks.add(acc);
    }
    if (j >= 1 && lead_sum(d, r.times[j - 1], tj - 1) > kOrderEps) ++positive;
  }
  return positive;
}

inline bool is_integral(double v) { return std::abs(v - std::nearbyint(v)) <= 1e-9; }

inline bool all_integral(const Dataset& data) {
  for (const auto& d : data)
    for (double v : d)
      if (!is_integral(v)) return false;
  return true;
}

inline FitResult finish(Policy pi, FitMethod m, const Dataset& data, const SystemParams& p,
                        FitDiagnostics diag, Bounds bounds = Bounds::Checked) {
  FitResult r;
  r.policy = std::move(pi);
  r.method = m;
  r.diagnostics = diag;
  r.evalParams = p;
  r.inSampleRisk = empirical_risk(r.policy, data, p, bounds);
  return r;
}

}  // namespace detail

inline FitResult erm_base_stock(const Dataset& data, const SystemParams& p) {
  data.validate(p);
  p.validate();
  const double N = static_cast<double>(data.size());
  KinkSum ks(p.h, p.b);
  double reorders = 0.0;
  for (const auto& d : data) {
    for (int t = p.L + 1; t <= p.horizon(); ++t) ks.add(detail::lead_sum(d, t - p.L, t));
    reorders += static_cast<double>(detail::positive_demands(d, p.T - 1));
  }
  auto cand = ks.candidates(0.0, p.H);
  auto vals = ks.evaluate_sorted(cand);
  for (std::size_t j = 0; j < cand.size(); ++j) {
    double first = cand[j] - p.x1 > kOrderEps ? 1.0 : 0.0;
    vals[j] = vals[j] / (N * p.T) + p.K * (reorders / N + first) / p.T;
  }
  std::size_t best = first_argmin(vals);
  FitDiagnostics diag;
  diag.candidateCount = cand.size();
  return detail::finish(BaseStock{cand[best]}, FitMethod::ErmBaseStock, data, p, diag);
}

inline double eoq_delta(double K, double meanDemand, double h, double b) {
  if (!(h > 0.0 && b > 0.0)) throw ValidationError("EOQ class requires h > 0 and b > 0");
  return std::sqrt(2.0 * K * meanDemand * (h + b) / (h * b));
}

inline FitResult erm_eoq_base_stock(const Dataset& data, const SystemParams& p) {
  data.validate(p);
  p.validate();
  double total = 0.0, count = 0.0;
  for (const auto& d : data)
    for (double v : d) {
      total += v;
      count += 1.0;
    }
  const double delta = eoq_delta(p.K, total / count, p.h, p.b);
  const double N = static_cast<double>(data.size());

  KinkSum ks(p.h, p.b);
  double reorders = 0.0;
  for (const auto& d : data)
    reorders += static_cast<double>(
        detail::add_schedule_terms(reorder_schedule(delta, d, p), d, p, ks));
  auto cand = ks.candidates(0.0, p.H);
  auto vals = ks.evaluate_sorted(cand);
  for (std::size_t j = 0; j < cand.size(); ++j) {
    double x1 = std::min(p.x1, cand[j] - delta);
    double first = cand[j] - x1 > kOrderEps ? 1.0 : 0.0;
    vals[j] = vals[j] / (N * p.T) + p.K * (reorders / N + first) / p.T;
  }
  std::size_t best = first_argmin(vals);
  double S = cand[best];
  SystemParams ep = p;
  ep.x1 = std::min(p.x1, S - delta);
  ep.Hlo = std::min(p.Hlo, S - delta);
  FitDiagnostics diag;
  diag.candidateCount = cand.size();
  return detail::finish(SsPolicy{S - delta, S}, FitMethod::ErmEoq, data, ep, diag);
}

enum class SsMode { Exact, IntegerGrid };

namespace detail {

struct SsCandidate {
  double value = std::numeric_limits<double>::infinity();
  double S = 0.0;
  double delta = 0.0;
};

inline bool better(const SsCandidate& c, const SsCandidate& best) {
  if (!std::isfinite(best.value)) return std::isfinite(c.value);
  return c.value < best.value - tie_tolerance(best.value);
}

inline FitResult erm_sS_grid(const Dataset& data, const SystemParams& p) {
  if (!all_integral(data))
    throw InputError("integer-grid (s,S) fitting requires integer demands");
  const double N = static_cast<double>(data.size());
  const long hiS = static_cast<long>(std::floor(p.H + 1e-9));
  const long loS = static_cast<long>(std::ceil(p.Hlo - 1e-9));
  SsCandidate best;
  std::size_t count = 0;
  for (long D = 0; D <= hiS - loS; ++D) {
    long sMin = std::max(0L, D + loS);
    if (sMin > hiS) break;
    KinkSum ks(p.h, p.b);
    double reorders = 0.0;
    for (const auto& d : data)
      reorders += static_cast<double>(
          add_schedule_terms(reorder_schedule(static_cast<double>(D), d, p), d, p, ks));
    std::vector<double> pts;
    for (long S = sMin; S <= hiS; ++S) pts.push_back(static_cast<double>(S));
    auto vals = ks.evaluate_sorted(pts);
    count += pts.size();
    for (std::size_t j = 0; j < pts.size(); ++j) {
      double first = pts[j] - p.x1 > kOrderEps ? 1.0 : 0.0;
      SsCandidate c{vals[j] / (N * p.T) + p.K * (reorders / N + first) / p.T, pts[j],
                    static_cast<double>(D)};
      if (better(c, best)) best = c;
    }
  }
  if (!std::isfinite(best.value)) throw ValidationError("no integer (s,S) policy within bounds");
  FitDiagnostics diag;
  diag.candidateCount = count;
  return finish(SsPolicy{best.S - best.delta, best.S}, FitMethod::ErmSsGrid, data, p, diag);
}

inline FitResult erm_sS_exact(const Dataset& data, const SystemParams& p) {
  const double N = static_cast<double>(data.size());
  std::vector<double> bps;
  for (const auto& d : data) {
    auto b = delta_breakpoints(d, p);
    bps.insert(bps.end(), b.begin(), b.end());
  }
  std::sort(bps.begin(), bps.end());
  bps.erase(std::unique(bps.begin(), bps.end()), bps.end());
  // intervals: [0, b0], (b0, b1], ..., (b_last, inf)
  std::vector<std::pair<double, double>> intervals;
  double prev = 0.0;
  bool first = true;
  for (double b : bps) {
    if (b < 0.0) continue;
    if (first) {
      intervals.emplace_back(0.0, b);
      first = false;
    } else {
      intervals.emplace_back(prev, b);
    }
    prev = b;
  }
  if (first)
    intervals.emplace_back(0.0, std::numeric_limits<double>::infinity());
  else
    intervals.emplace_back(prev, std::numeric_limits<double>::infinity());

  SsCandidate best;
  std::size_t count = 0;
  for (std::size_t k = 0; k < intervals.size(); ++k) {
    auto [lo, hi] = intervals[k];
    const bool closedLo = k == 0;
    double lb = closedLo ? 0.0 : lo + p.Hlo;
    bool openLb = !closedLo && lb >= 0.0;
    lb = std::max(0.0, lb);
    if (openLb) lb += 1e-10 * std::max(1.0, std::abs(lb));
    if (lb > p.H) continue;
    double repDelta = std::isfinite(hi) ? hi : lo + 1.0;
    KinkSum ks(p.h, p.b);
    double reorders = 0.0;
    for (const auto& d : data)
      reorders +=
          static_cast<double>(add_schedule_terms(reorder_schedule(repDelta, d, p), d, p, ks));
    auto cand = ks.candidates(lb, p.H);
    auto vals = ks.evaluate_sorted(cand);
    count += cand.size();
    for (std::size_t j = 0; j < cand.size(); ++j) {
      double S = cand[j];
      double fo = S - p.x1 > kOrderEps ? 1.0 : 0.0;
      double delta = closedLo ? 0.0 : std::min(hi, S - p.Hlo);
      SsCandidate c{vals[j] / (N * p.T) + p.K * (reorders / N + fo) / p.T, S, delta};
      if (better(c, best)) best = c;
    }
  }
  if (!std::isfinite(best.value)) throw ValidationError("no (s,S) policy within bounds");
  FitDiagnostics diag;
  diag.candidateCount = count;
  // The right end of a schedule interval is exact for integer data; fall back to an
  // interior point if rounding moved a reorder.
  FitResult r = finish(SsPolicy{best.S - best.delta, best.S}, FitMethod::ErmSsExact, data, p, diag);
  if (std::abs(r.inSampleRisk - best.value) > 1e-9 * std::max(1.0, best.value) &&
      best.delta > 0.0) {
    auto it = std::upper_bound(bps.begin(), bps.end(), best.delta - 1e-12);
    double lo = it == bps.begin() ? 0.0 : *std::prev(it);
    if (lo < best.delta) {
      double mid = 0.5 * (lo + best.delta);
      FitResult alt =
          finish(SsPolicy{best.S - mid, best.S}, FitMethod::ErmSsExact, data, p, diag);
      if (alt.inSampleRisk < r.inSampleRisk) r = alt;
    }
  }
  return r;
}

}  // namespace detail

inline FitResult erm_sS(const Dataset& data, const SystemParams& p, SsMode mode = SsMode::Exact) {
  data.validate(p);
  p.validate();
  if (p.x1 > p.Hlo) throw ValidationError("(s,S) fitting requires x1 <= Hlo");
  if (p.Hlo > 0.0) throw ValidationError("(s,S) fitting requires Hlo <= 0");
  return mode == SsMode::Exact ? detail::erm_sS_exact(data, p) : detail::erm_sS_grid(data, p);
}

struct StOptions {
  int restarts = 16;
  int maxIter = 100;
  double tol = 1e-8;
  std::uint64_t seed = 0;
  double jitter = 1.0;  // fraction of (L+1)U
};

namespace detail {

// Coordinate descent on the non-stationary empirical risk. Levels after T never
// affect the loss window and are fixed to 0.
class StDescent {
 public:
  StDescent(const Dataset& data, const SystemParams& p) : p_(p), n_(data.size()) {
    const int H = p.horizon();
    P_.assign(n_, std::vector<double>(H + 1, 0.0));
    for (std::size_t i = 0; i < n_; ++i)
      for (int t = 1; t <= H; ++t) P_[i][t] = P_[i][t - 1] + data[i][t - 1];
  }

  double objective(const std::vector<double>& S) const {
    double total = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      double M = -std::numeric_limits<double>::infinity();
      for (int r = 1; r <= p_.T; ++r) {
        M = std::max(M, S[r - 1] + P_[i][r - 1]);
        total += p_.cost(M - P_[i][r + p_.L]);
      }
    }
    return total / (static_cast<double>(n_) * p_.T);
  }

  // Returns number of sweeps; S is updated in place.
  int run(std::vector<double>& S, int maxIter, double tol, bool& converged) const {
    double obj = objective(S);
    converged = false;
    int sweeps = 0;
    while (sweeps < maxIter) {
      ++sweeps;
      for (int k = 1; k <= p_.T; ++k) update(S, k);
      double next = objective(S);
      double gain = obj - next;
      obj = next;
      if (gain < tol * std::max(1.0, std::abs(obj))) {
        converged = true;
        break;
      }
    }
    return sweeps;
  }

 private:
  struct Term {
    double ex;  // -inf when no other level is active
    double c0;
    double e;
  };

  double term_value(const Term& tm, double u) const {
    return p_.cost(std::max(tm.ex, u + tm.c0) - tm.e);
  }

  void update(std::vector<double>& S, int k) const {
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<Term> terms;
    terms.reserve(n_ * (p_.T - k + 1));
    for (std::size_t i = 0; i < n_; ++i) {
      double pre = ninf;
      for (int t = 1; t < k; ++t) pre = std::max(pre, S[t - 1] + P_[i][t - 1]);
      double ex = pre;
      for (int r = k; r <= p_.T; ++r) {
        if (r > k) ex = std::max(ex, S[r - 1] + P_[i][r - 1]);
        terms.push_back({ex, P_[i][k - 1], P_[i][r + p_.L]});
      }
    }
    const double H = p_.H;
    double f0 = 0.0, slope = 0.0;
    std::vector<std::pair<double, double>> events;
    events.reserve(2 * terms.size());
    for (const auto& tm : terms) {
      f0 += term_value(tm, 0.0);
      double p2 = tm.e - tm.c0;
      if (tm.ex > tm.c0) {
        double p1 = tm.ex - tm.c0;
        if (tm.ex < tm.e) {
          events.emplace_back(p1, -p_.b);
          events.emplace_back(p2, p_.h + p_.b);
        } else {
          events.emplace_back(p1, p_.h);
        }
      } else {
        if (p2 > 0.0) {
          slope -= p_.b;
          events.emplace_back(p2, p_.h + p_.b);
        } else {
          slope += p_.h;
        }
      }
    }
    std::sort(events.begin(), events.end());
    std::vector<double> us{0.0}, fs{f0};
    double cur = 0.0, f = f0;
    for (std::size_t j = 0; j < events.size();) {
      double pos = events[j].first;
      if (pos >= H) break;
      f += slope * (pos - cur);
      cur = pos;
      us.push_back(pos);
      fs.push_back(f);
      while (j < events.size() && events[j].first == pos) slope += events[j++].second;
    }
    if (H > cur) {
      f += slope * (H - cur);
      us.push_back(H);
      fs.push_back(f);
    }
    double u = us[first_argmin(fs)];
    double now = 0.0, cand = 0.0;
    for (const auto& tm : terms) {
      now += term_value(tm, S[k - 1]);
      cand += term_value(tm, u);
    }
    if (cand < now - 1e-12 * std::max(1.0, std::abs(now))) S[k - 1] = u;
  }

  const SystemParams& p_;
  std::size_t n_;
  std::vector<std::vector<double>> P_;
};

}  // namespace detail

inline FitResult erm_St(const Dataset& data, const SystemParams& p, const StOptions& opts = {}) {
  data.validate(p);
  p.validate();
  if (p.K != 0.0)
    throw UnsupportedError("non-stationary base-stock fitting requires K = 0");
  if (opts.restarts < 1) throw InputError("restarts must be >= 1");
  const int T = p.T, L = p.L;
  detail::StDescent cd(data, p);

  std::vector<std::vector<double>> inits;
  double S0 = std::get<BaseStock>(erm_base_stock(data, p).policy).S;
  inits.emplace_back(T, S0);
  double q = p.h + p.b > 0.0 ? p.b / (p.h + p.b) : 0.5;
  std::vector<double> quant(T);
  for (int t = 1; t <= T; ++t) {
    std::vector<double> a;
    for (const auto& d : data) a.push_back(detail::lead_sum(d, t, t + L));
    std::sort(a.begin(), a.end());
    auto idx = static_cast<std::size_t>(std::max(0.0, std::ceil(q * a.size()) - 1.0));
    quant[t - 1] = a[std::min(idx, a.size() - 1)];
  }
  for (int r = 1; r < opts.restarts; ++r) {
    Rng rng(derive_seed(opts.seed, r));
    double amp = opts.jitter * (L + 1) * p.U;
    std::vector<double> s(T);
    for (int t = 0; t < T; ++t) s[t] = std::clamp(quant[t] + rng.uniform(-amp, amp), 0.0, p.H);
    inits.push_back(std::move(s));
  }

  std::vector<double> best;
  double bestObj = std::numeric_limits<double>::infinity();
  FitDiagnostics diag;
  diag.restarts = opts.restarts;
  for (auto& s : inits) {
    bool conv = false;
    int sweeps = cd.run(s, opts.maxIter, opts.tol, conv);
    double obj = cd.objective(s);
    bool take = obj < bestObj - tie_tolerance(bestObj) ||
                (obj <= bestObj + tie_tolerance(bestObj) && s < best);
    if (best.empty() || take) {
      best = s;
      bestObj = obj;
      diag.converged = conv;
      diag.sweeps = sweeps;
    }
  }
  best.resize(p.horizon(), 0.0);
  diag.candidateCount = inits.size();
  return detail::finish(NonStationary{best}, FitMethod::ErmSt, data, p, diag);
}

inline constexpr double kDefaultGridBudget = 2e7;

inline FitResult grid_oracle(const Dataset& data, PolicyClass cls, double step,
                             const SystemParams& p, double budget = kDefaultGridBudget) {
  data.validate(p);
  p.validate();
  if (!(step > 0.0)) throw InputError("grid step must be > 0");
  const long nS = static_cast<long>(std::floor(p.H / step + 1e-9));
  auto level = [&](long k) { return k * step; };
  FitDiagnostics diag;
  std::optional<Policy> bestPi;
  double bestVal = std::numeric_limits<double>::infinity();
  auto consider = [&](Policy pi, double v) {
    if (!bestPi || v < bestVal - tie_tolerance(bestVal)) {
      bestPi = std::move(pi);
      bestVal = v;
    }
  };

  if (cls == PolicyClass::BaseStock) {
    if (nS + 1 > budget) throw BudgetError("grid size exceeds budget");
    for (long k = 0; k <= nS; ++k) {
      double v = 0.0;
      for (const auto& d : data) v += base_stock_loss(level(k), d, p);
      consider(BaseStock{level(k)}, v / data.size());
      ++diag.candidateCount;
    }
  } else if (cls == PolicyClass::Ss) {
    const long nD = static_cast<long>(std::floor((p.H - p.Hlo) / step + 1e-9));
    if (static_cast<double>(nS + 1) * (nD + 1) > budget)
      throw BudgetError("grid size exceeds budget");
    for (long j = 0; j <= nD; ++j)
      for (long k = 0; k <= nS; ++k) {
        double S = level(k), s = S - j * step;
        if (s < p.Hlo - 1e-9 * std::max(1.0, std::abs(p.Hlo))) continue;
        s = std::max(s, p.Hlo);
        Policy pi = SsPolicy{s, S};
        consider(pi, empirical_risk(pi, data, p));
        ++diag.candidateCount;
      }
  } else if (cls == PolicyClass::NonStationary) {
    const int T = p.T;
    if (T * std::log(static_cast<double>(nS + 1)) > std::log(budget))
      throw BudgetError("grid size exceeds budget");
    std::vector<long> idx(T, 0);
    while (true) {
      std::vector<double> lv(p.horizon(), 0.0);
      for (int t = 0; t < T; ++t) lv[t] = level(idx[t]);
      Policy pi = NonStationary{lv};
      consider(pi, empirical_risk(pi, data, p));
      ++diag.candidateCount;
      int t = T - 1;
      while (t >= 0 && idx[t] == nS) idx[t--] = 0;
      if (t < 0) break;
      ++idx[t];
    }
  } else {
    throw UnsupportedError("grid oracle supports base-stock, ss and st classes");
  }
  return detail::finish(*bestPi, FitMethod::GridOracle, data, p, diag);
}

}  // namespace invlearn
