#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "invlearn/types.hpp"

namespace invlearn {

enum class Bounds { Checked, Unchecked };

// Arrays are 0-based: entry t-1 holds period t. x has T+L+1 entries with x[0] = x1.
struct Trajectory {
  std::vector<double> x;
  std::vector<double> q;
  std::vector<double> y;
  std::vector<double> I;
  std::vector<double> perPeriodLoss;  // periods L+1..T+L
  double avgLoss = 0.0;
};

namespace detail {

inline void check_length(std::span<const double> d, const SystemParams& p) {
  if (d.size() != static_cast<std::size_t>(p.horizon()))
    throw InputError(
        fmt::format("demand sequence has length {} but T+L = {}", d.size(), p.horizon()));
}

inline void check_demands(std::span<const double> d, const SystemParams& p) {
  for (std::size_t t = 0; t < d.size(); ++t)
    if (!(d[t] >= 0.0) || d[t] > p.U + bound_slack(p.U))
      throw ValidationError(fmt::format("demand d^{}={} outside [0, U={}]", t + 1, d[t], p.U));
}

}  // namespace detail

inline Trajectory simulate(const Policy& pi, std::span<const double> d, const SystemParams& p,
                           Bounds bounds = Bounds::Checked) {
  detail::check_length(d, p);
  if (bounds == Bounds::Checked) {
    p.validate();
    detail::check_demands(d, p);
    validate_policy(pi, p);
  }
  const int n = p.horizon();
  Trajectory tr;
  tr.x.assign(n + 1, 0.0);
  tr.q.assign(n, 0.0);
  tr.y.assign(n, 0.0);
  tr.I.assign(n, 0.0);
  tr.perPeriodLoss.reserve(p.T);
  tr.x[0] = p.x1;

  double pipeline = 0.0;  // sum of q^{t-L..t-1}
  double total = 0.0;
  for (int t = 1; t <= n; ++t) {
    double I = tr.x[t - 1] + pipeline;
    double q = 0.0;
    if (auto* a = std::get_if<BaseStock>(&pi)) {
      q = std::max(a->S - I, 0.0);
    } else if (auto* c = std::get_if<SsPolicy>(&pi)) {
      q = I <= c->s ? c->S - I : 0.0;
    } else {
      const auto& lv = std::get<NonStationary>(pi).levels;
      q = std::max(lv[t - 1] - I, 0.0);
    }
    if (q < kOrderEps) q = 0.0;
    tr.I[t - 1] = I;
    tr.q[t - 1] = q;

    double arrival = 0.0;
    if (p.L == 0) {
      arrival = q;
    } else {
      pipeline += q;
      if (t - p.L >= 1) {
        arrival = tr.q[t - p.L - 1];
        pipeline -= arrival;
      }
    }
    double y = tr.x[t - 1] + arrival;
    tr.y[t - 1] = y;
    tr.x[t] = y - d[t - 1];
    if (t >= p.L + 1) {
      double loss = p.cost(tr.x[t]) + (arrival > 0.0 ? p.K : 0.0);
      tr.perPeriodLoss.push_back(loss);
      total += loss;
    }
  }
  tr.avgLoss = total / p.T;
  return tr;
}

inline double avg_loss(const Policy& pi, std::span<const double> d, const SystemParams& p,
                       Bounds bounds = Bounds::Checked) {
  return simulate(pi, d, p, bounds).avgLoss;
}

inline double empirical_risk(const Policy& pi, const Dataset& data, const SystemParams& p,
                             Bounds bounds = Bounds::Checked) {
  data.validate(p);
  double s = 0.0;
  for (const auto& d : data) s += simulate(pi, d, p, bounds).avgLoss;
  return s / static_cast<double>(data.size());
}

// Closed-form average loss of BaseStock{S}.
inline double base_stock_loss(double S, std::span<const double> d, const SystemParams& p) {
  detail::check_length(d, p);
  double total = 0.0;
  for (int t = p.L + 1; t <= p.horizon(); ++t) {
    double window = 0.0;
    for (int u = t - p.L; u <= t; ++u) window += d[u - 1];
    total += p.cost(S - window);
  }
  int orders = S - p.x1 > kOrderEps ? 1 : 0;
  for (int t = 1; t <= p.T - 1; ++t)
    if (d[t - 1] > kOrderEps) ++orders;
  return total / p.T + p.K * orders / p.T;
}

struct ReorderSchedule {
  std::vector<int> times;  // 1-based periods
  std::size_t count() const { return times.size(); }
  bool operator==(const ReorderSchedule&) const = default;
};

inline ReorderSchedule reorder_schedule(double delta, std::span<const double> d,
                                        const SystemParams& p) {
  detail::check_length(d, p);
  if (!(delta >= 0.0)) throw InputError(fmt::format("delta must be >= 0 (got {})", delta));
  ReorderSchedule r;
  r.times.push_back(1);
  double acc = 0.0;
  for (int t = 2; t <= p.T; ++t) {
    acc += d[t - 2];
    if (acc >= delta) {
      r.times.push_back(t);
      acc = 0.0;
    }
  }
  return r;
}

// Sums of consecutive demands within periods 1..T-1, sorted and deduplicated.
inline std::vector<double> delta_breakpoints(std::span<const double> d, const SystemParams& p) {
  detail::check_length(d, p);
  std::vector<double> out;
  for (int a = 1; a <= p.T - 1; ++a) {
    double s = 0.0;
    for (int e = a; e <= p.T - 1; ++e) {
      s += d[e - 1];
      out.push_back(s);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace invlearn
