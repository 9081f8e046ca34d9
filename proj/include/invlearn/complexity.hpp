#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "invlearn/demand.hpp"
#include "invlearn/dynamics.hpp"
#include "invlearn/fitters.hpp"
#include "invlearn/rng.hpp"
#include "invlearn/truth.hpp"

namespace invlearn {

inline constexpr int kShatterCap = 16;

// Which side of the witness the members of A land on.
enum class ShatterSide { HighInA, LowInA };

struct ShatterTarget {
  enum Kind { Loss, Level } kind = Loss;
  int period = 0;          // Level: 1-based period of y^t
  double normalizer = 1.0;  // Level: divide y^t by this
};

struct ShatterInstance {
  std::string construction;
  Dataset data;
  std::vector<double> witnesses;
  double gamma = 0.0;
  SystemParams params;
  Bounds bounds = Bounds::Checked;
  ShatterSide side = ShatterSide::HighInA;
  ShatterTarget target;
  // bit i-1 of the mask set <=> i in A
  std::function<Policy(std::uint64_t)> policyForSubset;
  std::vector<long> primes;
  std::vector<long> P;

  std::size_t size() const { return data.size(); }
};

struct SubsetFailure {
  std::uint64_t mask = 0;
  std::vector<double> values;
};

struct ShatterReport {
  bool ok = true;
  std::size_t subsets = 0;
  double gamma = 0.0;
  std::vector<SubsetFailure> failures;
};

inline double shatter_value(const ShatterInstance& inst, const Policy& pi, const DemandSequence& d) {
  auto tr = simulate(pi, d, inst.params, inst.bounds);
  if (inst.target.kind == ShatterTarget::Loss) return tr.avgLoss;
  return tr.y[inst.target.period - 1] / inst.target.normalizer;
}

inline ShatterReport verify_shattering(const ShatterInstance& inst,
                                       std::optional<double> gamma = std::nullopt,
                                       int cap = kShatterCap) {
  const std::size_t m = inst.size();
  if (m == 0) throw InputError("shatter instance has no sequences");
  if (static_cast<int>(m) > cap || m > 62)
    throw BudgetError(fmt::format("m = {} exceeds the subset enumeration cap {}", m, cap));
  if (inst.witnesses.size() != m) throw InputError("one witness per sequence is required");
  const double g = gamma.value_or(inst.gamma);
  if (!(g >= 0.0)) throw InputError("gamma must be >= 0");
  ShatterReport rep;
  rep.gamma = g;
  const std::uint64_t total = std::uint64_t{1} << m;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    Policy pi = inst.policyForSubset(mask);
    SubsetFailure f{mask, {}};
    bool good = true;
    for (std::size_t i = 0; i < m; ++i) {
      double v = shatter_value(inst, pi, inst.data[i]);
      f.values.push_back(v);
      bool inA = (mask >> i) & 1u;
      bool high = inst.side == ShatterSide::HighInA ? inA : !inA;
      double tau = inst.witnesses[i];
      double eps = 1e-12 * std::max(1.0, std::abs(tau));
      good = good && (high ? v > tau + g + eps : v <= tau - g + eps);
    }
    ++rep.subsets;
    if (!good) {
      rep.ok = false;
      rep.failures.push_back(std::move(f));
    }
  }
  return rep;
}

// d_i^t = 1 at t = i, 1/2 elsewhere; S^t_A = 1/2 on A, 1 elsewhere; b=1, h=0, U=1, L=0.
inline ShatterInstance gen_st_shatter(int T) {
  if (T < 1) throw InputError("T must be >= 1");
  ShatterInstance inst;
  inst.construction = "st";
  inst.params = base_stock_params(T, 0, 0.0, 1.0, 0.0, 1.0);
  for (int i = 1; i <= T; ++i) {
    DemandSequence d(T, 0.5);
    d[i - 1] = 1.0;
    inst.data.sequences.push_back(d);
  }
  inst.witnesses.assign(T, 0.0);
  inst.side = ShatterSide::HighInA;
  inst.policyForSubset = [T](std::uint64_t mask) {
    std::vector<double> lv(T);
    for (int t = 1; t <= T; ++t) lv[t - 1] = (mask >> (t - 1)) & 1u ? 0.5 : 1.0;
    return Policy{NonStationary{lv}};
  };
  return inst;
}

// Fixed-cost construction with h=b=0, U=1, L=0, m = T-4, delta = 1/m. Starts at x1 = 1
// so the t=1 level needs no order.
inline ShatterInstance gen_st_K_shatter(int T, double K) {
  if (T < 9) throw InputError(fmt::format("T must be >= 9 (got {})", T));
  if (!(K > 0.0 && K <= 1.0)) throw InputError(fmt::format("K must be in (0, 1] (got {})", K));
  const int m = T - 4;
  const double delta = 1.0 / m;
  ShatterInstance inst;
  inst.construction = "st-K";
  inst.params = base_stock_params(T, 0, 0.0, 0.0, K, 1.0);
  inst.params.x1 = 1.0;
  inst.bounds = Bounds::Unchecked;
  for (int i = 1; i <= m; ++i) {
    DemandSequence d(T, 0.0);
    d[i - 1] = i * delta;
    d[m] = (m - i) * delta;
    inst.data.sequences.push_back(d);
  }
  inst.witnesses.assign(m, 2.0 * K / T);
  inst.gamma = 0.5 * K / T;
  inst.side = ShatterSide::LowInA;
  inst.policyForSubset = [T, m, delta](std::uint64_t mask) {
    std::vector<double> lv(T, 0.0);
    lv[0] = 1.0;
    for (int t = 1; t <= m; ++t)
      if ((mask >> (t - 1)) & 1u) lv[t] = 1.0 - (t - 1) * delta;
    lv[m + 1] = 1.0 - (m - 1.0 / 3.0) * delta;
    lv[m + 2] = 1.0 - (m - 2.0 / 3.0) * delta;
    lv[m + 3] = 1.0 - (m - 1.0) * delta;
    return Policy{NonStationary{lv}};
  };
  return inst;
}

inline std::vector<long> first_primes(int m) {
  std::vector<long> out;
  for (long n = 2; static_cast<int>(out.size()) < m; ++n) {
    bool prime = true;
    for (long q : out)
      if (n % q == 0) {
        prime = false;
        break;
      }
    if (prime) out.push_back(n);
  }
  return out;
}

inline constexpr int kPrimeShatterCap = 4;

// (s,S) construction over the first m primes: T = 2 prod p_j, h=K=0, U=1, L=0,
// b in (0, 1/2]. Sequences are ones up to P_i - 1, 1/2 at P_i, zeros afterwards.
inline ShatterInstance gen_sS_prime_shatter(int m, double b, int cap = kPrimeShatterCap) {
  if (m < 1) throw InputError("m must be >= 1");
  if (m > cap) throw BudgetError(fmt::format("m = {} exceeds the cap {}", m, cap));
  if (!(b > 0.0 && b <= 0.5)) throw InputError(fmt::format("b must be in (0, 1/2] (got {})", b));
  const int L = 0;
  auto primes = first_primes(m);
  long prod = std::accumulate(primes.begin(), primes.end(), 1L, std::multiplies<long>());
  const int T = static_cast<int>(2 * prod);
  ShatterInstance inst;
  inst.construction = "ss-prime";
  inst.primes = primes;
  inst.params = base_stock_params(T, L, 0.0, b, 0.0, 1.0);
  inst.params.H = std::numeric_limits<double>::infinity();
  inst.params.Hlo = -1.0;
  inst.params.x1 = -1.0;
  inst.bounds = Bounds::Unchecked;
  for (int i = 0; i < m; ++i) {
    long Pi = prod / primes[i];
    inst.P.push_back(Pi);
    DemandSequence d(T + L, 0.0);
    for (long t = 1; t <= T + L; ++t) d[t - 1] = t < Pi + L ? 1.0 : (t == Pi + L ? 0.5 : 0.0);
    inst.data.sequences.push_back(d);
    inst.witnesses.push_back(b / (2.0 * T) *
                             ((T - Pi + 1) / 2.0 + static_cast<double>(Pi) / primes[i]));
  }
  inst.gamma = b / 16.0;
  inst.side = ShatterSide::LowInA;
  inst.policyForSubset = [primes](std::uint64_t mask) {
    long D = 1;
    for (std::size_t i = 0; i < primes.size(); ++i)
      if ((mask >> i) & 1u) D *= primes[i];
    double S = static_cast<double>(D) - 1.0;
    return Policy{SsPolicy{S - static_cast<double>(D), S}};
  };
  return inst;
}

inline nlohmann::json to_json(const ShatterInstance& inst, const ShatterReport* rep = nullptr) {
  nlohmann::json j;
  j["construction"] = inst.construction;
  j["T"] = inst.params.T;
  j["L"] = inst.params.L;
  j["h"] = inst.params.h;
  j["b"] = inst.params.b;
  j["K"] = inst.params.K;
  j["x1"] = inst.params.x1;
  j["side"] = inst.side == ShatterSide::HighInA ? "high-in-A" : "low-in-A";
  j["gamma"] = inst.gamma;
  j["witnesses"] = inst.witnesses;
  j["dataset"] = inst.data.sequences;
  if (!inst.primes.empty()) {
    j["primes"] = inst.primes;
    j["P"] = inst.P;
  }
  if (rep) {
    j["ok"] = rep->ok;
    j["subsets"] = rep->subsets;
    j["checkedGamma"] = rep->gamma;
    nlohmann::json f = nlohmann::json::array();
    for (const auto& x : rep->failures) f.push_back({{"mask", x.mask}, {"values", x.values}});
    j["failures"] = f;
  }
  return j;
}

struct DiscretizationGap {
  double gridBestRisk = 0.0;
  double continuousRisk = 0.0;
  double gap = 0.0;
  Policy gridBest;
};

// Alternating demand (1, 1/(2M), ...) with U=1, L=0, h=b=1/2, K=0; grid of (s,S) with
// S and Delta multiples of 1/M.
inline DiscretizationGap discretization_gap(int M, int T = 200) {
  if (M < 1) throw InputError("M must be >= 1");
  if (T < 2 || T % 2 != 0) throw InputError(fmt::format("T must be even and >= 2 (got {})", T));
  auto p = ss_params(T, 0, 0.5, 0.5, 0.0, 1.0);
  DemandSequence d(T);
  for (int t = 0; t < T; ++t) d[t] = t % 2 == 0 ? 1.0 : 1.0 / (2.0 * M);
  Dataset data{{d}};
  DiscretizationGap out;
  double top = 1.0 + 1.0 / (2.0 * M);
  out.continuousRisk = simulate(SsPolicy{0.0, top}, d, p).avgLoss;
  auto g = grid_oracle(data, PolicyClass::Ss, 1.0 / M, p);
  out.gridBest = g.policy;
  out.gridBestRisk = g.inSampleRisk;
  out.gap = out.gridBestRisk - out.continuousRisk;
  return out;
}

struct McEstimate {
  double estimate = 0.0;
  double stdErr = 0.0;
  std::vector<double> values;
  bool approximateSup = false;
};

inline McEstimate summarize(std::vector<double> v, bool approximate = false) {
  McEstimate e;
  e.approximateSup = approximate;
  double s = 0.0;
  for (double x : v) s += x;
  e.estimate = s / v.size();
  if (v.size() > 1) {
    double s2 = 0.0;
    for (double x : v) s2 += (x - e.estimate) * (x - e.estimate);
    e.stdErr = std::sqrt(s2 / (v.size() - 1) / v.size());
  }
  e.values = std::move(v);
  return e;
}

// lossMatrix[j][i] = loss of policy j on sample i.
inline McEstimate rademacher_estimate(const std::vector<std::vector<double>>& lossMatrix,
                                      std::size_t draws, std::uint64_t seed) {
  if (draws < 1) throw InputError("draws must be >= 1");
  if (lossMatrix.empty() || lossMatrix[0].empty()) throw InputError("loss matrix is empty");
  const std::size_t N = lossMatrix[0].size();
  Rng rng(seed);
  std::vector<double> out;
  std::vector<int> sigma(N);
  for (std::size_t k = 0; k < draws; ++k) {
    for (auto& s : sigma) s = rng.rademacher();
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& row : lossMatrix) {
      double v = 0.0;
      for (std::size_t i = 0; i < N; ++i) v += sigma[i] * row[i];
      best = std::max(best, v / N);
    }
    out.push_back(best);
  }
  return summarize(std::move(out));
}

// Grid members of a class: levels are multiples of step in [0, H] (s >= Hlo for ss).
inline std::vector<Policy> class_grid(PolicyClass cls, const SystemParams& p, double step,
                                      double budget = 1e6) {
  if (!(step > 0.0)) throw InputError("grid step must be > 0");
  const long nS = static_cast<long>(std::floor(p.H / step + 1e-9));
  std::vector<Policy> out;
  if (cls == PolicyClass::BaseStock) {
    for (long k = 0; k <= nS; ++k) out.push_back(BaseStock{k * step});
  } else if (cls == PolicyClass::Ss) {
    const long nD = static_cast<long>(std::floor((p.H - p.Hlo) / step + 1e-9));
    if (static_cast<double>(nS + 1) * (nD + 1) > budget) throw BudgetError("policy grid exceeds the budget");
    for (long j = 0; j <= nD; ++j)
      for (long k = 0; k <= nS; ++k) {
        double S = k * step, s = S - j * step;
        if (s < p.Hlo - detail::bound_slack(p.Hlo)) continue;
        out.push_back(SsPolicy{std::max(s, p.Hlo), S});
      }
  } else if (cls == PolicyClass::NonStationary) {
    if (p.T * std::log(static_cast<double>(nS + 1)) > std::log(budget))
      throw BudgetError("policy grid exceeds the budget");
    std::vector<long> idx(p.T, 0);
    while (true) {
      std::vector<double> lv(p.horizon(), 0.0);
      for (int t = 0; t < p.T; ++t) lv[t] = idx[t] * step;
      out.push_back(NonStationary{lv});
      int t = p.T - 1;
      while (t >= 0 && idx[t] == nS) idx[t--] = 0;
      if (t < 0) break;
      ++idx[t];
    }
  } else {
    throw UnsupportedError("class grid supports base-stock, ss and st");
  }
  return out;
}

// Empirical Rademacher complexity of a class on one dataset. Exact sup for base-stock,
// grid sup otherwise.
inline McEstimate rademacher_estimate(PolicyClass cls, const Dataset& data, const SystemParams& p,
                                      std::size_t draws, std::uint64_t seed, double step = 1.0) {
  data.validate(p);
  p.validate();
  if (draws < 1) throw InputError("draws must be >= 1");
  const std::size_t N = data.size();
  if (cls == PolicyClass::BaseStock) {
    Rng rng(seed);
    std::vector<double> out;
    for (std::size_t k = 0; k < draws; ++k) {
      BaseStockLinear f(p);
      for (const auto& d : data) f.add_sequence(d, rng.rademacher() / static_cast<double>(N));
      out.push_back(f.maximize().value);
    }
    return summarize(std::move(out));
  }
  std::vector<std::vector<double>> mat;
  for (const auto& pi : class_grid(cls, p, step)) {
    std::vector<double> row;
    for (const auto& d : data) row.push_back(simulate(pi, d, p).avgLoss);
    mat.push_back(std::move(row));
  }
  auto e = rademacher_estimate(mat, draws, seed);
  e.approximateSup = true;
  return e;
}

struct GeOptions {
  std::size_t reps = 100;
  std::size_t evalSamples = 2000;
  std::uint64_t seed = 0;
  double step = 1.0;
  bool preferExact = true;
};

// GE of one dataset: sup_pi R(pi) - R_hat(pi).
inline double generalization_gap(PolicyClass cls, const RiskOracle& truth, const Dataset& data,
                                 double step = 1.0) {
  const auto& p = truth.params();
  if (cls == PolicyClass::BaseStock) {
    BaseStockLinear f(p);
    truth.add_base_stock(f, 1.0);
    for (const auto& d : data) f.add_sequence(d, -1.0 / static_cast<double>(data.size()));
    return f.maximize().value;
  }
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& pi : class_grid(cls, p, step))
    best = std::max(best, truth.risk(pi) - empirical_risk(pi, data, p));
  return best;
}

inline McEstimate ge_estimate(PolicyClass cls, const DemandModel& model, std::size_t N,
                              const SystemParams& p, const GeOptions& o = {}) {
  if (o.reps < 1) throw InputError("reps must be >= 1");
  if (N < 1) throw InputError("N must be >= 1");
  RiskOracle truth(model, p, o.evalSamples, derive_seed(o.seed, 0xe7a1u), o.preferExact);
  std::vector<double> v;
  if (cls == PolicyClass::BaseStock) {
    BaseStockLinear base(p);
    truth.add_base_stock(base, 1.0);
    for (std::size_t r = 0; r < o.reps; ++r) {
      auto data = draw(model, N, derive_seed(o.seed, r));
      data.validate(p);
      BaseStockLinear f = base;
      for (const auto& d : data) f.add_sequence(d, -1.0 / static_cast<double>(N));
      v.push_back(f.maximize().value);
    }
    return summarize(std::move(v));
  }
  auto grid = class_grid(cls, p, o.step);
  std::vector<double> R;
  for (const auto& pi : grid) R.push_back(truth.risk(pi));
  for (std::size_t r = 0; r < o.reps; ++r) {
    auto data = draw(model, N, derive_seed(o.seed, r));
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < grid.size(); ++j) best = std::max(best, R[j] - empirical_risk(grid[j], data, p));
    v.push_back(best);
  }
  return summarize(std::move(v), true);
}

}  // namespace invlearn
