#pragma once

#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "invlearn/demand.hpp"
#include "invlearn/dynamics.hpp"
#include "invlearn/fitters.hpp"
#include "invlearn/perm.hpp"
#include "invlearn/piecewise.hpp"

namespace invlearn {

// Weighted sum of base-stock losses as a function of S:
// F(S) = kinks(S) + constant + jump * 1{S - x1 > eps}.
class BaseStockLinear {
 public:
  explicit BaseStockLinear(const SystemParams& p) : p_(p), ks_(p.h, p.b) {}

  void add_sequence(std::span<const double> d, double w) {
    for (int t = p_.L + 1; t <= p_.horizon(); ++t) ks_.add(detail::lead_sum(d, t - p_.L, t), w / p_.T);
    constant_ += w * p_.K * static_cast<double>(detail::positive_demands(d, p_.T - 1)) / p_.T;
    jump_ += w * p_.K / p_.T;
  }

  void add_pmfs(const std::vector<Pmf>& m, double w) {
    for (int t = p_.L + 1; t <= p_.horizon(); ++t) {
      Pmf lead = detail::lead_time_pmf(m, t - p_.L, p_.L);
      for (std::size_t k = 0; k < lead.size(); ++k) ks_.add(lead.values[k], w * lead.probs[k] / p_.T);
    }
    double orders = 0.0;
    for (int t = 1; t <= p_.T - 1; ++t)
      for (std::size_t k = 0; k < m[t - 1].size(); ++k)
        if (m[t - 1].values[k] > kOrderEps) orders += m[t - 1].probs[k];
    constant_ += w * p_.K * orders / p_.T;
    jump_ += w * p_.K / p_.T;
  }

  double value(double S) const {
    return ks_.evaluate(S) + constant_ + (S - p_.x1 > kOrderEps ? jump_ : 0.0);
  }

  struct Extremum {
    double S = 0.0;
    double value = 0.0;
    bool limit = false;  // supremum approached as S decreases to x1
  };

  Extremum maximize() const { return extremum(+1.0); }
  Extremum minimize() const { return extremum(-1.0); }

 private:
  Extremum extremum(double sign) const {
    auto cand = ks_.candidates(0.0, p_.H);
    auto vals = ks_.evaluate_sorted(cand);
    Extremum best;
    bool have = false;
    auto take = [&](double S, double v, bool limit) {
      if (!have || sign * v > sign * best.value + tie_tolerance(best.value)) {
        best = {S, v, limit};
        have = true;
      }
    };
    for (std::size_t j = 0; j < cand.size(); ++j)
      take(cand[j], vals[j] + constant_ + (cand[j] - p_.x1 > kOrderEps ? jump_ : 0.0), false);
    if (p_.x1 >= 0.0 && p_.x1 < p_.H && jump_ != 0.0)
      take(p_.x1, ks_.evaluate(p_.x1) + constant_ + jump_, true);
    return best;
  }

  SystemParams p_;
  KinkSum ks_;
  double constant_ = 0.0;
  double jump_ = 0.0;
};

// True risk R(pi) of a demand model: exact for finite-support and independent integer
// models, otherwise a mean over evalSamples fresh draws.
class RiskOracle {
 public:
  RiskOracle(const DemandModel& model, const SystemParams& p, std::size_t evalSamples,
             std::uint64_t seed, bool preferExact = true)
      : p_(p) {
    validate_model(model);
    if (preferExact) {
      if (auto f = finite_support(model)) {
        std::map<DemandSequence, double> merged;
        for (const auto& a : f->atoms) merged[a] += 1.0 / static_cast<double>(f->atoms.size());
        for (auto& [a, w] : merged) {
          atoms_.push_back(a);
          weights_.push_back(w);
        }
        exact_ = true;
        return;
      }
      if (is_independent(model) && integerized(model)) {
        pmfs_ = period_pmfs(model);
        exact_ = true;
        return;
      }
    }
    if (evalSamples < 1) throw InputError("evalSamples must be >= 1");
    auto data = draw(model, evalSamples, seed);
    atoms_ = std::move(data.sequences);
    weights_.assign(atoms_.size(), 1.0 / static_cast<double>(atoms_.size()));
  }

  bool exact() const { return exact_; }
  const SystemParams& params() const { return p_; }
  const std::optional<std::vector<Pmf>>& pmfs() const { return pmfs_; }
  const std::vector<DemandSequence>& atoms() const { return atoms_; }

  double risk(const Policy& pi) const { return risk(pi, p_); }

  double risk(const Policy& pi, const SystemParams& p) const {
    if (pmfs_) return product_risk(pi, *pmfs_, p);
    double v = 0.0;
    for (std::size_t k = 0; k < atoms_.size(); ++k) v += weights_[k] * simulate(pi, atoms_[k], p).avgLoss;
    return v;
  }

  void add_base_stock(BaseStockLinear& f, double w) const {
    if (pmfs_) {
      f.add_pmfs(*pmfs_, w);
      return;
    }
    for (std::size_t k = 0; k < atoms_.size(); ++k) f.add_sequence(atoms_[k], w * weights_[k]);
  }

  // Best base-stock level under the true law.
  BaseStockLinear::Extremum best_base_stock() const {
    BaseStockLinear f(p_);
    add_base_stock(f, 1.0);
    return f.minimize();
  }

 private:
  static bool integerized(const DemandModel& m) {
    if (auto* a = std::get_if<IndependentNormals>(&m)) return a->integerize;
    if (auto* b = std::get_if<IIDNormal>(&m)) return b->integerize;
    return true;
  }

  SystemParams p_;
  bool exact_ = false;
  std::optional<std::vector<Pmf>> pmfs_;
  std::vector<DemandSequence> atoms_;
  std::vector<double> weights_;
};

}  // namespace invlearn
