#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "invlearn/perm.hpp"

using namespace invlearn;

namespace {

Pmf uniform12() { return Pmf{{1.0, 2.0}, {0.5, 0.5}}; }

// Every sequence of the product law with its probability.
std::vector<std::pair<DemandSequence, double>> enumerate_product(const std::vector<Pmf>& m) {
  std::vector<std::pair<DemandSequence, double>> out{{{}, 1.0}};
  for (const auto& q : m) {
    std::vector<std::pair<DemandSequence, double>> next;
    for (const auto& [d, w] : out)
      for (std::size_t k = 0; k < q.size(); ++k) {
        auto e = d;
        e.push_back(q.values[k]);
        next.emplace_back(e, w * q.probs[k]);
      }
    out = std::move(next);
  }
  return out;
}

double brute_risk(const Policy& pi, const std::vector<Pmf>& m, const SystemParams& p) {
  double v = 0.0;
  for (const auto& [d, w] : enumerate_product(m)) v += w * simulate(pi, d, p).avgLoss;
  return v;
}

Pmf random_pmf(std::mt19937_64& g, int U) {
  std::uniform_int_distribution<int> k(1, 3), val(0, U);
  std::set<int> vals;
  int n = k(g);
  while (static_cast<int>(vals.size()) < n) vals.insert(val(g));
  Pmf p;
  for (int v : vals) {
    p.values.push_back(v);
    p.probs.push_back(1.0 / n);
  }
  return p;
}

}  // namespace

TEST(Marginals, ExampleTable) {
  Dataset data{{{1, 3, 5}, {2, 4, 6}}};
  auto m = build_marginals(data);
  ASSERT_EQ(m.periods(), 3u);
  EXPECT_EQ(m.perPeriod[0].values, (std::vector<double>{1, 2}));
  EXPECT_EQ(m.perPeriod[0].probs, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(m.perPeriod[2].values, (std::vector<double>{5, 6}));
}

TEST(Marginals, MultiplicityAndRowOrder) {
  Dataset a{{{1, 3}, {1, 4}, {2, 3}, {1, 3}}};
  Dataset b{{{2, 3}, {1, 3}, {1, 3}, {1, 4}}};
  auto ma = build_marginals(a), mb = build_marginals(b);
  EXPECT_EQ(ma.perPeriod[0].values, (std::vector<double>{1, 2}));
  EXPECT_DOUBLE_EQ(ma.perPeriod[0].probs[0], 0.75);
  for (int t = 0; t < 2; ++t) {
    EXPECT_EQ(ma.perPeriod[t].values, mb.perPeriod[t].values);
    EXPECT_EQ(ma.perPeriod[t].probs, mb.perPeriod[t].probs);
  }
}

TEST(Marginals, SingleRowIsPointMass) {
  Dataset data{{{3, 0, 7}}};
  auto m = build_marginals(data);
  for (int t = 0; t < 3; ++t) {
    ASSERT_EQ(m.perPeriod[t].size(), 1u);
    EXPECT_EQ(m.perPeriod[t].probs[0], 1.0);
    EXPECT_EQ(m.perPeriod[t].values[0], data[0][t]);
  }
}

TEST(Marginals, CsvRoundTrip) {
  Dataset data{{{1, 3, 5}, {2, 4, 6}, {2, 3, 5}}};
  auto m = build_marginals(data);
  std::stringstream ss;
  write_marginals_csv(ss, m);
  auto r = read_marginals_csv(ss);
  ASSERT_EQ(r.periods(), 3u);
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(r.perPeriod[t].values, m.perPeriod[t].values);
    EXPECT_EQ(r.perPeriod[t].probs, m.perPeriod[t].probs);
  }
  std::stringstream bad("period,value,probability\n1,1,0.5\n");
  EXPECT_THROW(read_marginals_csv(bad), InputError);
}

TEST(Partition, ExampleGroups) {
  // rows (1,3,5) and (2,4,6): index 0 maps to the first row's value
  std::vector<std::vector<int>> table{{1, 3, 5}, {2, 4, 6}};
  auto groups = product_partition(2, 3);
  ASSERT_EQ(groups.size(), 4u);
  std::set<std::set<std::string>> got;
  for (const auto& g : groups) {
    std::set<std::string> names;
    for (const auto& tup : g) {
      std::string s;
      for (int t = 0; t < 3; ++t) s += std::to_string(table[tup[t]][t]);
      names.insert(s);
    }
    got.insert(names);
  }
  std::set<std::set<std::string>> want{{"135", "246"}, {"136", "245"}, {"145", "236"}, {"146", "235"}};
  EXPECT_EQ(got, want);
}

TEST(Partition, SingleRow) {
  auto groups = product_partition(1, 4);
  ASSERT_EQ(groups.size(), 1u);
  ASSERT_EQ(groups[0].size(), 1u);
  EXPECT_EQ(groups[0][0], (IndexTuple{0, 0, 0, 0}));
}

TEST(Partition, DisjointCovering) {
  for (int N = 1; N <= 4; ++N)
    for (int P = 1; P <= 4; ++P) {
      auto groups = product_partition(N, P);
      std::size_t expected = 1;
      for (int t = 1; t < P; ++t) expected *= N;
      ASSERT_EQ(groups.size(), expected) << N << " " << P;
      std::set<IndexTuple> all;
      for (const auto& g : groups) {
        ASSERT_EQ(g.size(), static_cast<std::size_t>(N));
        for (int t = 0; t < P; ++t) {
          std::set<int> seen;
          for (const auto& tup : g) seen.insert(tup[t]);
          EXPECT_EQ(seen.size(), static_cast<std::size_t>(N));
        }
        for (const auto& tup : g) EXPECT_TRUE(all.insert(tup).second);
      }
      std::size_t total = expected * N;
      EXPECT_EQ(all.size(), total);
    }
}

TEST(Partition, Budget) {
  EXPECT_THROW(product_partition(10, 9, 1e7), BudgetError);
  EXPECT_THROW(product_partition(0, 2), InputError);
}

TEST(PermFit, SinglePeriodUniform) {
  auto p = base_stock_params(1, 0, 1, 9, 0, 2);
  EmpiricalMarginals m{{uniform12()}};
  double expect[] = {13.5, 4.5, 0.5};
  for (int S = 0; S <= 2; ++S)
    EXPECT_NEAR(product_risk(NonStationary{{double(S)}}, m.perPeriod, p), expect[S], 1e-12);
  auto r = perm_fit_st(m, p);
  EXPECT_EQ(std::get<NonStationary>(r.policy).levels[0], 2.0);
  EXPECT_NEAR(r.inSampleRisk, 0.5, 1e-12);
  EXPECT_EQ(r.method, FitMethod::PermSt);
}

TEST(PermFit, PointMassMatchesErm) {
  DemandSequence d{3, 0, 5, 2, 4};
  auto p = base_stock_params(3, 2, 1, 4, 0, 10);
  auto m = build_marginals(Dataset{{d}});
  auto r = perm_fit_st(m, p);
  EXPECT_NEAR(r.inSampleRisk, 0.0, 1e-12);
  EXPECT_NEAR(simulate(r.policy, d, p).avgLoss, 0.0, 1e-12);
  auto e = erm_St(Dataset{{d}}, p);
  EXPECT_NEAR(e.inSampleRisk, r.inSampleRisk, 1e-9);
}

TEST(PermFit, TwoPeriodsProductLaw) {
  auto p = base_stock_params(2, 0, 1, 9, 0, 2);
  EmpiricalMarginals m{{uniform12(), uniform12()}};
  auto r = perm_fit_st(m, p);
  EXPECT_NEAR(brute_risk(r.policy, m.perPeriod, p), r.inSampleRisk, 1e-12);
  double best = 1e300;
  for (int a = 0; a <= 2; ++a)
    for (int b = 0; b <= 2; ++b)
      best = std::min(best, brute_risk(NonStationary{{double(a), double(b)}}, m.perPeriod, p));
  EXPECT_NEAR(r.inSampleRisk, best, 1e-12);
}

TEST(PermFit, MatchesExhaustiveLevels) {
  std::mt19937_64 g(11);
  for (int rep = 0; rep < 30; ++rep) {
    int T = 1 + rep % 3, L = rep % 2, U = 4;
    auto p = base_stock_params(T, L, 1 + rep % 3, 2 + rep % 5, 0, U);
    std::vector<Pmf> m;
    for (int t = 0; t < T + L; ++t) m.push_back(random_pmf(g, U));
    auto r = perm_fit_st(EmpiricalMarginals{m}, p);
    int top = static_cast<int>(std::floor(p.H + 1e-9));
    std::vector<int> idx(T, 0);
    double best = 1e300;
    while (true) {
      std::vector<double> lv(T + L, 0.0);
      for (int t = 0; t < T; ++t) lv[t] = idx[t];
      best = std::min(best, brute_risk(NonStationary{lv}, m, p));
      int t = T - 1;
      while (t >= 0 && idx[t] == top) idx[t--] = 0;
      if (t < 0) break;
      ++idx[t];
    }
    EXPECT_NEAR(r.inSampleRisk, best, 1e-9) << rep;
    EXPECT_NEAR(product_risk(r.policy, m, p), r.inSampleRisk, 1e-9) << rep;
  }
}

TEST(PermFit, DpConsistencyAgainstRandomPolicies) {
  std::mt19937_64 g(5);
  auto p = base_stock_params(4, 1, 1, 3, 0, 5);
  std::vector<Pmf> m;
  for (int t = 0; t < 5; ++t) m.push_back(random_pmf(g, 5));
  auto r = perm_fit_st(EmpiricalMarginals{m}, p);
  std::uniform_real_distribution<double> u(0.0, p.H);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> lv(5, 0.0);
    for (int t = 0; t < 4; ++t) lv[t] = u(g);
    EXPECT_LE(r.inSampleRisk, product_risk(NonStationary{lv}, m, p) + 1e-9);
  }
}

TEST(PermFit, SsExhaustive) {
  std::mt19937_64 g(8);
  auto p = ss_params(3, 0, 1, 4, 3, 4);
  std::vector<Pmf> m;
  for (int t = 0; t < 3; ++t) m.push_back(random_pmf(g, 4));
  auto r = perm_fit_ss(EmpiricalMarginals{m}, p);
  EXPECT_EQ(r.method, FitMethod::PermSs);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    double S = u(g) * p.H;
    double s = p.Hlo + u(g) * (S - p.Hlo);
    EXPECT_LE(r.inSampleRisk, product_risk(SsPolicy{s, S}, m, p) + 1e-9);
  }
  EXPECT_NEAR(brute_risk(r.policy, m, p), r.inSampleRisk, 1e-9);
}

TEST(PermFit, Errors) {
  auto p = base_stock_params(1, 0, 1, 9, 0, 2);
  EmpiricalMarginals frac{{Pmf{{1.5}, {1.0}}}};
  EXPECT_THROW(perm_fit_st(frac, p), InputError);
  auto pk = base_stock_params(1, 0, 1, 9, 2, 2);
  EXPECT_THROW(perm_fit_st(EmpiricalMarginals{{uniform12()}}, pk), UnsupportedError);
  EXPECT_THROW(perm_fit_st(EmpiricalMarginals{{uniform12(), uniform12()}}, p), InputError);
  EXPECT_THROW(perm_fit(EmpiricalMarginals{{uniform12()}}, p, PolicyClass::BaseStock), UnsupportedError);
}

TEST(PermRisk, PointMassEqualsSimulate) {
  DemandSequence d{3, 1, 4, 1};
  auto p = ss_params(3, 1, 1, 5, 2, 6);
  auto m = build_marginals(Dataset{{d}});
  for (Policy pi : {Policy{BaseStock{4}}, Policy{SsPolicy{2, 7}}, Policy{NonStationary{{5, 1, 3, 0}}}})
    EXPECT_NEAR(perm_risk(pi, m, p).value, simulate(pi, d, p).avgLoss, 1e-12);
}

TEST(PermRisk, TwoPeriodProduct) {
  auto p = base_stock_params(2, 0, 1, 9, 0, 2);
  EmpiricalMarginals m{{uniform12(), uniform12()}};
  for (double S : {0.0, 1.0, 1.5, 2.0}) {
    double mean = 0.0;
    for (auto a : {1.0, 2.0})
      for (auto b : {1.0, 2.0}) mean += simulate(BaseStock{S}, DemandSequence{a, b}, p).avgLoss / 4;
    EXPECT_NEAR(perm_risk(BaseStock{S}, m, p).value, mean, 1e-12);
  }
}

TEST(PermRisk, MonteCarloWithinThreeSe) {
  std::mt19937_64 g(3);
  auto p = ss_params(4, 1, 1, 4, 2, 5);
  EmpiricalMarginals m;
  for (int t = 0; t < 5; ++t) m.perPeriod.push_back(random_pmf(g, 5));
  Policy pi = SsPolicy{1, 6};
  double exact = perm_risk(pi, m, p).value;
  auto mc = perm_risk(pi, m, p, PermRiskMode::MonteCarlo, 100000, 17);
  EXPECT_GT(mc.stdErr, 0.0);
  EXPECT_LE(std::abs(mc.value - exact), 3 * mc.stdErr);
}

TEST(OptimalDp, SinglePeriodUniform) {
  auto p = base_stock_params(1, 0, 1, 9, 0, 2);
  auto r = optimal_dp(std::vector<Pmf>{uniform12()}, p);
  EXPECT_NEAR(r.risk, 0.5, 1e-12);
  EXPECT_EQ(r.orderUpTo[0], 2);
}

TEST(OptimalDp, DeterministicIsZero) {
  auto p = base_stock_params(3, 1, 1, 9, 0, 6);
  auto r = optimal_dp(DemandModel{Deterministic{{2, 5, 1, 3}}}, p);
  EXPECT_NEAR(r.risk, 0.0, 1e-12);
}

TEST(OptimalDp, BaseStockStructureWhenNoFixedCost) {
  std::mt19937_64 g(21);
  for (int T = 1; T <= 5; ++T) {
    auto p = base_stock_params(T, T % 2, 1, 4, 0, 4);
    std::vector<Pmf> m;
    for (int t = 0; t < p.horizon(); ++t) m.push_back(random_pmf(g, 4));
    auto r = optimal_dp(m, p);
    for (int t = 0; t < T; ++t) {
      long S = r.orderUpTo[t];
      for (std::size_t i = 0; i < r.decision[t].size(); ++i) {
        long x = r.gridLo + static_cast<long>(i);
        EXPECT_EQ(r.decision[t][i], std::max(x, S)) << T << " " << t << " " << x;
      }
    }
    auto pm = perm_fit_st(EmpiricalMarginals{m}, p);
    EXPECT_NEAR(r.risk, pm.inSampleRisk, 1e-9);
  }
}

TEST(OptimalDp, FixedCostLowerBoundsSs) {
  std::mt19937_64 g(4);
  auto p = ss_params(3, 0, 1, 5, 4, 4);
  std::vector<Pmf> m;
  for (int t = 0; t < 3; ++t) m.push_back(random_pmf(g, 4));
  auto r = optimal_dp(m, p);
  auto ss = perm_fit_ss(EmpiricalMarginals{m}, p);
  EXPECT_LE(r.risk, ss.inSampleRisk + 1e-9);
  // with K the optimum is never worse than ordering nothing
  EXPECT_LE(r.risk, product_risk(BaseStock{0}, m, p) + 1e-9);
}

TEST(OptimalDp, IndependentNormalModel) {
  auto p = base_stock_params(2, 0, 1, 3, 0, 20);
  DemandModel model = IndependentNormals{{8, 12}, {2, 3}, 20, true};
  auto r = optimal_dp(model, p);
  auto pm = period_pmfs(model);
  double best = 1e300;
  for (int a = 0; a <= 20; ++a)
    for (int b = 0; b <= 20; ++b)
      best = std::min(best, product_risk(NonStationary{{double(a), double(b)}}, pm, p));
  EXPECT_NEAR(r.risk, best, 1e-9);
  DemandModel corr = CorrelatedNormalSupport{{5, 5}, {2, 2}, -1.0, 5, 20, true, false, 1};
  EXPECT_THROW(optimal_dp(corr, p), UnsupportedError);
}

TEST(PermVsErm, GeneralizationInequality) {
  // independent integer demand, T=2, N=4
  auto p = base_stock_params(2, 0, 1, 4, 0, 20);
  DemandModel model = IndependentNormals{{8, 12}, {3, 4}, 20, true};
  auto truth = period_pmfs(model);
  const int reps = 2000;
  std::vector<double> ge, gex;
  for (int r = 0; r < reps; ++r) {
    auto data = draw(model, 4, derive_seed(99, r));
    auto erm = erm_St(data, p);
    auto perm = perm_fit_st(build_marginals(data), p);
    ge.push_back(product_risk(erm.policy, truth, p) - erm.inSampleRisk);
    gex.push_back(product_risk(perm.policy, truth, p) - perm.inSampleRisk);
  }
  auto stats = [](const std::vector<double>& v) {
    double m = 0.0, s2 = 0.0;
    for (double x : v) m += x;
    m /= v.size();
    for (double x : v) s2 += (x - m) * (x - m);
    return std::pair{m, s2 / (v.size() - 1)};
  };
  auto [m1, v1] = stats(ge);
  auto [m2, v2] = stats(gex);
  double pooled = std::sqrt((v1 + v2) / reps);
  EXPECT_LE(m2, m1 + 2 * pooled);
}
