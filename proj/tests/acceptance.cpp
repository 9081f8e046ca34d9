#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "invlearn/complexity.hpp"
#include "invlearn/experiments.hpp"

using namespace invlearn;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(fmt::format("{} {}", ok ? "ok  " : "FAIL", what));
  }
};

double pooled(double a, double b) { return std::hypot(a, b); }

Outcome dynamics_oracle() {
  Outcome o;
  std::mt19937_64 g(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int nsMismatch = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    int T = 1 + g() % 8, L = g() % 4;
    auto p = base_stock_params(T, L, 10 * u(g), 10 * u(g), rep % 2 ? 5 * u(g) : 0.0, 10);
    p.x1 = rep % 3 ? -5 * u(g) : 0.0;
    DemandSequence d(T + L);
    for (auto& x : d) x = rep % 4 ? p.U * u(g) : std::floor(11 * u(g));
    double S = p.H * u(g);
    double a = base_stock_loss(S, d, p), b = simulate(BaseStock{S}, d, p).avgLoss;
    worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(b)));
    auto q = p;
    q.K = 0.0;
    std::vector<double> lv(T + L, S);
    auto x = simulate(NonStationary{lv}, d, q), y = simulate(BaseStock{S}, d, q);
    if (x.avgLoss != y.avgLoss || x.x != y.x || x.q != y.q) ++nsMismatch;
  }
  o.check(worst <= 1e-12, fmt::format("closed form vs simulate: worst relative gap {:.3g} over 1000 triples", worst));
  o.check(nsMismatch == 0, fmt::format("equal-level non-stationary vs base-stock: {} mismatches", nsMismatch));
  return o;
}

Dataset random_data(std::mt19937_64& g, int N, int len, double U, bool integer) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset data;
  for (int i = 0; i < N; ++i) {
    DemandSequence d(len);
    for (auto& x : d) x = integer ? std::floor((U + 1) * u(g)) : U * u(g);
    data.sequences.push_back(d);
  }
  return data;
}

double brute_st(const Dataset& data, const SystemParams& p, int top) {
  double best = 1e300;
  std::vector<int> idx(p.T, 0);
  while (true) {
    std::vector<double> lv(p.horizon(), 0.0);
    for (int t = 0; t < p.T; ++t) lv[t] = idx[t];
    best = std::min(best, empirical_risk(NonStationary{lv}, data, p));
    int t = p.T - 1;
    while (t >= 0 && idx[t] == top) idx[t--] = 0;
    if (t < 0) break;
    ++idx[t];
  }
  return best;
}

Outcome fitter_exactness() {
  Outcome o;
  std::mt19937_64 g(202);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worstBase = 0.0, worstSs = 0.0, worstSt = 0.0;
  int aboveGrid = 0;
  for (int rep = 0; rep < 200; ++rep) {
    int T = 1 + g() % 4, L = g() % 2, N = 1 + g() % 4;
    auto p = base_stock_params(T, L, 0.05 + 0.95 * u(g), 0.05 + 0.95 * u(g), rep % 3 ? 0.0 : u(g), 3);
    p.x1 = rep % 2 ? 0.0 : -u(g);
    auto data = random_data(g, N, T + L, p.U, false);
    auto e = erm_base_stock(data, p);
    auto r = grid_oracle(data, PolicyClass::BaseStock, 1e-3, p);
    worstBase = std::max(worstBase, std::abs(e.inSampleRisk - r.inSampleRisk));
    if (e.inSampleRisk > r.inSampleRisk + 1e-9) ++aboveGrid;
  }
  for (int rep = 0; rep < 200; ++rep) {
    int T = 1 + g() % 3, N = 1 + g() % 3;
    auto p = base_stock_params(T, 0, u(g), u(g), u(g), 1);
    auto data = random_data(g, N, T, p.U, false);
    auto e = erm_sS(data, p, SsMode::Exact);
    auto r = grid_oracle(data, PolicyClass::Ss, 1e-3, p);
    worstSs = std::max(worstSs, std::abs(e.inSampleRisk - r.inSampleRisk));
    if (e.inSampleRisk > r.inSampleRisk + 1e-9) ++aboveGrid;
  }
  for (int rep = 0; rep < 200; ++rep) {
    int T = 1 + g() % 3, N = 1 + g() % 4;
    auto p = base_stock_params(T, 0, 1 + g() % 3, 1 + g() % 9, 0, 4);
    auto data = random_data(g, N, T, 4, true);
    auto e = erm_St(data, p);
    worstSt = std::max(worstSt, std::abs(e.inSampleRisk - brute_st(data, p, 4)));
  }
  o.check(worstBase <= 1e-3, fmt::format("erm_base_stock vs 1e-3 grid: worst gap {:.3g}", worstBase));
  o.check(worstSs <= 1e-3, fmt::format("exact erm_sS vs 1e-3 grid: worst gap {:.3g}", worstSs));
  o.check(aboveGrid == 0, fmt::format("{} fits worse than their grid oracle", aboveGrid));
  o.check(worstSt <= 1e-6, fmt::format("erm_St vs integer enumeration (T<=3, d<=4): worst gap {:.3g}", worstSt));
  return o;
}

Outcome shattering() {
  Outcome o;
  auto st = verify_shattering(gen_st_shatter(12), 0.0);
  o.check(st.ok && st.subsets == 4096, fmt::format("st T=12 at gamma 0: {} subsets, {} failures", st.subsets, st.failures.size()));
  auto k = gen_st_K_shatter(10, 1.0);
  auto in = verify_shattering(k, 0.9 * 1.0 / 10);
  o.check(in.ok && in.subsets == 64, fmt::format("st-K T=10 K=1 at 0.9K/T: {} subsets, {} failures", in.subsets, in.failures.size()));
  auto edge = verify_shattering(k, 1.0 / 10);
  o.check(!edge.ok, fmt::format("st-K at K/T rejected: {} failing subsets", edge.failures.size()));
  auto pr = verify_shattering(gen_sS_prime_shatter(3, 0.5), 0.5 / 16);
  o.check(pr.ok && pr.subsets == 8, fmt::format("prime m=3 b=0.5 at b/16: {} subsets, {} failures", pr.subsets, pr.failures.size()));
  return o;
}

Outcome partition() {
  Outcome o;
  int bad = 0;
  for (int N = 1; N <= 4; ++N)
    for (int P = 1; P <= 4; ++P) {
      auto groups = product_partition(N, P);
      std::set<IndexTuple> all;
      for (const auto& grp : groups) {
        if (grp.size() != static_cast<std::size_t>(N)) ++bad;
        for (int t = 0; t < P; ++t) {
          std::set<int> seen;
          for (const auto& tup : grp) seen.insert(tup[t]);
          if (seen.size() != static_cast<std::size_t>(N)) ++bad;
        }
        for (const auto& tup : grp)
          if (!all.insert(tup).second) ++bad;
      }
      if (all.size() != static_cast<std::size_t>(std::pow(N, P))) ++bad;
    }
  o.check(bad == 0, fmt::format("disjoint and covering for N, periods <= 4: {} defects", bad));
  std::vector<std::vector<int>> table{{1, 3, 5}, {2, 4, 6}};
  std::set<std::set<std::string>> got;
  for (const auto& grp : product_partition(2, 3)) {
    std::set<std::string> names;
    for (const auto& tup : grp) {
      std::string s;
      for (int t = 0; t < 3; ++t) s += std::to_string(table[tup[t]][t]);
      names.insert(s);
    }
    got.insert(names);
  }
  std::set<std::set<std::string>> want{{"135", "246"}, {"136", "245"}, {"145", "236"}, {"146", "235"}};
  o.check(got == want, "N=2, periods=3 groups {135,246} {136,245} {145,236} {146,235}");
  return o;
}

Outcome discretization() {
  Outcome o;
  for (int M : {1, 2, 4, 8, 16}) {
    auto r = discretization_gap(M, 200);
    o.check(std::abs(r.continuousRisk - 1.0 / (8 * M)) <= 1e-9,
            fmt::format("M={} continuous risk {:.12g} vs {:.12g}", M, r.continuousRisk, 1.0 / (8 * M)));
    o.check(r.gap >= 0.04, fmt::format("M={} gap {:.6g} >= 0.04 (grid best {})", M, r.gap, describe(r.gridBest)));
  }
  return o;
}

Outcome ge_scaling() {
  Outcome o;
  const std::vector<std::size_t> Ns{10, 40, 160};
  auto run = [&](int T) {
    auto p = base_stock_params(T, 0, 1, 9, 0, 20);
    auto inst = sample_instance(InstanceKind::EeVsT, 61, p);
    std::vector<McEstimate> out;
    for (std::size_t N : Ns) out.push_back(ge_estimate(PolicyClass::BaseStock, inst.model, N, p, {.reps = 500, .seed = 62}));
    return out;
  };
  auto t10 = run(10), t40 = run(40);
  double mx = 0, my = 0, sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < Ns.size(); ++i) {
    mx += std::log(static_cast<double>(Ns[i])) / Ns.size();
    my += std::log(t10[i].estimate) / Ns.size();
  }
  for (std::size_t i = 0; i < Ns.size(); ++i) {
    double dx = std::log(static_cast<double>(Ns[i])) - mx;
    sxy += dx * (std::log(t10[i].estimate) - my);
    sxx += dx * dx;
  }
  double slope = sxy / sxx;
  o.check(slope >= -0.65 && slope <= -0.35,
          fmt::format("T=10 slope {:.4f} (meanGE {:.4g}, {:.4g}, {:.4g})", slope, t10[0].estimate, t10[1].estimate,
                      t10[2].estimate));
  for (std::size_t i = 0; i < Ns.size(); ++i) {
    double ratio = t40[i].estimate / t10[i].estimate;
    o.check(ratio <= 1.5, fmt::format("N={} meanGE(T=40)/meanGE(T=10) = {:.4f}", Ns[i], ratio));
  }
  return o;
}

ExperimentConfig ee_vs_T_config() {
  ExperimentConfig c;
  c.kind = InstanceKind::EeVsT;
  c.sweep = {1, 20, 60, 100};
  c.classes = {"base-stock", "ss", "st"};
  c.N = 20;
  c.K = 0;
  c.instanceCount = 10;
  c.datasetReps = 20;
  c.seed = 71;
  return c;
}

Outcome ee_vs_T() {
  Outcome o;
  auto c = ee_vs_T_config();
  auto r = run_ee_vs_T(c);
  o.check(r.sanityViolations == 0, fmt::format("fitter sanity violations: {}", r.sanityViolations));
  const std::vector<double> Ts{20, 60, 100};
  for (double T : Ts)
    for (auto [a, b] : {std::pair{"base-stock", "ss"}, std::pair{"ss", "st"}}) {
      auto [d, se] = paired_difference(r, T, a, b, "eeRatio");
      o.check(d <= 2 * se, fmt::format("T={} EE {} {:.5g} <= EE {} {:.5g} (diff {:.3g}, se {:.3g})", T, a,
                                       r.find(T, a, "eeRatio")->value, b, r.find(T, b, "eeRatio")->value, d, se));
    }
  for (const auto& cls : c.classes) {
    double lo = 1e300, hi = -1e300;
    for (double T : Ts) {
      double v = r.find(T, cls, "eeRatio")->value;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    o.check(hi <= 2 * lo, fmt::format("{} meanEE max/min over T = {:.4g}", cls, hi / lo));
  }
  double t1 = r.find(1, "st", "oosRatio")->value;
  o.check(t1 >= 1.01 && t1 <= 1.05, fmt::format("T=1 st OOS ratio {:.4f} in [1.01, 1.05]", t1));
  return o;
}

Outcome crossings() {
  Outcome o;
  ExperimentConfig s;
  s.kind = InstanceKind::OosSs;
  s.T = 20;
  s.sweep = {2, 20};
  s.classes = {"ss", "eoq", "base-stock"};
  s.hyper.P = 2;
  s.hyper.sigma0 = 5;
  s.instanceCount = 10;
  s.datasetReps = 100;
  s.seed = 81;
  auto r = run_oos_vs_N(s);
  o.check(r.sanityViolations == 0, fmt::format("(s,S) run sanity violations: {}", r.sanityViolations));
  auto [d2, se2] = paired_difference(r, 2, "eoq", "ss", "oosRatio");
  o.check(d2 < -2 * se2, fmt::format("N=2 EOQ {:.5g} beats (s,S) {:.5g} (diff {:.3g}, se {:.3g})",
                                     r.find(2, "eoq", "oosRatio")->value, r.find(2, "ss", "oosRatio")->value, d2, se2));
  auto [d20, se20] = paired_difference(r, 20, "eoq", "ss", "oosRatio");
  o.check(d20 > 2 * se20, fmt::format("N=20 (s,S) {:.5g} beats EOQ {:.5g} (diff {:.3g}, se {:.3g})",
                                      r.find(20, "ss", "oosRatio")->value, r.find(20, "eoq", "oosRatio")->value, d20,
                                      se20));
  ExperimentConfig t;
  t.kind = InstanceKind::OosSt;
  t.T = 5;
  t.sweep = {2, 4, 8, 16, 32, 64};
  t.classes = {"base-stock", "st"};
  t.hyper.nonst = 0.5;
  t.hyper.sigma0 = 5;
  t.instanceCount = 10;
  t.datasetReps = 100;
  t.seed = 82;
  auto q = run_oos_vs_N(t);
  o.check(q.sanityViolations == 0, fmt::format("(S^t) run sanity violations: {}", q.sanityViolations));
  bool found = !q.crossings.empty() && q.crossings[0].at.has_value();
  o.check(found, fmt::format("base-stock/st crossing N* = {}", found ? format_double(*q.crossings[0].at) : "none"));
  return o;
}

Outcome erm_vs_perm() {
  Outcome o;
  ExperimentConfig c;
  c.kind = InstanceKind::PermInd;
  c.T = 2;
  c.sweep = {4, 32};
  c.instanceCount = 10;
  c.datasetReps = 100;
  c.ermExact = true;
  c.seed = 91;
  auto r = run_erm_vs_perm(c);
  double r4 = r.find(4, "erm/perm", "ermPermRatio")->value, r32 = r.find(32, "erm/perm", "ermPermRatio")->value;
  o.check(r4 >= 1.0, fmt::format("independent N=4 ratio {:.5f} >= 1", r4));
  o.check(r32 <= 1.01, fmt::format("independent N=32 ratio {:.5f} <= 1.01", r32));
  ExperimentConfig k;
  k.kind = InstanceKind::PermCorr;
  k.T = 2;
  k.sweep = {-1.0};
  k.hyper.supportSize = 5;
  k.instanceCount = 10;
  k.ermExact = true;
  k.seed = 92;
  double neg = run_erm_vs_perm(k).find(-1.0, "erm/perm", "ermPermRatio")->value;
  o.check(neg < 1.0, fmt::format("correlated rho=-1 ratio {:.5f} < 1", neg));
  k.sweep = {0.0};
  k.hyper.productForm = true;
  double zero = run_erm_vs_perm(k).find(0.0, "erm/perm", "ermPermRatio")->value;
  o.check(zero >= 0.99 && zero <= 1.01, fmt::format("product-form rho=0 ratio {:.5f} in [0.99, 1.01]", zero));
  return o;
}

Outcome inequalities() {
  Outcome o;
  auto p = base_stock_params(2, 0, 1, 4, 0, 10);
  FiniteSupport fs;
  for (double a : {2.0, 8.0})
    for (double b : {1.0, 6.0}) fs.atoms.push_back({a, b});
  DemandModel model = fs;
  RiskOracle truth(model, p, 1, 0);
  auto grid = class_grid(PolicyClass::NonStationary, p, 1.0);
  std::vector<double> R;
  for (const auto& pi : grid) R.push_back(truth.risk(pi));
  const double best = *std::min_element(R.begin(), R.end());
  std::vector<double> ee, ge, gex, rad;
  for (int r = 0; r < 2000; ++r) {
    auto data = draw(model, 4, derive_seed(1001, r));
    auto marg = build_marginals(data);
    std::vector<std::vector<double>> mat;
    double g = -1e300, gx = -1e300, fitRisk = 0.0, fitEmp = 1e300;
    for (std::size_t j = 0; j < grid.size(); ++j) {
      std::vector<double> row;
      for (const auto& d : data) row.push_back(simulate(grid[j], d, p).avgLoss);
      double emp = 0.0;
      for (double v : row) emp += v / row.size();
      if (emp < fitEmp - tie_tolerance(fitEmp)) {
        fitEmp = emp;
        fitRisk = R[j];
      }
      g = std::max(g, R[j] - emp);
      gx = std::max(gx, R[j] - product_risk(grid[j], marg.perPeriod, p));
      mat.push_back(std::move(row));
    }
    ee.push_back(fitRisk - best);
    ge.push_back(g);
    gex.push_back(gx);
    rad.push_back(rademacher_estimate(mat, 1, derive_seed(1002, r)).estimate);
  }
  auto E = summarize(ee), G = summarize(ge), X = summarize(gex), Rd = summarize(rad);
  o.check(E.estimate <= G.estimate + 2 * pooled(E.stdErr, G.stdErr),
          fmt::format("mean EE {:.5g} <= mean GE {:.5g} (+2se {:.3g})", E.estimate, G.estimate,
                      2 * pooled(E.stdErr, G.stdErr)));
  o.check(X.estimate <= G.estimate + 2 * pooled(X.stdErr, G.stdErr),
          fmt::format("mean GE-product {:.5g} <= mean GE {:.5g} (+2se {:.3g})", X.estimate, G.estimate,
                      2 * pooled(X.stdErr, G.stdErr)));
  double se = pooled(G.stdErr, 2 * Rd.stdErr);
  o.check(G.estimate <= 2 * Rd.estimate + 3 * se,
          fmt::format("mean GE {:.5g} <= 2 x Rademacher {:.5g} (+3se {:.3g})", G.estimate, Rd.estimate, 3 * se));
  return o;
}

struct Criterion {
  int id;
  std::string name;
  double limitSeconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0)
      strict = true;
    else
      only.insert(std::atoi(argv[i]));
  }
  std::vector<Criterion> all{
      {1, "dynamics oracle equivalence", 5, dynamics_oracle},
      {2, "fitter exactness", 120, fitter_exactness},
      {3, "shattering constructions", 60, shattering},
      {4, "product partition", 60, partition},
      {5, "discretization gap", 30, discretization},
      {6, "GE scaling", 600, ge_scaling},
      {7, "EE vs T", 1800, ee_vs_T},
      {8, "OOS crossings", 2700, crossings},
      {9, "ERM vs PERM", 1200, erm_vs_perm},
      {10, "statistical inequalities", 600, inequalities},
  };
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, fmt::format("threw: {}", e.what()));
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.check(secs < c.limitSeconds, fmt::format("runtime {:.1f} s < {:.0f} s", secs, c.limitSeconds));
    std::cout << fmt::format("CRITERION {} {}: {}\n", c.id, o.pass ? "PASS" : "FAIL", c.name);
    for (const auto& n : o.notes) std::cout << "    " << n << "\n";
    std::cout.flush();
    if (!o.pass) ++failed;
  }
  std::cout << fmt::format("{} criteria failed\n", failed);
  return strict && failed ? 1 : 0;
}
