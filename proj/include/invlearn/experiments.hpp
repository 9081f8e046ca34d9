#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "invlearn/csv.hpp"
#include "invlearn/demand.hpp"
#include "invlearn/fitters.hpp"
#include "invlearn/perm.hpp"
#include "invlearn/truth.hpp"

namespace invlearn {

struct ExperimentConfig {
  InstanceKind kind = InstanceKind::EeVsT;
  std::vector<double> sweep;
  std::vector<std::string> classes;
  int T = 20;
  int N = 20;
  int L = 0;
  double h = 1.0;
  double b = 9.0;
  double K = 0.0;
  InstanceHyper hyper;
  int instanceCount = 10;
  int datasetReps = 20;
  std::size_t evalSamples = 2000;
  std::size_t bestInClassSamples = 2000;
  std::uint64_t seed = 1;
  bool exactRisk = true;
  bool ermExact = false;
  bool sanityChecks = true;
  int threads = 1;

  void validate() const;
};

inline std::vector<std::string> default_classes(InstanceKind k) {
  switch (k) {
    case InstanceKind::EeVsT: return {"base-stock", "ss", "st"};
    case InstanceKind::OosSs: return {"base-stock", "ss", "eoq"};
    case InstanceKind::OosSt: return {"base-stock", "st"};
    case InstanceKind::PermInd:
    case InstanceKind::PermCorr: return {"erm", "perm"};
  }
  return {};
}

inline void ExperimentConfig::validate() const {
  if (sweep.empty()) throw ValidationError("config key 'sweep' must be a nonempty list");
  if (instanceCount < 1) throw ValidationError("config key 'instances' must be >= 1");
  if (datasetReps < 1) throw ValidationError("config key 'reps' must be >= 1");
  if (evalSamples < 1) throw ValidationError("config key 'evalSamples' must be >= 1");
  if (bestInClassSamples < 1) throw ValidationError("config key 'bestInClassSamples' must be >= 1");
  if (threads < 1) throw ValidationError("config key 'threads' must be >= 1");
  if (T < 1) throw ValidationError("config key 'params.T' must be >= 1");
  if (N < 1) throw ValidationError("config key 'params.N' must be >= 1");
  if (L < 0) throw ValidationError("config key 'params.L' must be >= 0");
  if (!(h >= 0.0)) throw ValidationError("config key 'params.h' must be >= 0");
  if (!(b >= 0.0)) throw ValidationError("config key 'params.b' must be >= 0");
  if (!(K >= 0.0)) throw ValidationError("config key 'params.K' must be >= 0");
  std::set<std::string> allowed;
  for (const auto& c : default_classes(kind)) allowed.insert(c);
  if (kind == InstanceKind::EeVsT) allowed.insert("eoq");
  if (kind == InstanceKind::OosSt) allowed.insert("ss");
  for (const auto& c : classes)
    if (!allowed.count(c))
      throw ValidationError(fmt::format("config key 'classes': '{}' is not available for kind {}", c,
                                        to_string(kind)));
  for (double v : sweep) {
    bool integral = std::abs(v - std::nearbyint(v)) < 1e-12;
    switch (kind) {
      case InstanceKind::EeVsT:
      case InstanceKind::OosSs:
      case InstanceKind::OosSt:
      case InstanceKind::PermInd:
        if (!integral || v < 1)
          throw ValidationError(fmt::format("config key 'sweep': {} is not a positive integer", v));
        break;
      case InstanceKind::PermCorr:
        if (v < -1.0 || v > 1.0)
          throw ValidationError(fmt::format("config key 'sweep': rho {} outside [-1, 1]", v));
        break;
    }
  }
  if ((kind == InstanceKind::EeVsT || kind == InstanceKind::OosSt || kind == InstanceKind::PermInd ||
       kind == InstanceKind::PermCorr) &&
      K != 0.0)
    throw ValidationError(fmt::format("config key 'params.K' must be 0 for kind {}", to_string(kind)));
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> top{"kind", "sweep", "classes", "params", "hyper", "instances",
                                         "reps", "evalSamples", "bestInClassSamples", "seed",
                                         "exactRisk", "ermExact", "sanityChecks", "threads"};
  static const std::set<std::string> params{"T", "N", "L", "h", "b", "K"};
  static const std::set<std::string> hyper{"nonst", "sigma0", "P", "rho", "supportSize",
                                           "scale", "cap", "productForm"};
  if (!j.is_object()) throw InputError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!top.count(it.key())) throw InputError(fmt::format("unknown config key '{}'", it.key()));
  if (!j.contains("kind")) throw InputError("config key 'kind' is required");
  if (!j.contains("sweep")) throw InputError("config key 'sweep' is required");
  ExperimentConfig c;
  auto get = [](const nlohmann::json& o, const std::string& key, auto& dst, const std::string& path) {
    if (!o.contains(key)) return;
    try {
      o.at(key).get_to(dst);
    } catch (const nlohmann::json::exception&) {
      throw InputError(fmt::format("config key '{}' has the wrong type", path));
    }
  };
  std::string kind;
  get(j, "kind", kind, "kind");
  c.kind = parse_instance_kind(kind);
  get(j, "sweep", c.sweep, "sweep");
  get(j, "classes", c.classes, "classes");
  if (j.contains("params")) {
    const auto& p = j["params"];
    if (!p.is_object()) throw InputError("config key 'params' must be an object");
    for (auto it = p.begin(); it != p.end(); ++it)
      if (!params.count(it.key())) throw InputError(fmt::format("unknown config key 'params.{}'", it.key()));
    get(p, "T", c.T, "params.T");
    get(p, "N", c.N, "params.N");
    get(p, "L", c.L, "params.L");
    get(p, "h", c.h, "params.h");
    get(p, "b", c.b, "params.b");
    get(p, "K", c.K, "params.K");
  }
  if (j.contains("hyper")) {
    const auto& y = j["hyper"];
    if (!y.is_object()) throw InputError("config key 'hyper' must be an object");
    for (auto it = y.begin(); it != y.end(); ++it)
      if (!hyper.count(it.key())) throw InputError(fmt::format("unknown config key 'hyper.{}'", it.key()));
    get(y, "nonst", c.hyper.nonst, "hyper.nonst");
    get(y, "sigma0", c.hyper.sigma0, "hyper.sigma0");
    get(y, "P", c.hyper.P, "hyper.P");
    get(y, "rho", c.hyper.rho, "hyper.rho");
    get(y, "supportSize", c.hyper.supportSize, "hyper.supportSize");
    get(y, "scale", c.hyper.scale, "hyper.scale");
    get(y, "cap", c.hyper.cap, "hyper.cap");
    get(y, "productForm", c.hyper.productForm, "hyper.productForm");
  }
  get(j, "instances", c.instanceCount, "instances");
  get(j, "reps", c.datasetReps, "reps");
  get(j, "evalSamples", c.evalSamples, "evalSamples");
  get(j, "bestInClassSamples", c.bestInClassSamples, "bestInClassSamples");
  get(j, "seed", c.seed, "seed");
  get(j, "exactRisk", c.exactRisk, "exactRisk");
  get(j, "ermExact", c.ermExact, "ermExact");
  get(j, "sanityChecks", c.sanityChecks, "sanityChecks");
  get(j, "threads", c.threads, "threads");
  if (c.classes.empty()) c.classes = default_classes(c.kind);
  c.validate();
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"sweep", c.sweep},
          {"classes", c.classes},
          {"params", {{"T", c.T}, {"N", c.N}, {"L", c.L}, {"h", c.h}, {"b", c.b}, {"K", c.K}}},
          {"hyper",
           {{"nonst", c.hyper.nonst},
            {"sigma0", c.hyper.sigma0},
            {"P", c.hyper.P},
            {"rho", c.hyper.rho},
            {"supportSize", c.hyper.supportSize},
            {"scale", c.hyper.scale},
            {"cap", c.hyper.cap},
            {"productForm", c.hyper.productForm}}},
          {"instances", c.instanceCount},
          {"reps", c.datasetReps},
          {"evalSamples", c.evalSamples},
          {"bestInClassSamples", c.bestInClassSamples},
          {"seed", c.seed},
          {"exactRisk", c.exactRisk},
          {"ermExact", c.ermExact},
          {"sanityChecks", c.sanityChecks},
          {"threads", c.threads}};
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot open config file '{}'", path));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(fmt::format("config file '{}': {}", path, e.what()));
  }
  return config_from_json(j);
}

// instanceId < 0 marks the aggregate over instances.
struct MetricsRecord {
  std::string kind;
  double sweepValue = 0.0;
  std::string cls;
  std::string metric;
  double value = 0.0;
  double stdErr = 0.0;
  std::uint64_t seed = 0;
  int instanceId = -1;
  std::vector<double> raw;
};

struct Crossing {
  std::string first;
  std::string second;
  std::optional<double> at;  // first sweep value after which the order stays flipped
};

struct ExperimentResult {
  std::vector<MetricsRecord> records;
  std::vector<Crossing> crossings;
  std::size_t sanityViolations = 0;

  const MetricsRecord* find(double sweep, const std::string& cls, const std::string& metric) const {
    for (const auto& r : records)
      if (r.instanceId < 0 && r.sweepValue == sweep && r.cls == cls && r.metric == metric) return &r;
    return nullptr;
  }
  std::vector<const MetricsRecord*> per_instance(double sweep, const std::string& cls,
                                                 const std::string& metric) const {
    std::vector<const MetricsRecord*> out;
    for (const auto& r : records)
      if (r.instanceId >= 0 && r.sweepValue == sweep && r.cls == cls && r.metric == metric) out.push_back(&r);
    return out;
  }
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double stderr_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v), s2 = 0.0;
  for (double x : v) s2 += (x - m) * (x - m);
  return std::sqrt(s2 / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

// Unweighted mean of instance means; stderr from the within-instance errors, or across
// instances when every instance has a single value.
inline MetricsRecord aggregate(const std::vector<MetricsRecord>& inst) {
  MetricsRecord a = inst.front();
  a.instanceId = -1;
  a.raw.clear();
  bool single = true;
  double se2 = 0.0;
  for (const auto& r : inst) {
    a.raw.push_back(r.value);
    se2 += r.stdErr * r.stdErr;
    single = single && r.raw.size() <= 1;
  }
  a.value = mean_of(a.raw);
  a.stdErr = single ? stderr_of(a.raw) : std::sqrt(se2) / static_cast<double>(inst.size());
  return a;
}

inline MetricsRecord instance_record(const ExperimentConfig& c, double sweep, const std::string& cls,
                                     const std::string& metric, std::vector<double> raw,
                                     std::uint64_t seed, int id) {
  MetricsRecord r;
  r.kind = to_string(c.kind);
  r.sweepValue = sweep;
  r.cls = cls;
  r.metric = metric;
  r.value = mean_of(raw);
  r.stdErr = stderr_of(raw);
  r.seed = seed;
  r.instanceId = id;
  r.raw = std::move(raw);
  return r;
}

// mean(a)/mean(b) with a delta-method stderr.
inline MetricsRecord ratio_record(const ExperimentConfig& c, double sweep, const std::string& cls,
                                  const std::string& metric, const std::vector<double>& a,
                                  const std::vector<double>& b, std::uint64_t seed, int id) {
  double ma = mean_of(a), mb = mean_of(b);
  if (!(mb > 0.0)) throw ValidationError(fmt::format("{}: ratio denominator is {} (instance {})", metric, mb, id));
  double q = ma / mb;
  std::vector<double> lin;
  for (std::size_t i = 0; i < a.size(); ++i) lin.push_back((a[i] - q * b[i]) / mb);
  MetricsRecord r = instance_record(c, sweep, cls, metric, a, seed, id);
  r.value = q;
  r.stdErr = stderr_of(lin);
  r.raw.clear();
  for (std::size_t i = 0; i < a.size(); ++i) r.raw.push_back(a[i] / mb);
  return r;
}

template <typename F>
void parallel_for(int n, int threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(threads);
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += threads) f(i);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

struct Setting {
  SystemParams base;  // base-stock / st bounds
  SystemParams ss;    // (s,S) / EOQ bounds
};

inline Setting make_setting(const ExperimentConfig& c, int T, double K, double U) {
  return {base_stock_params(T, c.L, c.h, c.b, K, U), ss_params(T, c.L, c.h, c.b, K, U)};
}

inline FitResult fit_class(const std::string& cls, const Dataset& data, const Setting& s, bool ermExact) {
  if (cls == "base-stock") return erm_base_stock(data, s.base);
  if (cls == "ss") return erm_sS(data, s.ss, all_integral(data) ? SsMode::IntegerGrid : SsMode::Exact);
  if (cls == "eoq") return erm_eoq_base_stock(data, s.ss);
  if (cls == "st" || cls == "erm") {
    auto r = erm_St(data, s.base);
    if (ermExact && all_integral(data)) {
      auto g = grid_oracle(data, PolicyClass::NonStationary, 1.0, s.base);
      if (g.inSampleRisk < r.inSampleRisk - tie_tolerance(r.inSampleRisk)) {
        g.method = FitMethod::ErmSt;
        r = g;
      }
    }
    return r;
  }
  if (cls == "perm") return perm_fit_st(build_marginals(data), s.base);
  throw InputError(fmt::format("unknown class '{}'", cls));
}

// In-sample optimality spot check against random feasible members of the same class.
inline std::size_t sanity_violations(const std::string& cls, const FitResult& fit, const Dataset& data,
                                     std::uint64_t seed) {
  if (cls == "perm") return 0;
  const auto& p = fit.evalParams;
  Rng rng(seed);
  std::size_t bad = 0;
  for (int k = 0; k < 20; ++k) {
    Policy pi;
    if (cls == "base-stock") {
      pi = BaseStock{rng.uniform(0.0, p.H)};
    } else if (cls == "ss") {
      double S = rng.uniform(0.0, p.H);
      double lo = rng.uniform(p.Hlo, S);
      if (fit.method == FitMethod::ErmSsGrid) {
        S = std::floor(S);
        lo = std::max(std::ceil(p.Hlo), std::min(std::floor(lo), S));
      }
      pi = SsPolicy{lo, S};
    } else if (cls == "eoq") {
      const auto& f = std::get<SsPolicy>(fit.policy);
      double S = rng.uniform(std::max(0.0, f.delta() + p.Hlo), p.H);
      pi = SsPolicy{S - f.delta(), S};
    } else {
      std::vector<double> lv(p.horizon(), 0.0);
      for (int t = 0; t < p.T; ++t) lv[t] = rng.uniform(0.0, p.H);
      pi = NonStationary{lv};
    }
    double v = empirical_risk(pi, data, p);
    if (v < fit.inSampleRisk - 1e-9 * std::max(1.0, v)) ++bad;
  }
  return bad;
}

// Best in-class true risk: exact where the class optimum is computable, otherwise ERM on
// a large sample (never worse than the exact base-stock optimum for (s,S)).
inline double best_in_class_risk(const std::string& cls, const DemandModel& model, const RiskOracle& truth,
                                 const Setting& s, const ExperimentConfig& c, std::uint64_t seed) {
  auto big = [&] { return draw(model, c.bestInClassSamples, seed); };
  auto bestBase = [&](const SystemParams& p) {
    if (truth.exact()) {
      BaseStockLinear f(p);
      truth.add_base_stock(f, 1.0);
      auto e = f.minimize();
      return truth.risk(BaseStock{e.S}, p);
    }
    return truth.risk(erm_base_stock(big(), p).policy, p);
  };
  if (cls == "base-stock") return bestBase(s.base);
  if (cls == "st" || cls == "erm" || cls == "perm") {
    if (s.base.K == 0.0 && truth.pmfs() && is_integral(s.base.x1))
      return truth.risk(perm_fit_st(EmpiricalMarginals{*truth.pmfs()}, s.base).policy, s.base);
    return truth.risk(fit_class("st", big(), s, false).policy, s.base);
  }
  if (cls == "ss") {
    double viaErm = truth.risk(fit_class("ss", big(), s, false).policy, s.ss);
    SystemParams pb = s.ss;
    double viaBase = pb.x1 == 0.0 ? bestBase(pb) : std::numeric_limits<double>::infinity();
    return std::min(viaErm, viaBase);
  }
  throw InputError(fmt::format("no best-in-class benchmark for '{}'", cls));
}

inline double opt_risk(const DemandModel& model, const Setting& s) {
  if (!is_independent(model)) throw UnsupportedError("optimal benchmark needs an independent model");
  return optimal_dp(model, s.base).risk;
}

inline double model_cap(const DemandModel& m) {
  if (auto* a = std::get_if<IndependentNormals>(&m)) return a->cap;
  if (auto* b = std::get_if<IIDNormal>(&m)) return b->cap;
  if (auto* c = std::get_if<CorrelatedNormalSupport>(&m)) return c->cap;
  return 20.0;
}

inline void crossing_scan(ExperimentResult& res, const ExperimentConfig& c, const std::string& metric) {
  for (std::size_t i = 0; i < c.classes.size(); ++i)
    for (std::size_t j = i + 1; j < c.classes.size(); ++j) {
      Crossing x{c.classes[i], c.classes[j], std::nullopt};
      std::vector<int> sign;
      for (double v : c.sweep) {
        auto* a = res.find(v, x.first, metric);
        auto* b = res.find(v, x.second, metric);
        double d = a->value - b->value;
        sign.push_back(d > 0 ? 1 : (d < 0 ? -1 : 0));
      }
      for (std::size_t k = 1; k < sign.size(); ++k) {
        bool stays = sign[0] != 0;
        for (std::size_t u = k; u < sign.size(); ++u) stays = stays && sign[u] == -sign[0];
        if (stays) {
          x.at = c.sweep[k];
          break;
        }
      }
      res.crossings.push_back(x);
    }
}

}  // namespace detail

// True risks of one ee-vs-T instance: the optimal policy, each class optimum and the
// ERM fit of every replication.
struct EeInstanceRisks {
  double opt = 0.0;
  std::map<std::string, double> star;
  std::map<std::string, std::vector<double>> fitted;
  std::size_t sanityViolations = 0;
};

inline EeInstanceRisks ee_instance_risks(const ExperimentConfig& c, int T, const DemandModel& model,
                                         std::uint64_t is) {
  auto s = detail::make_setting(c, T, 0.0, detail::model_cap(model));
  RiskOracle truth(model, s.base, c.evalSamples, derive_seed(is, T, 0xe7a1u), c.exactRisk);
  EeInstanceRisks out;
  out.opt = detail::opt_risk(model, s);
  for (const auto& cls : c.classes) {
    if (cls != "eoq")
      out.star[cls] = detail::best_in_class_risk(cls, model, truth, s, c, derive_seed(is, T, 0xb1cu));
    auto& v = out.fitted[cls];
    for (int r = 0; r < c.datasetReps; ++r) {
      auto data = draw(model, c.N, derive_seed(is, T, r));
      auto fit = detail::fit_class(cls, data, s, c.ermExact);
      if (c.sanityChecks && r == 0) out.sanityViolations += detail::sanity_violations(cls, fit, data, derive_seed(is, r, 7));
      v.push_back(truth.risk(fit.policy, fit.evalParams));
    }
  }
  return out;
}

// EE and OOS ratios relative to the optimal DP policy as T varies.
inline ExperimentResult run_ee_vs_T(const ExperimentConfig& c) {
  c.validate();
  if (c.kind != InstanceKind::EeVsT) throw ValidationError("run_ee_vs_T needs kind ee-vs-T");
  ExperimentResult res;
  for (double sv : c.sweep) {
    const int T = static_cast<int>(sv);
    std::vector<std::vector<MetricsRecord>> rows(c.instanceCount);
    std::vector<std::size_t> bad(c.instanceCount, 0);
    detail::parallel_for(c.instanceCount, c.threads, [&](int k) {
      const std::uint64_t is = derive_seed(c.seed, k);
      auto inst = sample_instance(c.kind, is, base_stock_params(T, c.L, c.h, c.b, 0.0, 20.0), c.hyper);
      auto risks = ee_instance_risks(c, T, inst.model, is);
      bad[k] = risks.sanityViolations;
      const double opt = risks.opt;
      if (!(opt > 0.0)) throw ValidationError(fmt::format("optimal risk {} is not positive (instance {})", opt, k));
      for (const auto& cls : c.classes) {
        std::vector<double> ee, oos;
        auto st = risks.star.find(cls);
        for (double R : risks.fitted[cls]) {
          oos.push_back(R / opt);
          if (st != risks.star.end()) ee.push_back((R - st->second) / opt);
        }
        if (!ee.empty()) rows[k].push_back(detail::instance_record(c, sv, cls, "eeRatio", ee, is, k));
        rows[k].push_back(detail::instance_record(c, sv, cls, "oosRatio", oos, is, k));
        if (st != risks.star.end())
          rows[k].push_back(detail::instance_record(c, sv, cls, "aeRatio", {st->second / opt - 1.0}, is, k));
      }
    });
    std::map<std::pair<std::string, std::string>, std::vector<MetricsRecord>> groups;
    for (int k = 0; k < c.instanceCount; ++k) {
      res.sanityViolations += bad[k];
      for (auto& r : rows[k]) {
        groups[{r.cls, r.metric}].push_back(r);
        res.records.push_back(r);
      }
    }
    for (const auto& cls : c.classes)
      for (const char* m : {"eeRatio", "oosRatio", "aeRatio"}) {
        auto it = groups.find({cls, m});
        if (it != groups.end()) res.records.push_back(detail::aggregate(it->second));
      }
  }
  return res;
}

// OOS ratio relative to the best (s,S) policy (sS kind) or best (S^t) policy (St kind)
// as N varies; reports where the class curves cross.
inline ExperimentResult run_oos_vs_N(const ExperimentConfig& c) {
  c.validate();
  if (c.kind != InstanceKind::OosSs && c.kind != InstanceKind::OosSt)
    throw ValidationError("run_oos_vs_N needs kind oos-vs-N-sS or oos-vs-N-St");
  const std::string ref = c.kind == InstanceKind::OosSs ? "ss" : "st";
  ExperimentResult res;
  struct Inst {
    Instance inst;
    detail::Setting s;
    std::optional<RiskOracle> truth;
    double star = 0.0;
    std::uint64_t seed = 0;
  };
  std::vector<Inst> insts(c.instanceCount);
  detail::parallel_for(c.instanceCount, c.threads, [&](int k) {
    auto& I = insts[k];
    I.seed = derive_seed(c.seed, k);
    I.inst = sample_instance(c.kind, I.seed, base_stock_params(c.T, c.L, c.h, c.b, c.K, 20.0), c.hyper);
    I.s = detail::make_setting(c, c.T, I.inst.params.K, detail::model_cap(I.inst.model));
    I.truth.emplace(I.inst.model, I.s.base, c.evalSamples, derive_seed(I.seed, 0xe7a1u), c.exactRisk);
    I.star = detail::best_in_class_risk(ref, I.inst.model, *I.truth, I.s, c, derive_seed(I.seed, 0xb1cu));
    if (!(I.star > 0.0)) throw ValidationError(fmt::format("best-in-class risk {} is not positive (instance {})", I.star, k));
  });
  for (double sv : c.sweep) {
    const int N = static_cast<int>(sv);
    std::vector<std::vector<MetricsRecord>> rows(c.instanceCount);
    std::vector<std::size_t> bad(c.instanceCount, 0);
    detail::parallel_for(c.instanceCount, c.threads, [&](int k) {
      const auto& I = insts[k];
      std::map<std::string, std::vector<double>> oos;
      for (int r = 0; r < c.datasetReps; ++r) {
        auto data = draw(I.inst.model, N, derive_seed(I.seed, N, r));
        for (const auto& cls : c.classes) {
          auto fit = detail::fit_class(cls, data, I.s, c.ermExact);
          if (c.sanityChecks && r == 0) bad[k] += detail::sanity_violations(cls, fit, data, derive_seed(I.seed, N, 7));
          oos[cls].push_back(I.truth->risk(fit.policy, fit.evalParams) / I.star);
        }
      }
      for (const auto& cls : c.classes)
        rows[k].push_back(detail::instance_record(c, sv, cls, "oosRatio", oos[cls], I.seed, k));
    });
    std::map<std::string, std::vector<MetricsRecord>> groups;
    for (int k = 0; k < c.instanceCount; ++k) {
      res.sanityViolations += bad[k];
      for (auto& r : rows[k]) {
        groups[r.cls].push_back(r);
        res.records.push_back(r);
      }
    }
    for (const auto& cls : c.classes) res.records.push_back(detail::aggregate(groups[cls]));
  }
  detail::crossing_scan(res, c, "oosRatio");
  return res;
}

// E[R(ERM)] / E[R(PERM)] for non-stationary base-stock policies. The independent kind
// sweeps N; the correlated kind sweeps rho and fits both on the full finite support.
inline ExperimentResult run_erm_vs_perm(const ExperimentConfig& c) {
  c.validate();
  if (c.kind != InstanceKind::PermInd && c.kind != InstanceKind::PermCorr)
    throw ValidationError("run_erm_vs_perm needs kind erm-vs-perm-ind or erm-vs-perm-corr");
  ExperimentResult res;
  const bool corr = c.kind == InstanceKind::PermCorr;
  for (double sv : c.sweep) {
    std::vector<std::vector<MetricsRecord>> rows(c.instanceCount);
    detail::parallel_for(c.instanceCount, c.threads, [&](int k) {
      const std::uint64_t is = derive_seed(c.seed, k);
      InstanceHyper hy = c.hyper;
      if (corr) hy.rho = sv;
      auto inst = sample_instance(c.kind, is, base_stock_params(c.T, c.L, c.h, c.b, 0.0, hy.cap), hy);
      auto s = detail::make_setting(c, c.T, 0.0, detail::model_cap(inst.model));
      RiskOracle truth(inst.model, s.base, c.evalSamples, derive_seed(is, 0xe7a1u), c.exactRisk);
      std::vector<double> erm, perm;
      if (corr) {
        Dataset support{finite_support(inst.model)->atoms};
        erm.push_back(truth.risk(detail::fit_class("erm", support, s, c.ermExact).policy));
        perm.push_back(truth.risk(detail::fit_class("perm", support, s, false).policy));
      } else {
        const int N = static_cast<int>(sv);
        for (int r = 0; r < c.datasetReps; ++r) {
          auto data = draw(inst.model, N, derive_seed(is, N, r));
          erm.push_back(truth.risk(detail::fit_class("erm", data, s, c.ermExact).policy));
          perm.push_back(truth.risk(detail::fit_class("perm", data, s, false).policy));
        }
      }
      rows[k].push_back(detail::ratio_record(c, sv, "erm/perm", "ermPermRatio", erm, perm, is, k));
      rows[k].push_back(detail::instance_record(c, sv, "erm", "risk", erm, is, k));
      rows[k].push_back(detail::instance_record(c, sv, "perm", "risk", perm, is, k));
    });
    std::map<std::pair<std::string, std::string>, std::vector<MetricsRecord>> groups;
    for (int k = 0; k < c.instanceCount; ++k)
      for (auto& r : rows[k]) {
        groups[{r.cls, r.metric}].push_back(r);
        res.records.push_back(r);
      }
    for (auto& [key, g] : groups) res.records.push_back(detail::aggregate(g));
  }
  return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  switch (c.kind) {
    case InstanceKind::EeVsT: return run_ee_vs_T(c);
    case InstanceKind::OosSs:
    case InstanceKind::OosSt: return run_oos_vs_N(c);
    case InstanceKind::PermInd:
    case InstanceKind::PermCorr: return run_erm_vs_perm(c);
  }
  throw ValidationError("unknown experiment kind");
}

// Mean and stderr of a - b for two classes of the same run, paired by instance and replication.
inline std::pair<double, double> paired_difference(const ExperimentResult& res, double sweep,
                                                   const std::string& a, const std::string& b,
                                                   const std::string& metric) {
  auto ra = res.per_instance(sweep, a, metric);
  auto rb = res.per_instance(sweep, b, metric);
  if (ra.empty() || ra.size() != rb.size()) throw InputError("classes are not paired in this run");
  double mean = 0.0, se2 = 0.0;
  std::vector<double> means;
  bool single = true;
  for (std::size_t k = 0; k < ra.size(); ++k) {
    std::vector<double> d;
    for (std::size_t i = 0; i < ra[k]->raw.size(); ++i) d.push_back(ra[k]->raw[i] - rb[k]->raw[i]);
    means.push_back(detail::mean_of(d));
    double se = detail::stderr_of(d);
    se2 += se * se;
    single = single && d.size() <= 1;
  }
  mean = detail::mean_of(means);
  double se = single ? detail::stderr_of(means) : std::sqrt(se2) / static_cast<double>(ra.size());
  return {mean, se};
}

inline void write_results_csv(std::ostream& os, const ExperimentResult& res) {
  os << "kind,sweepValue,class,metric,value,stderr,seed,instanceId\n";
  for (const auto& r : res.records)
    os << r.kind << ',' << format_double(r.sweepValue) << ',' << r.cls << ',' << r.metric << ','
       << format_double(r.value) << ',' << format_double(r.stdErr) << ',' << r.seed << ','
       << (r.instanceId < 0 ? std::string("all") : std::to_string(r.instanceId)) << '\n';
  for (const auto& x : res.crossings)
    os << (res.records.empty() ? "" : res.records.front().kind) << ','
       << (x.at ? format_double(*x.at) : "") << ',' << x.first << '|' << x.second
       << ",crossing," << (x.at ? "1" : "0") << ",0,," << "all" << '\n';
}

// Line chart of one metric: one series per class over the sweep values.
inline void write_svg_chart(std::ostream& os, const ExperimentResult& res, const std::string& metric,
                            const std::string& xlabel = "sweep") {
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  std::set<double> xs;
  for (const auto& r : res.records)
    if (r.instanceId < 0 && r.metric == metric) {
      series[r.cls].emplace_back(r.sweepValue, r.value);
      xs.insert(r.sweepValue);
    }
  const double W = 640, Hh = 400, ml = 70, mr = 130, mt = 30, mb = 50;
  double x0 = xs.empty() ? 0 : *xs.begin(), x1 = xs.empty() ? 1 : *xs.rbegin();
  double y0 = 1e300, y1 = -1e300;
  for (auto& [k, v] : series)
    for (auto [x, y] : v) {
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (series.empty()) y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 1, x1 += 1;
  if (y1 == y0) y0 -= 0.5 * std::max(1e-9, std::abs(y0)), y1 += 0.5 * std::max(1e-9, std::abs(y1));
  double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto X = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
  auto Y = [&](double y) { return Hh - mb - (y - y0) / (y1 - y0) * (Hh - mt - mb); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  os << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
                    W, Hh, W, Hh);
  os << fmt::format("<text x=\"{}\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n", (W - mr + ml) / 2,
                    metric);
  os << fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", ml, Hh - mb, W - mr, Hh - mb);
  os << fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", ml, mt, ml, Hh - mb);
  for (double x : xs)
    os << fmt::format("<text class=\"xtick\" x=\"{:.2f}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                      X(x), Hh - mb + 16, format_double(x));
  for (int k = 0; k <= 4; ++k) {
    double y = y0 + (y1 - y0) * k / 4;
    os << fmt::format("<text class=\"ytick\" x=\"{}\" y=\"{:.2f}\" font-size=\"11\" text-anchor=\"end\">{:.4g}</text>\n",
                      ml - 6, Y(y) + 4, y);
  }
  os << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n", (W - mr + ml) / 2,
                    Hh - 10, xlabel);
  int idx = 0;
  for (auto& [cls, pts] : series) {
    std::sort(pts.begin(), pts.end());
    const char* col = colors[idx % 6];
    os << "<polyline class=\"series\" fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i)
      os << (i ? " " : "") << fmt::format("{:.2f},{:.2f}", X(pts[i].first), Y(pts[i].second));
    os << "\"/>\n";
    for (auto [x, y] : pts)
      os << fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", X(x), Y(y), col);
    os << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{}</text>\n", W - mr + 10,
                      mt + 16 * (idx + 1), col, cls);
    ++idx;
  }
  os << "</svg>\n";
}

inline std::string sweep_label(InstanceKind k) {
  switch (k) {
    case InstanceKind::EeVsT: return "T";
    case InstanceKind::PermCorr: return "rho";
    default: return "N";
  }
}

// results.csv plus one SVG per metric; returns the written paths.
inline std::vector<std::string> emit_results(const ExperimentResult& res, const std::string& dir,
                                             const std::string& xlabel = "sweep") {
  if (res.records.empty()) throw InputError("no records to emit");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError(fmt::format("cannot create output directory '{}': {}", dir, ec.message()));
  std::vector<std::string> out;
  auto open = [&](const std::string& name) {
    auto path = (fs::path(dir) / name).string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError(fmt::format("cannot write '{}'", path));
    out.push_back(path);
    return f;
  };
  {
    auto f = open("results.csv");
    write_results_csv(f, res);
  }
  std::set<std::string> metrics;
  for (const auto& r : res.records) metrics.insert(r.metric);
  for (const auto& m : metrics) {
    auto f = open(m + ".svg");
    write_svg_chart(f, res, m, xlabel);
  }
  return out;
}

}  // namespace invlearn
