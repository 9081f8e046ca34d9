#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "invlearn/rng.hpp"
#include "invlearn/types.hpp"

namespace invlearn {

struct IndependentNormals {
  std::vector<double> means;
  std::vector<double> stds;
  double cap = 20.0;
  bool integerize = true;
};

struct IIDNormal {
  double mu = 10.0;
  double sigma = 5.0;
  int length = 1;
  double cap = 20.0;
  bool integerize = true;
};

// Uniform over supportSize joint draws of N(means, Sigma), Sigma_kl = s_k s_l rho^|k-l|.
// productForm replaces the joint draws by the Cartesian product of per-period draws.
struct CorrelatedNormalSupport {
  std::vector<double> means;
  std::vector<double> stds;
  double rho = 0.0;
  int supportSize = 5;
  double cap = 20.0;
  bool integerize = true;
  bool productForm = false;
  std::uint64_t supportSeed = 0;
};

struct Deterministic {
  DemandSequence sequence;
};

struct FiniteSupport {
  std::vector<DemandSequence> atoms;
};

using DemandModel =
    std::variant<IndependentNormals, IIDNormal, CorrelatedNormalSupport, Deterministic, FiniteSupport>;

inline std::string model_name(const DemandModel& m) {
  switch (m.index()) {
    case 0: return "independent-normals";
    case 1: return "iid-normal";
    case 2: return "correlated-normal-support";
    case 3: return "deterministic";
    default: return "finite-support";
  }
}

inline std::size_t model_length(const DemandModel& m) {
  if (auto* a = std::get_if<IndependentNormals>(&m)) return a->means.size();
  if (auto* b = std::get_if<IIDNormal>(&m)) return static_cast<std::size_t>(b->length);
  if (auto* c = std::get_if<CorrelatedNormalSupport>(&m)) return c->means.size();
  if (auto* d = std::get_if<Deterministic>(&m)) return d->sequence.size();
  const auto& f = std::get<FiniteSupport>(m);
  return f.atoms.empty() ? 0 : f.atoms.front().size();
}

inline void validate_model(const DemandModel& m) {
  auto check_cap = [](double cap) {
    if (!(cap > 0.0)) throw ValidationError(fmt::format("cap must be > 0 (got {})", cap));
  };
  if (auto* a = std::get_if<IndependentNormals>(&m)) {
    check_cap(a->cap);
    if (a->means.empty() || a->means.size() != a->stds.size())
      throw ValidationError("independent normals need equal, nonempty means and stds");
    for (double s : a->stds)
      if (!(s >= 0.0)) throw ValidationError("standard deviations must be >= 0");
  } else if (auto* b = std::get_if<IIDNormal>(&m)) {
    check_cap(b->cap);
    if (b->length < 1) throw ValidationError("iid normal length must be >= 1");
    if (!(b->sigma >= 0.0)) throw ValidationError("sigma must be >= 0");
  } else if (auto* c = std::get_if<CorrelatedNormalSupport>(&m)) {
    check_cap(c->cap);
    if (c->means.empty() || c->means.size() != c->stds.size())
      throw ValidationError("correlated normals need equal, nonempty means and stds");
    if (c->supportSize < 1) throw ValidationError("supportSize must be >= 1");
    if (!(std::abs(c->rho) <= 1.0)) throw ValidationError("|rho| must be <= 1");
  } else if (auto* d = std::get_if<Deterministic>(&m)) {
    if (d->sequence.empty()) throw ValidationError("deterministic sequence is empty");
  } else {
    const auto& f = std::get<FiniteSupport>(m);
    if (f.atoms.empty()) throw ValidationError("finite support has no atoms");
    for (const auto& a : f.atoms)
      if (a.size() != f.atoms.front().size())
        throw ValidationError("finite support atoms differ in length");
  }
}

// Clamp to [0, cap], then round half to even.
inline double integerize_demand(double v, double cap) {
  double c = std::clamp(v, 0.0, cap);
  return std::nearbyint(c);
}

inline double shape_demand(double v, double cap, bool integerize) {
  return integerize ? integerize_demand(v, cap) : std::clamp(v, 0.0, cap);
}

inline FiniteSupport materialize_support(const CorrelatedNormalSupport& c) {
  const int T = static_cast<int>(c.means.size());
  Rng rng(c.supportSeed);
  FiniteSupport out;
  if (c.productForm) {
    std::vector<std::vector<double>> perPeriod(T);
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < c.supportSize; ++k)
        perPeriod[t].push_back(shape_demand(rng.normal(c.means[t], c.stds[t]), c.cap, c.integerize));
    std::vector<int> idx(T, 0);
    while (true) {
      DemandSequence d(T);
      for (int t = 0; t < T; ++t) d[t] = perPeriod[t][idx[t]];
      out.atoms.push_back(std::move(d));
      int t = T - 1;
      while (t >= 0 && idx[t] == c.supportSize - 1) idx[t--] = 0;
      if (t < 0) break;
      ++idx[t];
    }
    return out;
  }
  Eigen::MatrixXd sigma(T, T);
  for (int k = 0; k < T; ++k)
    for (int l = 0; l < T; ++l)
      sigma(k, l) = c.stds[k] * c.stds[l] * std::pow(c.rho, std::abs(k - l));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-12).cwiseSqrt();
  Eigen::MatrixXd A = es.eigenvectors() * ev.asDiagonal();
  for (int k = 0; k < c.supportSize; ++k) {
    Eigen::VectorXd z(T);
    for (int t = 0; t < T; ++t) z(t) = rng.normal();
    Eigen::VectorXd x = A * z;
    DemandSequence d(T);
    for (int t = 0; t < T; ++t) d[t] = shape_demand(c.means[t] + x(t), c.cap, c.integerize);
    out.atoms.push_back(std::move(d));
  }
  return out;
}

inline Dataset draw(const DemandModel& model, std::size_t n, std::uint64_t seed) {
  validate_model(model);
  if (n < 1) throw InputError("draw count must be >= 1");
  Rng rng(seed);
  Dataset out;
  out.sequences.reserve(n);
  if (auto* a = std::get_if<IndependentNormals>(&model)) {
    for (std::size_t i = 0; i < n; ++i) {
      DemandSequence d(a->means.size());
      for (std::size_t t = 0; t < d.size(); ++t)
        d[t] = shape_demand(rng.normal(a->means[t], a->stds[t]), a->cap, a->integerize);
      out.sequences.push_back(std::move(d));
    }
  } else if (auto* b = std::get_if<IIDNormal>(&model)) {
    for (std::size_t i = 0; i < n; ++i) {
      DemandSequence d(b->length);
      for (auto& v : d) v = shape_demand(rng.normal(b->mu, b->sigma), b->cap, b->integerize);
      out.sequences.push_back(std::move(d));
    }
  } else if (auto* c = std::get_if<CorrelatedNormalSupport>(&model)) {
    auto support = materialize_support(*c);
    for (std::size_t i = 0; i < n; ++i) out.sequences.push_back(support.atoms[rng.below(support.atoms.size())]);
  } else if (auto* d = std::get_if<Deterministic>(&model)) {
    out.sequences.assign(n, d->sequence);
  } else {
    const auto& f = std::get<FiniteSupport>(model);
    for (std::size_t i = 0; i < n; ++i) out.sequences.push_back(f.atoms[rng.below(f.atoms.size())]);
  }
  return out;
}

// Atoms of a finite-support law (correlated supports are materialized).
inline std::optional<FiniteSupport> finite_support(const DemandModel& m) {
  if (auto* c = std::get_if<CorrelatedNormalSupport>(&m)) return materialize_support(*c);
  if (auto* f = std::get_if<FiniteSupport>(&m)) return *f;
  if (auto* d = std::get_if<Deterministic>(&m)) return FiniteSupport{{d->sequence}};
  return std::nullopt;
}

inline bool is_independent(const DemandModel& m) {
  return std::holds_alternative<IndependentNormals>(m) || std::holds_alternative<IIDNormal>(m) ||
         std::holds_alternative<Deterministic>(m);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// pmf of the clamp-then-round transform of N(mu, sigma^2) on {0, ..., cap}.
inline Pmf integer_normal_pmf(double mu, double sigma, double cap) {
  if (std::abs(cap - std::nearbyint(cap)) > 1e-9)
    throw UnsupportedError("analytic pmf needs an integer cap");
  int top = static_cast<int>(std::nearbyint(cap));
  if (sigma == 0.0) return Pmf::point(integerize_demand(mu, cap));
  Pmf p;
  double prev = 0.0;
  for (int k = 0; k <= top; ++k) {
    double c = k == top ? 1.0 : normal_cdf((k + 0.5 - mu) / sigma);
    double w = c - prev;
    prev = c;
    if (w > 0.0) {
      p.values.push_back(k);
      p.probs.push_back(w);
    }
  }
  return p;
}

// Per-period pmfs of an independent integer-valued model.
inline std::vector<Pmf> period_pmfs(const DemandModel& m) {
  validate_model(m);
  std::vector<Pmf> out;
  if (auto* a = std::get_if<IndependentNormals>(&m)) {
    if (!a->integerize) throw UnsupportedError("analytic pmfs need an integerized model");
    for (std::size_t t = 0; t < a->means.size(); ++t)
      out.push_back(integer_normal_pmf(a->means[t], a->stds[t], a->cap));
  } else if (auto* b = std::get_if<IIDNormal>(&m)) {
    if (!b->integerize) throw UnsupportedError("analytic pmfs need an integerized model");
    out.assign(b->length, integer_normal_pmf(b->mu, b->sigma, b->cap));
  } else if (auto* d = std::get_if<Deterministic>(&m)) {
    for (double v : d->sequence) out.push_back(Pmf::point(v));
  } else {
    throw UnsupportedError("per-period pmfs only exist for independent models");
  }
  return out;
}

struct InstanceHyper {
  double nonst = 0.5;
  double sigma0 = 5.0;
  double P = 2.0;
  double rho = 0.0;
  int supportSize = 5;
  double scale = 1.0;  // demands ~ N(mu/scale, (sigma/scale)^2)
  double cap = 20.0;
  bool productForm = false;
};

struct Instance {
  DemandModel model;
  SystemParams params;
};

enum class InstanceKind { EeVsT, OosSs, OosSt, PermInd, PermCorr };

inline InstanceKind parse_instance_kind(const std::string& s) {
  if (s == "ee-vs-T") return InstanceKind::EeVsT;
  if (s == "oos-vs-N-sS" || s == "oos-sS") return InstanceKind::OosSs;
  if (s == "oos-vs-N-St" || s == "oos-St") return InstanceKind::OosSt;
  if (s == "erm-vs-perm-ind" || s == "perm-ind") return InstanceKind::PermInd;
  if (s == "erm-vs-perm-corr" || s == "perm-corr") return InstanceKind::PermCorr;
  throw InputError(fmt::format("unknown experiment kind '{}'", s));
}

inline std::string to_string(InstanceKind k) {
  switch (k) {
    case InstanceKind::EeVsT: return "ee-vs-T";
    case InstanceKind::OosSs: return "oos-vs-N-sS";
    case InstanceKind::OosSt: return "oos-vs-N-St";
    case InstanceKind::PermInd: return "erm-vs-perm-ind";
    case InstanceKind::PermCorr: return "erm-vs-perm-corr";
  }
  return "?";
}

// Draws the random instance parameters of each experiment family. K is set from P
// for the (s,S) family and left at p.K otherwise.
inline Instance sample_instance(InstanceKind kind, std::uint64_t seed, const SystemParams& p,
                                const InstanceHyper& hy = {}) {
  Rng rng(seed);
  const int n = p.horizon();
  Instance inst;
  inst.params = p;
  switch (kind) {
    case InstanceKind::EeVsT: {
      IndependentNormals m;
      m.cap = 20.0;
      for (int t = 0; t < n; ++t) {
        m.means.push_back(rng.uniform(5.0, 15.0));
        m.stds.push_back(rng.uniform(2.5, 7.5));
      }
      inst.model = m;
      break;
    }
    case InstanceKind::OosSs: {
      if (!(hy.sigma0 >= 0.0)) throw ValidationError("sigma0 must be >= 0");
      IIDNormal m;
      m.mu = rng.uniform(8.0, 12.0);
      m.sigma = rng.uniform(0.8 * hy.sigma0, 1.2 * hy.sigma0);
      m.length = n;
      m.cap = 20.0;
      inst.model = m;
      inst.params.K = 4.5 * hy.P * hy.P;
      break;
    }
    case InstanceKind::OosSt:
    case InstanceKind::PermInd:
    case InstanceKind::PermCorr: {
      if (!(hy.nonst >= 0.0 && hy.nonst <= 1.0)) throw ValidationError("nonst must be in [0, 1]");
      if (!(hy.scale > 0.0)) throw ValidationError("scale must be > 0");
      std::vector<double> mu, sd;
      for (int t = 0; t < n; ++t) {
        mu.push_back(rng.uniform((1 - hy.nonst) * 10.0, (1 + hy.nonst) * 10.0) / hy.scale);
        sd.push_back(rng.uniform((1 - hy.nonst) * hy.sigma0, (1 + hy.nonst) * hy.sigma0) / hy.scale);
      }
      if (kind == InstanceKind::PermCorr) {
        CorrelatedNormalSupport m;
        m.means = mu;
        m.stds = sd;
        m.rho = hy.rho;
        m.supportSize = hy.supportSize;
        m.cap = hy.cap;
        m.productForm = hy.productForm;
        m.supportSeed = derive_seed(seed, 0x5u);
        inst.model = m;
      } else {
        inst.model = IndependentNormals{mu, sd, kind == InstanceKind::OosSt ? 20.0 : hy.cap, true};
      }
      break;
    }
  }
  validate_model(inst.model);
  return inst;
}

inline void to_json(nlohmann::json& j, const DemandModel& m) {
  j = nlohmann::json{{"type", model_name(m)}};
  if (auto* a = std::get_if<IndependentNormals>(&m)) {
    j["means"] = a->means;
    j["stds"] = a->stds;
    j["cap"] = a->cap;
    j["integerize"] = a->integerize;
  } else if (auto* b = std::get_if<IIDNormal>(&m)) {
    j["mu"] = b->mu;
    j["sigma"] = b->sigma;
    j["length"] = b->length;
    j["cap"] = b->cap;
    j["integerize"] = b->integerize;
  } else if (auto* c = std::get_if<CorrelatedNormalSupport>(&m)) {
    j["means"] = c->means;
    j["stds"] = c->stds;
    j["rho"] = c->rho;
    j["supportSize"] = c->supportSize;
    j["cap"] = c->cap;
    j["integerize"] = c->integerize;
    j["productForm"] = c->productForm;
    j["supportSeed"] = c->supportSeed;
  } else if (auto* d = std::get_if<Deterministic>(&m)) {
    j["sequence"] = d->sequence;
  } else {
    j["atoms"] = std::get<FiniteSupport>(m).atoms;
  }
}

inline DemandModel model_from_json(const nlohmann::json& j) {
  auto key = [&](const char* k) -> const nlohmann::json& {
    if (!j.contains(k)) throw InputError(fmt::format("demand model: missing key '{}'", k));
    return j.at(k);
  };
  std::string type = key("type").get<std::string>();
  DemandModel m;
  try {
    if (type == "independent-normals") {
      m = IndependentNormals{key("means").get<std::vector<double>>(),
                             key("stds").get<std::vector<double>>(), j.value("cap", 20.0),
                             j.value("integerize", true)};
    } else if (type == "iid-normal") {
      m = IIDNormal{key("mu").get<double>(), key("sigma").get<double>(), key("length").get<int>(),
                    j.value("cap", 20.0), j.value("integerize", true)};
    } else if (type == "correlated-normal-support") {
      CorrelatedNormalSupport c;
      c.means = key("means").get<std::vector<double>>();
      c.stds = key("stds").get<std::vector<double>>();
      c.rho = j.value("rho", 0.0);
      c.supportSize = j.value("supportSize", 5);
      c.cap = j.value("cap", 20.0);
      c.integerize = j.value("integerize", true);
      c.productForm = j.value("productForm", false);
      c.supportSeed = j.value("supportSeed", std::uint64_t{0});
      m = c;
    } else if (type == "deterministic") {
      m = Deterministic{key("sequence").get<std::vector<double>>()};
    } else if (type == "finite-support") {
      m = FiniteSupport{key("atoms").get<std::vector<DemandSequence>>()};
    } else {
      throw InputError(fmt::format("demand model: unknown type '{}'", type));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(fmt::format("demand model '{}': {}", type, e.what()));
  }
  validate_model(m);
  return m;
}

}  // namespace invlearn
