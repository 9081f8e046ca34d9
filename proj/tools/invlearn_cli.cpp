#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "invlearn/complexity.hpp"
#include "invlearn/experiments.hpp"

using namespace invlearn;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Globals {
  std::uint64_t seed = 1;
  std::string out;
  std::string config;
  int threads = 1;
};

// --T --L --h --b --K --U --x1 --H --Hlo, any of which may be left unset.
struct ParamFlags {
  std::optional<int> T, L;
  std::optional<double> h, b, K, U, x1, H, Hlo;
  bool unchecked = false;

  void add(CLI::App* app, bool withBounds = true) {
    app->add_option("--T", T, "horizon length T");
    app->add_option("--L", L, "lead time L (default 0)");
    app->add_option("--h", h, "holding cost per unit (default 1)");
    app->add_option("--b", b, "backlog cost per unit (default 9)");
    app->add_option("--K", K, "fixed ordering cost (default 0)");
    app->add_option("--U", U, "per-period demand bound (default: largest demand, at least 1)");
    if (withBounds) {
      app->add_option("--x1", x1, "initial inventory (default 0, or Hlo for ss/eoq)");
      app->add_option("--H", H, "upper bound on order-up-to levels");
      app->add_option("--Hlo", Hlo, "lower bound on reorder points (ss/eoq)");
    }
  }

  // Overrides from a config file's "params" table.
  void merge(const json& cfg) {
    if (!cfg.contains("params")) return;
    static const std::set<std::string> keys{"T", "L", "h", "b", "K", "U", "x1", "H", "Hlo"};
    const auto& p = cfg["params"];
    for (auto it = p.begin(); it != p.end(); ++it)
      if (!keys.count(it.key())) throw InputError(fmt::format("unknown config key 'params.{}'", it.key()));
    auto take = [&](const char* k, auto& dst) {
      if (p.contains(k) && !dst) dst = p[k].get<typename std::decay_t<decltype(dst)>::value_type>();
    };
    take("T", T);
    take("L", L);
    take("h", h);
    take("b", b);
    take("K", K);
    take("U", U);
    take("x1", x1);
    take("H", H);
    take("Hlo", Hlo);
  }

  SystemParams build(PolicyClass cls, std::size_t length, double maxDemand) const {
    int l = L.value_or(0);
    int t = T.value_or(static_cast<int>(length) - l);
    if (t < 1) throw InputError(fmt::format("--T: cannot infer a horizon from {} periods with L={}", length, l));
    double u = U.value_or(std::max(1.0, maxDemand));
    auto p = params_for(cls, t, l, h.value_or(1.0), b.value_or(9.0), K.value_or(0.0), u);
    if (H) p.H = *H;
    if (Hlo) p.Hlo = *Hlo;
    if (x1) p.x1 = *x1;
    else if (cls == PolicyClass::Ss || cls == PolicyClass::Eoq) p.x1 = p.Hlo;
    return p;
  }
};

std::vector<double> parse_list(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError(fmt::format("{}: '{}' is not a number", flag, item));
    }
  }
  if (out.empty()) throw InputError(fmt::format("{}: empty list", flag));
  return out;
}

// "3,7;4,6" -> two sequences.
Dataset parse_sequences(const std::string& s, const std::string& flag) {
  Dataset data;
  std::stringstream ss(s);
  std::string row;
  while (std::getline(ss, row, ';')) data.sequences.push_back(parse_list(row, flag));
  try {
    data.validate();
  } catch (const InputError& e) {
    throw InputError(fmt::format("{}: {}", flag, e.what()));
  }
  return data;
}

// base-stock:5 | ss:-2,7 | st:3,7,5
Policy parse_policy(const std::string& s) {
  auto colon = s.find(':');
  if (colon == std::string::npos) throw InputError(fmt::format("--policy: '{}' is not class:params", s));
  std::string cls = s.substr(0, colon);
  auto v = parse_list(s.substr(colon + 1), "--policy");
  if (cls == "base-stock" || cls == "S") {
    if (v.size() != 1) throw InputError("--policy: base-stock takes one level");
    return BaseStock{v[0]};
  }
  if (cls == "ss" || cls == "sS") {
    if (v.size() != 2) throw InputError("--policy: ss takes s,S");
    return SsPolicy{v[0], v[1]};
  }
  if (cls == "st" || cls == "St") return NonStationary{v};
  throw InputError(fmt::format("--policy: unknown class '{}'", cls));
}

// Widens default bounds so that an explicitly given policy is simulable.
SystemParams fit_policy(Policy& pi, SystemParams p, const ParamFlags& f) {
  if (auto* n = std::get_if<NonStationary>(&pi)) {
    if (static_cast<int>(n->levels.size()) == p.T) n->levels.resize(p.horizon(), 0.0);
    if (static_cast<int>(n->levels.size()) != p.horizon())
      throw InputError(fmt::format("--policy: st needs T={} or T+L={} levels (got {})", p.T, p.horizon(),
                                   n->levels.size()));
  }
  auto params = parameters(pi);
  double top = *std::max_element(params.begin(), params.end());
  if (!f.H) p.H = std::max(p.H, top);
  if (auto* c = std::get_if<SsPolicy>(&pi)) {
    if (!f.Hlo) p.Hlo = std::min(p.Hlo, c->s);
    if (!f.x1) p.x1 = p.Hlo;
  }
  return p;
}

double max_of(const Dataset& d) {
  double m = 0.0;
  for (const auto& s : d)
    for (double x : s) m = std::max(m, x);
  return m;
}

json params_json(const SystemParams& p) {
  return {{"T", p.T}, {"L", p.L}, {"h", p.h}, {"b", p.b}, {"K", p.K}, {"U", p.U},
          {"x1", p.x1}, {"H", p.H}, {"Hlo", p.Hlo}};
}

json load_json(const std::string& path, const std::string& flag) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("{}: cannot open '{}'", flag, path));
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw InputError(fmt::format("{}: {}", flag, e.what()));
  }
}

class Output {
 public:
  Output(const Globals& g, std::string cmd, const std::vector<std::string>& argv) : g_(g), cmd_(std::move(cmd)) {
    meta_ = {{"subcommand", cmd_}, {"seed", g.seed}, {"rng", std::string(Rng::kName)}, {"version", kVersion},
             {"threads", g.threads}, {"argv", argv}};
  }

  std::ostream& os() { return std::cout; }

  void set_config(const json& c) { meta_["config"] = c; }

  std::string path(const std::string& name) const {
    return (std::filesystem::path(g_.out) / name).string();
  }

  bool enabled() const { return !g_.out.empty(); }

  void prepare() {
    if (!enabled()) return;
    std::error_code ec;
    std::filesystem::create_directories(g_.out, ec);
    if (ec) throw InputError(fmt::format("--out: cannot create '{}': {}", g_.out, ec.message()));
  }

  void write(const std::string& name, const std::string& text) {
    if (!enabled()) return;
    prepare();
    std::ofstream f(path(name), std::ios::binary);
    if (!f) throw InputError(fmt::format("--out: cannot write '{}'", path(name)));
    f << text;
    files_.push_back(name);
  }

  void finish() {
    if (!enabled()) return;
    meta_["files"] = files_;
    std::ofstream f(path("metadata.json"), std::ios::binary);
    if (!f) throw InputError(fmt::format("--out: cannot write '{}'", path("metadata.json")));
    f << meta_.dump(2) << '\n';
  }

 private:
  const Globals& g_;
  std::string cmd_;
  json meta_;
  std::vector<std::string> files_;
};

std::string fit_json(const FitResult& r) {
  json j{{"class", to_string(class_of(r.policy))},
         {"method", to_string(r.method)},
         {"policy", describe(r.policy)},
         {"parameters", parameters(r.policy)},
         {"inSampleRisk", r.inSampleRisk},
         {"candidates", r.diagnostics.candidateCount},
         {"restarts", r.diagnostics.restarts},
         {"sweeps", r.diagnostics.sweeps},
         {"converged", r.diagnostics.converged},
         {"evalParams", params_json(r.evalParams)}};
  return j.dump(2) + "\n";
}

Dataset load_data(const std::string& file, const std::string& inline_, const std::string& fileFlag,
                  const std::string& inlineFlag) {
  if (!file.empty() && !inline_.empty())
    throw InputError(fmt::format("{} and {} are mutually exclusive", fileFlag, inlineFlag));
  if (!file.empty()) return load_dataset(file);
  if (!inline_.empty()) return parse_sequences(inline_, inlineFlag);
  throw InputError(fmt::format("one of {} or {} is required", fileFlag, inlineFlag));
}

DemandModel load_model(const std::string& modelFile, const std::string& instance, const ParamFlags& pf,
                       const InstanceHyper& hy, std::uint64_t seed, SystemParams* instanceParams) {
  if (!modelFile.empty() && !instance.empty()) throw InputError("--model and --instance are mutually exclusive");
  if (!modelFile.empty()) return model_from_json(load_json(modelFile, "--model"));
  if (instance.empty()) throw InputError("one of --model or --instance is required");
  auto kind = parse_instance_kind(instance);
  if (!pf.T) throw InputError("--T is required with --instance");
  auto p = base_stock_params(*pf.T, pf.L.value_or(0), pf.h.value_or(1.0), pf.b.value_or(9.0), pf.K.value_or(0.0),
                             pf.U.value_or(20.0));
  auto inst = sample_instance(kind, seed, p, hy);
  if (instanceParams) *instanceParams = inst.params;
  return inst.model;
}

void add_hyper(CLI::App* app, InstanceHyper& hy) {
  app->add_option("--nonst", hy.nonst, "instance nonstationarity (default 0.5)");
  app->add_option("--sigma0", hy.sigma0, "instance base standard deviation (default 5)");
  app->add_option("--P", hy.P, "instance fixed-cost scale, K = 4.5 P^2 for oos-vs-N-sS (default 2)");
  app->add_option("--rho", hy.rho, "instance correlation (default 0)");
  app->add_option("--support-size", hy.supportSize, "instance finite support size (default 5)");
  app->add_option("--scale", hy.scale, "instance demand scale divisor (default 1)");
  app->add_option("--cap", hy.cap, "instance demand cap (default 20)");
  app->add_flag("--product-form", hy.productForm, "instance support as product of per-period draws");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning inventory policies from demand samples: simulation, ERM/PERM fitting, "
               "learning-theory checks and experiment pipelines."};
  app.set_help_flag("--help", "print this help and exit");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "random seed (default 1)")->capture_default_str();
  app.add_option("--out", g.out, "output directory for result files and metadata.json");
  app.add_option("--config", g.config, "JSON config file (experiment config, or a params table)");
  app.add_option("--threads", g.threads, "worker threads for experiment runs (default 1)")->check(CLI::PositiveNumber);
  app.footer(
      "Exit codes: 0 success, 1 invalid input or parameters, 2 runtime or budget error.\n"
      "Policy grammar: base-stock:S | ss:s,S | st:S1,...,ST");

  // simulate
  auto* sim = app.add_subcommand("simulate", "simulate a policy (simulate, base_stock_loss, reorder_schedule, "
                                             "delta_breakpoints) or draw demand samples (draw, sample_instance)");
  ParamFlags simP;
  simP.add(sim);
  std::string simPolicy, simDemands, simData, simModel, simInstance;
  double simSchedule = -1.0;
  bool simTrajectory = false, simClosed = false, simBreakpoints = false, simUnchecked = false;
  std::size_t simSamples = 0;
  InstanceHyper simHyper;
  sim->add_option("--policy", simPolicy, "policy, e.g. base-stock:5, ss:-2,7, st:3,7,5");
  sim->add_option("--demands", simDemands, "demand sequence(s): comma separated, ';' between sequences");
  sim->add_option("--data", simData, "dataset CSV (header t1,...,tn)");
  sim->add_flag("--trajectory", simTrajectory, "print the per-period trajectory");
  sim->add_flag("--closed-form", simClosed, "also print the closed-form base-stock loss");
  sim->add_option("--schedule", simSchedule, "print the reorder schedule for minimum order quantity DELTA");
  sim->add_flag("--breakpoints", simBreakpoints, "print the DELTA breakpoints of the reorder schedule");
  sim->add_flag("--unchecked", simUnchecked, "skip bound checks on the policy and inventory");
  sim->add_option("--model", simModel, "demand model JSON to draw from (with --samples)");
  sim->add_option("--instance", simInstance,
                  "random experiment instance to draw from: ee-vs-T, oos-vs-N-sS, oos-vs-N-St, "
                  "erm-vs-perm-ind, erm-vs-perm-corr (with --samples)");
  sim->add_option("--samples", simSamples, "number of demand sequences to draw");
  add_hyper(sim, simHyper);

  // fit
  auto* fit = app.add_subcommand("fit", "fit a policy class by ERM (erm_base_stock, erm_eoq_base_stock, erm_sS, "
                                        "erm_St) or exhaustive grid (grid_oracle)");
  ParamFlags fitP;
  fitP.add(fit);
  std::string fitClass, fitData, fitDemands, fitMethod = "erm", fitSsMode = "exact";
  double fitStep = 1.0;
  StOptions stOpts;
  fit->add_option("--class", fitClass, "policy class: base-stock, ss, eoq, st")->required();
  fit->add_option("--data", fitData, "dataset CSV");
  fit->add_option("--demands", fitDemands, "inline dataset, e.g. 3,7;4,6");
  fit->add_option("--method", fitMethod, "erm or grid (default erm)");
  fit->add_option("--ss-mode", fitSsMode, "ss ERM mode: exact or integer (default exact)");
  fit->add_option("--step", fitStep, "grid step for --method grid (default 1)");
  fit->add_option("--restarts", stOpts.restarts, "st ERM restarts (default 16)");
  fit->add_option("--max-iter", stOpts.maxIter, "st ERM coordinate sweeps per restart (default 100)");
  fit->add_option("--tol", stOpts.tol, "st ERM convergence tolerance (default 1e-8)");

  // perm
  auto* perm = app.add_subcommand("perm", "product-of-marginals ERM: build_marginals, product_partition, perm_fit, "
                                          "perm_risk, optimal_dp");
  ParamFlags permP;
  permP.add(perm);
  std::string permData, permDemands, permMarg, permFit, permRisk, permModel, permInstance, permPartition;
  std::size_t permMc = 0;
  bool permOptimal = false, permWrite = false;
  InstanceHyper permHyper;
  perm->add_option("--data", permData, "dataset CSV");
  perm->add_option("--demands", permDemands, "inline dataset, e.g. 3,7;4,6");
  perm->add_option("--marginals", permMarg, "marginals CSV (period,value,probability)");
  perm->add_flag("--write-marginals", permWrite, "print the empirical marginals as CSV");
  perm->add_option("--fit", permFit, "fit by PERM: st or ss");
  perm->add_option("--risk", permRisk, "product-law risk of a policy, e.g. st:2,5");
  perm->add_option("--mc", permMc, "Monte-Carlo draws for --risk (default: exact DP)");
  perm->add_option("--partition", permPartition, "print product_partition groups for N,periods");
  perm->add_flag("--optimal", permOptimal, "optimal policy risk by DP for --model or --instance");
  perm->add_option("--model", permModel, "independent demand model JSON for --optimal");
  perm->add_option("--instance", permInstance, "random instance kind for --optimal");
  add_hyper(perm, permHyper);

  // shatter
  auto* sh = app.add_subcommand("shatter", "build and verify shattering constructions (gen_st_shatter, "
                                           "gen_st_K_shatter, gen_sS_prime_shatter, verify_shattering)");
  std::string shCons;
  int shT = 3, shM = 2, shCap = kShatterCap;
  double shK = 1.0, shB = 0.5;
  std::optional<double> shGamma;
  bool shVerify = false;
  sh->add_option("--construction", shCons, "st, st-K or prime")->required();
  sh->add_option("--T", shT, "horizon for st and st-K (default 3)");
  sh->add_option("--K", shK, "fixed cost for st-K, in (0, 1] (default 1)");
  sh->add_option("--m", shM, "number of primes for prime (default 2)");
  sh->add_option("--b", shB, "backlog cost for prime, in (0, 1/2] (default 0.5)");
  sh->add_option("--gamma", shGamma, "margin to verify at (default: the construction's own)");
  sh->add_option("--cap", shCap, "largest shattered set size to enumerate (default 16)");
  sh->add_flag("--verify", shVerify, "enumerate all subsets and report");

  // rademacher
  auto* rad = app.add_subcommand("rademacher", "Monte-Carlo Rademacher complexity (rademacher_estimate) or "
                                               "generalization error (ge_estimate)");
  ParamFlags radP;
  radP.add(rad);
  std::string radClass = "base-stock", radData, radDemands, radModel, radInstance;
  std::size_t radDraws = 1000, radN = 0, radReps = 100, radEval = 2000;
  double radStep = 1.0;
  bool radGe = false;
  InstanceHyper radHyper;
  rad->add_option("--class", radClass, "policy class: base-stock, ss, st (default base-stock)");
  rad->add_option("--data", radData, "dataset CSV");
  rad->add_option("--demands", radDemands, "inline dataset, e.g. 3,7;4,6");
  rad->add_option("--draws", radDraws, "sign vectors to draw (default 1000)");
  rad->add_option("--step", radStep, "grid step for ss and st sups (default 1)");
  rad->add_flag("--ge", radGe, "estimate the generalization error instead (needs --model or --instance, --N)");
  rad->add_option("--model", radModel, "demand model JSON for --ge");
  rad->add_option("--instance", radInstance, "random instance kind for --ge");
  rad->add_option("--N", radN, "sample size for --ge");
  rad->add_option("--reps", radReps, "dataset replications for --ge (default 100)");
  rad->add_option("--eval-samples", radEval, "fresh draws for the true risk when not exact (default 2000)");
  add_hyper(rad, radHyper);

  // gap
  auto* gap = app.add_subcommand("gap", "discretization gap of the 1/M grid for (s,S) (discretization_gap)");
  int gapM = 1, gapT = 200;
  gap->add_option("--M", gapM, "grid resolution, levels are multiples of 1/M (default 1)");
  gap->add_option("--T", gapT, "even horizon (default 200)");

  // experiment
  auto* exp = app.add_subcommand("experiment", "run an experiment pipeline from --config (run_ee_vs_T, "
                                               "run_oos_vs_N, run_erm_vs_perm, emit_results)");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    std::cout << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  auto* cmd = app.get_subcommands().front();
  Output out(g, cmd->get_name(), args);
  try {
    json cfg;
    if (!g.config.empty()) {
      cfg = load_json(g.config, "--config");
      out.set_config(cfg);
    }
    std::ostringstream res;
    if (cmd == sim) {
      if (!g.config.empty()) simP.merge(cfg);
      if (simSamples > 0 || !simModel.empty() || !simInstance.empty()) {
        if (simSamples == 0) throw InputError("--samples is required with --model or --instance");
        auto model = load_model(simModel, simInstance, simP, simHyper, g.seed, nullptr);
        auto data = draw(model, simSamples, derive_seed(g.seed, 0xd7a3u));
        write_dataset_csv(res, data);
        json mj;
        to_json(mj, model);
        out.write("model.json", mj.dump(2) + "\n");
        out.write("dataset.csv", res.str());
        std::cout << res.str();
      } else {
        auto data = load_data(simData, simDemands, "--data", "--demands");
        if (simBreakpoints || simSchedule >= 0.0) {
          auto p = simP.build(PolicyClass::Ss, data.length(), max_of(data));
          for (std::size_t i = 0; i < data.size(); ++i) {
            if (simBreakpoints)
              res << fmt::format("breakpoints {}\n", fmt::join(delta_breakpoints(data[i], p), ","));
            if (simSchedule >= 0.0)
              res << fmt::format("schedule {}\n", fmt::join(reorder_schedule(simSchedule, data[i], p).times, ","));
          }
        }
        if (!simPolicy.empty()) {
          Policy pi = parse_policy(simPolicy);
          auto p = fit_policy(pi, simP.build(class_of(pi), data.length(), max_of(data)), simP);
          auto bounds = simUnchecked ? Bounds::Unchecked : Bounds::Checked;
          double total = 0.0;
          for (std::size_t i = 0; i < data.size(); ++i) {
            auto tr = simulate(pi, data[i], p, bounds);
            total += tr.avgLoss;
            if (data.size() > 1) res << fmt::format("sequence {} avgLoss {}\n", i + 1, format_double(tr.avgLoss));
            if (simTrajectory) {
              res << "t,x,q,y,I,loss\n";
              for (int t = 1; t <= p.horizon(); ++t) {
                std::string loss = t > p.L ? format_double(tr.perPeriodLoss[t - p.L - 1]) : "";
                res << fmt::format("{},{},{},{},{},{}\n", t, format_double(tr.x[t - 1]), format_double(tr.q[t - 1]),
                                   format_double(tr.y[t - 1]), format_double(tr.I[t - 1]), loss);
              }
            }
            if (simClosed) {
              auto* bs = std::get_if<BaseStock>(&pi);
              if (!bs) throw InputError("--closed-form needs a base-stock --policy");
              res << fmt::format("closedForm {}\n", format_double(base_stock_loss(bs->S, data[i], p)));
            }
          }
          res << fmt::format("avgLoss {}\n", format_double(total / data.size()));
        } else if (!simBreakpoints && simSchedule < 0.0) {
          throw InputError("--policy is required (or --schedule, --breakpoints, --samples)");
        }
        out.write("simulate.txt", res.str());
        std::cout << res.str();
      }
    } else if (cmd == fit) {
      if (!g.config.empty()) fitP.merge(cfg);
      auto data = load_data(fitData, fitDemands, "--data", "--demands");
      auto cls = parse_policy_class(fitClass);
      auto p = fitP.build(cls, data.length(), max_of(data));
      FitResult r;
      if (fitMethod == "erm") {
        if (cls == PolicyClass::BaseStock) r = erm_base_stock(data, p);
        else if (cls == PolicyClass::Eoq) r = erm_eoq_base_stock(data, p);
        else if (cls == PolicyClass::Ss) {
          if (fitSsMode != "exact" && fitSsMode != "integer")
            throw InputError(fmt::format("--ss-mode: '{}' is not exact or integer", fitSsMode));
          r = erm_sS(data, p, fitSsMode == "exact" ? SsMode::Exact : SsMode::IntegerGrid);
        } else {
          stOpts.seed = g.seed;
          r = erm_St(data, p, stOpts);
        }
      } else if (fitMethod == "grid") {
        r = grid_oracle(data, cls, fitStep, p);
      } else {
        throw InputError(fmt::format("--method: '{}' is not erm or grid", fitMethod));
      }
      res << fmt::format("policy {}\ninSampleRisk {}\nmethod {}\n", describe(r.policy), format_double(r.inSampleRisk),
                         to_string(r.method));
      out.write("fit.json", fit_json(r));
      std::cout << res.str();
    } else if (cmd == perm) {
      if (!g.config.empty()) permP.merge(cfg);
      bool did = false;
      if (!permPartition.empty()) {
        auto v = parse_list(permPartition, "--partition");
        if (v.size() != 2) throw InputError("--partition: expected N,periods");
        auto groups = product_partition(static_cast<int>(v[0]), static_cast<int>(v[1]));
        for (std::size_t j = 0; j < groups.size(); ++j) {
          std::vector<std::string> tuples;
          for (const auto& tup : groups[j]) {
            std::string s;
            for (int x : tup) s += std::to_string(x + 1);
            tuples.push_back(s);
          }
          res << fmt::format("group {} {}\n", j + 1, fmt::join(tuples, " "));
        }
        did = true;
      }
      if (permOptimal) {
        SystemParams ip;
        auto model = load_model(permModel, permInstance, permP, permHyper, g.seed, &ip);
        auto p = permP.build(PolicyClass::BaseStock, model_length(model), permInstance.empty() ? 0.0 : ip.U);
        if (!permInstance.empty() && !permP.K) p.K = ip.K;
        auto o = optimal_dp(model, p);
        res << fmt::format("optimalRisk {}\norderUpTo {}\n", format_double(o.risk), fmt::join(o.orderUpTo, ","));
        did = true;
      }
      if (!permFit.empty() || !permRisk.empty() || permWrite) {
        EmpiricalMarginals m;
        if (!permMarg.empty()) {
          if (!permData.empty() || !permDemands.empty())
            throw InputError("--marginals is exclusive with --data and --demands");
          std::ifstream in(permMarg);
          if (!in) throw InputError(fmt::format("--marginals: cannot open '{}'", permMarg));
          m = read_marginals_csv(in);
        } else {
          m = build_marginals(load_data(permData, permDemands, "--data", "--demands"));
        }
        double top = 0.0;
        for (const auto& q : m.perPeriod) top = std::max(top, q.values.back());
        if (permWrite) {
          std::ostringstream mc;
          write_marginals_csv(mc, m);
          out.write("marginals.csv", mc.str());
          res << mc.str();
        }
        if (!permFit.empty()) {
          auto cls = parse_policy_class(permFit);
          auto r = perm_fit(m, permP.build(cls, m.periods(), top), cls);
          res << fmt::format("policy {}\nproductRisk {}\nmethod {}\n", describe(r.policy),
                             format_double(r.inSampleRisk), to_string(r.method));
          out.write("perm_fit.json", fit_json(r));
        }
        if (!permRisk.empty()) {
          Policy pi = parse_policy(permRisk);
          auto p = fit_policy(pi, permP.build(class_of(pi), m.periods(), top), permP);
          auto e = permMc > 0 ? perm_risk(pi, m, p, PermRiskMode::MonteCarlo, permMc, g.seed)
                              : perm_risk(pi, m, p);
          res << fmt::format("productRisk {}\nstderr {}\n", format_double(e.value), format_double(e.stdErr));
        }
        did = true;
      }
      if (!did) throw InputError("perm needs one of --fit, --risk, --write-marginals, --partition, --optimal");
      out.write("perm.txt", res.str());
      std::cout << res.str();
    } else if (cmd == sh) {
      ShatterInstance inst;
      if (shCons == "st") inst = gen_st_shatter(shT);
      else if (shCons == "st-K") inst = gen_st_K_shatter(shT, shK);
      else if (shCons == "prime") inst = gen_sS_prime_shatter(shM, shB);
      else throw InputError(fmt::format("--construction: '{}' is not st, st-K or prime", shCons));
      std::optional<ShatterReport> rep;
      if (shVerify) {
        rep = verify_shattering(inst, shGamma, shCap);
        if (rep->ok)
          res << fmt::format("ok ({} subsets)\n", rep->subsets);
        else
          res << fmt::format("failed ({} of {} subsets)\n", rep->failures.size(), rep->subsets);
      } else {
        res << fmt::format("{}: m={} gamma={} T={}\n", inst.construction, inst.size(), format_double(inst.gamma),
                           inst.params.T);
      }
      out.write("shatter.json", to_json(inst, rep ? &*rep : nullptr).dump(2) + "\n");
      std::cout << res.str();
    } else if (cmd == rad) {
      if (!g.config.empty()) radP.merge(cfg);
      auto cls = parse_policy_class(radClass);
      McEstimate e;
      if (radGe) {
        if (radN == 0) throw InputError("--N is required with --ge");
        SystemParams ip;
        auto model = load_model(radModel, radInstance, radP, radHyper, g.seed, &ip);
        auto p = radP.build(cls, model_length(model), radInstance.empty() ? 0.0 : ip.U);
        if (!radModel.empty() && !radP.U) {
          auto probe = draw(model, 64, g.seed);
          p = radP.build(cls, model_length(model), max_of(probe));
        }
        e = ge_estimate(cls, model, radN, p,
                        {.reps = radReps, .evalSamples = radEval, .seed = g.seed, .step = radStep});
        res << fmt::format("meanGE {}\nstderr {}\n", format_double(e.estimate), format_double(e.stdErr));
      } else {
        auto data = load_data(radData, radDemands, "--data", "--demands");
        auto p = radP.build(cls, data.length(), max_of(data));
        e = rademacher_estimate(cls, data, p, radDraws, g.seed, radStep);
        res << fmt::format("estimate {}\nstderr {}\n", format_double(e.estimate), format_double(e.stdErr));
      }
      res << fmt::format("approximateSup {}\n", e.approximateSup ? "true" : "false");
      out.write("rademacher.txt", res.str());
      std::cout << res.str();
    } else if (cmd == gap) {
      auto r = discretization_gap(gapM, gapT);
      res << fmt::format("gridBestRisk {}\ncontinuousRisk {}\ngap {}\ngridBest {}\n", format_double(r.gridBestRisk),
                         format_double(r.continuousRisk), format_double(r.gap), describe(r.gridBest));
      out.write("gap.txt", res.str());
      std::cout << res.str();
    } else if (cmd == exp) {
      if (g.config.empty()) throw InputError("--config is required for experiment");
      auto c = config_from_json(cfg);
      bool seedSet = app.get_option("--seed")->count() > 0;
      if (seedSet) c.seed = g.seed;
      if (app.get_option("--threads")->count() > 0) c.threads = g.threads;
      out.set_config(to_json(c));
      auto r = run_experiment(c);
      if (g.out.empty()) g.out = "results";
      out.prepare();
      emit_results(r, g.out, sweep_label(c.kind));
      for (const auto& x : r.records)
        if (x.instanceId < 0)
          res << fmt::format("{}={} {} {} {} stderr {}\n", sweep_label(c.kind), format_double(x.sweepValue), x.cls,
                             x.metric, format_double(x.value), format_double(x.stdErr));
      for (const auto& x : r.crossings)
        res << fmt::format("crossing {}/{} {}\n", x.first, x.second, x.at ? format_double(*x.at) : "none");
      if (c.sanityChecks) res << fmt::format("sanityViolations {}\n", r.sanityViolations);
      out.write("summary.txt", res.str());
      std::cout << res.str();
    }
    out.finish();
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: --config: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
