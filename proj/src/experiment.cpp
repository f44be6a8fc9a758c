#include "advmiss/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <omp.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "advmiss/adversary.hpp"
#include "advmiss/errors.hpp"
#include "advmiss/metrics.hpp"
#include "advmiss/pc.hpp"
#include "advmiss/rng.hpp"

namespace advmiss {

using nlohmann::json;

namespace {

// ---- parsing helpers -------------------------------------------------------

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("field '{}': {}", key, e.what()));
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(fmt::format("unknown field '{}' in {}", key, where));
}

// Node reference: a column name, or an integer index in the given base.
int resolve_node(const json& ref, const std::vector<std::string>& columns, int base, const std::string& where) {
  const int d = static_cast<int>(columns.size());
  if (ref.is_string()) {
    const auto name = ref.get<std::string>();
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw ConfigError(fmt::format("{}: unknown column '{}'", where, name));
    return static_cast<int>(it - columns.begin());
  }
  if (!ref.is_number_integer()) throw ConfigError(where + ": node must be a column name or an integer index");
  const int raw = ref.get<int>();
  const int idx = raw - base;
  if (idx < 0 || idx >= d) throw ConfigError(fmt::format("{}: index {} out of range for {} columns", where, raw, d));
  if (base != 0)
    spdlog::info("{}: {}-based index {} -> column '{}' (0-based {})", where, base, raw, columns[static_cast<std::size_t>(idx)], idx);
  return idx;
}

LambdaMode parse_lambda_mode(const std::string& s) {
  if (s == "empirical") return LambdaMode::Empirical;
  if (s == "analytic") return LambdaMode::Analytic;
  if (s == "auto") return LambdaMode::Auto;
  throw ConfigError("lambda_mode must be empirical, analytic or auto (got '" + s + "')");
}

VarianceMode parse_variance(const std::string& s) {
  if (s == "equal") return VarianceMode::Equal;
  if (s == "per_node") return VarianceMode::PerNode;
  throw ConfigError("variance must be equal or per_node (got '" + s + "')");
}

MissDagOptions parse_fit_options(const json& j, MissDagOptions o) {
  o.var_mode = parse_variance(get_or<std::string>(j, "variance", o.var_mode == VarianceMode::Equal ? "equal" : "per_node"));
  o.l1 = get_or(j, "l1", o.l1);
  o.w_threshold = get_or(j, "w_threshold", o.w_threshold);
  o.eps = get_or(j, "eps", o.eps);
  o.max_iter = get_or(j, "max_iter", o.max_iter);
  o.gem_safeguard = get_or(j, "gem_safeguard", o.gem_safeguard);
  o.notears.accept_at_rho_max = get_or(j, "accept_at_rho_max", o.notears.accept_at_rho_max);
  if (o.l1 < 0 || o.w_threshold < 0 || o.eps <= 0 || o.max_iter < 1) throw ConfigError("invalid fit options");
  return o;
}

ScmSpec parse_scm(const json& j, std::vector<std::string>& columns) {
  reject_unknown(j, {"nodes", "edges", "index_base", "noise_variance", "columns", "random"}, "scm");
  ScmSpec s;
  if (j.contains("random")) {
    const json& r = j.at("random");
    reject_unknown(r, {"nodes", "edge_prob", "seed"}, "scm.random");
    const int d = get_or(r, "nodes", 0);
    const double p = get_or(r, "edge_prob", 0.3);
    const auto seed = get_or<std::uint64_t>(r, "seed", 0);
    if (d < 2 || p < 0 || p > 1) throw ConfigError("scm.random needs nodes >= 2 and edge_prob in [0,1]");
    // upper-triangular support; weights uniform on ±[0.5, 2]
    s.B = Matrix::Zero(d, d);
    std::uint64_t c = 0;
    for (int a = 0; a < d; ++a)
      for (int b = a + 1; b < d; ++b) {
        if (counter_uniform(seed, c++) >= p) continue;
        const double w = 0.5 + 1.5 * counter_uniform(seed, c++);
        s.B(a, b) = counter_uniform(seed, c++) < 0.5 ? -w : w;
      }
  } else {
    const int d = get_or(j, "nodes", 0);
    if (d < 1) throw ConfigError("scm.nodes must be positive");
    s.B = Matrix::Zero(d, d);
  }
  const int d = static_cast<int>(s.B.rows());
  columns = get_or(j, "columns", std::vector<std::string>{});
  if (columns.empty())
    for (int k = 1; k <= d; ++k) columns.push_back("x" + std::to_string(k));
  if (static_cast<int>(columns.size()) != d) throw ConfigError("scm.columns must name every node");
  const int base = get_or(j, "index_base", 1);
  if (j.contains("edges")) {
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 3) throw ConfigError("scm.edges entries are [parent, child, weight]");
      const int a = resolve_node(e[0], columns, base, "scm.edges");
      const int b = resolve_node(e[1], columns, base, "scm.edges");
      if (a == b) throw ConfigError("scm.edges: self-loop");
      s.B(a, b) = e[2].get<double>();
    }
  }
  if (j.contains("noise_variance") && j.at("noise_variance").is_array()) {
    const auto nv = j.at("noise_variance").get<std::vector<double>>();
    if (static_cast<int>(nv.size()) != d) throw ConfigError("scm.noise_variance must have one entry per node");
    s.noise = Eigen::Map<const Vector>(nv.data(), d);
  } else {
    s.noise = Vector::Constant(d, get_or(j, "noise_variance", 1.0));
  }
  if ((s.noise.array() <= 0).any()) throw ConfigError("noise variances must be positive");
  if (!is_dag(s.B)) throw ConfigError("scm.edges do not form a DAG");
  return s;
}

std::vector<int> parse_nodes(const json& j, const std::vector<std::string>& columns, int base, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be a list");
  std::vector<int> v;
  for (const auto& e : j) v.push_back(resolve_node(e, columns, base, where));
  std::sort(v.begin(), v.end());
  if (std::adjacent_find(v.begin(), v.end()) != v.end()) throw ConfigError(where + " lists a column twice");
  return v;
}

MechanismSpec parse_mechanism(const json& j, const std::vector<std::string>& columns) {
  reject_unknown(j,
                 {"kind", "v", "index_base", "lambda_mode", "rate", "lambda", "K", "epochs", "learning_rate", "hidden",
                  "early_stopping", "patience", "min_delta", "wem_eps", "wem_max_iter", "standardize_inputs",
                  "divergence_factor", "divergence_epochs"},
                 "adversary.mechanism");
  MechanismSpec m;
  m.kind = get_or<std::string>(j, "kind", "lamm");
  static const std::set<std::string> kinds{"localized_rs", "all_or_none_rs", "generalized_rs", "mcar", "lamm"};
  if (!kinds.count(m.kind)) throw ConfigError("unknown mechanism kind '" + m.kind + "'");
  const int base = get_or(j, "index_base", 1);
  if (j.contains("v")) m.v = parse_nodes(j.at("v"), columns, base, "adversary.mechanism.v");
  if (m.kind != "generalized_rs" && m.v.empty()) throw ConfigError("mechanism " + m.kind + " needs a nonempty v");
  m.lambda_mode = parse_lambda_mode(get_or<std::string>(j, "lambda_mode", "empirical"));
  m.mcar_rate = get_or(j, "rate", 0.0);
  if (m.mcar_rate < 0 || m.mcar_rate > 1) throw ConfigError("mcar rate must lie in [0,1]");
  auto& l = m.lamm;
  l.lambda = get_or(j, "lambda", l.lambda);
  l.K = get_or(j, "K", l.K);
  l.epochs = get_or(j, "epochs", l.epochs);
  l.learning_rate = get_or(j, "learning_rate", l.learning_rate);
  l.hidden = get_or(j, "hidden", l.hidden);
  l.early_stopping = get_or(j, "early_stopping", l.early_stopping);
  l.patience = get_or(j, "patience", l.patience);
  l.min_delta = get_or(j, "min_delta", l.min_delta);
  l.wem.eps = get_or(j, "wem_eps", l.wem.eps);
  l.wem.max_iter = get_or(j, "wem_max_iter", l.wem.max_iter);
  l.standardize_inputs = get_or(j, "standardize_inputs", l.standardize_inputs);
  l.divergence_factor = get_or(j, "divergence_factor", l.divergence_factor);
  l.divergence_epochs = get_or(j, "divergence_epochs", l.divergence_epochs);
  if (l.lambda < 0 || l.K < 1 || l.epochs < 0 || l.learning_rate < 0 || l.wem.eps <= 0)
    throw ConfigError("invalid LAMM hyperparameters");
  if (m.kind == "lamm" && static_cast<int>(m.v.size()) > kMaxPolicyV)
    throw ConfigError(fmt::format("lamm supports at most {} masked columns", kMaxPolicyV));
  return m;
}

ModelerSpec parse_modeler(const json& j) {
  reject_unknown(j, {"algorithm", "inits", "variance", "l1", "w_threshold", "eps", "max_iter", "gem_safeguard",
                     "accept_at_rho_max", "alpha"},
                 "modelers[]");
  ModelerSpec m;
  m.algorithm = get_or<std::string>(j, "algorithm", "");
  static const std::set<std::string> algs{"missdag", "mean_notears", "misspc", "mean_pc"};
  if (!algs.count(m.algorithm)) throw ConfigError("unknown modeler '" + m.algorithm + "'");
  if (m.algorithm == "missdag") {
    m.inits = get_or(j, "inits", m.inits);
    if (m.inits.empty()) throw ConfigError("missdag needs at least one init");
    for (const auto& name : m.inits) {
      try {
        (void)InitScheme::parse(name);
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    }
  } else {
    if (j.contains("inits")) throw ConfigError(m.algorithm + " takes no inits");
    m.inits = {"-"};
  }
  m.missdag = parse_fit_options(j, m.missdag);
  m.alpha = get_or(j, "alpha", m.alpha);
  if (m.alpha <= 0 || m.alpha >= 1) throw ConfigError("alpha must lie in (0,1)");
  return m;
}

std::vector<std::string> csv_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> cols;
  std::stringstream ss(line);
  for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
  return cols;
}

}  // namespace

ExperimentConfig parse_config(const json& doc_in, const std::string& profile) {
  if (!doc_in.is_object()) throw ConfigError("config must be a JSON object");
  json doc = doc_in;
  if (doc.contains("profiles")) {
    const json profiles = doc.at("profiles");
    doc.erase("profiles");
    if (!profile.empty()) {
      if (!profiles.contains(profile)) throw ConfigError("config has no profile '" + profile + "'");
      doc.merge_patch(profiles.at(profile));
    }
  }
  reject_unknown(doc,
                 {"name", "scm", "dataset", "n", "reference_fit", "target_edge", "adversary", "modelers", "replicates",
                  "base_seed", "mcar_arm", "output"},
                 "config");
  ExperimentConfig cfg;
  cfg.profile = profile;
  cfg.name = get_or<std::string>(doc, "name", cfg.name);
  if (doc.contains("scm") == doc.contains("dataset")) throw ConfigError("config needs exactly one of scm or dataset");
  if (doc.contains("scm")) {
    cfg.scm = parse_scm(doc.at("scm"), cfg.columns);
  } else {
    const json& ds = doc.at("dataset");
    if (ds.is_string()) {
      cfg.dataset = ds.get<std::string>();
    } else {
      reject_unknown(ds, {"path"}, "dataset");
      cfg.dataset = get_or<std::string>(ds, "path", "");
    }
    cfg.columns = csv_header(*cfg.dataset);
  }
  cfg.n = get_or<Index>(doc, "n", cfg.n);
  if (cfg.scm && cfg.n < 2) throw ConfigError("n must be at least 2");
  if (doc.contains("reference_fit")) {
    reject_unknown(doc.at("reference_fit"), {"variance", "l1", "w_threshold", "eps", "max_iter", "gem_safeguard", "accept_at_rho_max"},
                   "reference_fit");
    cfg.reference_fit = parse_fit_options(doc.at("reference_fit"), cfg.reference_fit);
  }

  if (!doc.contains("target_edge")) throw ConfigError("config needs target_edge");
  const json& te = doc.at("target_edge");
  reject_unknown(te, {"parent", "child", "index_base"}, "target_edge");
  const int base = get_or(te, "index_base", 1);
  if (!te.contains("parent") || !te.contains("child")) throw ConfigError("target_edge needs parent and child");
  cfg.target = {resolve_node(te.at("parent"), cfg.columns, base, "target_edge.parent"),
                resolve_node(te.at("child"), cfg.columns, base, "target_edge.child")};
  if (cfg.target.parent == cfg.target.child) throw ConfigError("target edge is a self-loop");
  if (cfg.scm && cfg.scm->B(cfg.target.parent, cfg.target.child) == 0.0)
    throw ConfigError("target edge is not in the reference graph");

  if (!doc.contains("adversary")) throw ConfigError("config needs adversary");
  const json& adv = doc.at("adversary");
  reject_unknown(adv, {"target", "mechanism"}, "adversary");
  if (adv.contains("target")) {
    const json& t = adv.at("target");
    reject_unknown(t, {"kind", "weight", "child_noise", "pairs", "index_base"}, "adversary.target");
    auto& a = cfg.adversary;
    a.kind = get_or<std::string>(t, "kind", a.kind);
    a.weight = get_or(t, "weight", a.weight);
    a.child_noise = get_or(t, "child_noise", a.child_noise);
    const int pb = get_or(t, "index_base", 1);
    if (t.contains("pairs"))
      for (const auto& p : t.at("pairs")) {
        if (!p.is_array() || p.size() != 2) throw ConfigError("adversary.target.pairs entries are [a, b]");
        a.zero_pairs.emplace_back(resolve_node(p[0], cfg.columns, pb, "adversary.target.pairs"),
                                  resolve_node(p[1], cfg.columns, pb, "adversary.target.pairs"));
      }
    if (a.kind != "edge_reweight" && a.kind != "optimal" && a.kind != "covariance_zeroing")
      throw ConfigError("unknown adversary target kind '" + a.kind + "'");
    if (a.kind == "edge_reweight" && !cfg.scm) throw ConfigError("edge_reweight needs an scm");
    if (a.kind == "covariance_zeroing" && a.zero_pairs.empty()) throw ConfigError("covariance_zeroing needs pairs");
  }
  cfg.mechanism = parse_mechanism(adv.contains("mechanism") ? adv.at("mechanism") : json::object(), cfg.columns);

  if (doc.contains("modelers")) {
    if (!doc.at("modelers").is_array()) throw ConfigError("modelers must be a list");
    for (const auto& m : doc.at("modelers")) cfg.modelers.push_back(parse_modeler(m));
  }
  cfg.replicates = get_or(doc, "replicates", cfg.replicates);
  if (cfg.replicates < 0) throw ConfigError("replicates must be nonnegative");
  cfg.base_seed = get_or<std::uint64_t>(doc, "base_seed", cfg.base_seed);
  cfg.mcar_arm = get_or(doc, "mcar_arm", cfg.mcar_arm);
  cfg.output_dir = get_or<std::string>(doc, "output", cfg.output_dir.string());
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::string& profile) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  // dataset paths are tried as given, then next to the config, then one level up
  if (doc.contains("dataset")) {
    json& ds = doc["dataset"];
    json& p = ds.is_string() ? ds : ds["path"];
    if (p.is_string()) {
      const std::filesystem::path given = p.get<std::string>();
      if (given.is_relative() && !std::filesystem::exists(given)) {
        const auto dir = path.parent_path();
        for (const auto& cand : {dir / given, dir.parent_path() / given})
          if (std::filesystem::exists(cand)) {
            p = cand.string();
            break;
          }
      }
    }
  }
  return parse_config(doc, profile);
}

// ---- setup -------------------------------------------------------------------

ExperimentSetup prepare(const ExperimentConfig& cfg) {
  ExperimentSetup s;
  const int d = static_cast<int>(cfg.columns.size());
  if (cfg.scm) {
    s.scm_p = GaussianScm(cfg.scm->B, cfg.scm->noise);
    s.data.columns = cfg.columns;
    s.data.values = sample(*s.scm_p, cfg.n, derive_seed(cfg.base_seed, {hash_name("data")}));
    s.reference = Dag::from_support(cfg.scm->B, 0.0, cfg.columns);
    s.sigma_p = covariance_of(*s.scm_p);
  } else {
    s.data = load_dataset(*cfg.dataset, true);
    if (s.data.columns != cfg.columns) throw ConfigError("dataset columns changed since the config was parsed");
    s.reference = notears_fit(s.data, cfg.reference_fit).graph;
    s.sigma_p = CovMatrix(second_moment(s.data.values));
    spdlog::info("{}: reference graph from the full data has {} edges", cfg.name, s.reference.edges().size());
  }
  const Edge t = cfg.target;
  if (!s.reference.has_edge(t.parent, t.child))
    throw ConfigError(fmt::format("target edge {} -> {} is not in the reference graph", cfg.columns[t.parent],
                                  cfg.columns[t.child]));
  s.adversarial = s.reference.without_edge(t);

  const auto& a = cfg.adversary;
  if (a.kind == "edge_reweight") {
    GaussianScm alpha = edge_reweight(*s.scm_p, t, a.weight);
    if (a.child_noise > 0) {
      Vector nv = alpha.noise_vars();
      nv(t.child) = a.child_noise;
      alpha = GaussianScm(alpha.B(), nv);
    }
    s.scm_alpha = alpha;
    s.sigma_alpha = covariance_of(alpha);
  } else if (a.kind == "optimal") {
    s.scm_alpha = optimal_adversarial_scm(s.sigma_p, s.adversarial);
    s.sigma_alpha = covariance_of(*s.scm_alpha);
  } else {
    s.sigma_alpha = covariance_zeroing(s.sigma_p, a.zero_pairs);
  }

  const auto& m = cfg.mechanism;
  const Matrix& X = s.data.values;
  if (m.kind == "localized_rs" || m.kind == "all_or_none_rs") {
    // localized masking needs the child and its reference parents inside V
    std::vector<int> need = s.reference.parents(t.child);
    need.push_back(t.child);
    for (int j : need)
      if (!std::binary_search(m.v.begin(), m.v.end(), j))
        throw ConfigError(fmt::format("V must contain '{}' for a localized mechanism", cfg.columns[j]));
    const DensityRatio r(s.sigma_p.marginal(m.v), s.sigma_alpha.marginal(m.v));
    s.lambda = choose_lambda(r, m.lambda_mode, &X, m.v);
    if (m.kind == "localized_rs")
      s.mnar = std::make_shared<LocalizedRs>(s.sigma_p, s.sigma_alpha, m.v, s.lambda);
    else
      s.mnar = std::make_shared<AllOrNoneRs>(s.sigma_p, s.sigma_alpha, m.v, s.lambda);
  } else if (m.kind == "generalized_rs") {
    s.mnar = GeneralizedRs::calibrated(s.sigma_p, s.sigma_alpha, m.lambda_mode, &X);
  } else if (m.kind == "mcar") {
    // independent per-entry masking inside V
    const int mv = static_cast<int>(m.v.size());
    std::vector<ObservationPattern> support;
    Vector probs(1 << mv);
    for (int k = 0; k < (1 << mv); ++k) {
      support.push_back(pattern_from_code(static_cast<std::uint64_t>(k), m.v, d));
      const int masked = mv - std::popcount(static_cast<unsigned>(k));
      probs(k) = std::pow(m.mcar_rate, masked) * std::pow(1.0 - m.mcar_rate, mv - masked);
    }
    s.mnar = std::make_shared<Mcar>(d, std::move(support), probs);
  } else {
    LammConfig lc = m.lamm;
    lc.sigma_alpha = s.sigma_alpha;
    lc.v = m.v;
    s.lamm = lamm_train(lc, X, derive_seed(cfg.base_seed, {hash_name("lamm")}));
    spdlog::info("{}: LAMM trained for {} epochs, final loss {:.4g}, masked fraction {:.3f}", cfg.name,
                 s.lamm->epochs_run, s.lamm->loss_trace.empty() ? 0.0 : s.lamm->loss_trace.back(),
                 s.lamm->rate_trace.empty() ? 0.0 : s.lamm->rate_trace.back());
    s.mnar = std::make_shared<PolicyMechanism>(s.lamm->policy);
  }
  s.mcar = mcar_from_mnar(*s.mnar, X);
  return s;
}

std::uint64_t replicate_seed(const ExperimentConfig& cfg, int r) { return cfg.base_seed + static_cast<std::uint64_t>(r); }

MaskedDataset draw_masks(const ExperimentConfig& cfg, const ExperimentSetup& setup, int r, const std::string& arm) {
  const std::uint64_t rs = replicate_seed(cfg, r);
  if (arm == "MNAR") return apply_mechanism(setup.data, *setup.mnar, derive_seed(rs, {hash_name("mnar")}));
  if (arm == "MCAR") return apply_mechanism(setup.data, *setup.mcar, derive_seed(rs, {hash_name("mcar")}));
  throw PreconditionError("arm must be MNAR or MCAR");
}

// ---- cells -------------------------------------------------------------------

CellRecord run_cell(const ModelerSpec& m, const std::string& init, const MaskedDataset& mds,
                    const ExperimentSetup& setup, const std::vector<int>& v, Edge target, std::uint64_t seed) {
  CellRecord rec;
  rec.modeler = m.algorithm;
  rec.init = init;
  try {
    rec.rate_overall = missingness_rates(mds).overall;
    rec.rate_masked = v.empty() ? rec.rate_overall : masked_fraction(mds, v);
    if (m.algorithm == "missdag" || m.algorithm == "mean_notears") {
      const FitResult fit = m.algorithm == "missdag"
                                ? missdag(mds, InitScheme::parse(init, seed), m.missdag, setup.sigma_p)
                                : mean_impute_notears(mds, m.missdag);
      rec.hd = hamming_distance(fit.graph, setup.reference);
      rec.hd_alpha = hamming_distance(fit.graph, setup.adversarial);
      rec.success = attack_success(fit.graph, target);
      rec.kl_alpha = gaussian_kl(fit.sigma_hat, setup.sigma_alpha);
      rec.kl_p = gaussian_kl(fit.sigma_hat, setup.sigma_p);
      rec.iterations = fit.iterations;
    } else {
      PcOptions po;
      po.alpha = m.alpha;
      PcResult pc;
      if (m.algorithm == "misspc") {
        po.deletion = Deletion::Testwise;
        pc = pc_fisherz(mds, po);
      } else {
        pc = pc_fisherz(mean_impute(mds), po);
      }
      rec.hd = hamming_distance(pc.cpdag, setup.reference);
      rec.hd_alpha = hamming_distance(pc.cpdag, setup.adversarial);
      rec.success = attack_success(pc.cpdag, target);
      rec.iterations = pc.tests_run;
    }
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.error = e.what();
    rec.hd = rec.hd_alpha = rec.success = -1;
    rec.kl_alpha = rec.kl_p = std::numeric_limits<double>::quiet_NaN();
  }
  return rec;
}

AttackReport run_experiment(const ExperimentConfig& cfg, int threads) {
  if (cfg.replicates == 0) {
    AttackReport rep;
    rep.name = cfg.name;
    rep.mechanism = cfg.mechanism.kind;
    rep.columns = cfg.columns;
    for (int j : cfg.mechanism.v) rep.v.push_back(cfg.columns[static_cast<std::size_t>(j)]);
    rep.target = cfg.target;
    return rep;
  }
  return run_experiment(cfg, prepare(cfg), threads);
}

AttackReport run_experiment(const ExperimentConfig& cfg, const ExperimentSetup& setup, int threads) {
  AttackReport rep;
  rep.name = cfg.name;
  rep.mechanism = cfg.mechanism.kind;
  rep.columns = cfg.columns;
  for (int j : cfg.mechanism.v) rep.v.push_back(cfg.columns[static_cast<std::size_t>(j)]);
  rep.target = cfg.target;
  rep.lambda = setup.lambda;
  if (setup.lamm) {
    rep.lamm_epochs = setup.lamm->epochs_run;
    if (!setup.lamm->loss_trace.empty()) rep.lamm_loss = setup.lamm->loss_trace.back();
  }
  if (cfg.replicates == 0) return rep;

  std::vector<std::string> arms{"MNAR"};
  if (cfg.mcar_arm) arms.push_back("MCAR");
  const int A = static_cast<int>(arms.size());
  const int R = cfg.replicates;

  // masks first: apply_mechanism has its own row-parallel loop
  std::vector<MaskedDataset> masks(static_cast<std::size_t>(R * A));
  for (int r = 0; r < R; ++r)
    for (int a = 0; a < A; ++a) masks[static_cast<std::size_t>(r * A + a)] = draw_masks(cfg, setup, r, arms[static_cast<std::size_t>(a)]);

  struct Task {
    int r, a;
    const ModelerSpec* m;
    std::string init;
  };
  std::vector<Task> tasks;
  for (int r = 0; r < R; ++r)
    for (int a = 0; a < A; ++a)
      for (const auto& m : cfg.modelers)
        for (const auto& init : m.inits) tasks.push_back({r, a, &m, init});

  rep.records.resize(tasks.size());
  const int T = static_cast<int>(tasks.size());
  auto run = [&](int i) {
    const Task& t = tasks[static_cast<std::size_t>(i)];
    const std::uint64_t seed = derive_seed(replicate_seed(cfg, t.r), {hash_name("init"), hash_name(t.init)});
    CellRecord rec = run_cell(*t.m, t.init, masks[static_cast<std::size_t>(t.r * A + t.a)], setup, cfg.mechanism.v,
                              cfg.target, seed);
    rec.replicate = t.r;
    rec.arm = arms[static_cast<std::size_t>(t.a)];
    if (rec.failed)
      spdlog::warn("{} replicate {} {} {}/{} failed: {}", cfg.name, t.r, rec.arm, rec.modeler, rec.init, rec.error);
    rep.records[static_cast<std::size_t>(i)] = std::move(rec);
  };
  if (threads == 1) {
    for (int i = 0; i < T; ++i) run(i);
  } else {
    const int nt = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(nt)
    for (int i = 0; i < T; ++i) run(i);
  }
  return rep;
}

// ---- report ------------------------------------------------------------------

std::vector<AggregateRow> AttackReport::aggregate() const {
  std::vector<AggregateRow> rows;
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> index;
  // (modeler, init) in first-seen order, MNAR before MCAR
  std::vector<std::pair<std::string, std::string>> cells;
  std::set<std::pair<std::string, std::string>> seen;
  std::vector<std::string> arms;
  for (const auto& r : records) {
    if (seen.insert({r.modeler, r.init}).second) cells.emplace_back(r.modeler, r.init);
    if (std::find(arms.begin(), arms.end(), r.arm) == arms.end()) arms.push_back(r.arm);
  }
  std::sort(arms.begin(), arms.end(), [](const std::string& a, const std::string& b) {
    return (a == "MNAR" ? 0 : 1) < (b == "MNAR" ? 0 : 1) || ((a == "MNAR") == (b == "MNAR") && a < b);
  });
  for (const auto& [m, i] : cells)
    for (const auto& arm : arms) {
      index[{m, i, arm}] = rows.size();
      rows.push_back({arm, m, i});
    }
  for (const auto& r : records) {
    auto& row = rows[index.at({r.modeler, r.init, r.arm})];
    if (r.failed) {
      ++row.failed;
      continue;
    }
    ++row.count;
    row.hd += r.hd;
    row.hd_alpha += r.hd_alpha;
    row.success += r.success;
    row.kl_alpha += r.kl_alpha;
    row.kl_p += r.kl_p;
    row.rate_overall += r.rate_overall;
    row.rate_masked += r.rate_masked;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto& row : rows) {
    const double n = row.count;
    for (double* f : {&row.hd, &row.hd_alpha, &row.success, &row.kl_alpha, &row.kl_p, &row.rate_overall, &row.rate_masked})
      *f = row.count ? *f / n : nan;
  }
  return rows;
}

bool AttackReport::all_failed() const {
  return !records.empty() && std::all_of(records.begin(), records.end(), [](const CellRecord& r) { return r.failed; });
}

namespace {

std::string num(double x) { return std::isnan(x) ? "nan" : fmt::format("{:.17g}", x); }

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out + "\"";
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string fixed(double x, int digits) { return std::isnan(x) ? "-" : fmt::format("{:.{}f}", x, digits); }

std::string arm_label(const AttackReport& rep, const std::string& arm) {
  return arm == "MNAR" ? fmt::format("MNAR ({})", rep.mechanism) : arm;
}

std::string render_table(const AttackReport& rep) {
  const auto rows = rep.aggregate();
  std::vector<std::pair<std::string, std::string>> cells;
  std::vector<std::string> arms;
  for (const auto& r : rows) {
    if (cells.empty() || cells.back() != std::pair{r.modeler, r.init}) cells.emplace_back(r.modeler, r.init);
    if (std::find(arms.begin(), arms.end(), r.arm) == arms.end()) arms.push_back(r.arm);
  }
  auto find = [&](const std::string& m, const std::string& i, const std::string& a) -> const AggregateRow* {
    for (const auto& r : rows)
      if (r.modeler == m && r.init == i && r.arm == a) return &r;
    return nullptr;
  };
  std::string t = fmt::format("# {}\n\nTarget edge: {} -> {}. Masked columns: ", rep.name,
                              rep.columns.at(static_cast<std::size_t>(rep.target.parent)),
                              rep.columns.at(static_cast<std::size_t>(rep.target.child)));
  for (std::size_t k = 0; k < rep.v.size(); ++k) t += (k ? ", " : "") + rep.v[k];
  t += ".\n\n";
  auto header = [&](const std::vector<std::string>& metrics) {
    t += "| Modeler | Init |";
    for (const auto& m : metrics)
      for (const auto& a : arms) t += fmt::format(" {} {} |", arm_label(rep, a), m);
    t += "\n|---|---|";
    for (std::size_t k = 0; k < metrics.size() * arms.size(); ++k) t += "---:|";
    t += "\n";
  };
  header({"HD(G,Gp)", "Success"});
  for (const auto& [m, i] : cells) {
    t += fmt::format("| {} | {} |", m, i);
    for (const auto& a : arms) {
      const auto* r = find(m, i, a);
      t += " " + (r ? fixed(r->hd, 2) : "-") + " |";
    }
    for (const auto& a : arms) {
      const auto* r = find(m, i, a);
      t += " " + (r ? fixed(r->success, 2) : "-") + " |";
    }
    t += "\n";
  }
  t += "\n";
  header({"KL(fit \\|\\| alpha)", "KL(fit \\|\\| p)", "masked(V)", "failed"});
  for (const auto& [m, i] : cells) {
    t += fmt::format("| {} | {} |", m, i);
    for (int metric = 0; metric < 4; ++metric)
      for (const auto& a : arms) {
        const auto* r = find(m, i, a);
        std::string v = "-";
        if (r) {
          if (metric == 0) v = fixed(r->kl_alpha, 4);
          if (metric == 1) v = fixed(r->kl_p, 4);
          if (metric == 2) v = fixed(r->rate_masked, 3);
          if (metric == 3) v = std::to_string(r->failed);
        }
        t += " " + v + " |";
      }
    t += "\n";
  }
  return t;
}

}  // namespace

void emit_report(const AttackReport& rep, const std::filesystem::path& dir, const std::vector<std::string>& formats) {
  static const std::set<std::string> known{"records", "aggregate", "table", "plot", "report"};
  for (const auto& f : formats)
    if (!known.count(f)) throw PreconditionError("unknown report format '" + f + "'");
  auto want = [&](const char* f) { return formats.empty() || std::find(formats.begin(), formats.end(), f) != formats.end(); };
  std::filesystem::create_directories(dir);

  if (want("report")) {
    json meta;
    meta["name"] = rep.name;
    meta["mechanism"] = rep.mechanism;
    meta["columns"] = rep.columns;
    meta["v"] = rep.v;
    meta["target_edge"] = {{"parent", rep.columns.at(static_cast<std::size_t>(rep.target.parent))},
                           {"child", rep.columns.at(static_cast<std::size_t>(rep.target.child))}};
    meta["lambda"] = std::isnan(rep.lambda) ? json(nullptr) : json(rep.lambda);
    meta["lamm_epochs"] = rep.lamm_epochs;
    meta["lamm_loss"] = std::isnan(rep.lamm_loss) ? json(nullptr) : json(rep.lamm_loss);
    write_file(dir / "report.json", meta.dump(2) + "\n");
  }
  if (want("records")) {
    std::string s = "replicate,arm,modeler,init,failed,hd,hd_alpha,success,kl_alpha,kl_p,rate_overall,rate_masked,iterations,error\n";
    for (const auto& r : rep.records)
      s += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.replicate, r.arm, r.modeler, r.init,
                       r.failed ? 1 : 0, r.hd, r.hd_alpha, r.success, num(r.kl_alpha), num(r.kl_p), num(r.rate_overall),
                       num(r.rate_masked), r.iterations, csv_quote(r.error));
    write_file(dir / "records.csv", s);
  }
  if (want("aggregate")) {
    std::string s = "arm,modeler,init,count,failed,hd,hd_alpha,success,kl_alpha,kl_p,rate_overall,rate_masked\n";
    for (const auto& r : rep.aggregate())
      s += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", r.arm, r.modeler, r.init, r.count, r.failed, num(r.hd),
                       num(r.hd_alpha), num(r.success), num(r.kl_alpha), num(r.kl_p), num(r.rate_overall),
                       num(r.rate_masked));
    write_file(dir / "aggregate.csv", s);
  }
  if (want("table")) write_file(dir / "table.md", render_table(rep));
  if (want("plot")) {
    std::string s = "metric,modeler,init,mechanism,value,replicate\n";
    for (const auto& r : rep.records) {
      if (r.failed) continue;
      const std::pair<const char*, double> metrics[] = {
          {"hd", r.hd},         {"hd_alpha", r.hd_alpha},         {"success", r.success},
          {"kl_alpha", r.kl_alpha}, {"kl_p", r.kl_p}, {"rate_overall", r.rate_overall}, {"rate_masked", r.rate_masked}};
      for (const auto& [name, value] : metrics)
        s += fmt::format("{},{},{},{},{},{}\n", name, r.modeler, r.init, r.arm, num(value), r.replicate);
    }
    write_file(dir / "plot_long.csv", s);
  }
}

AttackReport load_report(const std::filesystem::path& dir) {
  AttackReport rep;
  std::ifstream mj(dir / "report.json");
  if (!mj) throw ParseError("cannot open " + (dir / "report.json").string());
  json meta;
  try {
    meta = json::parse(mj);
    rep.name = meta.at("name").get<std::string>();
    rep.mechanism = meta.at("mechanism").get<std::string>();
    rep.columns = meta.at("columns").get<std::vector<std::string>>();
    rep.v = meta.at("v").get<std::vector<std::string>>();
    rep.target = resolve_edge(rep.columns, meta.at("target_edge").at("parent").get<std::string>(),
                              meta.at("target_edge").at("child").get<std::string>());
    if (!meta.at("lambda").is_null()) rep.lambda = meta.at("lambda").get<double>();
    rep.lamm_epochs = meta.at("lamm_epochs").get<int>();
    if (!meta.at("lamm_loss").is_null()) rep.lamm_loss = meta.at("lamm_loss").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("report.json: ") + e.what());
  }

  std::ifstream in(dir / "records.csv");
  if (!in) throw ParseError("cannot open " + (dir / "records.csv").string());
  std::string line;
  std::getline(in, line);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    for (int k = 0; k < 13; ++k) {
      const auto c = line.find(',', pos);
      if (c == std::string::npos) throw ParseError(fmt::format("records.csv line {}: too few fields", lineno));
      f.push_back(line.substr(pos, c - pos));
      pos = c + 1;
    }
    std::string err = line.substr(pos);
    if (err.size() < 2 || err.front() != '"' || err.back() != '"')
      throw ParseError(fmt::format("records.csv line {}: malformed error field", lineno));
    err = err.substr(1, err.size() - 2);
    for (std::size_t k = err.find("\"\""); k != std::string::npos; k = err.find("\"\"", k + 1)) err.erase(k, 1);
    try {
      CellRecord r;
      r.replicate = std::stoi(f[0]);
      r.arm = f[1];
      r.modeler = f[2];
      r.init = f[3];
      r.failed = f[4] == "1";
      r.hd = std::stoi(f[5]);
      r.hd_alpha = std::stoi(f[6]);
      r.success = std::stoi(f[7]);
      r.kl_alpha = std::stod(f[8]);
      r.kl_p = std::stod(f[9]);
      r.rate_overall = std::stod(f[10]);
      r.rate_masked = std::stod(f[11]);
      r.iterations = std::stoi(f[12]);
      r.error = err;
      rep.records.push_back(std::move(r));
    } catch (const std::exception&) {
      throw ParseError(fmt::format("records.csv line {}: bad number", lineno));
    }
  }
  return rep;
}

}  // namespace advmiss
