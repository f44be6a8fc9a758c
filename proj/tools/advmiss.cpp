// advmiss: config-driven adversarial-missingness experiments.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "advmiss/errors.hpp"
#include "advmiss/experiment.hpp"
#include "advmiss/metrics.hpp"
#include "advmiss/pc.hpp"

namespace fs = std::filesystem;
using namespace advmiss;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitAllFailed = 3;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string profile = "fast";
  std::string out;
  int threads = 0;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_config(c.config, c.profile);
  if (c.seed_set) cfg.base_seed = c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

json edges_json(const Dag& g, const std::vector<std::string>& cols) {
  json e = json::array();
  for (const auto& ed : g.edges()) e.push_back({cols[static_cast<std::size_t>(ed.parent)], cols[static_cast<std::size_t>(ed.child)]});
  return e;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

int cmd_simulate(const Common& c) {
  const auto cfg = load(c);
  const auto setup = prepare(cfg);
  fs::create_directories(cfg.output_dir);
  save_dataset(setup.data, cfg.output_dir / "data.csv");
  spdlog::info("wrote {} rows to {}", setup.data.rows(), (cfg.output_dir / "data.csv").string());
  return 0;
}

int cmd_adversary(const Common& c) {
  const auto cfg = load(c);
  const auto setup = prepare(cfg);
  fs::create_directories(cfg.output_dir);
  json j;
  j["columns"] = cfg.columns;
  j["reference_edges"] = edges_json(setup.reference, cfg.columns);
  j["adversarial_edges"] = edges_json(setup.adversarial, cfg.columns);
  j["sigma_p"] = matrix_json(setup.sigma_p.matrix());
  j["sigma_alpha"] = matrix_json(setup.sigma_alpha.matrix());
  j["kl_p_alpha"] = gaussian_kl(setup.sigma_p, setup.sigma_alpha);
  if (setup.scm_alpha) {
    j["b_alpha"] = matrix_json(setup.scm_alpha->B());
    j["noise_alpha"] = std::vector<double>(setup.scm_alpha->noise_vars().data(),
                                           setup.scm_alpha->noise_vars().data() + setup.scm_alpha->dim());
  }
  j["mechanism"] = setup.mnar->kind();
  std::vector<std::string> v;
  for (int k : cfg.mechanism.v) v.push_back(cfg.columns[static_cast<std::size_t>(k)]);
  j["v"] = v;
  if (!std::isnan(setup.lambda)) j["lambda"] = setup.lambda;
  j["expected_masked_fraction"] = expected_missingness_rate(*setup.mnar, RateMode::MonteCarlo, &setup.data.values).value;
  if (setup.lamm) {
    setup.lamm->policy.save(cfg.output_dir / "policy.txt", cfg.columns);
    j["lamm_loss_trace"] = setup.lamm->loss_trace;
    j["lamm_rate_trace"] = setup.lamm->rate_trace;
  }
  write_json(cfg.output_dir / "adversary.json", j);
  return 0;
}

int cmd_mask(const Common& c, int replicate, const std::string& arm) {
  const auto cfg = load(c);
  const auto setup = prepare(cfg);
  fs::create_directories(cfg.output_dir);
  const auto mds = draw_masks(cfg, setup, replicate, arm);
  const auto path = cfg.output_dir / ("masked_" + arm + "_" + std::to_string(replicate) + ".csv");
  save_masked(mds, path);
  spdlog::info("wrote {} (masked fraction {:.4f})", path.string(), missingness_rates(mds).overall);
  return 0;
}

int cmd_fit(const Common& c, const std::string& input, const std::string& modeler, const std::string& init) {
  const auto cfg = load(c);
  ModelerSpec spec;
  bool found = false;
  for (const auto& m : cfg.modelers)
    if (m.algorithm == modeler) {
      spec = m;
      found = true;
    }
  if (!found) {
    spec.algorithm = modeler;
    if (modeler != "missdag" && modeler != "mean_notears" && modeler != "misspc" && modeler != "mean_pc")
      throw ConfigError("unknown modeler '" + modeler + "'");
  }
  // the reference graph and θα come from the config; the masks from the input file
  const auto setup = prepare(cfg);
  const auto mds = load_masked(input);
  if (mds.columns != cfg.columns) throw ConfigError("masked file columns do not match the config");
  const std::string cell_init = modeler == "missdag" ? init : "-";
  const auto rec = run_cell(spec, cell_init, mds, setup, cfg.mechanism.v, cfg.target, cfg.base_seed);
  json j;
  j["modeler"] = rec.modeler;
  j["init"] = rec.init;
  j["failed"] = rec.failed;
  if (rec.failed) j["error"] = rec.error;
  j["hd"] = rec.hd;
  j["hd_alpha"] = rec.hd_alpha;
  j["success"] = rec.success;
  if (!std::isnan(rec.kl_alpha)) j["kl_alpha"] = rec.kl_alpha;
  if (!std::isnan(rec.kl_p)) j["kl_p"] = rec.kl_p;
  j["rate_overall"] = rec.rate_overall;
  j["rate_masked"] = rec.rate_masked;
  fs::create_directories(cfg.output_dir);
  write_json(cfg.output_dir / "fit.json", j);
  std::cout << j.dump(2) << "\n";
  return rec.failed ? kExitAllFailed : 0;
}

int cmd_attack(const Common& c) {
  const auto cfg = load(c);
  const auto rep = run_experiment(cfg, c.threads);
  emit_report(rep, cfg.output_dir);
  std::ifstream table(cfg.output_dir / "table.md");
  std::cout << table.rdbuf();
  if (rep.all_failed()) {
    spdlog::error("every modeler cell failed");
    return kExitAllFailed;
  }
  return 0;
}

int cmd_report(const std::string& dir, const std::string& out) {
  const auto rep = load_report(dir);
  emit_report(rep, out.empty() ? fs::path(dir) : fs::path(out));
  return rep.all_failed() ? kExitAllFailed : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial missingness attacks on causal structure learning"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  Common c;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "override the base seed")->each([&](const std::string&) { c.seed_set = true; });
    sub->add_option("--profile", c.profile, "fast|full")->check(CLI::IsMember({"fast", "full"}));
    sub->add_option("--out", c.out, "output directory");
  };

  auto* simulate = app.add_subcommand("simulate", "write the experiment's complete data to CSV");
  add_common(simulate);
  auto* adversary = app.add_subcommand("adversary", "build the adversarial model and mechanism");
  add_common(adversary);
  auto* mask = app.add_subcommand("mask", "apply the mechanism for one replicate");
  add_common(mask);
  int replicate = 0;
  std::string arm = "MNAR";
  mask->add_option("--replicate", replicate, "replicate index")->check(CLI::NonNegativeNumber);
  mask->add_option("--arm", arm, "MNAR|MCAR")->check(CLI::IsMember({"MNAR", "MCAR"}));
  auto* fit = app.add_subcommand("fit", "run one modeler on a masked CSV");
  add_common(fit);
  std::string input, modeler = "missdag", init = "emp_diag";
  fit->add_option("--input", input, "masked CSV from `mask`")->required()->check(CLI::ExistingFile);
  fit->add_option("--modeler", modeler, "missdag|mean_notears|misspc|mean_pc");
  fit->add_option("--init", init, "missdag init: emp_diag|identity|true|random|iw");
  auto* attack = app.add_subcommand("attack", "full pipeline: adversary, replicates, every modeler cell, report");
  add_common(attack);
  attack->add_option("--threads", c.threads, "worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
  auto* report = app.add_subcommand("report", "re-render tables and plot data from a report directory");
  std::string report_dir, report_out;
  report->add_option("dir", report_dir, "directory holding report.json and records.csv")->required();
  report->add_option("--out", report_out, "output directory (default: same)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*simulate) return cmd_simulate(c);
    if (*adversary) return cmd_adversary(c);
    if (*mask) return cmd_mask(c, replicate, arm);
    if (*fit) return cmd_fit(c, input, modeler, init);
    if (*attack) return cmd_attack(c);
    if (*report) return cmd_report(report_dir, report_out);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return EXIT_FAILURE;
  }
  return 0;
}
