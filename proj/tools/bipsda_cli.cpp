// bipsda: study runner and post-processing front end over the C API.

#include "bipsda/bipsda.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConvergence = 2;
constexpr int kExitConfig = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string scale;
  std::string out;
};

int exit_code(bipsda_status s) {
  switch (s) {
    case BIPSDA_OK: return kExitOk;
    case BIPSDA_ERR_CONVERGENCE_NOT_REACHED: return kExitConvergence;
    case BIPSDA_ERR_CONFIG: return kExitConfig;
    default: return kExitFailure;
  }
}

int report_error(bipsda_status s) {
  std::cerr << "error (" << bipsda_status_name(s) << "): " << bipsda_last_error() << "\n";
  return exit_code(s);
}

struct ConfigHandle {
  bipsda_config* p = nullptr;
  ~ConfigHandle() { bipsda_config_free(p); }
};

struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { bipsda_string_free(p); }
};

// Config from --config or the named study's defaults, then global overrides.
bipsda_status make_config(const Globals& g, const std::string& study, ConfigHandle& cfg) {
  bipsda_status s;
  if (!g.config.empty()) {
    s = bipsda_config_load(g.config.c_str(), &cfg.p);
  } else {
    s = bipsda_config_default(study.empty() ? "inpainting_low" : study.c_str(), &cfg.p);
  }
  if (s != BIPSDA_OK) return s;
  if (g.seed && (s = bipsda_config_set_seed(cfg.p, *g.seed)) != BIPSDA_OK) return s;
  if (!g.scale.empty() && (s = bipsda_config_set_scale(cfg.p, g.scale.c_str())) != BIPSDA_OK) return s;
  if (!g.out.empty() && (s = bipsda_config_set_output_dir(cfg.p, g.out.c_str())) != BIPSDA_OK) return s;
  return BIPSDA_OK;
}

json metrics_json(const bipsda_metrics& m) {
  return {{"mean_error", m.mean_error}, {"variance_error", m.variance_error}, {"cmd", m.cmd},
          {"mmd", m.mmd},               {"alpha", m.alpha},                   {"base_bandwidth", m.base_bandwidth}};
}

void log_line(const char* msg, void*) { std::cerr << msg << "\n"; }

int cmd_run(const Globals& g, const std::string& study, const std::vector<std::string>& variants, bool set_variants,
            int workers) {
  ConfigHandle cfg;
  bipsda_status s = make_config(g, study, cfg);
  if (s != BIPSDA_OK) return report_error(s);
  if (set_variants) {
    std::vector<const char*> labels;
    for (const auto& v : variants) labels.push_back(v.c_str());
    if ((s = bipsda_config_set_variants(cfg.p, labels.data(), labels.size())) != BIPSDA_OK) return report_error(s);
  }
  if (workers >= 0 && (s = bipsda_config_set_workers(cfg.p, workers)) != BIPSDA_OK) return report_error(s);

  bipsda_summary* summary = nullptr;
  s = bipsda_study_run(cfg.p, log_line, nullptr, &summary);
  if (s != BIPSDA_OK) return report_error(s);
  OwnedString cfg_json;
  bipsda_config_to_json(cfg.p, &cfg_json.p);
  const fs::path dir = json::parse(cfg_json.p).at("output_dir").get<std::string>();
  OwnedString text;
  if (bipsda_report_render(dir.string().c_str(), &text.p) == BIPSDA_OK) std::cout << text.p;
  const std::size_t failed = bipsda_summary_failed_trials(summary);
  bipsda_summary_free(summary);
  if (failed > 0) {
    std::cerr << failed << " trial(s) dropped: reference did not converge (see summary.json)\n";
    return kExitConvergence;
  }
  return kExitOk;
}

int cmd_reference(const Globals& g, const std::string& study, const std::vector<int>& trials) {
  ConfigHandle cfg;
  bipsda_status s = make_config(g, study, cfg);
  if (s != BIPSDA_OK) return report_error(s);
  OwnedString cfg_json;
  bipsda_config_to_json(cfg.p, &cfg_json.p);
  const fs::path root = fs::path(json::parse(cfg_json.p).at("output_dir").get<std::string>()) / "references";
  int code = kExitOk;
  for (int t : trials) {
    char name[32];
    std::snprintf(name, sizeof(name), "trial_%03d", t);
    double rhat = 0.0, ess = 0.0;
    s = bipsda_reference_generate(cfg.p, t, (root / name).string().c_str(), &rhat, &ess);
    std::cout << name << ": max_rhat " << rhat << " min_ess " << ess
              << (s == BIPSDA_OK ? " ok" : " FAILED") << "\n";
    if (s != BIPSDA_OK) {
      const int c = report_error(s);
      if (code == kExitOk || c == kExitConvergence) code = c;
    }
  }
  return code;
}

int cmd_metrics(const Globals& g, const std::string& batch, const std::string& reference,
                const std::string& results, double alpha, std::size_t subsample) {
  if (!results.empty()) {
    // Re-score every stored batch of a finished study.
    const fs::path dir = results;
    double a = alpha;
    if (a <= 0.0) {
      std::ifstream in(dir / "summary.json");
      if (!in) {
        std::cerr << "error: no summary.json in " << dir << "\n";
        return kExitFailure;
      }
      a = json::parse(in).value("alpha", 0.0);
    }
    json rows = json::array();
    std::vector<fs::path> trial_dirs;
    if (fs::exists(dir / "samples"))
      for (const auto& e : fs::directory_iterator(dir / "samples"))
        if (e.is_directory()) trial_dirs.push_back(e.path());
    std::sort(trial_dirs.begin(), trial_dirs.end());
    for (const auto& td : trial_dirs) {
      const fs::path ref = td / "reference.csv";
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(td))
        if (e.path().extension() == ".csv" && e.path() != ref) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        bipsda_metrics m{};
        const bipsda_status s =
            bipsda_metrics_files(f.string().c_str(), ref.string().c_str(), a, subsample, &m);
        if (s != BIPSDA_OK) return report_error(s);
        json row = metrics_json(m);
        row["trial"] = td.filename().string();
        row["method"] = f.stem().string();
        rows.push_back(row);
      }
    }
    const std::string text = rows.dump(2);
    if (!g.out.empty()) {
      fs::create_directories(g.out);
      std::ofstream(fs::path(g.out) / "rescored.json") << text << "\n";
    }
    std::cout << text << "\n";
    return kExitOk;
  }
  if (batch.empty() || reference.empty()) {
    std::cerr << "error: metrics needs --batch and --reference, or --results\n";
    return kExitConfig;
  }
  bipsda_metrics m{};
  const bipsda_status s = bipsda_metrics_files(batch.c_str(), reference.c_str(), alpha, subsample, &m);
  if (s != BIPSDA_OK) return report_error(s);
  std::cout << metrics_json(m).dump(2) << "\n";
  return kExitOk;
}

int cmd_plot(const Globals& g, const std::string& study, const std::string& batch, const std::string& reference,
             const std::string& mode, int i, int j, const std::string& stem) {
  std::string st = study;
  if (st.empty() && !g.config.empty()) {
    ConfigHandle cfg;
    const bipsda_status s = make_config(g, "", cfg);
    if (s != BIPSDA_OK) return report_error(s);
    OwnedString cfg_json;
    bipsda_config_to_json(cfg.p, &cfg_json.p);
    st = json::parse(cfg_json.p).at("study").get<std::string>();
  }
  if (st.empty()) st = "inpainting_low";
  const std::string out = g.out.empty() ? "." : g.out;
  const bipsda_status s = bipsda_plot_export(st.c_str(), batch.c_str(), reference.c_str(), mode.c_str(), i, j,
                                             out.c_str(), stem.c_str());
  if (s != BIPSDA_OK) return report_error(s);
  std::cout << (fs::path(out) / (stem + ".svg")).string() << "\n";
  return kExitOk;
}

int cmd_report(const Globals& g, const std::string& results) {
  OwnedString text;
  const bipsda_status s = bipsda_report_render(results.c_str(), &text.p);
  if (s != BIPSDA_OK) return report_error(s);
  if (!g.out.empty()) {
    fs::create_directories(g.out);
    std::ofstream(fs::path(g.out) / "report.md") << text.p;
  }
  std::cout << text.p;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-annealing posterior sampling studies"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(bipsda_version()));

  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "Study config JSON")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Master seed");
  app.add_option("--scale", g.scale, "desk, paper or a multiplier on trials and samples");
  app.add_option("--out", g.out, "Output directory");

  std::string study;
  std::vector<std::string> variants;
  int workers = -1;
  auto* run = app.add_subcommand("run", "Run a study");
  run->add_option("--study", study, "Study name when no --config is given");
  auto* variants_opt = run->add_option("--variants", variants, "Variant labels")->delimiter(',');
  run->add_option("--workers", workers, "Worker threads (0: BIPSDA_WORKERS or all cores)");

  std::vector<int> trials{0};
  auto* ref = app.add_subcommand("reference", "Generate and gate reference sets");
  ref->add_option("--study", study, "Study name when no --config is given");
  ref->add_option("--trial", trials, "Trial indices")->delimiter(',');

  std::string batch, reference, results;
  double alpha = 0.0;
  std::size_t subsample = 10000;
  auto* met = app.add_subcommand("metrics", "Score batches against a reference");
  met->add_option("--batch", batch, "Batch CSV");
  met->add_option("--reference", reference, "Reference CSV");
  met->add_option("--results", results, "Study results directory to re-score");
  met->add_option("--alpha", alpha, "CMD interval length (default: from the study or the reference)");
  met->add_option("--mmd-subsample", subsample, "MMD subsample size (0: all rows)");

  std::string mode = "singular_pair", stem = "projection";
  int pi = 0, pj = 1;
  auto* plot = app.add_subcommand("plot", "Project a batch and its reference to 2-D");
  plot->add_option("--study", study, "Study whose operator defines the projection");
  plot->add_option("--batch", batch, "Batch CSV")->required();
  plot->add_option("--reference", reference, "Reference CSV")->required();
  plot->add_option("--mode", mode, "coordinate_pair or singular_pair");
  plot->add_option("-i", pi, "First coordinate");
  plot->add_option("-j", pj, "Second coordinate");
  plot->add_option("--stem", stem, "Output file stem");

  auto* rep = app.add_subcommand("report", "Render a study's summary table");
  rep->add_option("--results", results, "Study results directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  if (*seed_opt) g.seed = seed;

  if (*run) return cmd_run(g, study, variants, variants_opt->count() > 0, workers);
  if (*ref) return cmd_reference(g, study, trials);
  if (*met) return cmd_metrics(g, batch, reference, results, alpha, subsample);
  if (*plot) return cmd_plot(g, study, batch, reference, mode, pi, pj, stem);
  if (*rep) return cmd_report(g, results);
  return kExitFailure;
}
