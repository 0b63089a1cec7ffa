#include "bipsda/harness/study.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace bipsda {

using io::json;

const char* to_string(StudyKind s) {
  switch (s) {
    case StudyKind::kInpaintingLow: return "inpainting_low";
    case StudyKind::kInpaintingHigh: return "inpainting_high";
    case StudyKind::kXray: return "xray";
    case StudyKind::kPhaseRetrieval: return "phase_retrieval";
  }
  return "unknown";
}

StudyKind study_kind_from_string(const std::string& s) {
  if (s == "inpainting_low") return StudyKind::kInpaintingLow;
  if (s == "inpainting_high") return StudyKind::kInpaintingHigh;
  if (s == "xray") return StudyKind::kXray;
  if (s == "phase_retrieval") return StudyKind::kPhaseRetrieval;
  fail(ErrorCode::kConfigError, "unknown study '" + s + "'");
}

int StudyConfig::effective_trials() const {
  return std::max(1, static_cast<int>(std::lround(n_trials * trial_scale)));
}

int StudyConfig::effective_samples() const {
  return std::max(2, static_cast<int>(std::lround(n_samples * sample_scale)));
}

void StudyConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorCode::kConfigError, what); };
  check(n_trials >= 1, "n_trials must be at least 1");
  check(n_samples >= 2, "n_samples must be at least 2");
  check(trial_scale > 0.0 && std::isfinite(trial_scale), "trial scale must be positive");
  check(sample_scale > 0.0 && std::isfinite(sample_scale), "sample scale must be positive");
  check(workers >= 0, "workers must be nonnegative");
  check(!output_dir.empty(), "output_dir must not be empty");
  check(cmd_order >= 2, "cmd_order must be at least 2");
  check(num_bandwidths >= 1 && num_bandwidths <= 10, "num_bandwidths must be in [1, 10]");
  std::set<std::string> seen;
  for (const auto& v : variants) {
    check(seen.insert(v).second, "variant '" + v + "' listed twice");
    check(v != "Reference", "'Reference' is reserved for the reference row");
  }
  try {
    for (const auto& v : variants) variant(v).validate();
    reference.validate();
    NoiseSchedule(schedule_T, schedule_steps, schedule_rho);
  } catch (const Error& e) {
    fail(ErrorCode::kConfigError, e.what());
  }
}

VariantConfig StudyConfig::variant(const std::string& label) const {
  VariantConfig v;
  try {
    v = VariantConfig::from_label(label);
  } catch (const Error& e) {
    fail(ErrorCode::kConfigError, e.what());
  }
  const SamplerKind kind = v.sampler.kind;
  const DenoiseVariant dv = v.denoise.variant;
  v.sampler = sampler;
  v.sampler.kind = kind;
  v.denoise = denoise;
  v.denoise.variant = dv;
  v.schedule = NoiseSchedule(schedule_T, schedule_steps, schedule_rho);
  return v;
}

StudyConfig default_study_config(StudyKind study) {
  StudyConfig c;
  c.study = study;
  c.variants = variant_labels();
  c.output_dir = std::string("results/") + to_string(study);
  switch (study) {
    case StudyKind::kInpaintingLow:
    case StudyKind::kInpaintingHigh:
      c.n_trials = 20;
      c.n_samples = 5000;
      c.sampler.lang_step = 5e-5;
      c.sampler.lang_iters = 100;
      break;
    case StudyKind::kXray:
      c.n_trials = 10;
      c.n_samples = 2000;
      c.sampler.lang_step = 5e-5;
      c.sampler.lang_iters = 1000;
      break;
    case StudyKind::kPhaseRetrieval:
      c.n_trials = 10;
      c.n_samples = 1000;
      c.sampler.lang_step = 0.2;
      c.sampler.lang_iters = 1000;
      c.sampler.metropolis = true;
      break;
  }
  c.sampler.lbfgs_iters = 40;
  return c;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  require(j.is_object(), ErrorCode::kConfigError, where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(allowed.count(it.key()) > 0, ErrorCode::kConfigError, "unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kConfigError, where + "." + key + " has the wrong type");
  }
}

template <class T>
void maybe(const json& j, const std::string& key, T& out, const std::string& where) {
  if (j.contains(key)) out = get_as<T>(j, key, where);
}

double scale_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  fail(ErrorCode::kConfigError, "scale multipliers must be numbers");
}

}  // namespace

void apply_scale(StudyConfig& cfg, const std::string& scale) {
  if (scale == "paper") {
    cfg.n_trials = 100;
    cfg.n_samples = 10000;
    cfg.trial_scale = cfg.sample_scale = 1.0;
    return;
  }
  if (scale == "desk") {
    const StudyConfig d = default_study_config(cfg.study);
    cfg.n_trials = d.n_trials;
    cfg.n_samples = d.n_samples;
    cfg.trial_scale = cfg.sample_scale = 1.0;
    return;
  }
  char* end = nullptr;
  const double f = std::strtod(scale.c_str(), &end);
  require(end != scale.c_str() && *end == '\0' && f > 0.0 && std::isfinite(f), ErrorCode::kConfigError,
          "scale must be 'desk', 'paper' or a positive number, got '" + scale + "'");
  cfg.trial_scale = f;
  cfg.sample_scale = f;
}

StudyConfig study_config_from_json(const json& j) {
  check_keys(j, {"study", "variants", "n_trials", "n_samples", "seed", "output_dir", "scale", "workers",
                 "write_samples", "sampler", "denoise", "schedule", "reference", "metrics"},
             "config");
  require(j.contains("study"), ErrorCode::kConfigError, "config needs a 'study' name");
  StudyConfig c = default_study_config(study_kind_from_string(get_as<std::string>(j, "study", "config")));
  maybe(j, "variants", c.variants, "config");
  maybe(j, "n_trials", c.n_trials, "config");
  maybe(j, "n_samples", c.n_samples, "config");
  maybe(j, "seed", c.seed, "config");
  maybe(j, "output_dir", c.output_dir, "config");
  maybe(j, "workers", c.workers, "config");
  maybe(j, "write_samples", c.write_samples, "config");
  if (j.contains("scale")) {
    const json& s = j.at("scale");
    if (s.is_string()) {
      apply_scale(c, s.get<std::string>());
    } else if (s.is_number()) {
      c.trial_scale = c.sample_scale = s.get<double>();
    } else {
      check_keys(s, {"trials", "samples"}, "scale");
      if (s.contains("trials")) c.trial_scale = scale_from_json(s.at("trials"));
      if (s.contains("samples")) c.sample_scale = scale_from_json(s.at("samples"));
    }
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    check_keys(s, {"lang_step", "lang_iters", "metropolis", "lang_step_cap", "lbfgs_iters", "lbfgs_memory",
                   "map_solver"},
               "sampler");
    maybe(s, "lang_step", c.sampler.lang_step, "sampler");
    maybe(s, "lang_iters", c.sampler.lang_iters, "sampler");
    maybe(s, "metropolis", c.sampler.metropolis, "sampler");
    maybe(s, "lang_step_cap", c.sampler.lang_step_cap, "sampler");
    maybe(s, "lbfgs_iters", c.sampler.lbfgs_iters, "sampler");
    maybe(s, "lbfgs_memory", c.sampler.lbfgs_memory, "sampler");
    if (s.contains("map_solver")) {
      try {
        c.sampler.map_solver = map_solver_from_string(get_as<std::string>(s, "map_solver", "sampler"));
      } catch (const Error& e) {
        fail(ErrorCode::kConfigError, e.what());
      }
    }
  }
  if (j.contains("denoise")) {
    const json& d = j.at("denoise");
    check_keys(d, {"beta_multiplier", "ode_steps"}, "denoise");
    maybe(d, "beta_multiplier", c.denoise.beta_multiplier, "denoise");
    maybe(d, "ode_steps", c.denoise.ode_steps, "denoise");
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    check_keys(s, {"T", "num_steps", "rho"}, "schedule");
    maybe(s, "T", c.schedule_T, "schedule");
    maybe(s, "num_steps", c.schedule_steps, "schedule");
    maybe(s, "rho", c.schedule_rho, "schedule");
  }
  if (j.contains("reference")) {
    const json& r = j.at("reference");
    check_keys(r, {"chains", "iterations", "burn_in", "initial_step", "target_accept", "importance_draws",
                   "rhat_gate", "min_weight", "reflection_every"},
               "reference");
    maybe(r, "chains", c.reference.chains, "reference");
    maybe(r, "iterations", c.reference.iterations, "reference");
    maybe(r, "burn_in", c.reference.burn_in, "reference");
    maybe(r, "initial_step", c.reference.initial_step, "reference");
    maybe(r, "target_accept", c.reference.target_accept, "reference");
    maybe(r, "importance_draws", c.reference.importance_draws, "reference");
    maybe(r, "rhat_gate", c.reference.rhat_gate, "reference");
    maybe(r, "min_weight", c.reference.min_weight, "reference");
    maybe(r, "reflection_every", c.reference.reflection_every, "reference");
  }
  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    check_keys(m, {"cmd_order", "num_bandwidths", "mmd_subsample"}, "metrics");
    maybe(m, "cmd_order", c.cmd_order, "metrics");
    maybe(m, "num_bandwidths", c.num_bandwidths, "metrics");
    maybe(m, "mmd_subsample", c.mmd_subsample, "metrics");
  }
  c.validate();
  return c;
}

json study_config_to_json(const StudyConfig& c) {
  return {{"study", to_string(c.study)},
          {"variants", c.variants},
          {"n_trials", c.n_trials},
          {"n_samples", c.n_samples},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"scale", {{"trials", c.trial_scale}, {"samples", c.sample_scale}}},
          {"workers", c.workers},
          {"write_samples", c.write_samples},
          {"sampler",
           {{"lang_step", c.sampler.lang_step},
            {"lang_iters", c.sampler.lang_iters},
            {"metropolis", c.sampler.metropolis},
            {"lang_step_cap", c.sampler.lang_step_cap},
            {"lbfgs_iters", c.sampler.lbfgs_iters},
            {"lbfgs_memory", c.sampler.lbfgs_memory},
            {"map_solver", to_string(c.sampler.map_solver)}}},
          {"denoise", {{"beta_multiplier", c.denoise.beta_multiplier}, {"ode_steps", c.denoise.ode_steps}}},
          {"schedule", {{"T", c.schedule_T}, {"num_steps", c.schedule_steps}, {"rho", c.schedule_rho}}},
          {"reference",
           {{"chains", c.reference.chains},
            {"iterations", c.reference.iterations},
            {"burn_in", c.reference.burn_in},
            {"initial_step", c.reference.initial_step},
            {"target_accept", c.reference.target_accept},
            {"importance_draws", c.reference.importance_draws},
            {"rhat_gate", c.reference.rhat_gate},
            {"min_weight", c.reference.min_weight},
            {"reflection_every", c.reference.reflection_every}}},
          {"metrics",
           {{"cmd_order", c.cmd_order}, {"num_bandwidths", c.num_bandwidths}, {"mmd_subsample", c.mmd_subsample}}}};
}

Problem study_problem(StudyKind study) {
  switch (study) {
    case StudyKind::kInpaintingLow: return make_inpainting(0.1);
    case StudyKind::kInpaintingHigh: return make_inpainting(5.0);
    case StudyKind::kXray: return make_xray();
    case StudyKind::kPhaseRetrieval: return make_phase_retrieval();
  }
  fail(ErrorCode::kConfigError, "unknown study");
}

double quantile7(std::vector<double> values, double p) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "quantile of an empty set");
  require(p >= 0.0 && p <= 1.0, ErrorCode::kInvalidArgument, "quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

MetricSummary summarize_metric(const std::vector<double>& v) {
  std::vector<double> finite;
  for (double x : v)
    if (std::isfinite(x)) finite.push_back(x);
  MetricSummary s;
  if (finite.empty()) {
    s.mean = s.p10 = s.p90 = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  std::sort(finite.begin(), finite.end());
  double acc = 0.0;
  for (double x : finite) acc += x;
  s.mean = acc / static_cast<double>(finite.size());
  s.p10 = quantile7(finite, 0.1);
  s.p90 = quantile7(finite, 0.9);
  return s;
}

}  // namespace

std::vector<MethodSummary> summarize(const std::vector<TrialReport>& reports) {
  require(!reports.empty(), ErrorCode::kInvalidArgument, "nothing to summarize");
  std::map<std::string, std::vector<const TrialReport*>> by_method;
  for (const auto& r : reports) by_method[r.method].push_back(&r);
  std::vector<MethodSummary> out;
  for (auto& [name, rows] : by_method) {
    std::sort(rows.begin(), rows.end(), [](const TrialReport* a, const TrialReport* b) { return a->trial < b->trial; });
    std::vector<double> me, ve, cm, mm, rt;
    MethodSummary s;
    s.method = name;
    s.n_trials = static_cast<int>(rows.size());
    for (const auto* r : rows) {
      me.push_back(r->mean_error);
      ve.push_back(r->variance_error);
      cm.push_back(r->cmd);
      mm.push_back(r->mmd);
      rt.push_back(r->runtime_seconds);
      s.discards += r->discard_count;
      s.retries += r->retry_count;
    }
    s.mean_error = summarize_metric(me);
    s.variance_error = summarize_metric(ve);
    s.cmd = summarize_metric(cm);
    s.mmd = summarize_metric(mm);
    double acc = 0.0;
    for (double x : rt) acc += x;
    s.runtime_mean = acc / static_cast<double>(rt.size());
    double ss = 0.0;
    for (double x : rt) ss += (x - s.runtime_mean) * (x - s.runtime_mean);
    s.runtime_std = rt.size() > 1 ? std::sqrt(ss / static_cast<double>(rt.size() - 1)) : 0.0;
    out.push_back(std::move(s));
  }
  return out;
}

const MethodSummary* StudySummary::find(const std::string& method) const {
  for (const auto& m : methods)
    if (m.method == method) return &m;
  return nullptr;
}

namespace {

std::uint64_t trial_seed(const StudyConfig& cfg, int t) {
  return derive_seed(cfg.seed, label_hash("trial"), static_cast<std::uint64_t>(t));
}

Measurement trial_measurement(const StudyConfig& cfg, const Problem& problem, const GaussianMixture& prior, int t) {
  const std::uint64_t ts = trial_seed(cfg, t);
  Rng rng(derive_seed(ts, label_hash("measurement")));
  Measurement m = problem.simulate(prior, rng);
  m.trial_seed = ts;
  return m;
}

std::string trial_dir_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "trial_%03d", t);
  return buf;
}

json metric_json(const MetricSummary& m, const StudySummary& s, const std::string& method, const char* metric) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"mean", num(m.mean)},
          {"p10", num(m.p10)},
          {"p90", num(m.p90)},
          {"cell",
           {{"study", s.study},
            {"method", method},
            {"metric", metric},
            {"n_trials", s.n_trials},
            {"n_samples", s.n_samples},
            {"seed", s.seed}}}};
}

MetricSummary metric_from_json(const json& j) {
  auto num = [](const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); };
  return {num(j.at("mean")), num(j.at("p10")), num(j.at("p90"))};
}

std::string reports_csv(const std::vector<TrialReport>& reports) {
  std::string out = "trial,method,mean_error,variance_error,cmd,mmd,discard_count,retry_count,base_bandwidth\n";
  for (const auto& r : reports) {
    out += std::to_string(r.trial) + "," + r.method + "," + io::format_double(r.mean_error) + "," +
           io::format_double(r.variance_error) + "," + io::format_double(r.cmd) + "," + io::format_double(r.mmd) + "," +
           std::to_string(r.discard_count) + "," + std::to_string(r.retry_count) + "," +
           io::format_double(r.base_bandwidth) + "\n";
  }
  return out;
}

}  // namespace

json summary_to_json(const StudySummary& s) {
  json methods = json::array();
  for (const auto& m : s.methods) {
    methods.push_back({{"method", m.method},
                       {"n_trials", m.n_trials},
                       {"mean_error", metric_json(m.mean_error, s, m.method, "mean_error")},
                       {"variance_error", metric_json(m.variance_error, s, m.method, "variance_error")},
                       {"cmd", metric_json(m.cmd, s, m.method, "cmd")},
                       {"mmd", metric_json(m.mmd, s, m.method, "mmd")},
                       {"runtime_seconds", {{"mean", m.runtime_mean}, {"std", m.runtime_std}}},
                       {"discards", m.discards},
                       {"retries", m.retries}});
  }
  json failures = json::array();
  for (const auto& f : s.failures) failures.push_back({{"trial", f.trial}, {"reason", f.reason}});
  return {{"study", s.study},
          {"n_trials", s.n_trials},
          {"n_samples", s.n_samples},
          {"seed", s.seed},
          {"alpha", s.alpha},
          {"base_bandwidth_mean", s.base_bandwidth_mean},
          {"mmd_statistic", "squared, V-statistic"},
          {"quantiles", "type 7 (linear interpolation)"},
          {"methods", methods},
          {"failed_trials", failures}};
}

StudySummary summary_from_json(const json& j) {
  StudySummary s;
  try {
    s.study = j.at("study").get<std::string>();
    s.n_trials = j.at("n_trials").get<int>();
    s.n_samples = j.at("n_samples").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.alpha = j.value("alpha", 0.0);
    s.base_bandwidth_mean = j.value("base_bandwidth_mean", 0.0);
    for (const auto& m : j.at("methods")) {
      MethodSummary ms;
      ms.method = m.at("method").get<std::string>();
      ms.n_trials = m.at("n_trials").get<int>();
      ms.mean_error = metric_from_json(m.at("mean_error"));
      ms.variance_error = metric_from_json(m.at("variance_error"));
      ms.cmd = metric_from_json(m.at("cmd"));
      ms.mmd = metric_from_json(m.at("mmd"));
      ms.runtime_mean = m.at("runtime_seconds").at("mean").get<double>();
      ms.runtime_std = m.at("runtime_seconds").at("std").get<double>();
      ms.discards = m.value("discards", 0L);
      ms.retries = m.value("retries", 0L);
      s.methods.push_back(std::move(ms));
    }
    for (const auto& f : j.value("failed_trials", json::array()))
      s.failures.push_back({f.at("trial").get<int>(), f.at("reason").get<std::string>()});
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfigError, std::string("malformed summary: ") + e.what());
  }
  return s;
}

std::string render_report(const StudySummary& s) {
  auto cell = [](const MetricSummary& m, const char* fmt) {
    char buf[96];
    if (!std::isfinite(m.mean)) return std::string("n/a");
    std::string f = std::string(fmt) + " (" + fmt + ", " + fmt + ")";
    std::snprintf(buf, sizeof(buf), f.c_str(), m.mean, m.p10, m.p90);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "study " << s.study << ": " << s.n_trials << " trials x " << s.n_samples << " samples, seed " << s.seed
      << ", alpha " << io::format_double(s.alpha) << "\n";
  out << "MMD column is the squared V-statistic; cells are mean (p10, p90)\n\n";
  out << "| Method | Mean Error | Variance Error | CMD | MMD | Runtime (s) | Discards |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (const auto& m : s.methods) {
    char rt[64];
    std::snprintf(rt, sizeof(rt), "%.3f +/- %.3f", m.runtime_mean, m.runtime_std);
    out << "| " << m.method << " | " << cell(m.mean_error, "%.3f") << " | " << cell(m.variance_error, "%.2f")
        << " | " << cell(m.cmd, "%.3f") << " | " << cell(m.mmd, "%.4f") << " | " << rt << " | " << m.discards
        << " |\n";
  }
  for (const auto& f : s.failures) out << "\ntrial " << f.trial << " dropped: " << f.reason;
  if (!s.failures.empty()) out << "\n";
  return out.str();
}

StudySummary run_study(const StudyConfig& cfg, const LogFn& log) {
  cfg.validate();
  auto say = [&](const std::string& msg) {
    if (log) log(msg);
  };
  const int trials = cfg.effective_trials();
  const auto n = static_cast<std::size_t>(cfg.effective_samples());
  const io::fs::path out_dir(cfg.output_dir);
  io::ensure_dir(out_dir);

  const GaussianMixture prior = benchmark_prior();
  const Problem problem = study_problem(cfg.study);
  const AnalyticScore sp(prior);
  json cfg_json = study_config_to_json(cfg);
  cfg_json["effective"] = {{"n_trials", trials}, {"n_samples", n}};
  io::write_json(out_dir / "config.json", cfg_json);
  io::write_json(out_dir / "prior.json", io::mixture_to_json(prior));
  io::write_json(out_dir / "problem.json", io::problem_to_json(problem));

  std::vector<VariantConfig> variants;
  for (const auto& label : cfg.variants) variants.push_back(cfg.variant(label));

  struct TrialData {
    Measurement meas;
    ReferenceResult ref, ref2;
    bool ok = false;
  };
  std::vector<TrialData> data(static_cast<std::size_t>(trials));
  StudySummary summary;
  summary.study = to_string(cfg.study);
  summary.n_trials = trials;
  summary.n_samples = static_cast<int>(n);
  summary.seed = cfg.seed;

  for (int t = 0; t < trials; ++t) {
    auto& d = data[static_cast<std::size_t>(t)];
    d.meas = trial_measurement(cfg, problem, prior, t);
    const std::uint64_t ts = d.meas.trial_seed;
    try {
      d.ref = reference_sample(prior, problem, d.meas.y, n, derive_seed(ts, label_hash("reference"), 0), cfg.reference);
      d.ref2 = reference_sample(prior, problem, d.meas.y, n, derive_seed(ts, label_hash("reference"), 1), cfg.reference);
      d.ok = true;
      say("trial " + std::to_string(t) + ": reference ready (max R-hat " +
          io::format_double(std::max(d.ref.diagnostics.max_rhat, d.ref2.diagnostics.max_rhat)) + ")");
    } catch (const ConvergenceError& e) {
      summary.failures.push_back({t, e.what()});
      say("trial " + std::to_string(t) + ": dropped, " + e.what());
    }
  }

  json diag_json = json::array();
  std::vector<Matrix> ref_sets;
  for (int t = 0; t < trials; ++t) {
    const auto& d = data[static_cast<std::size_t>(t)];
    if (!d.ok) continue;
    ref_sets.push_back(d.ref.batch.samples);
    diag_json.push_back({{"trial", t},
                         {"reference", io::diagnostics_to_json(d.ref.diagnostics)},
                         {"reference_b", io::diagnostics_to_json(d.ref2.diagnostics)}});
  }
  io::write_json(out_dir / "reference_diagnostics.json", diag_json);

  std::vector<TrialReport> reports;
  json runtimes = json::array();
  if (!ref_sets.empty()) {
    summary.alpha = estimate_alpha(ref_sets);
    const CmdConfig cc{cfg.cmd_order, summary.alpha};
    Matrix curvature;
    const Matrix* curv = nullptr;
    if (cfg.sampler.metropolis && !cfg.sampler.precond) {
      curvature = likelihood_curvature(problem, sp);
      curv = &curvature;
    }
    double bw_acc = 0.0;
    for (int t = 0; t < trials; ++t) {
      auto& d = data[static_cast<std::size_t>(t)];
      if (!d.ok) continue;
      const std::uint64_t ts = d.meas.trial_seed;
      const Matrix& ref = d.ref.batch.samples;
      MmdConfig mc;
      mc.num_bandwidths = cfg.num_bandwidths;
      mc.base_bandwidth = estimate_base_bandwidth(ref);
      mc.subsample = cfg.mmd_subsample;
      mc.seed = derive_seed(ts, label_hash("mmd"));
      bw_acc += mc.base_bandwidth;
      const MmdReference mref(ref, mc);
      const io::fs::path tdir = out_dir / "samples" / trial_dir_name(t);
      json trt = {{"trial", t}};

      auto score = [&](const std::string& method, const SampleBatch& b) {
        TrialReport r;
        r.trial = t;
        r.method = method;
        r.discard_count = b.discard_count;
        r.retry_count = b.retry_count;
        r.runtime_seconds = b.runtime_seconds;
        r.base_bandwidth = mc.base_bandwidth;
        if (b.size() >= 2) {
          r.mean_error = mean_error(b.samples, ref);
          r.variance_error = variance_error(b.samples, ref);
          r.cmd = cmd(b.samples, ref, cc);
          r.mmd = mref.against(b.samples);
        } else {
          r.mean_error = r.variance_error = r.cmd = r.mmd = std::numeric_limits<double>::quiet_NaN();
        }
        trt[method] = r.runtime_seconds;
        reports.push_back(r);
      };

      for (std::size_t k = 0; k < variants.size(); ++k) {
        const auto& v = variants[k];
        SampleBatch b = bipsda_batch(v, problem, d.meas.y, sp, n, derive_seed(ts, label_hash(v.label)),
                                     BatchOptions{cfg.workers, curv});
        b.trial = t;
        score(v.label, b);
        const auto& r = reports.back();
        say("trial " + std::to_string(t) + " " + v.label + ": cmd " + io::format_double(r.cmd) + ", mmd " +
            io::format_double(r.mmd) + ", " + std::to_string(b.discard_count) + " discarded, " +
            io::format_double(b.runtime_seconds) + " s");
        if (cfg.write_samples) io::write_batch(tdir, v.label, b);
      }
      d.ref2.batch.trial = t;
      score("Reference", d.ref2.batch);
      if (cfg.write_samples) {
        d.ref.batch.trial = t;
        io::write_batch(tdir, "reference", d.ref.batch);
        io::write_batch(tdir, "reference_b", d.ref2.batch);
        io::write_json(tdir / "measurement.json", io::measurement_to_json(d.meas));
      }
      runtimes.push_back(trt);
    }
    summary.base_bandwidth_mean = bw_acc / static_cast<double>(ref_sets.size());
    summary.methods = summarize(reports);
    auto rank = [&](const std::string& m) {
      const auto it = std::find(cfg.variants.begin(), cfg.variants.end(), m);
      return static_cast<std::size_t>(it - cfg.variants.begin());
    };
    std::stable_sort(summary.methods.begin(), summary.methods.end(),
                     [&](const MethodSummary& a, const MethodSummary& b) { return rank(a.method) < rank(b.method); });
  }
  summary.reports = reports;

  io::write_text(out_dir / "trial_reports.csv", reports_csv(reports));
  io::write_json(out_dir / "runtimes.json", runtimes);
  io::write_json(out_dir / "summary.json", summary_to_json(summary));
  io::write_text(out_dir / "report.md", render_report(summary));
  return summary;
}

std::vector<RuntimeRow> benchmark_runtime(const StudyConfig& cfg) {
  cfg.validate();
  const GaussianMixture prior = benchmark_prior();
  const Problem problem = study_problem(cfg.study);
  const AnalyticScore sp(prior);
  const int trials = cfg.effective_trials();
  const auto n = static_cast<std::size_t>(cfg.effective_samples());
  Matrix curvature;
  const Matrix* curv = nullptr;
  if (cfg.sampler.metropolis) {
    curvature = likelihood_curvature(problem, sp);
    curv = &curvature;
  }
  std::vector<TrialReport> reports;
  for (int t = 0; t < trials; ++t) {
    const Measurement meas = trial_measurement(cfg, problem, prior, t);
    for (const auto& label : cfg.variants) {
      const VariantConfig v = cfg.variant(label);
      const SampleBatch b = bipsda_batch(v, problem, meas.y, sp, n, derive_seed(meas.trial_seed, label_hash(label)),
                                         BatchOptions{cfg.workers, curv});
      TrialReport r;
      r.trial = t;
      r.method = label;
      r.runtime_seconds = b.runtime_seconds;
      reports.push_back(r);
    }
  }
  std::vector<RuntimeRow> rows;
  for (const auto& m : summarize(reports)) rows.push_back({m.method, m.runtime_mean, m.runtime_std, m.n_trials});
  return rows;
}

TrialReference study_reference(const StudyConfig& cfg, int trial) {
  cfg.validate();
  require(trial >= 0, ErrorCode::kInvalidArgument, "trial index must be nonnegative");
  const GaussianMixture prior = benchmark_prior();
  const Problem problem = study_problem(cfg.study);
  TrialReference out;
  out.measurement = trial_measurement(cfg, problem, prior, trial);
  out.result = reference_sample(prior, problem, out.measurement.y, static_cast<std::size_t>(cfg.effective_samples()),
                                derive_seed(out.measurement.trial_seed, label_hash("reference"), 0), cfg.reference);
  out.result.batch.trial = trial;
  return out;
}

ProjectionMode projection_mode_from_string(const std::string& s) {
  if (s == "coordinate_pair") return ProjectionMode::kCoordinatePair;
  if (s == "singular_pair") return ProjectionMode::kSingularPair;
  fail(ErrorCode::kInvalidArgument, "unknown projection mode '" + s + "' (coordinate_pair or singular_pair)");
}

Matrix projection_matrix(const Problem& problem, ProjectionMode mode, int i, int j) {
  const Index d = problem.dim();
  Matrix p = Matrix::Zero(d, 2);
  if (mode == ProjectionMode::kCoordinatePair) {
    require(i >= 0 && i < d && j >= 0 && j < d && i != j, ErrorCode::kInvalidArgument,
            "coordinate pair must be two distinct indices in range");
    p(i, 0) = 1.0;
    p(j, 1) = 1.0;
    return p;
  }
  Eigen::JacobiSVD<Matrix> svd(problem.op(), Eigen::ComputeFullV);
  p.col(0) = svd.matrixV().col(0);
  p.col(1) = svd.matrixV().col(d - 1);
  return p;
}

namespace {

std::string scatter_svg(const Matrix& a, const Matrix& b, const std::string& label_a, const std::string& label_b) {
  constexpr double kSize = 480.0, kPad = 40.0;
  constexpr Index kMaxPoints = 3000;
  double xmin = HUGE_VAL, xmax = -HUGE_VAL, ymin = HUGE_VAL, ymax = -HUGE_VAL;
  for (const Matrix* m : {&a, &b}) {
    if (m->rows() == 0) continue;
    xmin = std::min(xmin, m->col(0).minCoeff());
    xmax = std::max(xmax, m->col(0).maxCoeff());
    ymin = std::min(ymin, m->col(1).minCoeff());
    ymax = std::max(ymax, m->col(1).maxCoeff());
  }
  if (!(xmax > xmin)) xmax = xmin + 1.0;
  if (!(ymax > ymin)) ymax = ymin + 1.0;
  auto sx = [&](double x) { return kPad + (x - xmin) / (xmax - xmin) * (kSize - 2 * kPad); };
  auto sy = [&](double y) { return kSize - kPad - (y - ymin) / (ymax - ymin) * (kSize - 2 * kPad); };
  std::ostringstream s;
  s.precision(5);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<rect x=\"" << kPad << "\" y=\"" << kPad << "\" width=\"" << kSize - 2 * kPad << "\" height=\""
    << kSize - 2 * kPad << "\" fill=\"none\" stroke=\"black\"/>\n";
  auto points = [&](const Matrix& m, const char* colour) {
    s << "<g fill=\"" << colour << "\" fill-opacity=\"0.35\">\n";
    for (Index r = 0; r < std::min(m.rows(), kMaxPoints); ++r)
      s << "<circle cx=\"" << sx(m(r, 0)) << "\" cy=\"" << sy(m(r, 1)) << "\" r=\"1.5\"/>\n";
    s << "</g>\n";
  };
  points(b, "#888888");
  points(a, "#d62728");
  s << "<text x=\"" << kPad << "\" y=\"" << kPad - 12 << "\" font-size=\"12\" fill=\"#d62728\">" << label_a
    << "</text>\n";
  s << "<text x=\"" << kSize / 2 << "\" y=\"" << kPad - 12 << "\" font-size=\"12\" fill=\"#888888\">" << label_b
    << "</text>\n";
  s << "<text x=\"" << kPad << "\" y=\"" << kSize - 12 << "\" font-size=\"10\">x: [" << xmin << ", " << xmax
    << "]  y: [" << ymin << ", " << ymax << "]</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace

Matrix export_projection(const Matrix& batch, const Matrix& reference, const Problem& problem, ProjectionMode mode,
                         const io::fs::path& out_dir, const std::string& stem, int i, int j,
                         const std::string& method_label) {
  require_dim(batch.cols(), problem.dim(), "batch");
  require_dim(reference.cols(), problem.dim(), "reference batch");
  const Matrix p = projection_matrix(problem, mode, i, j);
  const Matrix pa = batch * p;
  const Matrix pb = reference * p;
  io::write_matrix_csv(out_dir / (stem + "_method.csv"), pa, {"p0", "p1"});
  io::write_matrix_csv(out_dir / (stem + "_reference.csv"), pb, {"p0", "p1"});
  io::write_text(out_dir / (stem + ".svg"), scatter_svg(pa, pb, method_label, "reference"));
  return p;
}

}  // namespace bipsda
