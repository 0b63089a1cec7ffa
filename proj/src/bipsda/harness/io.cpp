#include "bipsda/harness/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bipsda::io {

namespace {

json finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double number_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return std::nan("");
    if (s == "inf") return HUGE_VAL;
    if (s == "-inf") return -HUGE_VAL;
  }
  fail(ErrorCode::kConfigError, "expected a number, got " + j.dump());
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json to_json(const Vector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(finite_or_string(v[i]));
  return out;
}

json to_json(const Matrix& m) {
  json out = json::array();
  for (Index r = 0; r < m.rows(); ++r) out.push_back(to_json(Vector(m.row(r).transpose())));
  return out;
}

Vector vector_from_json(const json& j) {
  require(j.is_array(), ErrorCode::kConfigError, "expected an array of numbers");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = number_from_json(j[i]);
  return v;
}

Matrix matrix_from_json(const json& j) {
  require(j.is_array(), ErrorCode::kConfigError, "expected an array of rows");
  if (j.empty()) return {};
  const std::size_t cols = j.front().size();
  Matrix m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vector row = vector_from_json(j[r]);
    require(static_cast<std::size_t>(row.size()) == cols, ErrorCode::kConfigError, "ragged matrix rows");
    m.row(static_cast<Index>(r)) = row.transpose();
  }
  return m;
}

json mixture_to_json(const GaussianMixture& gmm) {
  json comps = json::array();
  for (const auto& c : gmm.components()) {
    comps.push_back({{"weight", c.weight}, {"mean", to_json(c.mean)}, {"covariance", to_json(c.covariance)}});
  }
  return {{"dim", gmm.dim()}, {"components", comps}};
}

GaussianMixture mixture_from_json(const json& j) {
  require(j.contains("components"), ErrorCode::kConfigError, "mixture needs a 'components' array");
  std::vector<GaussianComponent> comps;
  for (const auto& c : j.at("components")) {
    comps.push_back({c.at("weight").get<double>(), vector_from_json(c.at("mean")), matrix_from_json(c.at("covariance"))});
  }
  return GaussianMixture(std::move(comps));
}

json problem_to_json(const Problem& p) {
  json j = {{"kind", to_string(p.kind())},
            {"dim", p.dim()},
            {"meas_dim", p.meas_dim()},
            {"operator", to_json(p.op())},
            {"seed", p.seed()}};
  if (p.kind() == ProblemKind::kPoissonXray) {
    j["intensity"] = p.intensity();
  } else {
    j["tau"] = p.tau();
  }
  if (p.is_selection()) j["kept"] = p.kept();
  return j;
}

Problem problem_from_json(const json& j) {
  const auto kind = problem_kind_from_string(j.at("kind").get<std::string>());
  return Problem::from_parts(kind, matrix_from_json(j.at("operator")), j.value("tau", 0.0), j.value("intensity", 0.0),
                             j.value("seed", std::uint64_t{0}), j.value("kept", std::vector<int>{}));
}

json measurement_to_json(const Measurement& m) {
  return {{"y", to_json(m.y)}, {"m_true", to_json(m.m_true)}, {"trial_seed", m.trial_seed}};
}

json diagnostics_to_json(const ReferenceDiagnostics& d) {
  json comps = json::array();
  for (const auto& c : d.components) {
    json cj = {{"component", c.component}, {"sampled", c.sampled}};
    if (c.sampled) {
      cj["rhat"] = to_json(c.rhat);
      cj["ess"] = to_json(c.ess);
      cj["acceptance"] = c.acceptance;
      cj["reflection_acceptance"] = c.reflection_acceptance;
      cj["steps"] = c.steps;
    }
    comps.push_back(cj);
  }
  return {{"exact", d.exact},
          {"max_rhat", finite_or_string(d.max_rhat)},
          {"min_ess", finite_or_string(d.min_ess)},
          {"rhat", to_json(d.rhat)},
          {"ess", to_json(d.ess)},
          {"log_weights", to_json(d.weights.log_weights)},
          {"weights", to_json(d.weights.normalized_weights)},
          {"importance_ess", to_json(d.weights.importance_ess)},
          {"components", comps}};
}

json batch_sidecar(const SampleBatch& b) {
  json j = {{"method", b.method},
            {"trial", b.trial},
            {"master_seed", b.master_seed},
            {"n_samples", b.size()},
            {"dim", b.dim()},
            {"discard_count", b.discard_count},
            {"retry_count", b.retry_count},
            {"runtime_seconds", b.runtime_seconds},
            {"reference", b.reference}};
  if (b.mala_proposed > 0) j["mala_acceptance"] = static_cast<double>(b.mala_accepted) / b.mala_proposed;
  if (b.map_degraded > 0) j["map_degraded"] = b.map_degraded;
  if (b.min_lang_step > 0.0) j["min_lang_step"] = b.min_lang_step;
  return j;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::kIoError, "cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIoError, "cannot open '" + path.string() + "' for writing");
  out << text;
  require(static_cast<bool>(out), ErrorCode::kIoError, "write to '" + path.string() + "' failed");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIoError, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfigError, "invalid JSON in '" + path.string() + "': " + e.what());
  }
}

void write_matrix_csv(const fs::path& path, const Matrix& m, const std::vector<std::string>& header) {
  std::string text;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) text += ',';
    text += header[i];
  }
  if (!header.empty()) text += '\n';
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) text += ',';
      text += format_double(m(r, c));
    }
    text += '\n';
  }
  write_text(path, text);
}

Matrix read_matrix_csv(const fs::path& csv) {
  std::ifstream in(csv);
  require(static_cast<bool>(in), ErrorCode::kIoError, "cannot open '" + csv.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      require(rows.empty(), ErrorCode::kIoError, "non-numeric row in '" + csv.string() + "'");
      continue;  // header
    }
    require(rows.empty() || row.size() == rows.front().size(), ErrorCode::kIoError,
            "ragged rows in '" + csv.string() + "'");
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return m;
}

void write_batch(const fs::path& dir, const std::string& stem, const SampleBatch& b, const json& extra) {
  std::vector<std::string> header;
  for (Index c = 0; c < b.dim(); ++c) header.push_back("m" + std::to_string(c));
  write_matrix_csv(dir / (stem + ".csv"), b.samples, header);
  json side = batch_sidecar(b);
  for (auto it = extra.begin(); it != extra.end(); ++it) side[it.key()] = it.value();
  write_json(dir / (stem + ".json"), side);
}

SampleBatch read_batch(const fs::path& csv) {
  SampleBatch b;
  b.samples = read_matrix_csv(csv);
  fs::path side = csv;
  side.replace_extension(".json");
  if (fs::exists(side)) {
    const json j = read_json(side);
    b.method = j.value("method", std::string());
    b.trial = j.value("trial", -1);
    b.master_seed = j.value("master_seed", std::uint64_t{0});
    b.discard_count = j.value("discard_count", 0);
    b.retry_count = j.value("retry_count", 0);
    b.runtime_seconds = j.value("runtime_seconds", 0.0);
    b.reference = j.value("reference", false);
  }
  return b;
}

}  // namespace bipsda::io
