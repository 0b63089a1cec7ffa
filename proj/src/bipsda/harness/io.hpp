#pragma once

#include "bipsda/engine.hpp"
#include "bipsda/gmm.hpp"
#include "bipsda/problems.hpp"
#include "bipsda/reference.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace bipsda::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

json to_json(const Vector& v);
json to_json(const Matrix& m);  // array of rows
Vector vector_from_json(const json& j);
Matrix matrix_from_json(const json& j);

json mixture_to_json(const GaussianMixture& gmm);
GaussianMixture mixture_from_json(const json& j);

json problem_to_json(const Problem& p);
Problem problem_from_json(const json& j);

json measurement_to_json(const Measurement& m);

json diagnostics_to_json(const ReferenceDiagnostics& d);

/// Batch metadata written next to the sample CSV.
json batch_sidecar(const SampleBatch& b);

/// Writes <stem>.csv (one draw per row, %.17g) and <stem>.json.
void write_batch(const fs::path& dir, const std::string& stem, const SampleBatch& b, const json& extra = json::object());
/// Reads a sample CSV; the sidecar, when present next to it, fills metadata.
SampleBatch read_batch(const fs::path& csv);

Matrix read_matrix_csv(const fs::path& csv);
void write_matrix_csv(const fs::path& path, const Matrix& m, const std::vector<std::string>& header);

json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& j);
void write_text(const fs::path& path, const std::string& text);
void ensure_dir(const fs::path& dir);

/// %.17g rendering, so values round-trip bit for bit.
std::string format_double(double v);

}  // namespace bipsda::io
