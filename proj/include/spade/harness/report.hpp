#pragma once

#include <filesystem>
#include <string>

#include "spade/harness/evaluation.hpp"

namespace spade::harness {

enum class ReportFormat { Csv, Json };
ReportFormat parse_report_format(std::string_view s);

// CSV columns:
//   layer-wise: layer,lens,accuracy,perplexity,mean_entropy,n,restricted_accuracy
//   sweep:      threshold,accuracy,mean_exit_layer,mean_full_ops,mean_reduced_ops
// Numbers use the shortest representation that round-trips. JSON holds the
// same rows plus provenance and the naive accuracy.

std::string to_csv(const LayerwiseReport& r);
std::string to_csv(const SweepReport& r);
std::string to_json_text(const LayerwiseReport& r);
std::string to_json_text(const SweepReport& r);

std::vector<LayerwiseRow> parse_layerwise_csv(const std::string& text);
std::vector<SweepRow> parse_sweep_csv(const std::string& text);
LayerwiseReport parse_layerwise_json(const std::string& text);
SweepReport parse_sweep_json(const std::string& text);

void emit_report(const std::filesystem::path& path, const LayerwiseReport& r, ReportFormat format);
void emit_report(const std::filesystem::path& path, const SweepReport& r, ReportFormat format);

}  // namespace spade::harness
