#include "spade/harness/report.hpp"

#include <charconv>
#include <sstream>

#include "spade/container.hpp"
#include "spade/error.hpp"

namespace spade::harness {

namespace {

constexpr const char* kLayerwiseHeader = "layer,lens,accuracy,perplexity,mean_entropy,n,restricted_accuracy";
constexpr const char* kSweepHeader = "threshold,accuracy,mean_exit_layer,mean_full_ops,mean_reduced_ops";

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_num(const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw FormatError("bad number '" + s + "' in report");
  return v;
}

std::vector<std::vector<std::string>> csv_body(const std::string& text, const char* header, std::size_t cols) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) throw FormatError("unexpected report header '" + line + "'");
  std::vector<std::vector<std::string>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != cols) throw FormatError("report row has " + std::to_string(f.size()) + " fields: " + line);
    out.push_back(std::move(f));
  }
  return out;
}

nlohmann::json row_json(const LayerwiseRow& r) {
  return {{"layer", r.layer},
          {"lens", to_string(r.lens)},
          {"accuracy", r.accuracy},
          {"perplexity", r.perplexity},
          {"mean_entropy", r.mean_entropy},
          {"n", r.n},
          {"restricted_accuracy", r.restricted_accuracy}};
}

nlohmann::json row_json(const SweepRow& r) {
  return {{"threshold", r.threshold},
          {"accuracy", r.accuracy},
          {"mean_exit_layer", r.mean_exit_layer},
          {"mean_full_ops", r.mean_full_ops},
          {"mean_reduced_ops", r.mean_reduced_ops}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw UsageError("unknown report format '" + std::string(s) + "' (expected csv|json)");
}

std::string to_csv(const LayerwiseReport& r) {
  std::string out = std::string(kLayerwiseHeader) + "\n";
  for (const auto& row : r.rows) {
    out += std::to_string(row.layer) + "," + std::string(to_string(row.lens)) + "," + num(row.accuracy) + "," +
           num(row.perplexity) + "," + num(row.mean_entropy) + "," + std::to_string(row.n) + "," +
           num(row.restricted_accuracy) + "\n";
  }
  return out;
}

std::string to_csv(const SweepReport& r) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const auto& row : r.rows) {
    out += num(row.threshold) + "," + num(row.accuracy) + "," + num(row.mean_exit_layer) + "," +
           num(row.mean_full_ops) + "," + num(row.mean_reduced_ops) + "\n";
  }
  return out;
}

std::string to_json_text(const LayerwiseReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(row_json(row));
  nlohmann::json j = {{"kind", "layerwise"}, {"provenance", r.provenance}, {"naive_accuracy", r.naive_accuracy},
                      {"rows", rows}};
  return j.dump(2) + "\n";
}

std::string to_json_text(const SweepReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(row_json(row));
  nlohmann::json j = {{"kind", "sweep"}, {"provenance", r.provenance}, {"naive_accuracy", r.naive_accuracy},
                      {"rows", rows}};
  return j.dump(2) + "\n";
}

std::vector<LayerwiseRow> parse_layerwise_csv(const std::string& text) {
  std::vector<LayerwiseRow> out;
  for (const auto& f : csv_body(text, kLayerwiseHeader, 7)) {
    LayerwiseRow r;
    r.layer = static_cast<int>(parse_num(f[0]));
    r.lens = parse_lens_kind(f[1]);
    r.accuracy = parse_num(f[2]);
    r.perplexity = parse_num(f[3]);
    r.mean_entropy = parse_num(f[4]);
    r.n = static_cast<std::size_t>(parse_num(f[5]));
    r.restricted_accuracy = parse_num(f[6]);
    out.push_back(r);
  }
  return out;
}

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::vector<SweepRow> out;
  for (const auto& f : csv_body(text, kSweepHeader, 5)) {
    out.push_back({parse_num(f[0]), parse_num(f[1]), parse_num(f[2]), parse_num(f[3]), parse_num(f[4])});
  }
  return out;
}

LayerwiseReport parse_layerwise_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    LayerwiseReport r;
    r.provenance = j.at("provenance");
    r.naive_accuracy = j.at("naive_accuracy").get<double>();
    for (const auto& row : j.at("rows")) {
      LayerwiseRow x;
      x.layer = row.at("layer").get<int>();
      x.lens = parse_lens_kind(row.at("lens").get<std::string>());
      x.accuracy = row.at("accuracy").get<double>();
      x.perplexity = row.at("perplexity").get<double>();
      x.mean_entropy = row.at("mean_entropy").get<double>();
      x.n = row.at("n").get<std::size_t>();
      x.restricted_accuracy = row.at("restricted_accuracy").get<double>();
      r.rows.push_back(x);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("layer-wise report: ") + e.what());
  }
}

SweepReport parse_sweep_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SweepReport r;
    r.provenance = j.at("provenance");
    r.naive_accuracy = j.at("naive_accuracy").get<double>();
    for (const auto& row : j.at("rows")) {
      r.rows.push_back({row.at("threshold").get<double>(), row.at("accuracy").get<double>(),
                        row.at("mean_exit_layer").get<double>(), row.at("mean_full_ops").get<double>(),
                        row.at("mean_reduced_ops").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sweep report: ") + e.what());
  }
}

void emit_report(const std::filesystem::path& path, const LayerwiseReport& r, ReportFormat format) {
  write_text(path, format == ReportFormat::Csv ? to_csv(r) : to_json_text(r));
}

void emit_report(const std::filesystem::path& path, const SweepReport& r, ReportFormat format) {
  write_text(path, format == ReportFormat::Csv ? to_csv(r) : to_json_text(r));
}

}  // namespace spade::harness
