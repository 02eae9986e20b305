#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "biasctl/bench.hpp"
#include "biasctl/gauss_oracle.hpp"

namespace biasctl {

/// Identifies one experiment in every output file.
struct RunInfo {
  std::string command;
  std::string model;
  std::string config_hash;
  std::uint64_t seed = 0;
  /// Suppresses the wall-clock timestamp in file headers.
  bool deterministic = false;
};

/// "%.12g"; "inf"/"nan" for non-finite values.
std::string format_number(double v);
/// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_field(const std::string& s);

/// `# bench <command> model=<id> seed=<n> config_hash=<h> [generated=<UTC>]`
std::string header_comment(const RunInfo& info);

/// Column names shared by all per-chain rows.
extern const std::vector<std::string> kErrorReportColumns;

void write_bias_curve(std::ostream& chains_csv, std::ostream& points_csv, const RunInfo& info,
                      const BiasCurveOptions& options, const std::vector<BiasCurvePoint>& points);

void write_scaling(std::ostream& csv, std::ostream& json, const RunInfo& info, const ScalingOptions& options,
                   const ScalingResult& result);

void write_threshold(std::ostream& curves_csv, std::ostream& chains_csv, std::ostream& json,
                     const RunInfo& info, const ThresholdOptions& options, const ThresholdResult& result);

void write_adapt_trace(std::ostream& csv, std::ostream& json, const RunInfo& info,
                       const AdaptTraceOptions& options, const AdaptTrace& trace);

/// One row per step size: exact EEVPD, b2, W2 and both bounds.
void write_oracle(std::ostream& csv, const RunInfo& info, const GaussSpectrum& spectrum,
                  const std::vector<double>& eps_grid);

}  // namespace biasctl
