#include "biasctl/report.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>

#include <json.hpp>

namespace biasctl {

using nlohmann::ordered_json;

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string header_comment(const RunInfo& info) {
  std::string h = "# bench " + info.command + " model=" + info.model + " seed=" + std::to_string(info.seed) +
                  " config_hash=" + info.config_hash;
  if (!info.deterministic) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    h += " generated=";
    h += buf;
  }
  return h;
}

const std::vector<std::string> kErrorReportColumns = {"model",   "sampler",           "eps",      "L",
                                                      "eevpd_target", "grad_calls",   "b2_cov",   "b2_avg",
                                                      "divergent_fraction", "chain_id", "seed", "config_hash"};

namespace {

void write_header(std::ostream& os, const RunInfo& info, const std::vector<std::string>& columns) {
  os << header_comment(info) << '\n';
  for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
  os << '\n';
}

std::vector<std::string> with_extra(std::vector<std::string> extra) {
  std::vector<std::string> cols = kErrorReportColumns;
  cols.insert(cols.end(), extra.begin(), extra.end());
  return cols;
}

struct Row {
  std::ostream& os;
  bool first = true;
  template <class T>
  Row& operator<<(const T& v) {
    if (!first) os << ',';
    first = false;
    if constexpr (std::is_floating_point_v<T>)
      os << format_number(v);
    else if constexpr (std::is_convertible_v<T, std::string>)
      os << csv_field(std::string(v));
    else
      os << v;
    return *this;
  }
  ~Row() { os << '\n'; }
};

void error_columns(Row& r, const RunInfo& info, const std::string& sampler, double eps, double L, double target,
                   const ErrorReport& rep, const std::string& chain_id) {
  r << info.model << sampler << eps << L << target << rep.grad_calls << rep.b2_cov << rep.b2_avg
    << rep.divergent_fraction << chain_id << info.seed << info.config_hash;
}

std::string chain_range(std::size_t chains) { return "0-" + std::to_string(chains - 1); }

ordered_json finite_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

}  // namespace

void write_bias_curve(std::ostream& chains_csv, std::ostream& points_csv, const RunInfo& info,
                      const BiasCurveOptions& o, const std::vector<BiasCurvePoint>& points) {
  const std::string sampler(to_string(o.kind));
  write_header(chains_csv, info, with_extra({"eevpd_measured"}));
  for (const auto& p : points)
    for (const auto& c : p.chains) {
      Row r{chains_csv};
      error_columns(r, info, sampler, p.eps, o.decoherence_length, std::nan(""), c.report, std::to_string(c.chain_id));
      r << c.eevpd;
    }
  write_header(points_csv, info,
               with_extra({"eevpd_measured", "eevpd_exact", "b2_exact", "b2_bound", "b2_cov_half", "b2_cov_quarter",
                           "converged", "divergence_flagged"}));
  for (const auto& p : points) {
    ErrorReport rep;
    rep.b2_cov = p.b2_cov;
    rep.b2_avg = p.b2_avg;
    rep.grad_calls = p.grad_calls;
    rep.divergent_fraction = p.divergent_fraction;
    Row r{points_csv};
    error_columns(r, info, sampler, p.eps, o.decoherence_length, std::nan(""), rep, chain_range(o.chains));
    r << p.eevpd << p.eevpd_exact.value_or(std::nan("")) << p.b2_exact.value_or(std::nan(""))
      << p.bound.value_or(std::nan("")) << p.b2_cov_half << p.b2_cov_quarter << (p.converged ? 1 : 0)
      << (p.divergence_flagged ? 1 : 0);
  }
}

void write_scaling(std::ostream& csv, std::ostream& json, const RunInfo& info, const ScalingOptions& o,
                   const ScalingResult& result) {
  csv << header_comment(info) << '\n'
      << "model,sampler,copies,dim,eps_mean,rmse_tol,grad_calls,censored,final_rmse,tuning_grad_calls,chain_id,seed,"
         "config_hash\n";
  for (const auto& row : result.rows) {
    Row r{csv};
    r << info.model << row.sampler << row.copies << row.dim << row.mean_step_size << o.rmse_tolerance
      << row.crossing.grad_calls << (row.crossing.censored ? 1 : 0) << row.final_rmse << row.mean_tuning_grad_calls
      << chain_range(o.chains) << info.seed << info.config_hash;
  }
  ordered_json j;
  j["command"] = info.command;
  j["model"] = info.model;
  j["seed"] = info.seed;
  j["config_hash"] = info.config_hash;
  j["rmse_tolerance"] = o.rmse_tolerance;
  j["chains"] = o.chains;
  j["budget"] = o.budget;
  for (const auto& f : result.fits)
    j["fits"].push_back({{"sampler", f.sampler}, {"slope", finite_or_null(f.slope)}, {"points", f.points}});
  for (const auto& row : result.rows)
    j["rows"].push_back({{"sampler", row.sampler},
                         {"copies", row.copies},
                         {"dim", row.dim},
                         {"eps_mean", row.mean_step_size},
                         {"grad_calls", row.crossing.grad_calls},
                         {"censored", row.crossing.censored}});
  json << j.dump(2) << '\n';
}

void write_threshold(std::ostream& curves_csv, std::ostream& chains_csv, std::ostream& json, const RunInfo& info,
                     const ThresholdOptions& o, const ThresholdResult& result) {
  const char* metric = o.metric == ErrorMetric::b2_avg ? "b2_avg" : "b2_cov";
  curves_csv << header_comment(info) << '\n' << "model,sampler,grad_calls,median_" << metric << ",chain_id,seed,config_hash\n";
  for (const auto& e : result.entries)
    for (std::size_t g = 0; g < result.grid.size(); ++g) {
      Row r{curves_csv};
      r << info.model << e.setup.label() << result.grid[g] << e.median[g] << chain_range(o.chains) << info.seed
        << info.config_hash;
    }
  write_header(chains_csv, info, kErrorReportColumns);
  for (const auto& e : result.entries)
    for (std::size_t c = 0; c < e.final_reports.size(); ++c) {
      Row r{chains_csv};
      const double target = is_adjusted(e.setup.kind) ? e.setup.accept_rate : e.setup.eevpd;
      error_columns(r, info, e.setup.label(), e.mean_step_size, e.setup.decoherence_length, target, e.final_reports[c],
                    std::to_string(c));
    }
  ordered_json j;
  j["command"] = info.command;
  j["model"] = info.model;
  j["metric"] = metric;
  j["threshold"] = o.threshold;
  j["seed"] = info.seed;
  j["config_hash"] = info.config_hash;
  j["chains"] = o.chains;
  j["budget"] = o.budget;
  for (const auto& e : result.entries)
    j["entries"].push_back({{"sampler", e.setup.label()},
                            {"kind", std::string(to_string(e.setup.kind))},
                            {"L", e.setup.decoherence_length},
                            {"eps_mean", e.mean_step_size},
                            {"grad_calls", e.crossing.grad_calls},
                            {"censored", e.crossing.censored},
                            {"bootstrap_relative_error", finite_or_null(e.bootstrap.relative_error)},
                            {"bootstrap_censored_resamples", e.bootstrap.censored_resamples},
                            {"untuned_chains", e.untuned_chains}});
  for (std::size_t i : result.best_per_kind()) {
    const auto& e = result.entries[i];
    j["best"].push_back({{"kind", std::string(to_string(e.setup.kind))},
                         {"sampler", e.setup.label()},
                         {"grad_calls", e.crossing.grad_calls},
                         {"censored", e.crossing.censored}});
  }
  json << j.dump(2) << '\n';
}

void write_adapt_trace(std::ostream& csv, std::ostream& json, const RunInfo& info, const AdaptTraceOptions& o,
                       const AdaptTrace& t) {
  csv << header_comment(info) << '\n' << "step,eps,delta_h_sq_per_dim,alpha,chain_id,seed,config_hash\n";
  for (std::size_t i = 0; i < t.eps.size(); ++i) {
    Row r{csv};
    r << i << t.eps[i] << t.delta_h[i] * t.delta_h[i] / static_cast<double>(t.dim) << t.alpha << o.chain_id << info.seed
      << info.config_hash;
  }
  ordered_json j;
  j["command"] = info.command;
  j["model"] = info.model;
  j["sampler"] = std::string(to_string(o.kind));
  j["alpha"] = t.alpha;
  j["eps_final"] = t.eps_final;
  j["final_quarter_eevpd"] = t.final_quarter_eevpd;
  j["divergences"] = t.divergences;
  j["aborted"] = t.aborted;
  if (t.aborted) j["abort_reason"] = t.abort_reason;
  j["seed"] = info.seed;
  j["config_hash"] = info.config_hash;
  json << j.dump(2) << '\n';
}

void write_oracle(std::ostream& csv, const RunInfo& info, const GaussSpectrum& spectrum,
                  const std::vector<double>& eps_grid) {
  csv << header_comment(info) << '\n'
      << "eps,eevpd_exact,b2_exact,b2_bound,w2_per_dim_exact,w2_per_dim_bound,stable,b2_certified,w2_certified\n";
  for (double eps : eps_grid) {
    Row r{csv};
    if (!spectrum.stable(eps)) {
      const double nan = std::nan("");
      r << eps << nan << nan << nan << nan << nan << 0 << 0 << 0;
      continue;
    }
    const BoundReport b = bound_report(spectrum, eps);
    r << eps << b.eevpd << b.exact_b2 << b.b2_bound << b.exact_w2_per_dim << b.w2_bound_per_dim << 1
      << (b.b2_bound_certified ? 1 : 0) << (b.w2_bound_certified ? 1 : 0);
  }
}

}  // namespace biasctl
