// bench: experiment driver writing CSV/JSON artifacts.
//
//   bench bias-curve  --model 'gauss-ill(d=100,kappa=1000)' --eevpd-grid 1e-4,1e-3,1e-2 --out runs/
//   bench scaling     --model 'gauss-std(d=1)' --K 16,64,256 --sampler ulmc,almc --L 2
//   bench table       --model 'rosenbrock(copies=18)' --sampler ulmc,almc --L 4,8
//   bench adapt-trace --model 'rosenbrock(copies=18)' --eevpd 1e-3
//   bench oracle      --model 'gauss-ill(d=100)' --eevpd-grid 1e-6,1e-3,0.3
//
// Exit status: 0 ok, 2 censored or incomplete results, 1 error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "biasctl/bench.hpp"
#include "biasctl/gauss_oracle.hpp"
#include "biasctl/report.hpp"
#include "biasctl/targets.hpp"

namespace fs = std::filesystem;
using namespace biasctl;

namespace {

struct Options {
  std::string model = "gauss-std(d=100)";
  std::vector<std::string> samplers;
  std::vector<double> lengths{1.0};
  std::size_t chains = 128;
  std::uint64_t budget = 0;  // 0: per-command default
  std::vector<double> eps_grid;
  std::vector<double> eevpd_grid;
  double eevpd = 0.0;
  double rmse_tol = 0.0;
  double bias_tol = 0.0;
  double accept = 0.8;
  std::size_t adapt_steps = 2000;
  double sigma_xi = kDefaultSigmaXi;
  double forget_n = kDefaultForgetN;
  std::vector<std::size_t> copies{16, 32, 64, 128, 256, 512, 1024};
  double threshold = 0.01;
  std::string metric = "b2_avg";
  std::size_t grid_points = 256;
  std::uint64_t burn_in = 0;
  std::size_t steps = 10'000;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out = ".";
  bool deterministic = false;
};

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_number(v[i]);
  return s;
}

// Options that change results, in a fixed order. Output paths and thread
// counts are left out so reruns elsewhere hash the same.
std::string canonical(const std::string& cmd, const Options& o, double eevpd) {
  std::ostringstream os;
  os << "cmd=" << cmd << ";model=" << o.model << ";samplers=";
  for (const auto& s : o.samplers) os << s << ',';
  os << ";L=" << join(o.lengths) << ";chains=" << o.chains << ";budget=" << o.budget
     << ";eps=" << join(o.eps_grid) << ";eevpd_grid=" << join(o.eevpd_grid) << ";eevpd=" << format_number(eevpd)
     << ";accept=" << format_number(o.accept) << ";adapt_steps=" << o.adapt_steps
     << ";sigma_xi=" << format_number(o.sigma_xi) << ";forget_n=" << format_number(o.forget_n) << ";K=";
  for (auto k : o.copies) os << k << ',';
  os << ";threshold=" << format_number(o.threshold) << ";metric=" << o.metric << ";grid_points=" << o.grid_points
     << ";burn_in=" << o.burn_in << ";steps=" << o.steps << ";seed=" << o.seed;
  return os.str();
}

double tuning_eevpd(const Options& o) {
  if (o.eevpd > 0) return o.eevpd;
  if (o.rmse_tol > 0) return budget_from_rmse(o.rmse_tol).eevpd_target;
  if (o.bias_tol > 0) return budget_from_bias(o.bias_tol).eevpd_target;
  return budget_from_rmse(0.1).eevpd_target;
}

std::vector<SamplerSetup> setups(const Options& o, double eevpd) {
  std::vector<SamplerSetup> out;
  for (const auto& name : o.samplers)
    for (double L : o.lengths) {
      SamplerSetup s;
      s.kind = parse_sampler_kind(name);
      s.decoherence_length = L;
      s.eevpd = eevpd;
      s.accept_rate = o.accept;
      s.adapt_steps = o.adapt_steps;
      s.sigma_xi = o.sigma_xi;
      s.forget_n = o.forget_n;
      out.push_back(s);
    }
  return out;
}

std::vector<double> step_grid(const Options& o, const TargetModel& target) {
  std::vector<double> grid = o.eps_grid;
  if (!o.eevpd_grid.empty()) {
    const auto spectrum = gaussian_spectrum(target);
    if (!spectrum) throw std::invalid_argument("--eevpd-grid needs a Gaussian model");
    for (double v : o.eevpd_grid) grid.push_back(step_size_for_eevpd(*spectrum, v));
  }
  if (grid.empty()) throw std::invalid_argument("give --eps-grid or --eevpd-grid");
  return grid;
}

std::ofstream open_out(const Options& o, const std::string& name) {
  const fs::path p = fs::path(o.out) / name;
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  std::cerr << "wrote " << p.string() << '\n';
  return f;
}

int bias_curve(const Options& o, const RunInfo& info) {
  auto target = make_model(o.model);
  BiasCurveOptions b;
  b.kind = parse_sampler_kind(o.samplers.empty() ? "uhmc" : o.samplers.front());
  b.decoherence_length = o.lengths.front();
  b.eps_grid = step_grid(o, *target);
  b.budget = o.budget ? o.budget : 1'000'000;
  b.burn_in = o.burn_in ? o.burn_in : b.budget / 10;
  b.chains = o.chains;
  b.seed = o.seed;
  b.threads = o.threads;
  const auto points = run_bias_curve(*target, b);
  auto chains = open_out(o, "bias_chains.csv");
  auto curve = open_out(o, "bias_curve.csv");
  write_bias_curve(chains, curve, info, b, points);
  int code = 0;
  for (const auto& p : points) {
    std::printf("eps=%-10.4g eevpd=%-10.4g b2_cov=%-10.4g bound=%-10.4g %s%s\n", p.eps, p.eevpd, p.b2_cov,
                p.bound.value_or(std::nan("")), p.converged ? "converged" : "excluded",
                p.divergence_flagged ? " divergent" : "");
    if (!p.converged || p.divergence_flagged) code = 2;
  }
  return code;
}

int scaling(const Options& o, const RunInfo& info) {
  ScalingOptions s;
  s.copies = o.copies;
  s.samplers = setups(o, tuning_eevpd(o));
  s.rmse_tolerance = o.rmse_tol > 0 ? o.rmse_tol : 0.1;
  s.chains = o.chains;
  s.budget = o.budget ? o.budget : 20'000;
  s.grid_points = o.grid_points;
  s.seed = o.seed;
  s.threads = o.threads;
  const auto r = run_scaling(make_model(o.model), s);
  auto csv = open_out(o, "scaling.csv");
  auto json = open_out(o, "scaling.json");
  write_scaling(csv, json, info, s, r);
  int code = 0;
  for (const auto& row : r.rows) {
    std::printf("%-36s K=%-5zu grads=%llu%s\n", row.sampler.c_str(), row.copies,
                static_cast<unsigned long long>(row.crossing.grad_calls), row.crossing.censored ? " censored" : "");
    if (row.crossing.censored) code = 2;
  }
  for (const auto& f : r.fits) std::printf("%-36s slope=%.3f\n", f.sampler.c_str(), f.slope);
  return code;
}

int table(const Options& o, const RunInfo& info) {
  auto target = make_model(o.model);
  ThresholdOptions t;
  t.samplers = setups(o, tuning_eevpd(o));
  if (o.metric == "b2_avg")
    t.metric = ErrorMetric::b2_avg;
  else if (o.metric == "b2_cov")
    t.metric = ErrorMetric::b2_cov;
  else
    throw std::invalid_argument("--metric must be b2_avg or b2_cov");
  t.threshold = o.threshold;
  t.chains = o.chains;
  t.budget = o.budget ? o.budget : 100'000;
  t.grid_points = o.grid_points;
  t.seed = o.seed;
  t.threads = o.threads;
  const auto r = run_grads_to_threshold(*target, t);
  auto curves = open_out(o, "threshold_curves.csv");
  auto chains = open_out(o, "threshold_chains.csv");
  auto json = open_out(o, "threshold.json");
  write_threshold(curves, chains, json, info, t, r);
  int code = 0;
  for (const auto& e : r.entries) {
    std::printf("%-36s eps=%-8.4g grads=%-8llu rel.err=%.3f%s\n", e.setup.label().c_str(), e.mean_step_size,
                static_cast<unsigned long long>(e.crossing.grad_calls), e.bootstrap.relative_error,
                e.crossing.censored ? " censored" : "");
    if (e.crossing.censored) code = 2;
  }
  return code;
}

int adapt_trace(const Options& o, const RunInfo& info) {
  auto target = make_model(o.model);
  AdaptTraceOptions a;
  a.kind = parse_sampler_kind(o.samplers.empty() ? "ulmc" : o.samplers.front());
  a.alpha = tuning_eevpd(o);
  a.steps = o.steps;
  a.decoherence_length = o.lengths.front();
  a.sigma_xi = o.sigma_xi;
  a.forget_n = o.forget_n;
  a.seed = o.seed;
  const auto t = run_adaptation_trace(*target, a);
  auto csv = open_out(o, "adapt_trace.csv");
  auto json = open_out(o, "adapt_trace.json");
  write_adapt_trace(csv, json, info, a, t);
  std::printf("eps_final=%.6g final_quarter_eevpd=%.4g alpha=%.4g divergences=%llu\n", t.eps_final,
              t.final_quarter_eevpd, t.alpha, static_cast<unsigned long long>(t.divergences));
  if (t.aborted) {
    std::fprintf(stderr, "adaptation aborted: %s\n", t.abort_reason.c_str());
    return 2;
  }
  return 0;
}

int oracle(const Options& o, const RunInfo& info) {
  auto target = make_model(o.model);
  const auto spectrum = gaussian_spectrum(*target);
  if (!spectrum) throw std::invalid_argument("oracle needs a Gaussian model");
  auto csv = open_out(o, "oracle.csv");
  write_oracle(csv, info, *spectrum, step_grid(o, *target));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bias-controlled HMC/LMC experiments"};
  app.set_config("--config", "", "TOML file with option values; flags given on the command line win");
  app.require_subcommand(1);
  Options o;

  app.add_option("--model", o.model, "target id, e.g. gauss-std(d=100), rosenbrock(copies=18,q=0.1)");
  app.add_option("--sampler", o.samplers, "uhmc, ulmc, ahmc, almc (comma separated)")->delimiter(',');
  app.add_option("--L", o.lengths, "decoherence length(s)")->delimiter(',');
  app.add_option("--chains", o.chains)->check(CLI::PositiveNumber);
  app.add_option("--budget", o.budget, "gradient calls per chain");
  app.add_option("--eps-grid", o.eps_grid)->delimiter(',');
  app.add_option("--eevpd-grid", o.eevpd_grid, "step sizes from exact EEVPD (Gaussian models)")->delimiter(',');
  auto* e1 = app.add_option("--eevpd", o.eevpd, "target EEVPD for unadjusted tuning");
  auto* e2 = app.add_option("--rmse-tol", o.rmse_tol, "relative RMSE tolerance");
  auto* e3 = app.add_option("--bias-tol", o.bias_tol, "bias tolerance");
  e1->excludes(e3);
  e3->excludes(e1);
  e1->excludes(e2);
  e2->excludes(e1);
  e2->excludes(e3);
  e3->excludes(e2);
  app.add_option("--accept", o.accept, "target acceptance for adjusted samplers");
  app.add_option("--adapt-steps", o.adapt_steps);
  app.add_option("--sigma-xi", o.sigma_xi);
  app.add_option("--forget-n", o.forget_n);
  app.add_option("--K", o.copies, "product sizes for scaling")->delimiter(',');
  app.add_option("--threshold", o.threshold);
  app.add_option("--metric", o.metric, "b2_avg or b2_cov");
  app.add_option("--grid-points", o.grid_points);
  app.add_option("--burn-in", o.burn_in);
  app.add_option("--steps", o.steps, "adaptation steps for adapt-trace");
  app.add_option("--seed", o.seed);
  app.add_option("--threads", o.threads, "0: hardware concurrency");
  app.add_option("--out", o.out, "output directory");
  app.add_flag("--deterministic", o.deterministic, "omit the timestamp from file headers");

  const std::vector<std::pair<std::string, int (*)(const Options&, const RunInfo&)>> commands = {
      {"bias-curve", bias_curve}, {"scaling", scaling}, {"table", table}, {"adapt-trace", adapt_trace}, {"oracle", oracle}};
  for (const auto& [name, fn] : commands) app.add_subcommand(name)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (o.threads == 0) o.threads = std::max(1u, std::thread::hardware_concurrency());
    if (o.chains < 2 && app.got_subcommand("table")) throw std::invalid_argument("--chains must be at least 2");
    fs::create_directories(o.out);
    for (const auto& [name, fn] : commands) {
      if (!app.got_subcommand(name)) continue;
      if (o.samplers.empty() && (name == "scaling" || name == "table")) o.samplers = {"ulmc", "almc"};
      RunInfo info;
      info.command = name;
      info.model = o.model;
      info.seed = o.seed;
      info.deterministic = o.deterministic;
      info.config_hash = fnv1a_hex(canonical(name, o, tuning_eevpd(o)));
      return fn(o, info);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bench: %s\n", e.what());
    return 1;
  }
  return 1;
}
