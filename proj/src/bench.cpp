#include "biasctl/bench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "biasctl/gauss_oracle.hpp"

namespace biasctl {

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string SamplerSetup::label() const {
  std::ostringstream os;
  os << to_string(kind) << "(L=" << decoherence_length;
  if (fixed_step_size)
    os << ",eps=" << *fixed_step_size;
  else if (is_adjusted(kind))
    os << ",accept=" << accept_rate;
  else
    os << ",eevpd=" << eevpd;
  os << ")";
  return os.str();
}

WarmStart prepare_chain(const TargetModel& target, const SamplerSetup& setup, std::uint64_t seed,
                        std::uint64_t chain_id) {
  const std::size_t d = target.dim();
  const double eps0 = setup.initial_step_size.value_or(default_initial_step_size(d));
  WarmStart w;
  if (setup.fixed_step_size) {
    ChainRng rng(seed, tuning_stream(chain_id));
    Vector x0 = rng.normal_vector(static_cast<Eigen::Index>(d));
    Vector u0 = rng.normal_vector(static_cast<Eigen::Index>(d));
    w.state = make_state(target, std::move(x0), std::move(u0));
    w.step_size = *setup.fixed_step_size;
    w.tuning_grad_calls = 1;
    return w;
  }
  if (!is_adjusted(setup.kind)) {
    AdaptationOptions o;
    o.decoherence_length = setup.decoherence_length;
    o.sigma_xi = setup.sigma_xi;
    o.forget_n = setup.forget_n;
    o.seed = seed;
    o.chain_id = tuning_stream(chain_id);
    AdaptationResult r = run_adaptation(target, setup.kind, setup.eevpd, eps0, setup.adapt_steps, o);
    w.state = std::move(r.state);
    w.step_size = r.eps_final;
    w.tuning_grad_calls = r.grad_calls;
    return w;
  }
  ChainConfig c;
  c.kind = setup.kind;
  c.step_size = eps0;
  c.decoherence_length = setup.decoherence_length;
  c.seed = seed;
  c.chain_id = tuning_stream(chain_id);
  TuneResult r = tune_acceptance(target, c, setup.accept_rate);
  w.state = std::move(r.state);
  w.step_size = r.step_size;
  w.tuning_grad_calls = r.grad_calls;
  w.tuned = r.converged;
  return w;
}

std::optional<GaussSpectrum> gaussian_spectrum(const TargetModel& t) {
  if (const auto* g = dynamic_cast<const GaussTarget*>(&t)) return GaussSpectrum(g->spectrum());
  return std::nullopt;
}

namespace {

ChainConfig sampling_config(const SamplerSetup& s, double eps, std::uint64_t seed, std::uint64_t chain_id,
                            std::uint64_t steps) {
  ChainConfig c;
  c.kind = s.kind;
  c.step_size = eps;
  c.decoherence_length = s.decoherence_length;
  c.total_steps = steps;
  c.seed = seed;
  c.chain_id = sampling_stream(chain_id);
  return c;
}

bool use_full_moments(const TargetModel& t) {
  return t.truth() && t.truth()->cov && t.dim() <= kDiagonalThreshold;
}

struct BiasTask {
  std::array<RunningMoments, 4> quarters;
  EevpdAccumulator eevpd{1};
  ChainStats stats;
  std::uint64_t grad_calls = 0;
};

}  // namespace

std::vector<BiasCurvePoint> run_bias_curve(const TargetModel& target, const BiasCurveOptions& o) {
  if (is_adjusted(o.kind)) throw std::invalid_argument("bias curve: unadjusted sampler kind required");
  if (!target.truth()) throw std::invalid_argument("bias curve: target has no ground truth");
  if (o.eps_grid.empty()) throw std::invalid_argument("bias curve: empty step-size grid");
  if (o.budget <= o.burn_in + 4) throw std::invalid_argument("bias curve: budget must exceed burn-in");
  if (o.chains == 0 || o.thin == 0) throw std::invalid_argument("bias curve: chains and thin must be positive");
  const auto& truth = *target.truth();
  const std::size_t d = target.dim();
  const bool full = use_full_moments(target);
  const std::size_t n_tasks = o.eps_grid.size() * o.chains;
  std::vector<BiasTask> tasks(n_tasks);

  parallel_for(n_tasks, o.threads, [&](std::size_t idx) {
    const std::size_t e = idx / o.chains, c = idx % o.chains;
    BiasTask& task = tasks[idx];
    for (auto& q : task.quarters) q = RunningMoments(d, !full);
    task.eevpd = EevpdAccumulator(d);
    ChainConfig cfg;
    cfg.kind = o.kind;
    cfg.step_size = o.eps_grid[e];
    cfg.decoherence_length = o.decoherence_length;
    cfg.total_steps = o.budget;
    cfg.seed = o.seed;
    cfg.chain_id = sampling_stream(c);
    Chain chain(target, cfg);
    const std::uint64_t span = o.budget - o.burn_in;
    std::size_t samples = 0;
    for (std::uint64_t i = 0; i < o.budget; ++i) {
      const StepRecord& rec = chain.step();
      if (i < o.burn_in) continue;
      if (!rec.divergent) task.eevpd.update(rec.delta_h);
      if (rec.sample && (samples++ % o.thin == 0)) {
        const std::size_t q = std::min<std::uint64_t>(3, 4 * (i - o.burn_in) / span);
        task.quarters[q].update(rec.x());
      }
    }
    task.stats = chain.stats();
    task.grad_calls = chain.grad_calls();
  });

  const auto spectrum = gaussian_spectrum(target);
  std::vector<BiasCurvePoint> points;
  for (std::size_t e = 0; e < o.eps_grid.size(); ++e) {
    BiasCurvePoint p;
    p.eps = o.eps_grid[e];
    RunningMoments all(d, !full), half(d, !full), quarter(d, !full);
    EevpdAccumulator acc(d);
    std::uint64_t steps = 0, div = 0;
    for (std::size_t c = 0; c < o.chains; ++c) {
      const BiasTask& t = tasks[e * o.chains + c];
      RunningMoments own(d, !full);
      for (const auto& q : t.quarters) own.merge(q);
      all.merge(own);
      half.merge(t.quarters[2]);
      half.merge(t.quarters[3]);
      quarter.merge(t.quarters[3]);
      acc.merge(t.eevpd);
      steps += t.stats.verlet_steps;
      div += t.stats.divergences;
      p.grad_calls += t.grad_calls;
      BiasChainRow row;
      row.chain_id = c;
      row.eevpd = t.eevpd.estimate();
      if (own.count() > 0)
        row.report = make_error_report(truth, own, t.grad_calls, t.stats.divergent_fraction());
      else
        row.report.b2_cov = row.report.b2_avg = std::numeric_limits<double>::infinity();
      p.chains.push_back(std::move(row));
    }
    p.eevpd = acc.estimate();
    p.divergent_fraction = steps ? static_cast<double>(div) / static_cast<double>(steps) : 0.0;
    p.divergence_flagged = p.divergent_fraction > o.divergence_flag;
    if (all.count() > 1 && quarter.count() > 1) {
      p.b2_cov = b2_cov(truth, all);
      p.b2_cov_half = b2_cov(truth, half);
      p.b2_cov_quarter = b2_cov(truth, quarter);
      p.b2_avg = b2_avg(truth, all);
      p.converged = p.b2_cov_half > 0.0 &&
                    std::abs(p.b2_cov_quarter - p.b2_cov_half) < o.convergence_tolerance * p.b2_cov_half;
    } else {
      p.b2_cov = p.b2_cov_half = p.b2_cov_quarter = p.b2_avg = std::numeric_limits<double>::infinity();
    }
    if (p.eevpd < kPhiInvMax) p.bound = phi_inv(p.eevpd);
    if (spectrum && spectrum->stable(p.eps)) {
      p.eevpd_exact = eevpd_exact(*spectrum, p.eps);
      p.b2_exact = b2_exact(*spectrum, p.eps);
    }
    points.push_back(std::move(p));
  }
  return points;
}

ScalingFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_loglog: need two or more points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double den = n * sxx - sx * sx;
  if (den <= 0.0) throw std::invalid_argument("fit_loglog: degenerate abscissae");
  ScalingFit f;
  f.slope = (n * sxy - sx * sy) / den;
  f.intercept = (sy - f.slope * sx) / n;
  f.points = x.size();
  return f;
}

ScalingResult run_scaling(TargetPtr block, const ScalingOptions& o) {
  if (!block || !block->truth()) throw std::invalid_argument("scaling: block needs a ground truth");
  if (o.copies.empty() || o.samplers.empty()) throw std::invalid_argument("scaling: nothing to run");
  if (o.chains < 2) throw std::invalid_argument("scaling: need at least two chains");
  const auto grid = checkpoint_grid(o.budget, o.grid_points, true, 10);
  ScalingResult result;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> series;

  for (std::size_t k : o.copies) {
    auto target = make_product(block, k);
    const double m2 = target->truth()->second_moment()[0];
    for (const auto& s : o.samplers) {
      std::vector<Curve> estimates(o.chains);
      std::vector<double> eps(o.chains);
      std::vector<std::uint64_t> tune_calls(o.chains);
      parallel_for(o.chains, o.threads, [&](std::size_t c) {
        WarmStart w = prepare_chain(*target, s, o.seed, c);
        eps[c] = w.step_size;
        tune_calls[c] = w.tuning_grad_calls;
        Chain chain(*target, sampling_config(s, w.step_size, o.seed, c, o.budget), std::move(w.state));
        Curve& est = estimates[c];
        est.reserve(grid.size());
        double sum = 0.0;
        std::uint64_t n = 0;
        std::size_t gi = 0;
        for (std::uint64_t i = 1; gi < grid.size(); ++i) {
          const StepRecord& rec = chain.step();
          if (rec.sample) {
            sum += rec.position[0] * rec.position[0];
            ++n;
          }
          if (i == grid[gi]) {
            est.push_back(n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN());
            ++gi;
          }
        }
      });
      Curve rmse(grid.size());
      for (std::size_t g = 0; g < grid.size(); ++g) {
        double ss = 0.0;
        bool missing = false;
        for (const auto& est : estimates) {
          if (std::isnan(est[g])) missing = true;
          ss += (est[g] - m2) * (est[g] - m2);
        }
        rmse[g] = missing ? std::numeric_limits<double>::infinity()
                          : std::sqrt(ss / static_cast<double>(o.chains)) / std::abs(m2);
      }
      ScalingRow row;
      row.copies = k;
      row.dim = target->dim();
      row.sampler = s.label();
      for (double e : eps) row.mean_step_size += e / static_cast<double>(o.chains);
      std::uint64_t tc = 0;
      for (auto t : tune_calls) tc += t;
      row.mean_tuning_grad_calls = tc / o.chains;
      row.crossing = grads_to_threshold(grid, rmse, o.rmse_tolerance);
      row.final_rmse = rmse.back();
      if (!row.crossing.censored) {
        series[row.sampler].first.push_back(static_cast<double>(row.dim));
        series[row.sampler].second.push_back(static_cast<double>(row.crossing.grad_calls));
      }
      result.rows.push_back(row);
    }
  }
  for (const auto& s : o.samplers) {
    const auto it = series.find(s.label());
    ScalingFit f;
    f.sampler = s.label();
    if (it != series.end() && it->second.first.size() >= 2) {
      f = fit_loglog(it->second.first, it->second.second);
      f.sampler = s.label();
    } else {
      f.slope = f.intercept = std::numeric_limits<double>::quiet_NaN();
    }
    result.fits.push_back(f);
  }
  return result;
}

std::vector<std::size_t> ThresholdResult::best_per_kind() const {
  std::map<SamplerKind, std::size_t> best;
  auto cost = [&](const ThresholdEntry& e) {
    return e.crossing.censored ? std::numeric_limits<double>::infinity()
                               : static_cast<double>(e.crossing.grad_calls);
  };
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto k = entries[i].setup.kind;
    auto it = best.find(k);
    if (it == best.end() || cost(entries[i]) < cost(entries[it->second])) best[k] = i;
  }
  std::vector<std::size_t> out;
  for (const auto& [k, i] : best) out.push_back(i);
  return out;
}

ThresholdResult run_grads_to_threshold(const TargetModel& target, const ThresholdOptions& o) {
  if (!target.truth()) throw std::invalid_argument("threshold: target has no ground truth");
  if (!(o.threshold > 0.0 && o.threshold < 1.0 + 1e-12))
    throw std::invalid_argument("threshold: must lie in (0, 1]");
  if (o.chains < 2) throw std::invalid_argument("threshold: need at least two chains");
  const auto& truth = *target.truth();
  const std::size_t d = target.dim();
  const bool full = use_full_moments(target);
  if (o.metric == ErrorMetric::b2_cov && !full && d <= kDiagonalThreshold && !truth.cov)
    throw std::invalid_argument("threshold: b2_cov needs a covariance ground truth");

  ThresholdResult result;
  result.grid = checkpoint_grid(o.budget, o.grid_points, true, 10);
  const auto& grid = result.grid;

  for (const auto& s : o.samplers) {
    std::vector<Curve> curves(o.chains);
    std::vector<ErrorReport> finals(o.chains);
    std::vector<double> eps(o.chains);
    std::vector<char> tuned(o.chains);
    parallel_for(o.chains, o.threads, [&](std::size_t c) {
      WarmStart w = prepare_chain(target, s, o.seed, c);
      eps[c] = w.step_size;
      tuned[c] = w.tuned;
      Chain chain(target, sampling_config(s, w.step_size, o.seed, c, o.budget), std::move(w.state));
      RunningMoments moments(d, !full || o.metric == ErrorMetric::b2_avg);
      Vector sum_sq = Vector::Zero(static_cast<Eigen::Index>(d));
      std::uint64_t n = 0;
      Curve& curve = curves[c];
      curve.reserve(grid.size());
      std::size_t gi = 0;
      for (std::uint64_t i = 1; gi < grid.size(); ++i) {
        const StepRecord& rec = chain.step();
        if (rec.sample) {
          sum_sq += rec.x().cwiseAbs2();
          moments.update(rec.x());
          ++n;
        }
        if (i == grid[gi]) {
          double v = std::numeric_limits<double>::infinity();
          if (n > 0) {
            if (o.metric == ErrorMetric::b2_avg)
              v = b2_avg(truth, Vector(sum_sq / static_cast<double>(n)));
            else if (n > 1)
              v = b2_cov(truth, moments);
          }
          curve.push_back(v);
          ++gi;
        }
      }
      if (n > 1) finals[c] = make_error_report(truth, moments, chain.grad_calls(), chain.stats().divergent_fraction());
      finals[c].grad_calls = chain.grad_calls();
    });
    ThresholdEntry entry;
    entry.setup = s;
    for (double e : eps) entry.mean_step_size += e / static_cast<double>(o.chains);
    entry.untuned_chains = static_cast<std::size_t>(std::count(tuned.begin(), tuned.end(), 0));
    entry.median = median_curve(curves);
    entry.crossing = grads_to_threshold(grid, entry.median, o.threshold);
    entry.bootstrap = bootstrap_error(curves, grid, o.threshold, o.bootstrap_resamples, o.seed);
    entry.final_reports = std::move(finals);
    result.entries.push_back(std::move(entry));
  }
  return result;
}

AdaptTrace run_adaptation_trace(const TargetModel& target, const AdaptTraceOptions& o) {
  AdaptationOptions ao;
  ao.decoherence_length = o.decoherence_length;
  ao.sigma_xi = o.sigma_xi;
  ao.forget_n = o.forget_n;
  ao.seed = o.seed;
  ao.chain_id = o.chain_id;
  ao.record_trace = true;
  const double eps0 = o.initial_step_size.value_or(default_initial_step_size(target.dim()));
  AdaptTrace t;
  AdaptationResult r;
  try {
    r = run_adaptation(target, o.kind, o.alpha, eps0, o.steps, ao);
  } catch (AdaptationDiverged& e) {
    r = std::move(e.partial);
    t.aborted = true;
    t.abort_reason = e.what();
  }
  t.alpha = o.alpha;
  t.dim = target.dim();
  t.eps_final = r.eps_final;
  t.divergences = r.divergences;
  EevpdAccumulator acc(target.dim());
  const std::size_t n = r.delta_h_trace.size();
  const std::size_t start = n - n / 4;
  for (std::size_t i = start; i < r.delta_h_trace.size(); ++i) {
    const double dh = r.delta_h_trace[i];
    if (std::isfinite(dh) && std::abs(dh) <= ao.divergence_threshold) acc.update(dh);
  }
  t.final_quarter_eevpd = acc.estimate();
  t.eps = std::move(r.eps_trace);
  t.delta_h = std::move(r.delta_h_trace);
  return t;
}

}  // namespace biasctl
