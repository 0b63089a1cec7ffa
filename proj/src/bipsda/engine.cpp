#include "bipsda/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>

namespace bipsda {

const std::vector<std::string>& variant_labels() {
  static const std::vector<std::string> labels = {"Lang-ODE", "Lang-TU", "Lang-TC", "MAP-ODE", "MAP-TU",
                                                  "MAP-TC",   "RTO-ODE", "RTO-TU",  "RTO-TC"};
  return labels;
}

VariantConfig VariantConfig::from_label(const std::string& label) {
  const auto dash = label.find('-');
  require(dash != std::string::npos, ErrorCode::kInvalidArgument, "variant label '" + label + "' is not <sampler>-<denoise>");
  VariantConfig cfg;
  cfg.label = label;
  cfg.sampler.kind = sampler_kind_from_string(label.substr(0, dash));
  cfg.denoise.variant = denoise_variant_from_string(label.substr(dash + 1));
  return cfg;
}

void VariantConfig::validate() const {
  const std::string expect = std::string(to_string(sampler.kind)) + "-" + to_string(denoise.variant);
  require(label == expect, ErrorCode::kInvalidArgument,
          "variant label '" + label + "' does not match its configuration '" + expect + "'");
  denoise.validate();
  sampler.validate();
}

Matrix likelihood_curvature(const Problem& problem, const ScoreProvider& sp) {
  if (const auto* analytic = dynamic_cast<const AnalyticScore*>(&sp)) {
    return average_gauss_newton(problem, representative_points(analytic->prior()));
  }
  return average_gauss_newton(problem, {Vector::Zero(problem.dim())});
}

namespace {

// Lower bound on lambda_min(C) from a Gershgorin bound on the precision.
double min_variance_bound(const PredictionTarget& target) {
  if (target.isotropic()) return target.denoise().isotropic_variance;
  const double gersh = target.precision().cwiseAbs().rowwise().sum().maxCoeff();
  return 1.0 / gersh;
}

}  // namespace

Vector bipsda_run(const VariantConfig& cfg, const Problem& problem, const Vector& y, const ScoreProvider& sp, Rng& rng,
                  RunStats* stats, const Matrix* curvature, const RunHooks* hooks) {
  const Index d = problem.dim();
  require_dim(sp.dim(), d, "score provider");
  require_dim(y.size(), problem.meas_dim(), "measurement");
  if (cfg.denoise.variant == DenoiseVariant::kTC) {
    require(sp.has_jacobian(), ErrorCode::kVariantUnsupported,
            "variant " + cfg.label + " needs a score Jacobian the provider does not expose");
  }
  const auto& sched = cfg.schedule;
  const auto& sc = cfg.sampler;

  std::optional<Matrix> own_curvature;
  if (sc.kind == SamplerKind::kLang && sc.metropolis && !sc.precond && !curvature) {
    own_curvature = likelihood_curvature(problem, sp);
    curvature = &*own_curvature;
  }

  Vector m(d), noise(d), m0(d);
  rng.fill_normal(m);
  m *= NoiseSchedule::sigma(sched.T());

  for (int i = sched.num_steps(); i >= 1; --i) {
    const double t = sched.t(i);
    try {
      GaussianDist approx = build_denoise_approx(cfg.denoise, sp, m, t);
      PredictionTarget target(problem, y, std::move(approx));
      const Vector& init = target.denoise().mean;
      switch (sc.kind) {
        case SamplerKind::kLang:
          if (sc.metropolis) {
            Matrix precond = sc.precond ? *sc.precond : Matrix(*curvature + target.precision());
            MalaResult r = mala_precond_sample(target, init, sc.lang_step, sc.lang_iters, precond, rng);
            if (diverged_state(r.state)) throw DivergedSampleError(sc.lang_iters, "MALA state diverged");
            m0 = std::move(r.state);
            if (stats) {
              stats->mala_accepted += r.accepted;
              stats->mala_proposed += r.proposed;
            }
          } else {
            double step = sc.lang_step;
            if (sc.lang_step_cap > 0.0) step = std::min(step, sc.lang_step_cap * min_variance_bound(target));
            if (stats && (stats->min_lang_step == 0.0 || step < stats->min_lang_step)) stats->min_lang_step = step;
            m0 = ula_sample(target, init, step, sc.lang_iters, rng);
          }
          break;
        case SamplerKind::kMAP: {
          MapResult r = solve_map(target, init, sc);
          if (stats && r.degraded) ++stats->map_degraded;
          m0 = std::move(r.m);
          break;
        }
        case SamplerKind::kRTO: {
          MapResult r = rto_sample(target, init, rng, sc);
          if (stats && r.degraded) ++stats->map_degraded;
          m0 = std::move(r.m);
          break;
        }
      }
      if (hooks && hooks->on_predict) hooks->on_predict(i, target, init, m0);
    } catch (DivergedSampleError& e) {
      e.set_anneal_index(i);
      throw;
    }

    if (i == 1) break;
    const double sigma_next = NoiseSchedule::sigma(sched.t(i - 1));
    rng.fill_normal(noise);
    noise *= sigma_next;
    m.noalias() = m0 + noise;
    if (hooks && hooks->on_corrupt) hooks->on_corrupt(i, sigma_next, noise);
  }
  return m0;
}

int default_worker_count() {
  if (const char* env = std::getenv("BIPSDA_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<int>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 0) workers = default_worker_count();
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  if (nw <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nw);
  for (std::size_t w = 0; w < nw; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

SampleBatch bipsda_batch(const VariantConfig& cfg, const Problem& problem, const Vector& y, const ScoreProvider& sp,
                         std::size_t n, std::uint64_t master_seed, const BatchOptions& opts) {
  require(n >= 1, ErrorCode::kInvalidArgument, "batch size must be positive");
  cfg.validate();
  problem.check_measurement(y);
  const auto start = std::chrono::steady_clock::now();

  const Matrix* curvature = opts.curvature;
  Matrix own;
  if (!curvature && cfg.sampler.kind == SamplerKind::kLang && cfg.sampler.metropolis && !cfg.sampler.precond) {
    own = likelihood_curvature(problem, sp);
    curvature = &own;
  }

  struct Slot {
    std::optional<Vector> sample;
    RunStats stats;
    bool retried = false;
  };
  std::vector<Slot> slots(n);
  parallel_for(n, opts.workers, [&](std::size_t i) {
    Slot& slot = slots[i];
    for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
      Rng rng(sample_seed(master_seed, i, attempt));
      RunStats stats;
      try {
        slot.sample = bipsda_run(cfg, problem, y, sp, rng, &stats, curvature);
        slot.stats = stats;
        return;
      } catch (const DivergedSampleError&) {
        slot.retried = true;
      }
    }
  });

  SampleBatch out;
  out.method = cfg.label;
  out.master_seed = master_seed;
  std::size_t kept = 0;
  for (const auto& s : slots) kept += s.sample.has_value();
  out.samples.resize(static_cast<Index>(kept), problem.dim());
  Index row = 0;
  for (const auto& s : slots) {
    if (s.retried) ++out.retry_count;
    if (!s.sample) {
      ++out.discard_count;
      continue;
    }
    out.samples.row(row++) = s.sample->transpose();
    out.mala_accepted += s.stats.mala_accepted;
    out.mala_proposed += s.stats.mala_proposed;
    out.map_degraded += s.stats.map_degraded;
    if (s.stats.min_lang_step > 0.0 && (out.min_lang_step == 0.0 || s.stats.min_lang_step < out.min_lang_step)) {
      out.min_lang_step = s.stats.min_lang_step;
    }
  }
  out.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace bipsda
