#include "cfdens/oracle.hpp"
#include "cfdens/effects.hpp"
#include "cfdens/error.hpp"
#include "cfdens/projection.hpp"

#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace cfdens {

// ---------------------------------------------------------------- rng

std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t rep_seed(std::uint64_t seed, std::uint64_t n, std::uint64_t rep)
{
  return splitmix64(splitmix64(splitmix64(seed) ^ n) ^ rep);
}

namespace {

double uniform01(std::mt19937_64& rng)
{
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double expit(double x)
{
  return 1.0 / (1.0 + std::exp(-x));
}

double normal_cdf(double z)
{
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

double truncated_normal_max(double mu, double sigma)
{
  return truncated_normal_pdf(std::clamp(mu, 0.0, 1.0), mu, sigma);
}

double b1(double y)
{
  return std::numbers::sqrt2 * std::cos(std::numbers::pi * y);
}

double b2(double y)
{
  return std::numbers::sqrt2 * std::cos(2.0 * std::numbers::pi * y);
}

} // namespace

double truncated_normal_pdf(double y, double mu, double sigma)
{
  if (y < 0.0 || y > 1.0)
    return 0.0;
  const double mass = normal_cdf((1.0 - mu) / sigma) - normal_cdf(-mu / sigma);
  const double z = (y - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi) * mass);
}

Eigen::VectorXd SyntheticDGP::eta_on_grid(int level, const Eigen::VectorXd& x,
                                          const EvalGrid& grid) const
{
  Eigen::VectorXd v(grid.size());
  for (Eigen::Index j = 0; j < grid.size(); ++j)
    v(j) = eta(level, grid.points(j), x);
  return v / grid.integrate(v);
}

std::vector<SyntheticDGP> dgp_library()
{
  std::vector<SyntheticDGP> out;

  {
    SyntheticDGP d;
    d.name = "D1";
    d.description = "randomized; X ~ U[0,1]^2, pi = 0.5, truncated normal outcomes";
    d.x_lo = 0.0;
    d.x_hi = 1.0;
    d.pi1 = [](const Eigen::VectorXd&) { return 0.5; };
    const auto mu = [](int a, const Eigen::VectorXd& x) {
      return 0.4 + 0.2 * a + 0.2 * (x(0) - 0.5);
    };
    d.eta = [mu](int a, double y, const Eigen::VectorXd& x) {
      return truncated_normal_pdf(y, mu(a, x), 0.18);
    };
    d.eta_bound = [mu](int a, const Eigen::VectorXd& x) {
      return truncated_normal_max(mu(a, x), 0.18);
    };
    out.push_back(d);
  }
  {
    SyntheticDGP d;
    d.name = "D2";
    d.description = "confounded; X ~ U[-1,1]^2, pi = expit(x1 - x2 + 0.2)";
    d.x_lo = -1.0;
    d.x_hi = 1.0;
    d.pi1 = [](const Eigen::VectorXd& x) { return expit(x(0) - x(1) + 0.2); };
    const auto mu = [](int a, const Eigen::VectorXd& x) {
      return 0.42 + 0.12 * a + 0.12 * x(0) - 0.06 * x(1);
    };
    d.eta = [mu](int a, double y, const Eigen::VectorXd& x) {
      return truncated_normal_pdf(y, mu(a, x), 0.2);
    };
    d.eta_bound = [mu](int a, const Eigen::VectorXd& x) {
      return truncated_normal_max(mu(a, x), 0.2);
    };
    out.push_back(d);
  }
  {
    SyntheticDGP d;
    d.name = "D3";
    d.description = "null; confounded as D2 with eta_1 = eta_0";
    d.x_lo = -1.0;
    d.x_hi = 1.0;
    d.pi1 = [](const Eigen::VectorXd& x) { return expit(x(0) - x(1) + 0.2); };
    const auto mu = [](const Eigen::VectorXd& x) { return 0.5 + 0.15 * x(0); };
    d.eta = [mu](int, double y, const Eigen::VectorXd& x) {
      return truncated_normal_pdf(y, mu(x), 0.2);
    };
    d.eta_bound = [mu](int, const Eigen::VectorXd& x) { return truncated_normal_max(mu(x), 0.2); };
    out.push_back(d);
  }
  {
    SyntheticDGP d;
    d.name = "D4";
    d.description = "bimodal; two-component truncated normal mixture";
    d.x_lo = 0.0;
    d.x_hi = 1.0;
    d.pi1 = [](const Eigen::VectorXd& x) { return expit(x(0) - 0.5); };
    d.eta = [](int a, double y, const Eigen::VectorXd& x) {
      return 0.6 * truncated_normal_pdf(y, 0.3 + 0.1 * (x(0) - 0.5), 0.08) +
             0.4 * truncated_normal_pdf(y, 0.7 + 0.1 * a, 0.1);
    };
    d.eta_bound = [](int a, const Eigen::VectorXd& x) {
      return 0.6 * truncated_normal_max(0.3 + 0.1 * (x(0) - 0.5), 0.08) +
             0.4 * truncated_normal_max(0.7 + 0.1 * a, 0.1);
    };
    out.push_back(d);
  }
  {
    SyntheticDGP d;
    d.name = "D5";
    d.description = "cosine; p_1 = 1 + 0.5 b_1, p_0 = 1, confounded through x1";
    d.x_lo = -1.0;
    d.x_hi = 1.0;
    d.pi1 = [](const Eigen::VectorXd& x) { return expit(0.8 * x(0) - 0.4 * x(1)); };
    constexpr double kappa = 0.15;
    d.eta = [](int a, double y, const Eigen::VectorXd& x) {
      return 1.0 + (a == 1 ? 0.5 * b1(y) : 0.0) + kappa * x(0) * b2(y);
    };
    d.eta_bound = [](int a, const Eigen::VectorXd&) {
      return 1.0 + (a == 1 ? 0.5 * std::numbers::sqrt2 : 0.0) + kappa * std::numbers::sqrt2;
    };
    out.push_back(d);
  }
  {
    SyntheticDGP d;
    d.name = "D6";
    d.description = "exponential family; eta_a = exp(beta_a' b - C) free of x";
    d.x_lo = -1.0;
    d.x_hi = 1.0;
    d.pi1 = [](const Eigen::VectorXd& x) { return expit(0.5 * x(0) + 0.3 * x(1)); };
    const auto beta = [](int a) {
      Eigen::VectorXd b(2);
      b << (a == 1 ? 0.3 : -0.2), (a == 1 ? -0.2 : 0.1);
      return b;
    };
    const auto state1 = std::make_shared<ModelState>(ModelSpec::expfam(2), beta(1));
    const auto state0 = std::make_shared<ModelState>(ModelSpec::expfam(2), beta(0));
    d.eta = [state1, state0](int a, double y, const Eigen::VectorXd&) {
      return (a == 1 ? state1 : state0)->value(y);
    };
    d.eta_bound = [state1, state0](int a, const Eigen::VectorXd&) {
      const auto& s = a == 1 ? *state1 : *state0;
      return std::exp(std::numbers::sqrt2 * s.beta().cwiseAbs().sum() - s.log_normalizer());
    };
    out.push_back(d);
  }
  return out;
}

SyntheticDGP dgp_by_name(const std::string& name)
{
  for (auto& d : dgp_library())
    if (d.name == name)
      return d;
  throw ConfigError("unknown DGP '" + name + "'");
}

ObservationTable draw(const SyntheticDGP& dgp, std::size_t n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), dgp.dim);
  std::vector<int> a(n);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index k = 0; k < dgp.dim; ++k)
      x(r, k) = dgp.x_lo + (dgp.x_hi - dgp.x_lo) * uniform01(rng);
    const Eigen::VectorXd xi = x.row(r).transpose();
    a[i] = uniform01(rng) < dgp.pi1(xi) ? 1 : 0;
    const double bound = dgp.eta_bound(a[i], xi);
    for (;;) {
      const double cand = uniform01(rng);
      if (uniform01(rng) * bound <= dgp.eta(a[i], cand, xi)) {
        y(r) = cand;
        break;
      }
    }
  }
  return make_unit_table(std::move(x), std::move(a), std::move(y));
}

CovariateQuadrature covariate_quadrature(const SyntheticDGP& dgp, std::size_t per_dim)
{
  const auto rule = make_grid(static_cast<Eigen::Index>(per_dim), QuadratureRule::gauss_legendre);
  const Eigen::VectorXd nodes = (dgp.x_lo + (dgp.x_hi - dgp.x_lo) * rule.points.array()).matrix();
  const Eigen::VectorXd& weights = rule.weights;

  Eigen::Index total = 1;
  for (Eigen::Index k = 0; k < dgp.dim; ++k)
    total *= static_cast<Eigen::Index>(per_dim);
  CovariateQuadrature q{ Eigen::MatrixXd(total, dgp.dim), Eigen::VectorXd(total) };
  for (Eigen::Index r = 0; r < total; ++r) {
    Eigen::Index rest = r;
    double w = 1.0;
    for (Eigen::Index k = 0; k < dgp.dim; ++k) {
      const Eigen::Index idx = rest % static_cast<Eigen::Index>(per_dim);
      rest /= static_cast<Eigen::Index>(per_dim);
      q.nodes(r, k) = nodes(idx);
      w *= weights(idx);
    }
    q.weights(r) = w;
  }
  return q;
}

Eigen::VectorXd true_marginal(const SyntheticDGP& dgp, int level, const EvalGrid& grid,
                              std::size_t per_dim)
{
  const auto q = covariate_quadrature(dgp, per_dim);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(grid.size());
  for (Eigen::Index r = 0; r < q.nodes.rows(); ++r)
    p += q.weights(r) * dgp.eta_on_grid(level, q.nodes.row(r).transpose(), grid);
  return p;
}

namespace {

class DgpPropensityFunction : public PropensityFunction
{
public:
  DgpPropensityFunction(SyntheticDGP dgp, int level)
    : dgp_(std::move(dgp))
    , level_(level)
  {}
  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& x) const override
  {
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      out(i) = dgp_.propensity(level_, x.row(i).transpose());
    return out;
  }

private:
  SyntheticDGP dgp_;
  int level_;
};

class DgpDensityFunction : public CondDensityFunction
{
public:
  DgpDensityFunction(SyntheticDGP dgp, int level)
    : dgp_(std::move(dgp))
    , level_(level)
  {}
  CondDensityTable tabulate(const Eigen::Ref<const Eigen::MatrixXd>& x,
                            const EvalGrid& grid) const override
  {
    Eigen::MatrixXd v(x.rows(), grid.size());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      v.row(i) = dgp_.eta_on_grid(level_, x.row(i).transpose(), grid).transpose();
    return CondDensityTable::dense(std::move(v));
  }

private:
  SyntheticDGP dgp_;
  int level_;
};

} // namespace

std::unique_ptr<PropensityFunction> TruePropensity::fit(const ObservationTable&, int level) const
{
  return std::make_unique<DgpPropensityFunction>(dgp_, level);
}

std::unique_ptr<CondDensityFunction> TrueCondDensity::fit(const ObservationTable&, int level,
                                                          const EvalGrid&) const
{
  return std::make_unique<DgpDensityFunction>(dgp_, level);
}

NuisanceLearners oracle_learners(const SyntheticDGP& dgp, double clip_eps)
{
  return { std::make_shared<TruePropensity>(dgp), std::make_shared<TrueCondDensity>(dgp),
           clip_eps };
}

// ---------------------------------------------------------------- projection oracle

namespace {

using Objective = std::function<double(const Eigen::VectorXd&)>;

double nm_eval(const gsl_vector* v, void* params)
{
  const auto& f = *static_cast<const Objective*>(params);
  Eigen::VectorXd x(static_cast<Eigen::Index>(v->size));
  for (std::size_t i = 0; i < v->size; ++i)
    x(static_cast<Eigen::Index>(i)) = gsl_vector_get(v, i);
  double value = 0.0;
  try {
    value = f(x);
  } catch (const DomainError&) {
    return 1e300;
  }
  return std::isfinite(value) ? value : 1e300;
}

OracleMinimum nelder_mead(const Objective& f, const Eigen::VectorXd& start, double step,
                          const NelderMeadOptions& opts)
{
  const auto p = static_cast<std::size_t>(start.size());
  gsl_multimin_function fn{ &nm_eval, p, const_cast<Objective*>(&f) };
  gsl_vector* x = gsl_vector_alloc(p);
  gsl_vector* ss = gsl_vector_alloc(p);
  for (std::size_t i = 0; i < p; ++i)
    gsl_vector_set(x, i, start(static_cast<Eigen::Index>(i)));
  gsl_vector_set_all(ss, step);
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, p);
  gsl_multimin_fminimizer_set(s, &fn, x, ss);
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS)
      break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), opts.size_tol) == GSL_SUCCESS)
      break;
  }
  OracleMinimum out;
  out.beta.resize(start.size());
  for (std::size_t i = 0; i < p; ++i)
    out.beta(static_cast<Eigen::Index>(i)) = gsl_vector_get(s->x, i);
  out.value = s->fval;
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(ss);
  gsl_vector_free(x);
  return out;
}

} // namespace

OracleResult oracle_projection(const Eigen::Ref<const Eigen::VectorXd>& p_a,
                               const ModelSpec& model,
                               const DistanceSpec& distance,
                               const EvalGrid& grid,
                               bool force_nelder_mead,
                               const NelderMeadOptions& opts)
{
  const Eigen::VectorXd p = p_a;
  OracleResult out;
  const Objective f = [&](const Eigen::VectorXd& b) {
    return projection_objective(distance, model, b, p, grid);
  };
  if (!force_nelder_mead && distance.kind == DistanceKind::l2sq &&
      model.kind == ModelKind::series) {
    const Eigen::MatrixXd b = cosine_basis(grid.points, model.size);
    const Eigen::MatrixXd g = b.transpose() * grid.weights.asDiagonal() * b;
    out.beta_star = g.ldlt().solve(b.transpose() * grid.weights.cwiseProduct(p) -
                                   b.transpose() * grid.weights);
    out.method = OracleMethod::closed_form;
  } else {
    out.method = OracleMethod::nelder_mead;
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> jitter(0.0, opts.jitter);
    for (std::size_t s = 0; s < opts.starts; ++s) {
      Eigen::VectorXd start = Eigen::VectorXd::Zero(model.beta_dim());
      if (s > 0)
        for (Eigen::Index j = 0; j < start.size(); ++j)
          start(j) = jitter(rng);
      auto best = nelder_mead(f, start, 0.1, opts);
      // restart from the incumbent until the value stops moving
      for (int r = 0; r < 5; ++r) {
        auto next = nelder_mead(f, best.beta, 1e-3, opts);
        const bool moved = next.value < best.value - 1e-15;
        if (next.value <= best.value)
          best = next;
        if (!moved)
          break;
      }
      out.minima.push_back(best);
    }
    const auto it = std::min_element(out.minima.begin(), out.minima.end(),
                                     [](const auto& a, const auto& b) { return a.value < b.value; });
    out.beta_star = it->beta;
    for (const auto& m : out.minima)
      if (m.value - it->value > 1e-3)
        out.multimodal = true;
  }
  out.divergence = f(out.beta_star);
  out.moment_norm = moment(distance, model, out.beta_star, p, grid).norm();
  return out;
}

// ---------------------------------------------------------------- Monte Carlo

std::size_t worker_count()
{
  if (const char* env = std::getenv("CFDENS_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0)
      return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body)
{
  const std::size_t workers = std::min(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i)
      body(i);
    return;
  }
  std::atomic<std::size_t> next{ 0 };
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error)
            error = std::current_exception();
        }
      }
    });
  for (auto& t : pool)
    t.join();
  if (error)
    std::rethrow_exception(error);
}

const McSummary& McTable::at(std::size_t n, std::size_t component) const
{
  for (const auto& s : summary)
    if (s.n == n && s.component == component)
      return s;
  throw DomainError("no Monte-Carlo summary for n = " + std::to_string(n));
}

std::string McTable::to_csv() const
{
  std::ostringstream os;
  os.precision(17);
  os << "n,rep,seed,failed";
  for (const auto& l : labels)
    os << ',' << l << "_estimate," << l << "_se," << l << "_covered";
  os << ",runtime_s\n";
  for (const auto& r : rows) {
    os << r.n << ',' << r.rep << ',' << r.seed << ',' << (r.failed ? 1 : 0);
    for (std::size_t k = 0; k < labels.size(); ++k) {
      if (r.failed)
        os << ",,,";
      else
        os << ',' << r.estimate(static_cast<Eigen::Index>(k)) << ','
           << r.se(static_cast<Eigen::Index>(k)) << ',' << (r.covered[k] ? 1 : 0);
    }
    os << ',' << r.runtime << '\n';
  }
  return os.str();
}

McTable mc_run(const Experiment& ex)
{
  if (ex.reps < 2)
    throw ConfigError("Monte-Carlo runs need at least 2 replicates");
  if (!ex.estimator)
    throw ConfigError("experiment '" + ex.name + "' has no estimator");
  McTable table;
  table.name = ex.name;
  table.labels = ex.labels;
  table.truth = ex.truth;
  const auto m = static_cast<std::size_t>(ex.truth.size());
  for (auto n : ex.ns)
    for (std::size_t r = 0; r < ex.reps; ++r) {
      McRow row;
      row.n = n;
      row.rep = r;
      row.seed = rep_seed(ex.seed, n, r);
      table.rows.push_back(row);
    }
  parallel_for(table.rows.size(), [&](std::size_t i) {
    auto& row = table.rows[i];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto data = draw(ex.dgp, row.n, row.seed);
      const auto out = ex.estimator(data, splitmix64(row.seed));
      if (static_cast<std::size_t>(out.estimate.size()) != m)
        throw DomainError("estimator returned the wrong number of components");
      row.estimate = out.estimate;
      row.se = out.se;
      for (std::size_t k = 0; k < m; ++k) {
        const auto j = static_cast<Eigen::Index>(k);
        row.covered.push_back(out.lo(j) <= ex.truth(j) && ex.truth(j) <= out.hi(j));
      }
      if (!row.estimate.allFinite())
        throw DomainError("non-finite estimate");
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    row.runtime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  for (auto n : ex.ns)
    for (std::size_t k = 0; k < m; ++k) {
      McSummary s;
      s.n = n;
      s.component = k;
      std::vector<double> err;
      double se_sum = 0.0;
      std::size_t cover = 0;
      for (const auto& r : table.rows) {
        if (r.n != n)
          continue;
        if (r.failed) {
          ++s.failed;
          continue;
        }
        const auto j = static_cast<Eigen::Index>(k);
        err.push_back(r.estimate(j) - ex.truth(j));
        se_sum += r.se(j);
        cover += r.covered[k] ? 1 : 0;
      }
      s.ok = err.size();
      if (s.ok > 0) {
        double sum = 0.0;
        double sq = 0.0;
        for (double e : err) {
          sum += e;
          sq += e * e;
        }
        const auto cnt = static_cast<double>(s.ok);
        s.bias = sum / cnt;
        s.rmse = std::sqrt(sq / cnt);
        s.coverage = static_cast<double>(cover) / cnt;
        s.mean_se = se_sum / cnt;
        std::vector<double> abs_err;
        for (double e : err)
          abs_err.push_back(std::abs(e));
        std::sort(abs_err.begin(), abs_err.end());
        const auto h = abs_err.size() / 2;
        s.median_abs_error =
          abs_err.size() % 2 ? abs_err[h] : 0.5 * (abs_err[h - 1] + abs_err[h]);
      }
      table.summary.push_back(s);
    }
  return table;
}

// ---------------------------------------------------------------- experiments

std::vector<std::string> experiment_names()
{
  return { "d2-series-l2", "d2-expfam-kl", "d5-effect-l2", "d3-null-effect", "d4-series-hellinger" };
}

namespace {

McOutput from_projection(const ProjectionEstimate& est)
{
  McOutput out;
  out.estimate = est.beta_hat;
  out.se = est.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.lo.resize(est.beta_hat.size());
  out.hi.resize(est.beta_hat.size());
  for (std::size_t j = 0; j < est.wald_ci.size(); ++j) {
    out.lo(static_cast<Eigen::Index>(j)) = est.wald_ci[j].first;
    out.hi(static_cast<Eigen::Index>(j)) = est.wald_ci[j].second;
  }
  return out;
}

McOutput from_effect(const EffectEstimate& est, bool conservative)
{
  McOutput out;
  out.estimate = Eigen::VectorXd::Constant(1, est.psi_hat);
  out.se = Eigen::VectorXd::Constant(1, est.se);
  const auto ci = conservative ? est.ci_conservative : est.ci_wald;
  out.lo = Eigen::VectorXd::Constant(1, ci.first);
  out.hi = Eigen::VectorXd::Constant(1, ci.second);
  return out;
}

Experiment projection_experiment(const std::string& name, const std::string& dgp_name,
                                 const ModelSpec& model, const DistanceSpec& distance,
                                 const ExperimentOptions& opts)
{
  Experiment ex;
  ex.name = name;
  ex.dgp = dgp_by_name(dgp_name);
  ex.ns = opts.ns.empty() ? std::vector<std::size_t>{ 1000, 4000 } : opts.ns;
  ex.reps = opts.reps;
  ex.seed = opts.seed;
  const auto grid = make_grid(static_cast<Eigen::Index>(opts.grid_size));
  const auto p1 = true_marginal(ex.dgp, 1, grid);
  ex.truth = oracle_projection(p1, model, distance, grid).beta_star;
  for (Eigen::Index j = 0; j < model.beta_dim(); ++j)
    ex.labels.push_back("beta" + std::to_string(j + 1));
  const auto folds = opts.folds;
  ex.estimator = [=](const ObservationTable& data, std::uint64_t seed) {
    const auto fit = cross_fit(data, make_folds(data.n(), folds, seed), { 1 },
                               default_learners(), grid);
    return from_projection(solve_onestep(distance, model, fit, 1));
  };
  return ex;
}

Experiment effect_experiment(const std::string& name, const std::string& dgp_name,
                             const DistanceSpec& distance, bool conservative,
                             const ExperimentOptions& opts)
{
  Experiment ex;
  ex.name = name;
  ex.dgp = dgp_by_name(dgp_name);
  ex.ns = opts.ns.empty() ? std::vector<std::size_t>{ 1000, 4000 } : opts.ns;
  ex.reps = opts.reps;
  ex.seed = opts.seed;
  const auto grid = make_grid(static_cast<Eigen::Index>(opts.grid_size));
  const auto p1 = true_marginal(ex.dgp, 1, grid);
  const auto p0 = true_marginal(ex.dgp, 0, grid);
  ex.truth = Eigen::VectorXd::Constant(1, divergence(distance, p1, p0, grid));
  ex.labels = { "psi" };
  const auto folds = opts.folds;
  ex.estimator = [=](const ObservationTable& data, std::uint64_t seed) {
    const auto fit = cross_fit(data, make_folds(data.n(), folds, seed), { 1, 0 },
                               default_learners(), grid);
    return from_effect(effect_onestep(distance, fit, 1, 0), conservative);
  };
  return ex;
}

} // namespace

Experiment make_experiment(const std::string& name, const ExperimentOptions& opts)
{
  if (name == "d2-series-l2")
    return projection_experiment(name, "D2", ModelSpec::series(3), DistanceSpec{}, opts);
  if (name == "d2-expfam-kl")
    return projection_experiment(name, "D2", ModelSpec::expfam(2),
                                 DistanceSpec::parse("kl"), opts);
  if (name == "d4-series-hellinger")
    return projection_experiment(name, "D4", ModelSpec::series(4),
                                 DistanceSpec::parse("hellinger"), opts);
  if (name == "d5-effect-l2")
    return effect_experiment(name, "D5", DistanceSpec{}, false, opts);
  if (name == "d3-null-effect")
    return effect_experiment(name, "D3", DistanceSpec{}, true, opts);
  std::string known;
  for (const auto& n : experiment_names())
    known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown experiment '" + name + "' (known: " + known + ")");
}

// ---------------------------------------------------------------- remainders

std::vector<RemainderPoint> remainder_curve(const SyntheticDGP& dgp,
                                            int level,
                                            const Eigen::Ref<const Eigen::VectorXd>& h,
                                            const DistanceSpec& effect_distance,
                                            const std::vector<double>& eps,
                                            const EvalGrid& grid)
{
  if (h.size() != grid.size())
    throw DomainError("remainder: h must be tabulated on the grid");
  const auto q = covariate_quadrature(dgp, 24);
  const auto nq = q.nodes.rows();
  const Eigen::VectorXd bg = cosine_basis(grid.points, 1).col(0);

  // eta_a(.|x_q) rows for both arms, and their b_1 means
  std::map<int, Eigen::MatrixXd> eta;
  std::map<int, Eigen::VectorXd> c;
  for (int a : { 0, 1 }) {
    Eigen::MatrixXd e(nq, grid.size());
    for (Eigen::Index r = 0; r < nq; ++r)
      e.row(r) = dgp.eta_on_grid(a, q.nodes.row(r).transpose(), grid).transpose();
    c[a] = e * grid.weights.cwiseProduct(bg);
    eta[a] = std::move(e);
  }
  const auto pi = [&](int a, Eigen::Index r) {
    return dgp.propensity(a, q.nodes.row(r).transpose());
  };
  // u_1 > 0 everywhere; u_0 = -u_1 keeps the perturbed propensities summing to one
  const auto u = [&](int a, Eigen::Index r) {
    const double v = 0.3 + 0.2 * std::tanh(q.nodes(r, 0));
    return a == 1 ? v : -v;
  };
  const auto perturbed_eta = [&](int a, double e) {
    Eigen::MatrixXd out = eta.at(a);
    for (Eigen::Index r = 0; r < nq; ++r)
      out.row(r) = out.row(r).cwiseProduct(
        (1.0 + e * (bg.array() - c.at(a)(r))).matrix().transpose());
    return out;
  };
  // E_P phi_a(lam; Pbar), the IPW part (the centering cancels the plug-in mean)
  const auto ipw_mean = [&](int a, double e, const Eigen::MatrixXd& eta_bar,
                            const Eigen::VectorXd& lam) {
    const Eigen::VectorXd wl = grid.weights.cwiseProduct(lam);
    const Eigen::VectorXd true_c = eta.at(a) * wl;
    const Eigen::VectorXd bar_c = eta_bar * wl;
    double s = 0.0;
    for (Eigen::Index r = 0; r < nq; ++r) {
      const double pb = pi(a, r) + e * u(a, r);
      s += q.weights(r) * pi(a, r) / pb * (true_c(r) - bar_c(r));
    }
    return s;
  };

  const Eigen::VectorXd p1 = eta.at(1).transpose() * q.weights;
  const Eigen::VectorXd p0 = eta.at(0).transpose() * q.weights;
  const double psi = divergence(effect_distance, needs_floor(effect_distance) ? floor_density(p1) : p1,
                                needs_floor(effect_distance) ? floor_density(p0) : p0, grid);
  const double h_true = grid.weights.dot((eta.at(level).transpose() * q.weights).cwiseProduct(h));

  std::vector<RemainderPoint> out;
  for (double e : eps) {
    RemainderPoint pt;
    pt.eps = e;
    const Eigen::MatrixXd eb_level = perturbed_eta(level, e);
    const Eigen::VectorXd pb_level = eb_level.transpose() * q.weights;
    const double h_bar = grid.weights.dot(pb_level.cwiseProduct(h));
    // psi(Pbar) - psi(P) + E_P phi(Z; Pbar); the centered regression term has
    // mean zero because the covariate law is not perturbed
    pt.r2 = h_bar - h_true + ipw_mean(level, e, eb_level, h);

    const Eigen::MatrixXd e1 = perturbed_eta(1, e);
    const Eigen::MatrixXd e0 = perturbed_eta(0, e);
    Eigen::VectorXd pb1 = e1.transpose() * q.weights;
    Eigen::VectorXd pb0 = e0.transpose() * q.weights;
    if (needs_floor(effect_distance)) {
      pb1 = floor_density(pb1);
      pb0 = floor_density(pb0);
    }
    const auto [l1, l0] = lambdas(effect_distance, pb1, pb0);
    const double plug = divergence(effect_distance, pb1, pb0, grid);
    // one-step limit: plug-in + E_P phi_1(l1) + E_P phi_0(l0)
    pt.effect_bias = plug + ipw_mean(1, e, e1, l1) + ipw_mean(0, e, e0, l0) - psi;
    out.push_back(pt);
  }
  return out;
}

double loglog_slope(const std::vector<double>& eps, const std::vector<double>& values)
{
  if (eps.size() != values.size() || eps.size() < 2)
    throw DomainError("slope needs at least two matching points");
  const auto n = static_cast<double>(eps.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double x = std::log(eps[i]);
    const double y = std::log(std::abs(values[i]));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace cfdens
