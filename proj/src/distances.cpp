#include "cfdens/distances.hpp"
#include "cfdens/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace cfdens {

DistanceSpec DistanceSpec::parse(const std::string& text)
{
  DistanceSpec spec;
  if (text == "l2" || text == "l2sq") {
    spec.kind = DistanceKind::l2sq;
  } else if (text == "kl") {
    spec.kind = DistanceKind::kl;
  } else if (text == "chisq" || text == "chi2") {
    spec.kind = DistanceKind::chisq;
  } else if (text == "hellinger") {
    spec.kind = DistanceKind::hellinger;
  } else if (text.rfind("tv", 0) == 0) {
    spec.kind = DistanceKind::smoothed_tv;
    // tv | tv:t=50 | tv:t=50,kind=erf
    if (text.size() > 2) {
      if (text[2] != ':')
        throw ConfigError("malformed distance '" + text + "'");
      std::stringstream ss(text.substr(3));
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos)
          throw ConfigError("malformed distance option '" + item + "'");
        const auto key = item.substr(0, eq);
        const auto val = item.substr(eq + 1);
        if (key == "t") {
          try {
            spec.tv_t = std::stod(val);
          } catch (const std::exception&) {
            throw ConfigError("distance option t must be numeric, got '" + val + "'");
          }
          if (!(spec.tv_t > 0.0) || !std::isfinite(spec.tv_t))
            throw ConfigError("distance option t must be positive");
        } else if (key == "kind") {
          if (val == "tanh")
            spec.tv_kind = SmoothingKind::tanh;
          else if (val == "erf")
            spec.tv_kind = SmoothingKind::erf;
          else
            throw ConfigError("unknown smoothing kind '" + val + "'");
        } else {
          throw ConfigError("unknown distance option '" + key + "'");
        }
      }
    }
  } else {
    throw ConfigError("unknown distance '" + text +
                      "' (expected l2, kl, chisq, hellinger or tv:t=<t>)");
  }
  return spec;
}

std::string DistanceSpec::to_string() const
{
  switch (kind) {
    case DistanceKind::l2sq: return "l2";
    case DistanceKind::kl: return "kl";
    case DistanceKind::chisq: return "chisq";
    case DistanceKind::hellinger: return "hellinger";
    case DistanceKind::smoothed_tv: {
      std::ostringstream os;
      os << "tv:t=" << tv_t;
      if (tv_kind == SmoothingKind::erf)
        os << ",kind=erf";
      return os.str();
    }
  }
  return "l2";
}

std::string DistanceSpec::name() const
{
  switch (kind) {
    case DistanceKind::l2sq: return "squared L2";
    case DistanceKind::kl: return "Kullback-Leibler";
    case DistanceKind::chisq: return "chi-squared";
    case DistanceKind::hellinger: return "Hellinger";
    case DistanceKind::smoothed_tv: return "smoothed total variation";
  }
  return "";
}

SmoothAbs nu_t(double y, double t, SmoothingKind kind)
{
  if (kind == SmoothingKind::tanh) {
    const double th = std::tanh(t * y);
    const double sech2 = 1.0 - th * th;
    return { y * th, th + t * y * sech2, 2.0 * t * sech2 * (1.0 - t * y * th) };
  }
  const double e = std::erf(t * y);
  const double g = 2.0 * t / std::sqrt(std::numbers::pi) * std::exp(-t * t * y * y);
  return { y * e, e + y * g, g * (2.0 - 2.0 * t * t * y * y) };
}

namespace {

void check_args(const DistanceSpec& spec, double p, double q)
{
  if (!std::isfinite(p) || !std::isfinite(q))
    throw DomainError(spec.name() + ": non-finite argument");
  if (q <= kDensityFloor)
    throw DomainError(spec.name() + ": second argument " + std::to_string(q) +
                      " at or below the density floor");
  if (p < 0.0)
    throw DomainError(spec.name() + ": negative first argument");
}

void check_ratio(const DistanceSpec& spec, double p)
{
  if (p <= kRatioFloor)
    throw DomainError(spec.name() + ": first argument at or below the ratio floor");
}

double clamp_q(double q) { return std::max(q, kDensityFloor); }
double clamp_p(double p) { return std::max(p, kRatioFloor); }

} // namespace

double f_eval(const DistanceSpec& spec, double p, double q)
{
  check_args(spec, p, q);
  const double r = p / q;
  switch (spec.kind) {
    case DistanceKind::l2sq: return (p - q) * (p - q) / q;
    case DistanceKind::kl: return p > 0.0 ? r * std::log(r) : 0.0;
    case DistanceKind::chisq: return (r - 1.0) * (r - 1.0);
    case DistanceKind::hellinger: {
      const double s = std::sqrt(r) - 1.0;
      return s * s;
    }
    case DistanceKind::smoothed_tv:
      return nu_t(p - q, spec.tv_t, spec.tv_kind).value / (2.0 * q);
  }
  return 0.0;
}

double f1(const DistanceSpec& spec, double p, double q)
{
  check_args(spec, p, q);
  switch (spec.kind) {
    case DistanceKind::l2sq: return 2.0 * (p / q - 1.0);
    case DistanceKind::kl:
      check_ratio(spec, p);
      return (std::log(p / q) + 1.0) / q;
    case DistanceKind::chisq: return 2.0 * (p - q) / (q * q);
    case DistanceKind::hellinger:
      check_ratio(spec, p);
      return (1.0 / std::sqrt(q) - 1.0 / std::sqrt(p)) / std::sqrt(q);
    case DistanceKind::smoothed_tv:
      return nu_t(p - q, spec.tv_t, spec.tv_kind).d1 / (2.0 * q);
  }
  return 0.0;
}

double f2(const DistanceSpec& spec, double p, double q)
{
  check_args(spec, p, q);
  switch (spec.kind) {
    case DistanceKind::l2sq: return 1.0 - (p / q) * (p / q);
    case DistanceKind::kl:
      if (p <= 0.0)
        return 0.0;
      return -p / (q * q) * (std::log(p / q) + 1.0);
    case DistanceKind::chisq: return -2.0 * p / (q * q * q) * (p - q);
    case DistanceKind::hellinger:
      return std::sqrt(p) / (q * q) * (std::sqrt(q) - std::sqrt(p));
    case DistanceKind::smoothed_tv: {
      const auto nu = nu_t(p - q, spec.tv_t, spec.tv_kind);
      return -1.0 / (2.0 * q) * (nu.value / q + nu.d1);
    }
  }
  return 0.0;
}

double f21(const DistanceSpec& spec, double p, double q)
{
  check_args(spec, p, q);
  switch (spec.kind) {
    case DistanceKind::l2sq: return -2.0 * p / (q * q);
    case DistanceKind::kl:
      check_ratio(spec, p);
      return -(std::log(p / q) + 2.0) / (q * q);
    case DistanceKind::chisq: return 2.0 * (q - 2.0 * p) / (q * q * q);
    case DistanceKind::hellinger:
      check_ratio(spec, p);
      return (std::sqrt(q / p) - 2.0) / (2.0 * q * q);
    case DistanceKind::smoothed_tv: {
      const auto nu = nu_t(p - q, spec.tv_t, spec.tv_kind);
      return -1.0 / (2.0 * q) * (nu.d1 / q + nu.d2);
    }
  }
  return 0.0;
}

double weighted_f(const DistanceSpec& spec, double p, double q)
{
  switch (spec.kind) {
    case DistanceKind::l2sq: return (p - q) * (p - q);
    case DistanceKind::kl: {
      if (p <= 0.0)
        return 0.0;
      return p * std::log(clamp_p(p) / clamp_q(q));
    }
    case DistanceKind::chisq: {
      const double qc = clamp_q(q);
      return (p - qc) * (p - qc) / qc;
    }
    case DistanceKind::hellinger: {
      const double s = std::sqrt(std::max(p, 0.0)) - std::sqrt(std::max(q, 0.0));
      return s * s;
    }
    case DistanceKind::smoothed_tv:
      return 0.5 * nu_t(p - q, spec.tv_t, spec.tv_kind).value;
  }
  return 0.0;
}

double moment_factor(const DistanceSpec& spec, double p, double q)
{
  switch (spec.kind) {
    case DistanceKind::l2sq: return 2.0 * (q - p);
    case DistanceKind::kl: return -std::max(p, 0.0) / clamp_q(q);
    case DistanceKind::chisq: {
      const double r = std::max(p, 0.0) / clamp_q(q);
      return 1.0 - r * r;
    }
    case DistanceKind::hellinger:
      return 1.0 - std::sqrt(std::max(p, 0.0) / clamp_q(q));
    case DistanceKind::smoothed_tv:
      return -0.5 * nu_t(p - q, spec.tv_t, spec.tv_kind).d1;
  }
  return 0.0;
}

double gamma_factor(const DistanceSpec& spec, double p, double q)
{
  switch (spec.kind) {
    case DistanceKind::l2sq: return -2.0;
    case DistanceKind::kl: return -1.0 / clamp_q(q);
    case DistanceKind::chisq: {
      const double qc = clamp_q(q);
      return -2.0 * std::max(p, 0.0) / (qc * qc);
    }
    case DistanceKind::hellinger:
      return -0.5 / std::sqrt(clamp_p(p) * clamp_q(q));
    case DistanceKind::smoothed_tv:
      return -0.5 * nu_t(p - q, spec.tv_t, spec.tv_kind).d2;
  }
  return 0.0;
}

double weighted_f1(const DistanceSpec& spec, double p, double q)
{
  switch (spec.kind) {
    case DistanceKind::l2sq: return 2.0 * (p - q);
    case DistanceKind::kl: return std::log(clamp_p(p) / clamp_q(q)) + 1.0;
    case DistanceKind::chisq: return 2.0 * (p - clamp_q(q)) / clamp_q(q);
    case DistanceKind::hellinger: return 1.0 - std::sqrt(clamp_q(q) / clamp_p(p));
    case DistanceKind::smoothed_tv:
      return 0.5 * nu_t(p - q, spec.tv_t, spec.tv_kind).d1;
  }
  return 0.0;
}

bool needs_floor(const DistanceSpec& spec)
{
  return spec.kind == DistanceKind::kl || spec.kind == DistanceKind::chisq ||
         spec.kind == DistanceKind::hellinger;
}

double divergence(const DistanceSpec& spec,
                  const Eigen::Ref<const Eigen::VectorXd>& p,
                  const Eigen::Ref<const Eigen::VectorXd>& q,
                  const EvalGrid& grid)
{
  if (p.size() != grid.size() || q.size() != grid.size())
    throw DomainError("divergence: densities must be tabulated on the grid");
  double total = 0.0;
  for (Eigen::Index j = 0; j < grid.size(); ++j) {
    const double pj = p(j);
    const double qj = q(j);
    auto where = [&] { return " at grid index " + std::to_string(j); };
    if (!std::isfinite(pj) || !std::isfinite(qj))
      throw DomainError(spec.name() + ": non-finite density" + where());
    if (pj < 0.0 || qj < 0.0)
      throw DomainError(spec.name() + ": negative density" + where());
    if ((spec.kind == DistanceKind::kl || spec.kind == DistanceKind::chisq) &&
        qj < kDensityFloor)
      throw DomainError(spec.name() + ": second density below the floor" +
                        where());
    total += grid.weights(j) * weighted_f(spec, pj, qj);
  }
  return total;
}

Eigen::VectorXd floor_density(const Eigen::Ref<const Eigen::VectorXd>& values,
                              double floor)
{
  return values.cwiseMax(floor);
}

} // namespace cfdens
