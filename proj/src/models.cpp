#include "cfdens/models.hpp"
#include "cfdens/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <regex>

namespace cfdens {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

double softplus(double x)
{
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double sigmoid(double x)
{
  return 1.0 / (1.0 + std::exp(-x));
}

// raw scale 0 maps to sigma = 1/(2k)
double scale_offset(Eigen::Index k)
{
  return std::log(std::expm1(0.5 / static_cast<double>(k) - kSigmaMin));
}

double normal_pdf(double y, double mu, double sigma)
{
  const double z = (y - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

void check_beta(const ModelSpec& model, const Eigen::Ref<const Eigen::VectorXd>& beta)
{
  if (beta.size() != model.beta_dim())
    throw DomainError(model.to_string() + ": expected " +
                      std::to_string(model.beta_dim()) + " parameters, got " +
                      std::to_string(beta.size()));
  if (!beta.allFinite())
    throw DomainError(model.to_string() + ": non-finite parameter vector");
}

// Unsorted natural parameters plus d sigma / d raw.
MixtureParams unpack_mixture(const Eigen::Ref<const Eigen::VectorXd>& beta,
                             Eigen::VectorXd* dsigma)
{
  const Eigen::Index k = (beta.size() + 1) / 3;
  MixtureParams p;
  Eigen::VectorXd logits = Eigen::VectorXd::Zero(k);
  logits.tail(k - 1) = beta.head(k - 1);
  const double mx = logits.maxCoeff();
  p.weights = (logits.array() - mx).exp();
  p.weights /= p.weights.sum();
  p.means.resize(k);
  p.sigmas.resize(k);
  if (dsigma)
    dsigma->resize(k);
  const double off = scale_offset(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    p.means(j) = (static_cast<double>(j) + 0.5) / static_cast<double>(k) +
                 beta(k - 1 + j);
    const double s = beta(2 * k - 1 + j) + off;
    p.sigmas(j) = kSigmaMin + softplus(s);
    if (dsigma)
      (*dsigma)(j) = sigmoid(s);
  }
  return p;
}

} // namespace

Eigen::VectorXd cosine_basis(double y, Eigen::Index d)
{
  Eigen::VectorXd b(d);
  for (Eigen::Index j = 0; j < d; ++j)
    b(j) = kSqrt2 * std::cos(std::numbers::pi * static_cast<double>(j + 1) * y);
  return b;
}

Eigen::MatrixXd cosine_basis(const Eigen::Ref<const Eigen::VectorXd>& ys, Eigen::Index d)
{
  Eigen::MatrixXd b(ys.size(), d);
  for (Eigen::Index i = 0; i < ys.size(); ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      b(i, j) = kSqrt2 * std::cos(std::numbers::pi * static_cast<double>(j + 1) * ys(i));
  return b;
}

ModelSpec ModelSpec::parse(const std::string& text)
{
  static const std::regex re(R"(^(series|expfam|gmm):(d|k)=([0-9]+)$)");
  std::smatch m;
  if (!std::regex_match(text, m, re))
    throw ConfigError("unknown model '" + text +
                      "' (expected series:d=<d>, expfam:d=<d> or gmm:k=<k>)");
  const std::string family = m[1];
  const std::string key = m[2];
  const auto size = static_cast<Eigen::Index>(std::stol(m[3]));
  if ((family == "gmm") != (key == "k"))
    throw ConfigError("model '" + text + "': use d= for series/expfam and k= for gmm");
  if (size < 1)
    throw ConfigError("model '" + text + "': size must be at least 1");
  if (family == "series")
    return series(size);
  if (family == "expfam")
    return expfam(size);
  return gmm(size);
}

std::string ModelSpec::to_string() const
{
  switch (kind) {
    case ModelKind::series: return "series:d=" + std::to_string(size);
    case ModelKind::expfam: return "expfam:d=" + std::to_string(size);
    case ModelKind::gmm: return "gmm:k=" + std::to_string(size);
  }
  return "";
}

Eigen::Index ModelSpec::beta_dim() const
{
  return kind == ModelKind::gmm ? 3 * size - 1 : size;
}

MixtureParams mixture_params(const Eigen::Ref<const Eigen::VectorXd>& beta)
{
  if (beta.size() < 2 || (beta.size() + 1) % 3 != 0)
    throw DomainError("mixture parameter vector must have length 3k-1");
  const auto raw = unpack_mixture(beta, nullptr);
  const auto k = raw.means.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Eigen::Index{ 0 });
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return raw.means(a) < raw.means(b);
  });
  MixtureParams out{ Eigen::VectorXd(k), Eigen::VectorXd(k), Eigen::VectorXd(k) };
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto src = order[static_cast<std::size_t>(j)];
    out.weights(j) = raw.weights(src);
    out.means(j) = raw.means(src);
    out.sigmas(j) = raw.sigmas(src);
  }
  return out;
}

Eigen::VectorXd mixture_beta(const MixtureParams& params)
{
  const Eigen::Index k = params.weights.size();
  if (k < 1 || params.means.size() != k || params.sigmas.size() != k)
    throw DomainError("mixture parameters have inconsistent lengths");
  Eigen::VectorXd beta(3 * k - 1);
  const double off = scale_offset(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (!(params.weights(j) > 0.0) || !(params.sigmas(j) > kSigmaMin))
      throw DomainError("mixture weights must be positive and sigmas above the minimum");
    if (j > 0)
      beta(j - 1) = std::log(params.weights(j) / params.weights(0));
    beta(k - 1 + j) =
      params.means(j) - (static_cast<double>(j) + 0.5) / static_cast<double>(k);
    // inverse softplus
    beta(2 * k - 1 + j) = std::log(std::expm1(params.sigmas(j) - kSigmaMin)) - off;
  }
  return beta;
}

const EvalGrid& normalization_grid()
{
  static const EvalGrid grid = make_grid(1025, QuadratureRule::trapezoid);
  return grid;
}

LogPartition log_partition(const ModelSpec& model,
                           const Eigen::Ref<const Eigen::VectorXd>& beta,
                           const EvalGrid& grid)
{
  if (model.kind != ModelKind::expfam)
    throw DomainError("log partition is defined for exponential families only");
  check_beta(model, beta);
  const Eigen::MatrixXd b = cosine_basis(grid.points, model.size);
  const Eigen::VectorXd eta = b * beta;
  const double mx = eta.maxCoeff();
  const Eigen::VectorXd e = (eta.array() - mx).exp();
  const double z = grid.weights.dot(e);
  LogPartition out;
  out.value = mx + std::log(z);
  if (!std::isfinite(out.value) || !(z > 0.0))
    throw DomainError("log partition overflow; use a smaller parameter norm (|beta| = " +
                      std::to_string(beta.norm()) + ")");
  const Eigen::VectorXd g = grid.weights.cwiseProduct(e) / z;
  out.gradient = b.transpose() * g;
  out.hessian = b.transpose() * g.asDiagonal() * b - out.gradient * out.gradient.transpose();
  return out;
}

ModelState::ModelState(ModelSpec model, Eigen::VectorXd beta)
  : model_(model)
  , beta_(std::move(beta))
{
  check_beta(model_, beta_);
  if (model_.kind == ModelKind::expfam) {
    auto lp = log_partition(model_, beta_, normalization_grid());
    c_ = lp.value;
    dc_ = std::move(lp.gradient);
  } else if (model_.kind == ModelKind::gmm) {
    mix_ = unpack_mixture(beta_, &mix_sigmoid_);
  }
}

double ModelState::value(double y) const
{
  switch (model_.kind) {
    case ModelKind::series: return 1.0 + beta_.dot(cosine_basis(y, model_.size));
    case ModelKind::expfam:
      return std::exp(beta_.dot(cosine_basis(y, model_.size)) - c_);
    case ModelKind::gmm: {
      double g = 0.0;
      for (Eigen::Index j = 0; j < mix_.weights.size(); ++j)
        g += mix_.weights(j) * normal_pdf(y, mix_.means(j), mix_.sigmas(j));
      return g;
    }
  }
  return 0.0;
}

Eigen::VectorXd ModelState::gradient(double y) const
{
  switch (model_.kind) {
    case ModelKind::series: return cosine_basis(y, model_.size);
    case ModelKind::expfam: {
      const Eigen::VectorXd b = cosine_basis(y, model_.size);
      return std::exp(beta_.dot(b) - c_) * (b - dc_);
    }
    case ModelKind::gmm: {
      const Eigen::Index k = mix_.weights.size();
      Eigen::VectorXd comp(k);
      for (Eigen::Index j = 0; j < k; ++j)
        comp(j) = normal_pdf(y, mix_.means(j), mix_.sigmas(j));
      const double g = mix_.weights.dot(comp);
      Eigen::VectorXd grad(3 * k - 1);
      for (Eigen::Index l = 1; l < k; ++l)
        grad(l - 1) = mix_.weights(l) * (comp(l) - g);
      for (Eigen::Index j = 0; j < k; ++j) {
        const double s = mix_.sigmas(j);
        const double r = y - mix_.means(j);
        const double wn = mix_.weights(j) * comp(j);
        grad(k - 1 + j) = wn * r / (s * s);
        grad(2 * k - 1 + j) = wn * (r * r / (s * s * s) - 1.0 / s) * mix_sigmoid_(j);
      }
      return grad;
    }
  }
  return {};
}

Eigen::VectorXd ModelState::values(const Eigen::Ref<const Eigen::VectorXd>& ys) const
{
  if (model_.kind == ModelKind::gmm) {
    Eigen::VectorXd out(ys.size());
    for (Eigen::Index i = 0; i < ys.size(); ++i)
      out(i) = value(ys(i));
    return out;
  }
  const Eigen::VectorXd lin = cosine_basis(ys, model_.size) * beta_;
  if (model_.kind == ModelKind::series)
    return (lin.array() + 1.0).matrix();
  return (lin.array() - c_).exp().matrix();
}

Eigen::MatrixXd ModelState::gradients(const Eigen::Ref<const Eigen::VectorXd>& ys) const
{
  switch (model_.kind) {
    case ModelKind::series: return cosine_basis(ys, model_.size);
    case ModelKind::expfam: {
      Eigen::MatrixXd b = cosine_basis(ys, model_.size);
      const Eigen::VectorXd g = ((b * beta_).array() - c_).exp().matrix();
      b.rowwise() -= dc_.transpose();
      return g.asDiagonal() * b;
    }
    case ModelKind::gmm: {
      Eigen::MatrixXd out(ys.size(), beta_.size());
      for (Eigen::Index i = 0; i < ys.size(); ++i)
        out.row(i) = gradient(ys(i)).transpose();
      return out;
    }
  }
  return {};
}

double g_eval(const ModelSpec& model, const Eigen::Ref<const Eigen::VectorXd>& beta, double y)
{
  return ModelState(model, beta).value(y);
}

Eigen::VectorXd g_grad(const ModelSpec& model,
                       const Eigen::Ref<const Eigen::VectorXd>& beta,
                       double y)
{
  return ModelState(model, beta).gradient(y);
}

Eigen::VectorXd clip_to_density(const Eigen::Ref<const Eigen::VectorXd>& values,
                                const EvalGrid& grid)
{
  if (values.size() != grid.size())
    throw DomainError("clip_to_density: values must be tabulated on the grid");
  if (!values.allFinite())
    throw DomainError("clip_to_density: non-finite model values");
  Eigen::VectorXd out = values.cwiseMax(0.0);
  const double mass = grid.integrate(out);
  if (!(mass > 0.0))
    throw DomainError("degenerate model: no positive mass after clipping");
  return out / mass;
}

} // namespace cfdens
