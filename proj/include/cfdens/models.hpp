#pragma once

#include "cfdens/data.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace cfdens {

//! Cosine basis b_j(y) = sqrt(2) cos(pi j y), j = 1..d.
Eigen::VectorXd cosine_basis(double y, Eigen::Index d);
//! Rows are points, columns are basis functions.
Eigen::MatrixXd cosine_basis(const Eigen::Ref<const Eigen::VectorXd>& ys,
                             Eigen::Index d);

enum class ModelKind { series, expfam, gmm };

struct ModelSpec
{
  ModelKind kind = ModelKind::series;
  Eigen::Index size = 1; // basis dimension d, or number of mixture components k

  static ModelSpec series(Eigen::Index d) { return { ModelKind::series, d }; }
  static ModelSpec expfam(Eigen::Index d) { return { ModelKind::expfam, d }; }
  static ModelSpec gmm(Eigen::Index k) { return { ModelKind::gmm, k }; }

  //! "series:d=4", "expfam:d=4" or "gmm:k=2".
  static ModelSpec parse(const std::string& text);
  std::string to_string() const;
  Eigen::Index beta_dim() const;
};

inline constexpr double kSigmaMin = 1e-3;

//! Natural parameters of a Gaussian mixture, components sorted by mean.
struct MixtureParams
{
  Eigen::VectorXd weights;
  Eigen::VectorXd means;
  Eigen::VectorXd sigmas;
};

//! Unconstrained layout: k-1 logits (the first component's logit is pinned
//! at 0), k mean offsets from (j + 1/2)/k, k raw scales through softplus.
MixtureParams mixture_params(const Eigen::Ref<const Eigen::VectorXd>& beta);
Eigen::VectorXd mixture_beta(const MixtureParams& params);

//! Log-partition C(beta) = log int exp(beta' b) with its gradient E_g b and
//! Hessian Cov_g b, all by quadrature on `grid`.
struct LogPartition
{
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};
LogPartition log_partition(const ModelSpec& model,
                           const Eigen::Ref<const Eigen::VectorXd>& beta,
                           const EvalGrid& grid);

//! Grid used to normalize exponential families when none is supplied. The
//! integrand is a smooth function of cos(pi y), so the trapezoid rule is
//! spectrally accurate here.
const EvalGrid& normalization_grid();

//! g(.; beta) ready for repeated evaluation; the exponential-family
//! normalizer is computed once.
class ModelState
{
public:
  ModelState(ModelSpec model, Eigen::VectorXd beta);

  const ModelSpec& model() const { return model_; }
  const Eigen::VectorXd& beta() const { return beta_; }

  double value(double y) const;
  Eigen::VectorXd gradient(double y) const;

  Eigen::VectorXd values(const Eigen::Ref<const Eigen::VectorXd>& ys) const;
  //! Rows are points, columns are parameters.
  Eigen::MatrixXd gradients(const Eigen::Ref<const Eigen::VectorXd>& ys) const;

  //! C(beta) and E_g b for the exponential family (empty otherwise).
  double log_normalizer() const { return c_; }
  const Eigen::VectorXd& mean_basis() const { return dc_; }

private:
  ModelSpec model_;
  Eigen::VectorXd beta_;
  double c_ = 0.0;
  Eigen::VectorXd dc_;
  MixtureParams mix_;
  Eigen::VectorXd mix_sigmoid_; // d sigma / d raw scale
};

double g_eval(const ModelSpec& model,
              const Eigen::Ref<const Eigen::VectorXd>& beta,
              double y);
Eigen::VectorXd g_grad(const ModelSpec& model,
                       const Eigen::Ref<const Eigen::VectorXd>& beta,
                       double y);

//! max(g, 0) rescaled to integrate to one on the grid.
Eigen::VectorXd clip_to_density(const Eigen::Ref<const Eigen::VectorXd>& values,
                                const EvalGrid& grid);

} // namespace cfdens
