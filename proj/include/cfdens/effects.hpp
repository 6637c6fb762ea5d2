#pragma once

#include "cfdens/distances.hpp"
#include "cfdens/eif.hpp"
#include "cfdens/nuisance.hpp"

#include <Eigen/Dense>

#include <utility>

namespace cfdens {

struct EffectEstimate
{
  double psi_hat = 0.0;
  double plugin = 0.0;     // fold-weighted plug-in term
  double correction = 0.0; // fold-weighted mean influence term
  double se = 0.0;
  std::pair<double, double> ci_wald;
  std::pair<double, double> ci_conservative; // uses max(se, 1/sqrt(n))
  bool near_null = false;                    // |psi_hat| < 2/sqrt(n)
  DistanceSpec distance;
  std::pair<int, int> levels{ 1, 0 };
  double density_floor = 0.0; // floor applied to the plug-in densities, 0 if none
  std::size_t n = 0;
  InfluenceValues influence; // pooled per-row influence values
};

//! Fills se-derived fields from psi_hat, the influence values and n.
void finish_effect(EffectEstimate& est);

//! One-step estimate of D_f(p_level1, p_level0).
EffectEstimate effect_onestep(const DistanceSpec& distance,
                              const NuisanceFit& fit,
                              int level1 = 1,
                              int level0 = 0);

//! Direct closed form for the squared L2 effect.
EffectEstimate effect_l2_direct(const NuisanceFit& fit, int level1 = 1, int level0 = 0);

//! One-step estimate of D_f(p_level, g) for a fixed density g on the grid.
EffectEstimate effect_fixed_candidate(const DistanceSpec& distance,
                                      const NuisanceFit& fit,
                                      int level,
                                      const Eigen::Ref<const Eigen::VectorXd>& g);

} // namespace cfdens
