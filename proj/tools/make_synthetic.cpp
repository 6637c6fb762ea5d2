// Writes a draw from a synthetic DGP as CSV, outcomes mapped to [lo, hi].
#include "cfdens/oracle.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

int main(int argc, char** argv)
{
  CLI::App app{ "Synthetic CSV writer" };
  std::string dgp = "D2";
  std::size_t n = 200;
  std::uint64_t seed = 1;
  double lo = 0.0;
  double hi = 1.0;
  std::string out;
  app.add_option("--dgp", dgp)->capture_default_str();
  app.add_option("--n", n)->capture_default_str();
  app.add_option("--seed", seed)->capture_default_str();
  app.add_option("--y-min", lo)->capture_default_str();
  app.add_option("--y-max", hi)->capture_default_str();
  app.add_option("--output,-o", out)->required();
  CLI11_PARSE(app, argc, argv);

  const auto t = cfdens::draw(cfdens::dgp_by_name(dgp), n, seed);
  std::ofstream f(out);
  f.precision(10);
  for (Eigen::Index k = 0; k < t.d(); ++k)
    f << 'x' << k + 1 << ',';
  f << "a,y\n";
  for (std::size_t i = 0; i < t.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index k = 0; k < t.d(); ++k)
      f << t.covariates(r, k) << ',';
    f << t.treatment[i] << ',' << lo + (hi - lo) * t.outcome(r) << '\n';
  }
  return f ? 0 : 1;
}
