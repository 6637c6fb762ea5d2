#pragma once

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cfdens::cli {

inline constexpr const char* kVersion = "0.1.0";

//! Exit statuses of the command-line tool.
enum ExitCode : int { ok = 0, config = 2, data = 3, solver = 4, internal = 5 };

struct RunConfig
{
  std::string command;

  // input
  std::string data;
  std::vector<std::string> x_cols;
  std::string a_col = "a";
  std::string y_col = "y";
  std::optional<std::string> missing_code;

  // estimation
  std::string model = "series:d=4";
  std::string distance = "l2";
  int level = 1;
  int level1 = 1;
  int level0 = 0;
  std::string dims = "1..15";
  std::string family = "series";
  std::vector<std::string> candidates;
  std::size_t folds = 5;
  std::uint64_t seed = 1;
  std::size_t grid_size = 512;
  std::string quadrature = "trapezoid";
  double clip_eps = 0.01;
  std::string bandwidth = "silverman";
  std::string propensity = "logistic";
  std::string density = "nw";

  // simulate
  std::string experiment;
  std::size_t reps = 100;
  std::vector<std::size_t> ns;

  // output
  std::string output; // JSON report, stdout when empty
  std::string csv;    // grid or table CSV, skipped when empty
  bool quick = false;
  bool timestamp = true;
};

nlohmann::json to_json(const RunConfig& config);

//! Every violated field, empty when the config is usable.
std::vector<std::string> validate(const RunConfig& config);

//! Applies --quick caps.
RunConfig resolve(RunConfig config);

//! Runs one command; writes the JSON report to config.output (or `out`) and
//! error JSON to `err`. Returns an ExitCode.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

//! Parses argv and runs.
int main(int argc, char** argv, std::ostream& out, std::ostream& err);

//! "1..6" or "1,3,5".
std::vector<long> parse_range(const std::string& text);

} // namespace cfdens::cli
