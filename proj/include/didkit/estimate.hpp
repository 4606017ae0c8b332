#pragma once

#include <string>

namespace didkit {

/// One (outcome, estimator, variance scheme) line of an estimate table.
struct EstimateRow {
  std::string outcome;
  std::string estimator;  // "twfe" | "cs"
  std::string vcov;       // VcovSpec::name()
  double estimate = 0.0;
  double se = 0.0;
  double p_value = 1.0;
  std::string stars;
  long n_obs = 0;
  double mean_outcome = 0.0;
};

EstimateRow make_estimate_row(std::string outcome, std::string estimator, std::string vcov,
                              double estimate, double se, long n_obs, double mean_outcome);

}  // namespace didkit
