#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "didkit/regress.hpp"
#include "didkit/spatial.hpp"

namespace didkit {

enum class VcovScheme { hc1, cluster, conley };
enum class Kernel { uniform, bartlett };

struct VcovSpec {
  VcovScheme scheme = VcovScheme::hc1;
  std::string cluster_label;  // CLUSTER: label column ("unit" = unit id)
  double cutoff_km = 0.0;     // CONLEY
  Kernel kernel = Kernel::uniform;

  static VcovSpec hc1() { return {}; }
  static VcovSpec cluster(std::string label) {
    return {VcovScheme::cluster, std::move(label), 0.0, Kernel::uniform};
  }
  static VcovSpec conley(double cutoff_km, Kernel kernel = Kernel::uniform) {
    return {VcovScheme::conley, {}, cutoff_km, kernel};
  }
  // "hc1", "cluster:county", "conley:10km:uniform"
  std::string name() const;
};

/// Row-level inputs for the meat: cluster codes (CLUSTER) and an index into
/// `points` per row (CONLEY). Rows sharing a location are at distance 0.
struct VcovData {
  std::vector<int> cluster;
  std::vector<std::size_t> location;
  std::vector<GeoPoint> points;
};

struct VcovResult {
  Eigen::MatrixXd matrix;
  double min_eigenvalue = 0.0;  // before any clipping
  bool clipped = false;         // negative eigenvalues were set to zero
  long n_clusters = 0;

  Eigen::VectorXd se() const { return matrix.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

double kernel_weight(Kernel kernel, double distance_km, double cutoff_km);

/// bread * meat * bread with bread = hessian^-1.
///   HC1:     sum s_i s_i' * n/(n-k)
///   CLUSTER: sum_g S_g S_g' * G/(G-1) * (n-1)/(n-k)   (CR1)
///   CONLEY:  sum_ij K(d_ij) s_i s_j'
/// The result is symmetrized; eigenvalues below -1e-10 (relative to the
/// largest) are clipped to zero. Throws SINGULAR_BREAD, MISSING_COORDS,
/// MISSING_CLUSTERS, BAD_CUTOFF.
VcovResult sandwich_vcov(const FitResult& fit, const VcovSpec& spec, const VcovData& data = {});

/// Spatial meat aggregated by location, OpenMP over locations. Deterministic:
/// each location's inner sum runs in a fixed order and the outer sum is
/// serial.
Eigen::MatrixXd conley_meat(const Eigen::MatrixXd& scores, std::span<const std::size_t> location,
                            std::span<const GeoPoint> points, double cutoff_km, Kernel kernel);
/// Reference: direct double sum over row pairs.
Eigen::MatrixXd conley_meat_serial(const Eigen::MatrixXd& scores,
                                   std::span<const std::size_t> location,
                                   std::span<const GeoPoint> points, double cutoff_km,
                                   Kernel kernel);

/// One Mammen two-point draw: mean 0, variance 1.
double mammen_draw(std::mt19937_64& rng);
std::vector<double> mammen_weights(std::size_t n, std::uint64_t seed);

/// Two-sided normal p-value for a z statistic.
double normal_p_value(double z);
/// "***" p<0.01, "**" p<0.05, "*" p<0.10, "" otherwise.
std::string stars(double p_value);

}  // namespace didkit
