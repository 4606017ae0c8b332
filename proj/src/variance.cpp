#include "didkit/variance.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "didkit/error.hpp"
#include "didkit/rng.hpp"

namespace didkit {

std::string VcovSpec::name() const {
  switch (scheme) {
    case VcovScheme::hc1:
      return "hc1";
    case VcovScheme::cluster:
      return "cluster:" + cluster_label;
    case VcovScheme::conley: {
      std::ostringstream os;
      os << "conley:" << cutoff_km << "km:" << (kernel == Kernel::uniform ? "uniform" : "bartlett");
      return os.str();
    }
  }
  return {};
}

double kernel_weight(Kernel kernel, double distance_km, double cutoff_km) {
  if (kernel == Kernel::uniform) return distance_km <= cutoff_km ? 1.0 : 0.0;
  return std::max(0.0, 1.0 - distance_km / cutoff_km);
}

namespace {

void check_conley_inputs(const Eigen::MatrixXd& scores, std::span<const std::size_t> location,
                         std::span<const GeoPoint> points, double cutoff_km) {
  if (!(cutoff_km > 0.0)) throw Error("BAD_CUTOFF", "Conley cutoff must be > 0 km");
  if (static_cast<Eigen::Index>(location.size()) != scores.rows())
    throw Error("MISSING_COORDS", "Conley variance needs one location per row");
  for (auto l : location) {
    if (l >= points.size() || !valid_point(points[l]))
      throw Error("MISSING_COORDS", "row without valid coordinates");
  }
}

}  // namespace

Eigen::MatrixXd conley_meat(const Eigen::MatrixXd& scores, std::span<const std::size_t> location,
                            std::span<const GeoPoint> points, double cutoff_km, Kernel kernel) {
  check_conley_inputs(scores, location, points, cutoff_km);
  const Eigen::Index k = scores.cols();
  const long n_loc = static_cast<long>(points.size());
  Eigen::MatrixXd by_loc = Eigen::MatrixXd::Zero(n_loc, k);
  std::vector<bool> used(points.size(), false);
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    by_loc.row(static_cast<Eigen::Index>(location[i])) += scores.row(i);
    used[location[i]] = true;
  }
  std::vector<long> active;
  for (long l = 0; l < n_loc; ++l)
    if (used[l]) active.push_back(l);

  const long m = static_cast<long>(active.size());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, k);
#pragma omp parallel for schedule(dynamic, 8)
  for (long a = 0; a < m; ++a) {
    const GeoPoint& pa = points[active[a]];
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(k);
    for (long b = 0; b < m; ++b) {
      const double w = kernel_weight(kernel, great_circle_km(pa, points[active[b]]), cutoff_km);
      if (w != 0.0) row += w * by_loc.row(active[b]);
    }
    acc.row(a) = row;
  }
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  for (long a = 0; a < m; ++a) meat += by_loc.row(active[a]).transpose() * acc.row(a);
  return meat;
}

Eigen::MatrixXd conley_meat_serial(const Eigen::MatrixXd& scores,
                                   std::span<const std::size_t> location,
                                   std::span<const GeoPoint> points, double cutoff_km,
                                   Kernel kernel) {
  check_conley_inputs(scores, location, points, cutoff_km);
  const Eigen::Index n = scores.rows();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(scores.cols(), scores.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = location[i] == location[j]
                           ? 0.0
                           : great_circle_km(points[location[i]], points[location[j]]);
      const double w = kernel_weight(kernel, d, cutoff_km);
      if (w != 0.0) meat += w * scores.row(i).transpose() * scores.row(j);
    }
  }
  return meat;
}

VcovResult sandwich_vcov(const FitResult& fit, const VcovSpec& spec, const VcovData& data) {
  const Eigen::MatrixXd& s = fit.scores;
  const double n = static_cast<double>(s.rows());
  const double k = static_cast<double>(fit.small_sample_k);

  Eigen::LLT<Eigen::MatrixXd> llt(fit.hessian);
  if (llt.info() != Eigen::Success || fit.hessian.size() == 0)
    throw Error("SINGULAR_BREAD", "X'WX is not positive definite");
  const Eigen::MatrixXd bread =
      llt.solve(Eigen::MatrixXd::Identity(fit.hessian.rows(), fit.hessian.cols()));
  if (!bread.allFinite()) throw Error("SINGULAR_BREAD", "X'WX inverse is not finite");

  VcovResult result;
  Eigen::MatrixXd meat;
  switch (spec.scheme) {
    case VcovScheme::hc1: {
      if (n <= k) throw Error("INSUFFICIENT_ROWS", "HC1 needs n > k");
      meat = s.transpose() * s * (n / (n - k));
      break;
    }
    case VcovScheme::cluster: {
      if (static_cast<Eigen::Index>(data.cluster.size()) != s.rows())
        throw Error("MISSING_CLUSTERS", "cluster variance needs one cluster code per row");
      int g_max = 0;
      for (int c : data.cluster) {
        if (c < 0) throw Error("MISSING_CLUSTERS", "negative cluster code");
        g_max = std::max(g_max, c + 1);
      }
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(g_max, s.cols());
      for (Eigen::Index i = 0; i < s.rows(); ++i) sums.row(data.cluster[i]) += s.row(i);
      const double g = static_cast<double>(std::set<int>(data.cluster.begin(), data.cluster.end()).size());
      if (g < 2) throw Error("MISSING_CLUSTERS", "cluster variance needs at least two clusters");
      if (n <= k) throw Error("INSUFFICIENT_ROWS", "CR1 needs n > k");
      meat = sums.transpose() * sums * (g / (g - 1.0) * (n - 1.0) / (n - k));
      result.n_clusters = static_cast<long>(g);
      break;
    }
    case VcovScheme::conley: {
      meat = conley_meat(s, data.location, data.points, spec.cutoff_km, spec.kernel);
      break;
    }
  }

  Eigen::MatrixXd v = bread * meat * bread;
  v = 0.5 * (v + v.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v);
  const auto& lambda = eig.eigenvalues();
  result.min_eigenvalue = lambda.minCoeff();
  const double scale = std::max(lambda.cwiseAbs().maxCoeff(), 1e-300);
  if (result.min_eigenvalue < -1e-10 * scale) {
    v = eig.eigenvectors() * lambda.cwiseMax(0.0).asDiagonal() * eig.eigenvectors().transpose();
    v = 0.5 * (v + v.transpose());
    result.clipped = true;
  }
  result.matrix = v;
  return result;
}

double mammen_draw(std::mt19937_64& rng) {
  static const double sqrt5 = std::sqrt(5.0);
  static const double low = -(sqrt5 - 1.0) / 2.0;
  static const double high = (sqrt5 + 1.0) / 2.0;
  static const double p_low = (sqrt5 + 1.0) / (2.0 * sqrt5);
  return uniform01(rng) < p_low ? low : high;
}

std::vector<double> mammen_weights(std::size_t n, std::uint64_t seed) {
  auto rng = stream_rng(seed, 0);
  std::vector<double> w(n);
  for (auto& v : w) v = mammen_draw(rng);
  return w;
}

double normal_p_value(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

std::string stars(double p_value) {
  if (!(p_value < 0.10)) return "";
  if (p_value < 0.01) return "***";
  if (p_value < 0.05) return "**";
  return "*";
}

}  // namespace didkit
