#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "didkit/variance.hpp"
#include "expect_error.hpp"
#include "oracles.hpp"

using namespace didkit;

namespace {

struct Instance {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  FitResult fit;
  std::vector<GeoPoint> points;
  std::vector<std::size_t> location;
};

Instance random_instance(std::mt19937_64& rng, int n, int k) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> lat(55.0, 56.0), lon(9.0, 11.0);
  Instance out;
  out.x.resize(n, k);
  out.y.resize(n);
  for (int i = 0; i < n; ++i) {
    out.x(i, 0) = 1.0;
    for (int j = 1; j < k; ++j) out.x(i, j) = z(rng);
    out.y[i] = z(rng) + out.x(i, k - 1);
    out.points.push_back({lat(rng), lon(rng)});
    out.location.push_back(static_cast<std::size_t>(i));
  }
  std::vector<std::string> names;
  for (int j = 0; j < k; ++j) names.push_back("b" + std::to_string(j));
  out.fit = ols(DesignMatrix(names, out.x), out.y);
  return out;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Sandwich, Hc1MatchesBruteForce) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = random_instance(rng, 9, 3);
    const auto v = sandwich_vcov(in.fit, VcovSpec::hc1());
    const double n = 9, k = 3;
    const auto expect = oracle::sandwich(in.x, in.fit.residuals,
                                         [](Eigen::Index i, Eigen::Index j) { return i == j ? 1.0 : 0.0; },
                                         n / (n - k));
    EXPECT_LT(max_abs(v.matrix - expect), 1e-10);
  }
}

TEST(Sandwich, Cr1MatchesBruteForce) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = random_instance(rng, 10, 3);
    VcovData data;
    for (int i = 0; i < 10; ++i) data.cluster.push_back(i % 3);
    const auto v = sandwich_vcov(in.fit, VcovSpec::cluster("g"), data);
    const double n = 10, k = 3, g = 3;
    const auto expect = oracle::sandwich(
        in.x, in.fit.residuals,
        [&](Eigen::Index i, Eigen::Index j) { return data.cluster[i] == data.cluster[j] ? 1.0 : 0.0; },
        g / (g - 1) * (n - 1) / (n - k));
    EXPECT_LT(max_abs(v.matrix - expect), 1e-10);
    EXPECT_EQ(v.n_clusters, 3);
  }
}

TEST(Sandwich, TwoClusterHandComputation) {
  // y on intercept only: V = G/(G-1) (n-1)/(n-1) * sum_g (sum e)^2 / n^2.
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 1);
  Eigen::Vector4d y(1, 2, 4, 9);
  const auto fit = ols(DesignMatrix({"c"}, x), y);
  VcovData data;
  data.cluster = {0, 0, 1, 1};
  const auto v = sandwich_vcov(fit, VcovSpec::cluster("g"), data);
  // mean 4, residuals -3,-2,0,5; cluster sums -5, 5.
  EXPECT_NEAR(v.matrix(0, 0), 2.0 * (25.0 + 25.0) / 16.0, 1e-12);
}

TEST(Sandwich, SingletonClustersEqualHc1UpToScalar) {
  std::mt19937_64 rng(3);
  const auto in = random_instance(rng, 6, 2);
  VcovData data;
  data.cluster = {0, 1, 2, 3, 4, 5};
  const auto cr1 = sandwich_vcov(in.fit, VcovSpec::cluster("row"), data);
  const auto hc1 = sandwich_vcov(in.fit, VcovSpec::hc1());
  // With G = n the CR1 factor G/(G-1)(n-1)/(n-k) reduces to the HC1 factor n/(n-k).
  EXPECT_LT(max_abs(cr1.matrix - hc1.matrix), 1e-12);
}

TEST(Sandwich, ConleyMatchesBruteForce) {
  std::mt19937_64 rng(4);
  for (Kernel kernel : {Kernel::uniform, Kernel::bartlett}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto in = random_instance(rng, 10, 3);
      VcovData data;
      data.points = in.points;
      data.location = in.location;
      const double cutoff = 60.0;
      const auto v = sandwich_vcov(in.fit, VcovSpec::conley(cutoff, kernel), data);
      const auto expect = oracle::sandwich(
          in.x, in.fit.residuals,
          [&](Eigen::Index i, Eigen::Index j) {
            const double d = oracle::chord_km(in.points[i], in.points[j]);
            if (kernel == Kernel::uniform) return d <= cutoff ? 1.0 : 0.0;
            return std::max(0.0, 1.0 - d / cutoff);
          },
          1.0);
      if (!v.clipped) EXPECT_LT(max_abs(v.matrix - expect), 1e-10);
      Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(3, 3);
      for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) {
          const double d = oracle::chord_km(in.points[i], in.points[j]);
          const double w = kernel == Kernel::uniform ? (d <= cutoff ? 1.0 : 0.0)
                                                     : std::max(0.0, 1.0 - d / cutoff);
          meat += w * in.fit.scores.row(i).transpose() * in.fit.scores.row(j);
        }
      EXPECT_LT(max_abs(conley_meat_serial(in.fit.scores, in.location, in.points, cutoff, kernel) - meat),
                1e-10);
      EXPECT_LT(max_abs(conley_meat(in.fit.scores, in.location, in.points, cutoff, kernel) - meat), 1e-10);
    }
  }
}

TEST(Sandwich, ConleySharedLocationsAreDistanceZero) {
  std::mt19937_64 rng(5);
  auto in = random_instance(rng, 8, 2);
  VcovData data;
  data.points = {in.points[0], in.points[1], in.points[2], in.points[3]};
  data.location = {0, 0, 1, 1, 2, 2, 3, 3};
  const auto v = sandwich_vcov(in.fit, VcovSpec::conley(1e-3), data);
  const auto expect = oracle::sandwich(
      in.x, in.fit.residuals,
      [&](Eigen::Index i, Eigen::Index j) { return data.location[i] == data.location[j] ? 1.0 : 0.0; }, 1.0);
  EXPECT_LT(max_abs(v.matrix - expect), 1e-10);
}

TEST(Sandwich, ConleySubMinimalCutoffIsDiagonalMeat) {
  std::mt19937_64 rng(6);
  const auto in = random_instance(rng, 10, 3);
  double min_d = INFINITY;
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j) min_d = std::min(min_d, great_circle_km(in.points[i], in.points[j]));
  VcovData data;
  data.points = in.points;
  data.location = in.location;
  for (Kernel kernel : {Kernel::uniform, Kernel::bartlett}) {
    const auto meat = conley_meat(in.fit.scores, data.location, data.points, 0.5 * min_d, kernel);
    Eigen::MatrixXd diag = Eigen::MatrixXd::Zero(3, 3);
    for (int i = 0; i < 10; ++i) diag += in.fit.scores.row(i).transpose() * in.fit.scores.row(i);
    EXPECT_TRUE(meat == diag);
  }
  const auto v = sandwich_vcov(in.fit, VcovSpec::conley(0.5 * min_d), data);
  const auto hc = sandwich_vcov(in.fit, VcovSpec::hc1());
  EXPECT_LT(max_abs(v.matrix * (10.0 / 7.0) - hc.matrix), 1e-12);
}

TEST(Sandwich, ConleyHugeCutoffEqualsOneClusterMeat) {
  std::mt19937_64 rng(7);
  const auto in = random_instance(rng, 8, 2);
  const auto meat = conley_meat(in.fit.scores, in.location, in.points, 1e5, Kernel::uniform);
  const Eigen::RowVectorXd total = in.fit.scores.colwise().sum();
  EXPECT_LT(max_abs(meat - total.transpose() * total), 1e-12);
}

TEST(Sandwich, ConleyParallelMatchesSerial) {
  std::mt19937_64 rng(8);
  const auto in = random_instance(rng, 200, 4);
  std::vector<std::size_t> loc;
  for (int i = 0; i < 200; ++i) loc.push_back(static_cast<std::size_t>(i % 50));
  for (Kernel kernel : {Kernel::uniform, Kernel::bartlett}) {
    const auto a = conley_meat(in.fit.scores, loc, in.points, 30.0, kernel);
    const auto b = conley_meat_serial(in.fit.scores, loc, in.points, 30.0, kernel);
    EXPECT_LT(max_abs(a - b), 1e-12 * std::max(1.0, max_abs(b)));
    EXPECT_TRUE(a == conley_meat(in.fit.scores, loc, in.points, 30.0, kernel));
  }
}

TEST(Sandwich, BartlettContinuousInCutoff) {
  std::mt19937_64 rng(9);
  const auto in = random_instance(rng, 10, 2);
  VcovData data;
  data.points = in.points;
  data.location = in.location;
  double prev = sandwich_vcov(in.fit, VcovSpec::conley(10.0, Kernel::bartlett), data).matrix(1, 1);
  for (double c = 10.05; c < 150.0; c += 0.05) {
    const double v = sandwich_vcov(in.fit, VcovSpec::conley(c, Kernel::bartlett), data).matrix(1, 1);
    EXPECT_LT(std::abs(v - prev), 0.01 * std::abs(prev) + 1e-12) << c;
    prev = v;
  }
}

TEST(Sandwich, AllSchemesSymmetricAndPsd) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const auto in = random_instance(rng, 10, 3);
    VcovData data;
    data.points = in.points;
    data.location = in.location;
    for (int i = 0; i < 10; ++i) data.cluster.push_back(i % 4);
    for (const auto& spec : {VcovSpec::hc1(), VcovSpec::cluster("g"), VcovSpec::conley(25.0),
                             VcovSpec::conley(80.0, Kernel::bartlett)}) {
      const auto v = sandwich_vcov(in.fit, spec, data);
      EXPECT_LT(max_abs(v.matrix - v.matrix.transpose()), 1e-12);
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v.matrix);
      EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10 * std::max(1.0, eig.eigenvalues().maxCoeff()));
    }
  }
}

TEST(Sandwich, Errors) {
  std::mt19937_64 rng(11);
  const auto in = random_instance(rng, 6, 2);
  EXPECT_DIDKIT_ERROR(sandwich_vcov(in.fit, VcovSpec::conley(10.0)), "MISSING_COORDS");
  EXPECT_DIDKIT_ERROR(sandwich_vcov(in.fit, VcovSpec::cluster("g")), "MISSING_CLUSTERS");
  VcovData data;
  data.points = in.points;
  data.location = in.location;
  EXPECT_DIDKIT_ERROR(sandwich_vcov(in.fit, VcovSpec::conley(0.0), data), "BAD_CUTOFF");
  FitResult singular = in.fit;
  singular.hessian.setZero();
  EXPECT_DIDKIT_ERROR(sandwich_vcov(singular, VcovSpec::hc1()), "SINGULAR_BREAD");
}

TEST(Mammen, MomentsOverAMillionDraws) {
  const auto w = mammen_weights(1000000, 2024);
  double mean = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size() - 1);
  EXPECT_NEAR(mean, 0.0, 0.005);
  EXPECT_NEAR(var, 1.0, 0.01);
}

TEST(Mammen, DeterministicPerSeedAndTwoPoint) {
  const auto a = mammen_weights(1000, 5);
  EXPECT_EQ(a, mammen_weights(1000, 5));
  EXPECT_NE(a, mammen_weights(1000, 6));
  const double low = -(std::sqrt(5.0) - 1) / 2, high = (std::sqrt(5.0) + 1) / 2;
  for (double v : a) EXPECT_TRUE(v == low || v == high);
}

TEST(Stars, Thresholds) {
  EXPECT_EQ(stars(0.005), "***");
  EXPECT_EQ(stars(0.03), "**");
  EXPECT_EQ(stars(0.07), "*");
  EXPECT_EQ(stars(0.2), "");
  EXPECT_NEAR(normal_p_value(1.959963984540054), 0.05, 1e-12);
}

TEST(VcovSpec, Names) {
  EXPECT_EQ(VcovSpec::hc1().name(), "hc1");
  EXPECT_EQ(VcovSpec::cluster("county").name(), "cluster:county");
  EXPECT_EQ(VcovSpec::conley(10.0).name(), "conley:10km:uniform");
  EXPECT_EQ(VcovSpec::conley(2.5, Kernel::bartlett).name(), "conley:2.5km:bartlett");
}
