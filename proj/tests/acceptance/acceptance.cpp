#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "didkit/commands.hpp"
#include "didkit/config.hpp"
#include "didkit/csdid.hpp"
#include "didkit/dgp.hpp"
#include "didkit/diagnostics.hpp"
#include "didkit/error.hpp"
#include "didkit/regress.hpp"
#include "didkit/spatial.hpp"
#include "didkit/twfe.hpp"
#include "didkit/variance.hpp"
#include "oracles.hpp"
#include "panels.hpp"

using namespace didkit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// Random staggered panel with at least one never-treated unit and one unit
// in cohort `periods[1]` or later.
PanelDataset random_small_panel(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_units(4, 20), n_periods(2, 4);
  const int np = n_periods(rng);
  std::vector<int> periods;
  for (int t = 0; t < np; ++t) periods.push_back(2000 + 3 * t);
  const int n = n_units(rng);
  std::uniform_int_distribution<int> pick(0, np);  // np = never
  std::vector<std::optional<int>> cohort(static_cast<std::size_t>(n));
  for (auto& c : cohort) {
    const int k = pick(rng);
    if (k < np) c = periods[static_cast<std::size_t>(k)];
  }
  cohort[0] = std::nullopt;
  cohort[1] = periods[1];
  std::normal_distribution<double> z;
  std::vector<double> y(static_cast<std::size_t>(n * np));
  for (auto& v : y) v = z(rng);
  return testing_support::balanced_panel(
      static_cast<std::size_t>(n), periods, [&](std::size_t i) { return cohort[i]; },
      [&](std::size_t i, int t) { return y[i * np + (t - 2000) / 3]; });
}

Outcome criterion1() {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  long cells = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const auto ds = random_small_panel(rng);
    const auto sample = prepare_cs_sample(ds, "y");
    for (int g : sample.cohorts())
      for (std::size_t t = 1; t < ds.periods.size(); ++t) {
        const auto c = att_gt(sample, g, ds.periods[t], CsMethod::simple);
        worst = std::max(worst, std::abs(c.att - did_2x2_oracle(ds, "y", g, c.t, c.base)));
        ++cells;
      }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-12 && secs < 10.0,
          fmt("%.0f cells, max |diff| = %.2e, %.2f s", cells, worst, secs)};
}

McReport cs_report(const DgpConfig& dgp, int reps) { return monte_carlo(cs_overall_estimator(), dgp, reps, 2024); }

DgpConfig recovery_dgp() {
  DgpConfig dgp;
  dgp.n_units = 2000;
  dgp.effect = event_linear_effect(0.05, 0.004);
  dgp.selection_on_level = 0.4;
  dgp.seed = 17;
  return dgp;
}

Outcome criterion2() {
  const auto start = Clock::now();
  const auto r = cs_report(recovery_dgp(), 200);
  const double secs = seconds_since(start);
  const bool ok = std::abs(r.bias) < 3 * *r.mc_se && *r.coverage >= 0.92 && *r.coverage <= 0.98 &&
                  secs < 120.0;
  return {ok, fmt("bias = %.5f, mc_se = %.5f, coverage = %.3f, %.1f s", r.bias, *r.mc_se, *r.coverage, secs)};
}

Outcome criterion3() {
  auto dgp = recovery_dgp();
  dgp.effect = event_linear_effect(0.0, 0.01);
  const auto tw = monte_carlo(twfe_estimator(), dgp, 200, 2024);
  const auto cs = cs_report(dgp, 200);
  const bool ok = std::abs(tw.bias) > 3 * *tw.mc_se && std::abs(cs.bias) < 3 * *cs.mc_se;
  return {ok, fmt("twfe bias = %.4f (mc_se %.4f), cs bias = %.4f (mc_se %.4f)", tw.bias, *tw.mc_se,
                  cs.bias, *cs.mc_se)};
}

Outcome criterion4() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 10 + trial;
    std::vector<double> y(2 * n);
    for (auto& v : y) v = z(rng);
    const auto ds = testing_support::balanced_panel(
        n, {1, 2}, [](std::size_t i) { return i % 3 == 0 ? std::optional<int>(2) : std::nullopt; },
        [&](std::size_t i, int t) { return y[2 * i + (t - 1)] + (i % 3 == 0 && t == 2 ? 0.5 : 0.0); });
    ControlSpec none;
    none.none = true;
    const double beta = estimate_twfe(ds, "y", none, VcovSpec::hc1()).estimate;
    const auto sample = prepare_cs_sample(ds, "y");
    const auto cells = all_att_gt(sample, CsMethod::simple);
    const double att = aggregate_overall(cells, sample).estimate;
    worst = std::max(worst, std::abs(beta - att));
  }
  return {worst <= 1e-10, fmt("max |beta - att| = %.2e over 50 panels", worst)};
}

Outcome criterion5() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_fe = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 12 + inst % 20;
    std::vector<double> noise(n * 4);
    for (auto& v : noise) v = z(rng);
    std::vector<std::optional<int>> cohort(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = u(rng);
      if (r < 0.3) cohort[i] = 2;
      else if (r < 0.55) cohort[i] = 3;
    }
    cohort[0] = std::nullopt;
    cohort[1] = 2;
    auto ds = testing_support::balanced_panel(
        n, {1, 2, 3, 4}, [&](std::size_t i) { return cohort[i]; },
        [&](std::size_t i, int t) { return 0.3 * i + 0.2 * t + noise[i * 4 + (t - 1)]; });
    testing_support::add_unit_column(ds, "dist", [&](std::size_t i) { return std::sin(1.0 + i * (inst + 1.0)); });
    ds.values["y"][static_cast<std::size_t>(inst) % ds.n_rows()] = std::nan("");
    ControlSpec controls;
    controls.decile_vars = {"dist"};
    TwfeFit tw;
    try {
      tw = fit_twfe(ds, "y", controls);
    } catch (const Error& e) {
      if (e.code() == "TREATMENT_ABSORBED") continue;
      throw;
    }
    const auto m = static_cast<Eigen::Index>(tw.rows.size());
    Eigen::MatrixXd full(m, 1);
    Eigen::VectorXd y(m);
    const auto schedule = schedule_of(ds);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& row = ds.rows[tw.rows[i]];
      full(i, 0) = schedule.treated_at(row.unit, row.year) ? 1.0 : 0.0;
      y[i] = ds.values["y"][tw.rows[i]];
    }
    for (const auto& f : tw.factors) {
      const Eigen::MatrixXd d = oracle::dummies(f.codes, f.n_levels, false);
      Eigen::MatrixXd next(m, full.cols() + d.cols());
      next << full, d;
      full = next;
    }
    const Eigen::VectorXd b = oracle::lstsq(full, y);
    worst_fe = std::max(worst_fe, std::abs(tw.fit.coefficient(kTreatmentName) - b[0]));
  }

  double worst_grid = 0.0, worst_score = 0.0;
  for (int toy = 0; toy < 5; ++toy) {
    const int n = 25;
    Eigen::MatrixXd x(n, 3);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = z(rng);
      x(i, 2) = u(rng);
      std::poisson_distribution<int> pois(std::exp(0.4 + 0.5 * x(i, 1) - 0.3 * x(i, 2)));
      y[i] = pois(rng);
    }
    const auto fit = poisson_fit(DesignMatrix({"c", "a", "b"}, x), y);
    const auto grid = oracle::poisson_grid_mle(x, y, Eigen::Vector3d::Zero(), 3.0, 14);
    worst_grid = std::max(worst_grid, (fit.coefficients - grid).cwiseAbs().maxCoeff());
    worst_score = std::max(worst_score, fit.scores.colwise().sum().cwiseAbs().maxCoeff());
  }
  const bool ok = worst_fe <= 1e-8 && worst_grid <= 1e-4 && worst_score < 1e-6;
  return {ok, fmt("fe vs dummies %.2e, poisson vs grid %.2e, score %.2e", worst_fe, worst_grid, worst_score)};
}

Outcome criterion6() {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> lat(55.0, 56.0), lon(9.0, 11.0);
  double worst_cr1 = 0.0, worst_conley = 0.0, min_eig = 0.0;
  bool diag_exact = true;
  long clipped = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 6 + trial % 5, k = 2 + trial % 2;
    Eigen::MatrixXd x(n, k);
    Eigen::VectorXd y(n);
    std::vector<GeoPoint> points;
    std::vector<std::size_t> location;
    std::vector<int> cluster;
    for (int i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      for (int j = 1; j < k; ++j) x(i, j) = z(rng);
      y[i] = z(rng);
      points.push_back({lat(rng), lon(rng)});
      location.push_back(static_cast<std::size_t>(i));
      cluster.push_back(i % 3);
    }
    std::vector<std::string> names;
    for (int j = 0; j < k; ++j) names.push_back("b" + std::to_string(j));
    const auto fit = ols(DesignMatrix(names, x), y);
    VcovData data{cluster, location, points};

    const double g = 3.0;
    const auto cr1 = sandwich_vcov(fit, VcovSpec::cluster("c"), data);
    const auto cr1_ref = oracle::sandwich(
        x, fit.residuals, [&](Eigen::Index i, Eigen::Index j) { return cluster[i] == cluster[j] ? 1.0 : 0.0; },
        g / (g - 1) * (n - 1.0) / (n - k));
    worst_cr1 = std::max(worst_cr1, (cr1.matrix - cr1_ref).cwiseAbs().maxCoeff());

    for (Kernel kernel : {Kernel::uniform, Kernel::bartlett}) {
      const double cutoff = 40.0;
      const auto v = sandwich_vcov(fit, VcovSpec::conley(cutoff, kernel), data);
      const auto ref = oracle::sandwich(
          x, fit.residuals,
          [&](Eigen::Index i, Eigen::Index j) {
            return kernel_weight(kernel, great_circle_km(points[i], points[j]), cutoff);
          },
          1.0);
      Eigen::MatrixXd expect = 0.5 * (ref + ref.transpose());
      if (v.clipped) {
        // Indefinite brute-force sandwich: compare with its PSD projection.
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(expect);
        const double scale = eig.eigenvalues().cwiseAbs().maxCoeff();
        if (!(eig.eigenvalues().minCoeff() < -1e-10 * scale)) worst_conley = INFINITY;
        expect = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).asDiagonal() *
                 eig.eigenvectors().transpose();
        ++clipped;
      }
      worst_conley = std::max(worst_conley, (v.matrix - expect).cwiseAbs().maxCoeff());
      min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(v.matrix).eigenvalues().minCoeff());
    }
    min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cr1.matrix).eigenvalues().minCoeff());
    min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(
                                    sandwich_vcov(fit, VcovSpec::hc1()).matrix).eigenvalues().minCoeff());

    double min_d = INFINITY;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) min_d = std::min(min_d, great_circle_km(points[i], points[j]));
    const auto meat = conley_meat(fit.scores, location, points, 0.5 * min_d, Kernel::uniform);
    Eigen::MatrixXd diag = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < n; ++i) diag += fit.scores.row(i).transpose() * fit.scores.row(i);
    diag_exact = diag_exact && meat == diag;
  }
  const bool ok = worst_cr1 <= 1e-10 && worst_conley <= 1e-10 && diag_exact && min_eig >= -1e-10;
  return {ok, fmt("cr1 %.2e, conley %.2e, sub-minimal exact %.0f, min eigenvalue %.2e", worst_cr1,
                  worst_conley, diag_exact ? 1.0 : 0.0, min_eig) +
                  ", " + std::to_string(clipped) + " of 400 conley fits clipped"};
}

Outcome criterion7() {
  DgpConfig dgp;
  dgp.n_units = 500;
  const double tau = 0.5;
  dgp.effect = constant_effect(tau);
  BootstrapOptions boot;
  boot.reps = 999;
  int clean = 0;
  const int reps = 200;
  std::map<int, double> post_sum;
  for (int r = 0; r < reps; ++r) {
    dgp.seed = replication_seed(77, static_cast<std::uint64_t>(r));
    boot.seed = dgp.seed;
    const auto sim = simulate_panel(dgp);
    const auto sample = prepare_cs_sample(sim.panel, "y");
    const auto cells = all_att_gt(sample, CsMethod::simple);
    const auto series = aggregate_event_study(cells, sample, boot);
    bool ok = true;
    for (const auto& p : series.points) {
      if (p.event_time < 0) ok = ok && std::abs(p.estimate) <= series.band_critical * p.se;
      else post_sum[p.event_time] += p.estimate / reps;
    }
    clean += ok ? 1 : 0;
  }
  double worst_rel = 0.0;
  for (const auto& [e, mean] : post_sum) worst_rel = std::max(worst_rel, std::abs(mean - tau) / tau);
  const double share = static_cast<double>(clean) / reps;
  return {share >= 0.93 && worst_rel <= 0.10,
          fmt("pre-periods inside bands in %.3f of reps, worst post deviation %.3f of tau", share, worst_rel)};
}

Outcome criterion8() {
  const std::vector<InstitutionSite> sites{{{0.0, 0.0}, 1900, InstitutionKind::community_house},
                                           {{0.0, 0.0}, 1900, InstitutionKind::community_house}};
  // Sites placed exactly 2 km and 4 km east of the origin along the equator.
  const double deg_per_km = 1.0 / great_circle_km({0.0, 0.0}, {0.0, 1.0});
  std::vector<InstitutionSite> placed = sites;
  placed[0].location = {0.0, 2.0 * deg_per_km};
  placed[1].location = {0.0, 4.0 * deg_per_km};
  const double ma = market_access({0.0, 0.0}, placed, 1900);
  const bool ma_ok = std::abs(ma - 0.75) <= 1e-12;

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> la(-90.0, 90.0), lo(-180.0, 180.0);
  bool sym = true, ident = true, tri = true;
  for (int i = 0; i < 100000; ++i) {
    const GeoPoint a{la(rng), lo(rng)}, b{la(rng), lo(rng)}, c{la(rng), lo(rng)};
    const double ab = great_circle_km(a, b), ba = great_circle_km(b, a);
    sym = sym && ab == ba;
    ident = ident && great_circle_km(a, a) == 0.0;
    tri = tri && great_circle_km(a, c) <= ab + great_circle_km(b, c) + 1e-9;
  }
  const double degree = great_circle_km({0.0, 0.0}, {0.0, 1.0});
  const bool deg_ok = std::abs(degree - 111.195) <= 0.001;
  return {ma_ok && sym && ident && tri && deg_ok,
          fmt("market access %.15f, equator degree %.4f km, metric checks %.0f", ma, degree,
              (sym && ident && tri) ? 1.0 : 0.0)};
}

Outcome criterion9() {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> size(1, 15), val(0, 6);
  bool ks_exact = true;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> a(static_cast<std::size_t>(size(rng))), b(static_cast<std::size_t>(size(rng)));
    for (auto& v : a) v = val(rng) * 0.5;
    for (auto& v : b) v = val(rng) * 0.5;
    ks_exact = ks_exact && ks_test(a, b).d == oracle::ks_sup(a, b);
  }
  std::normal_distribution<double> z;
  double worst_balance = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(40);
    std::vector<bool> ever(40);
    double s1 = 0, s0 = 0;
    int n1 = 0, n0 = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = z(rng) + trial;
      ever[i] = i % 3 == 0;
      (ever[i] ? s1 : s0) += v[i];
      ++(ever[i] ? n1 : n0);
    }
    worst_balance = std::max(worst_balance, std::abs(balance_regression(v, ever).coef - (s1 / n1 - s0 / n0)));
  }
  std::vector<double> sample(300);
  for (auto& v : sample) v = z(rng);
  const auto kde = kde_export(sample, 512);
  const double integral = trapezoid(kde.grid, kde.density);
  const bool ok = ks_exact && worst_balance <= 1e-12 && std::abs(integral - 1.0) <= 1e-3;
  return {ok, fmt("ks exact %.0f, balance max diff %.2e, kde integral %.6f", ks_exact ? 1.0 : 0.0,
                  worst_balance, integral)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion10() {
  const fs::path root = fs::temp_directory_path() / "didkit_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  DgpConfig dgp;
  dgp.n_units = 300;
  dgp.spatial_range_km = 20.0;
  const auto sim = simulate_panel(dgp);
  {
    std::ofstream out(root / "panel.csv");
    write_panel_csv(sim.panel, out);
  }
  const fs::path fixtures = DIDKIT_FIXTURES;
  std::ofstream(root / "config.json") << R"({
    "data": {"panel": "panel.csv", "micro": ")" << (fixtures / "micro.csv").string() << R"(",
             "parishes": ")" << (fixtures / "parishes.csv").string() << R"(",
             "sites": ")" << (fixtures / "sites.csv").string() << R"(",
             "anchors": ")" << (fixtures / "anchors.csv").string() << R"("},
    "outcomes": ["y"],
    "covariates": ["x1"],
    "vcov": ["cluster:unit", "cluster:county", "conley:25km"],
    "bootstrap": {"reps": 299},
    "simulate": {"n_units": 150, "reps": 12},
    "diagnostics": {"variables": ["y", "x1"], "grid_size": 128,
                    "groups": [{"label": "never", "never": true}]}
  })";
  const std::vector<std::string> verbs{"build-panel", "estimate", "event-study", "diagnostics", "simulate",
                                       "validate"};
  long files = 0;
  std::string mismatch;
  for (const auto& verb : verbs) {
    std::vector<fs::path> dirs;
    int idx = 0;
    for (int threads : {1, 1, 4}) {
      const auto dir = root / (verb + "_" + std::to_string(idx++));
      const std::string cmd = std::string(DIDKIT_CLI) + " " + verb + " --config " +
                              (root / "config.json").string() + " --seed 42 --threads " +
                              std::to_string(threads) + " --out " + dir.string();
      if (run(cmd) != 0) return {false, verb + " exited with an error"};
      dirs.push_back(dir);
    }
    for (const auto& entry : fs::directory_iterator(dirs[0])) {
      const auto first = slurp(entry.path());
      ++files;
      for (std::size_t k = 1; k < dirs.size(); ++k)
        if (slurp(dirs[k] / entry.path().filename()) != first) mismatch = (dirs[k] / entry.path().filename()).string();
    }
  }
  return {mismatch.empty() && files >= 11,
          mismatch.empty() ? fmt("%.0f output files identical across 2 runs and 1 vs 4 threads", files)
                           : "differs: " + mismatch};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle equivalence", criterion1},  {"estimator recovery", criterion2},
      {"twfe bias demonstration", criterion3}, {"coincidence case", criterion4},
      {"regression engine", criterion5},   {"variance", criterion6},
      {"event-study shape", criterion7},   {"spatial", criterion8},
      {"diagnostics", criterion9},         {"determinism", criterion10}};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }

  const char* panel = std::getenv("DIDKIT_REPLICATION_PANEL");
  if (!panel) {
    std::printf("SKIP criterion 11 (replication): set DIDKIT_REPLICATION_PANEL to the published panel CSV\n");
  } else {
    try {
      auto cfg = load_config(fs::path(DIDKIT_CONFIGS) / "estimate_main.json");
      cfg.data.panel = panel;
      cfg.outcomes = {"log_population"};
      cfg.estimators = {"twfe"};
      cfg.vcov = {VcovSpec::cluster("unit")};
      cfg.cross_sections.clear();
      const auto out = fs::temp_directory_path() / "didkit_replication";
      cmd_estimate(cfg, out);
      std::ifstream in(out / "estimates.csv");
      std::string header, line;
      std::getline(in, header);
      std::getline(in, line);
      std::vector<std::string> fields;
      std::stringstream ss(line);
      for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
      const double est = std::stod(fields.at(3)), se = std::stod(fields.at(4));
      const double gap = est - 0.0664;
      std::printf("%s criterion 11 (replication): estimate %.4f (se %.4f), gap to 0.0664 is %+.4f\n",
                  std::abs(gap) <= 0.002 ? "PASS" : "REPORT", est, se, gap);
    } catch (const std::exception& e) {
      std::printf("REPORT criterion 11 (replication): %s\n", e.what());
    }
  }
  return failures == 0 ? 0 : 1;
}
