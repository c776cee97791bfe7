#include "effpot/covariance.hpp"

#include <cmath>

#include "effpot/parallel.hpp"
#include "effpot/rng.hpp"

namespace effpot {

ProbePlan build_probe_plan(int d, double gamma) {
  if (d < 1) throw ConfigError("build_probe_plan: dimension must be >= 1");
  if (!(gamma > 0.0)) throw ConfigError("build_probe_plan: gamma must be > 0");
  ProbePlan plan;
  plan.gamma = gamma;
  if (d == 1) {
    plan.probes.push_back(Mat::Identity(1, 1));
    return plan;
  }
  for (int k = 0; k < d; ++k) {
    Mat a = Mat::Identity(d, d);
    a(k, k) = 2.0;
    plan.probes.push_back(a);
  }
  for (int l = 0; l < d; ++l) {
    for (int r = l + 1; r < d; ++r) {
      Mat a = Mat::Identity(d, d);
      a(l, r) = 0.5;
      a(r, l) = 0.5;
      plan.probes.push_back(a);
    }
  }
  // the diagonal design (ones + I) is invertible for every d; verify anyway
  Mat design = Mat::Ones(d, d) + Mat::Identity(d, d);
  Eigen::FullPivLU<Mat> lu(design);
  if (!lu.isInvertible()) throw ConfigError("build_probe_plan: singular diagonal design");
  return plan;
}

RhsMeasurement measure_rhs(const PotentialOracle& oracle, const Mat& probe, double gamma,
                           const ProbeRunParams& params) {
  const int d = oracle.dim();
  if (probe.rows() != d || probe.cols() != d) {
    throw ConfigError("measure_rhs: probe dimension mismatch");
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(probe);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw ConfigError("measure_rhs: probe must be positive definite");
  }
  if (!(gamma > 0.0)) throw ConfigError("measure_rhs: gamma must be > 0");
  if (params.n_steps < 1) throw ConfigError("measure_rhs: n_steps must be >= 1");
  const long long burn = params.burn_in >= 0 ? params.burn_in : params.n_steps / 10;
  if (burn >= params.n_steps) throw ConfigError("measure_rhs: burn_in must be < n_steps");
  const int batches = params.batches;
  if (batches < 2) throw ConfigError("measure_rhs: needs at least 2 batches");

  // mass M = probe^-1, friction gamma I; the damping factor is
  // exp(-gamma * probe * delta), symmetric PD
  const Mat mass_inv = probe;
  const Mat half = 0.5 * params.delta * mass_inv;
  const Mat damp = es.eigenvectors() *
                   (-gamma * params.delta * es.eigenvalues().array()).exp().matrix().asDiagonal() *
                   es.eigenvectors().transpose();
  const Mat probe_sq = probe * probe;

  Vec q = params.init_q.size() == d ? params.init_q : Vec::Zero(d);
  Vec p = params.init_p.size() == d ? params.init_p : Vec::Zero(d);
  Vec qh(d), g(d), pn(d), noise(d), z(d);

  const bool injected = params.injected_sigma.has_value();
  Mat sigma_scaled;
  if (injected) {
    if (params.injected_sigma->rows() != d || params.injected_sigma->cols() != d) {
      throw ConfigError("measure_rhs: injected sigma dimension mismatch");
    }
    sigma_scaled = std::sqrt(params.delta) * (*params.injected_sigma);
  }
  std::mt19937_64 rng = make_engine(params.seed, 0xC0F);

  const long long kept_total = params.n_steps - burn;
  const long long batch_len = std::max<long long>(1, kept_total / batches);
  std::vector<double> batch_sums;
  batch_sums.reserve(static_cast<std::size_t>(batches) + 1);
  double cur_sum = 0.0;
  long long cur_n = 0;
  double total_sum = 0.0;
  long long total_n = 0;

  for (long long n = 1; n <= params.n_steps; ++n) {
    qh.noalias() = q;
    qh.noalias() += half * p;
    oracle.gradient(qh, g);
    pn.noalias() = damp * p;
    pn.noalias() -= params.delta * g;
    if (injected) {
      for (int i = 0; i < d; ++i) z[i] = standard_normal(rng);
      pn.noalias() += sigma_scaled * z;
    }
    p.swap(pn);
    q.noalias() = qh;
    q.noalias() += half * p;
    if (!q.allFinite() || !p.allFinite() || q.squaredNorm() > 1e16) {
      throw DivergenceError("divergence during probe run at step " + std::to_string(n), n, q, p);
    }
    if (n > burn) {
      const double f = p.dot(probe_sq * p);
      cur_sum += f;
      total_sum += f;
      ++cur_n;
      ++total_n;
      if (cur_n == batch_len && static_cast<long long>(batch_sums.size()) < batches) {
        batch_sums.push_back(cur_sum / static_cast<double>(cur_n));
        cur_sum = 0.0;
        cur_n = 0;
      }
    }
  }
  if (cur_n > 0) batch_sums.push_back(cur_sum / static_cast<double>(cur_n));

  RhsMeasurement out;
  const double mean_f = total_sum / static_cast<double>(total_n);
  out.gamma_p_moment = gamma * mean_f;
  out.trace_estimate = 2.0 * out.gamma_p_moment;

  const std::size_t nb = batch_sums.size();
  double bmean = 0.0;
  for (double b : batch_sums) bmean += b;
  bmean /= static_cast<double>(nb);
  double bvar = 0.0;
  for (double b : batch_sums) bvar += (b - bmean) * (b - bmean);
  bvar /= static_cast<double>(nb > 1 ? nb - 1 : 1);
  out.stderr_trace = 2.0 * gamma * std::sqrt(bvar / static_cast<double>(nb));
  return out;
}

CovarianceEstimate solve_covariance(const ProbePlan& plan, const Vec& trace_rhs,
                                    const Vec& stderr_trace) {
  const int d = plan.dim();
  const int n_probes = static_cast<int>(plan.probes.size());
  if (d < 1) throw ConfigError("solve_covariance: empty plan");
  if (trace_rhs.size() != n_probes) {
    throw ConfigError("solve_covariance: rhs length does not match plan");
  }
  if (n_probes != d * (d + 1) / 2) {
    throw ConfigError("solve_covariance: plan must hold d(d+1)/2 probes");
  }

  CovarianceEstimate est;
  est.plan = plan;
  est.trace_rhs = trace_rhs;
  est.rhs = 0.5 * trace_rhs;
  est.stderr_trace = stderr_trace.size() == n_probes ? stderr_trace : Vec::Zero(n_probes);

  // diagonal entries from the d diagonal probes
  Mat design(d, d);
  for (int k = 0; k < d; ++k) {
    for (int i = 0; i < d; ++i) design(k, i) = plan.probes[static_cast<std::size_t>(k)](i, i);
  }
  Eigen::FullPivLU<Mat> lu(design);
  if (!lu.isInvertible()) throw ConfigError("solve_covariance: singular diagonal probe system");
  Vec z_diag = lu.solve(trace_rhs.head(d));

  Mat z = z_diag.asDiagonal();
  int idx = d;
  for (int l = 0; l < d; ++l) {
    for (int r = l + 1; r < d; ++r) {
      // Tr(Z A_pair) = sum_i z_ii + z_lr
      double z_lr = trace_rhs[idx] - z_diag.sum();
      z(l, r) = z_lr;
      z(r, l) = z_lr;
      ++idx;
    }
  }
  z = 0.5 * (z + z.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Mat> es(z);
  if (es.eigenvalues().minCoeff() < 0.0) {
    Vec lam = es.eigenvalues().cwiseMax(0.0);
    Mat z_psd = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    est.projection_correction = (z - z_psd).norm();
    est.projected = true;
    z = 0.5 * (z_psd + z_psd.transpose()).eval();
  }
  est.z = z;
  return est;
}

Mat friction_from_covariance(const CovarianceEstimate& estimate) { return 0.5 * estimate.z; }

CovarianceEstimate estimate_covariance(const PotentialOracle& oracle, const ProbePlan& plan,
                                       const CovPipelineParams& params) {
  const int n_probes = static_cast<int>(plan.probes.size());
  Vec traces(n_probes), errs(n_probes);
  std::vector<std::string> failures(static_cast<std::size_t>(n_probes));
  parallel_jobs(n_probes, params.jobs, [&](int k) {
    ProbeRunParams run = params.run;
    run.seed = splitmix64(params.run.seed + 0x9E37U * static_cast<std::uint64_t>(k + 1));
    try {
      RhsMeasurement m = measure_rhs(oracle, plan.probes[static_cast<std::size_t>(k)], plan.gamma, run);
      traces[k] = m.trace_estimate;
      errs[k] = m.stderr_trace;
    } catch (const DivergenceError& e) {
      throw DivergenceError("probe " + std::to_string(k) + ": " + e.what(), e.step, e.last_q,
                            e.last_p);
    }
  });
  return solve_covariance(plan, traces, errs);
}

nlohmann::json CovarianceEstimate::to_json() const {
  nlohmann::json j;
  const int d = static_cast<int>(z.rows());
  std::vector<double> zf;
  for (int i = 0; i < d; ++i)
    for (int c = 0; c < d; ++c) zf.push_back(z(i, c));
  j["dim"] = d;
  j["z"] = zf;  // row-major
  j["rhs"] = std::vector<double>(rhs.data(), rhs.data() + rhs.size());
  j["trace_rhs"] = std::vector<double>(trace_rhs.data(), trace_rhs.data() + trace_rhs.size());
  j["stderr"] = std::vector<double>(stderr_trace.data(), stderr_trace.data() + stderr_trace.size());
  j["projected"] = projected;
  j["projection_correction"] = projection_correction;
  nlohmann::json pj;
  pj["gamma"] = plan.gamma;
  pj["probes"] = nlohmann::json::array();
  for (const Mat& a : plan.probes) {
    std::vector<double> af;
    for (int i = 0; i < a.rows(); ++i)
      for (int c = 0; c < a.cols(); ++c) af.push_back(a(i, c));
    pj["probes"].push_back(af);
  }
  pj["description"] = "diagonal probes I + e_k e_k^T, then pair probes with half off-diagonals";
  j["plan"] = pj;
  return j;
}

CovarianceEstimate CovarianceEstimate::from_json(const nlohmann::json& j) {
  CovarianceEstimate est;
  const int d = j.at("dim").get<int>();
  auto zf = j.at("z").get<std::vector<double>>();
  if (static_cast<int>(zf.size()) != d * d) throw ConfigError("covariance json: bad z size");
  est.z.resize(d, d);
  for (int i = 0; i < d; ++i)
    for (int c = 0; c < d; ++c) est.z(i, c) = zf[static_cast<std::size_t>(i) * d + c];
  auto get_vec = [&](const char* key) {
    auto v = j.at(key).get<std::vector<double>>();
    return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  est.rhs = get_vec("rhs");
  est.trace_rhs = get_vec("trace_rhs");
  est.stderr_trace = get_vec("stderr");
  est.projected = j.at("projected").get<bool>();
  est.projection_correction = j.at("projection_correction").get<double>();
  est.plan.gamma = j.at("plan").at("gamma").get<double>();
  for (const auto& af : j.at("plan").at("probes")) {
    auto v = af.get<std::vector<double>>();
    int dd = static_cast<int>(std::lround(std::sqrt(static_cast<double>(v.size()))));
    Mat a(dd, dd);
    for (int i = 0; i < dd; ++i)
      for (int c = 0; c < dd; ++c) a(i, c) = v[static_cast<std::size_t>(i) * dd + c];
    est.plan.probes.push_back(a);
  }
  return est;
}

}  // namespace effpot
