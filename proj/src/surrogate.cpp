#include "effpot/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "effpot/csv.hpp"
#include "effpot/parallel.hpp"
#include "effpot/rng.hpp"

namespace effpot {

DistSpec DistSpec::point(const Vec& v) {
  DistSpec s;
  s.kind = Kind::Point;
  s.a = v;
  return s;
}

DistSpec DistSpec::normal(const Vec& mean, const Vec& stddev) {
  DistSpec s;
  s.kind = Kind::Normal;
  s.a = mean;
  s.b = stddev;
  return s;
}

DistSpec DistSpec::uniform(const Vec& lo, const Vec& hi, const Vec& shift) {
  DistSpec s;
  s.kind = Kind::Uniform;
  s.a = lo;
  s.b = hi;
  s.shift = shift;
  return s;
}

Vec DistSpec::sample(int d, std::mt19937_64& rng) const {
  Vec out(d);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < d; ++i) {
    double ai = a.size() == d ? a[i] : (a.size() == 1 ? a[0] : 0.0);
    switch (kind) {
      case Kind::Point:
        out[i] = ai;
        break;
      case Kind::Normal: {
        double bi = b.size() == d ? b[i] : (b.size() == 1 ? b[0] : 1.0);
        out[i] = ai + bi * standard_normal(rng);
        break;
      }
      case Kind::Uniform: {
        double bi = b.size() == d ? b[i] : (b.size() == 1 ? b[0] : 1.0);
        double sh = shift.size() == d ? shift[i] : (shift.size() == 1 ? shift[0] : 0.0);
        out[i] = ai + (bi - ai) * unif(rng) + sh;
        break;
      }
    }
  }
  return out;
}

nlohmann::json DistSpec::to_json() const {
  nlohmann::json j;
  auto vecj = [](const Vec& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  switch (kind) {
    case Kind::Point:
      j["dist"] = "point";
      j["value"] = vecj(a);
      break;
    case Kind::Normal:
      j["dist"] = "normal";
      j["mean"] = vecj(a);
      j["std"] = vecj(b);
      break;
    case Kind::Uniform:
      j["dist"] = "uniform";
      j["a"] = vecj(a);
      j["b"] = vecj(b);
      j["shift"] = vecj(shift);
      break;
  }
  return j;
}

namespace {

Vec json_vec(const nlohmann::json& j, int d) {
  std::vector<double> v;
  if (j.is_number()) {
    v.assign(static_cast<std::size_t>(d), j.get<double>());
  } else {
    v = j.get<std::vector<double>>();
    if (static_cast<int>(v.size()) == 1 && d > 1) v.assign(static_cast<std::size_t>(d), v[0]);
  }
  if (static_cast<int>(v.size()) != d) throw ConfigError("distribution vector has wrong dimension");
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

DistSpec DistSpec::from_json(const nlohmann::json& j, int d) {
  std::string kind = j.at("dist").get<std::string>();
  DistSpec s;
  if (kind == "point") {
    s.kind = Kind::Point;
    s.a = json_vec(j.at("value"), d);
  } else if (kind == "normal") {
    s.kind = Kind::Normal;
    s.a = json_vec(j.at("mean"), d);
    s.b = json_vec(j.at("std"), d);
  } else if (kind == "uniform") {
    s.kind = Kind::Uniform;
    s.a = json_vec(j.at("a"), d);
    s.b = json_vec(j.at("b"), d);
    s.shift = j.contains("shift") ? json_vec(j.at("shift"), d) : Vec::Zero(d);
  } else {
    throw ConfigError("unknown init distribution: " + kind);
  }
  return s;
}

Trajectories run_ensemble(const PotentialOracle& oracle, SurrogateMode mode,
                          const EnsembleConfig& config, const Mat& friction, double beta_hat,
                          int jobs) {
  const int d = oracle.dim();
  if (config.n_traj < 1) throw ConfigError("run_ensemble: n_traj must be >= 1");
  if (!(config.horizon > 0.0)) throw ConfigError("run_ensemble: horizon must be > 0");
  if (!(config.step > 0.0)) throw ConfigError("run_ensemble: step must be > 0");

  const double grid_h = config.noise_grid_step > 0.0 ? config.noise_grid_step : config.step;
  const double ratio_f = config.step / grid_h;
  const long long ratio = std::llround(ratio_f);
  if (ratio < 1 || std::abs(ratio_f - static_cast<double>(ratio)) > 1e-9 * ratio_f) {
    throw ConfigError("run_ensemble: noise_grid_step must divide step");
  }

  const long long n_steps = std::llround(config.horizon / config.step);
  if (n_steps < 1) throw ConfigError("run_ensemble: horizon shorter than one step");
  const long long stride =
      config.store_dt > 0.0 ? std::max<long long>(1, std::llround(config.store_dt / config.step)) : 1;
  const long long n_store = n_steps / stride + 1;

  SimConfig cfg;
  cfg.delta = config.step;
  cfg.mass = Mat::Identity(d, d);
  cfg.friction = mode == SurrogateMode::Hamiltonian ? Mat::Zero(d, d) : friction;
  cfg.n_steps = n_steps;
  cfg.burn_in = 0;
  cfg.seed = config.seed;
  if (cfg.friction.rows() != d) throw ConfigError("run_ensemble: friction dimension mismatch");

  // Substep OU factors on the noise grid; one coarse refresh equals `ratio`
  // composed sub-refreshes, consuming the same draws as a fine-step model.
  SimConfig sub_cfg = cfg;
  sub_cfg.delta = grid_h;
  const LangevinPre sub = precompute_langevin(sub_cfg, beta_hat);
  const Mat half = 0.5 * config.step * Mat::Identity(d, d);

  Vec box_lo, box_hi;
  const bool has_box = config.domain.has_value();
  if (has_box) {
    box_lo = config.domain->first.array() - config.domain_margin;
    box_hi = config.domain->second.array() + config.domain_margin;
  }

  Trajectories out;
  out.step = config.step;
  out.times.resize(n_store);
  for (long long k = 0; k < n_store; ++k) out.times[k] = static_cast<double>(k * stride) * config.step;
  out.q.assign(static_cast<std::size_t>(config.n_traj), Mat(n_store, d));
  out.p.assign(static_cast<std::size_t>(config.n_traj), Mat(n_store, d));
  out.excluded.assign(static_cast<std::size_t>(config.n_traj), 0);

  parallel_jobs(config.n_traj, jobs, [&](int t) {
    Mat& Q = out.q[static_cast<std::size_t>(t)];
    Mat& P = out.p[static_cast<std::size_t>(t)];
    std::mt19937_64 rng_init = make_engine(config.seed, static_cast<std::uint64_t>(t), 0);
    std::mt19937_64 rng_noise = make_engine(config.seed, static_cast<std::uint64_t>(t), 1);
    Vec q = config.init_q.sample(d, rng_init);
    Vec p = config.init_p.sample(d, rng_init);
    Q.row(0) = q.transpose();
    P.row(0) = p.transpose();
    bool bad = false;
    Vec qh(d), g(d), z(d);
    long long row = 1;
    for (long long n = 1; n <= n_steps; ++n) {
      qh.noalias() = q + half * p;
      oracle.gradient(qh, g);
      if (!g.allFinite()) {
        bad = true;
      } else {
        p -= config.step * g;
        if (mode == SurrogateMode::Langevin) {
          for (long long i = 0; i < ratio; ++i) {
            p = sub.damp * p;
            if (sub.has_noise) {
              for (int c = 0; c < d; ++c) z[c] = standard_normal(rng_noise);
              p.noalias() += sub.noise_l * z;
            }
          }
        }
        q.noalias() = qh + half * p;
      }
      if (bad || !q.allFinite() || !p.allFinite() || q.squaredNorm() > 1e16) {
        out.excluded[static_cast<std::size_t>(t)] = 1;
        for (long long k = row; k < n_store; ++k) {
          Q.row(k).setZero();
          P.row(k).setZero();
        }
        return;
      }
      if (has_box) {
        for (int c = 0; c < d; ++c) {
          if (q[c] < box_lo[c] || q[c] > box_hi[c]) out.excluded[static_cast<std::size_t>(t)] = 1;
        }
      }
      if (n % stride == 0) {
        Q.row(row) = q.transpose();
        P.row(row) = p.transpose();
        ++row;
      }
    }
  });

  out.n_excluded = 0;
  for (auto e : out.excluded) out.n_excluded += e;
  return out;
}

Mat mean_trajectory(const Trajectories& trajectories) {
  std::vector<Mat> keep;
  for (int t = 0; t < trajectories.n_traj(); ++t) {
    if (!trajectories.excluded[static_cast<std::size_t>(t)]) {
      keep.push_back(trajectories.q[static_cast<std::size_t>(t)]);
    }
  }
  if (keep.empty()) throw DegenerateDataError("mean_trajectory: all trajectories excluded");
  return mean_trajectory(keep);
}

Mat mean_trajectory(const std::vector<Mat>& qs) {
  if (qs.empty()) throw ContractError("mean_trajectory: empty ensemble");
  const Eigen::Index rows = qs.front().rows();
  const Eigen::Index cols = qs.front().cols();
  Mat mean = Mat::Zero(rows, cols);
  for (const Mat& q : qs) {
    if (q.rows() != rows || q.cols() != cols) {
      throw ContractError("mean_trajectory: ragged trajectories (unequal lengths)");
    }
    mean += q;
  }
  mean /= static_cast<double>(qs.size());
  return mean;
}

std::pair<Vec, Mat> normalized_acf(const Trajectories& trajectories, double max_lag,
                                   double burn_frac) {
  const int d = trajectories.dim();
  const long long n = trajectories.times.size();
  if (n < 2) throw ContractError("normalized_acf: need at least two stored points");
  const double dt = trajectories.times[1] - trajectories.times[0];
  long long burn = static_cast<long long>(std::floor(burn_frac * static_cast<double>(n - 1)));
  burn = std::clamp<long long>(burn, 0, n - 2);
  long long max_shift = std::min<long long>(static_cast<long long>(std::floor(max_lag / dt)),
                                            n - 1 - burn - 1);
  if (max_shift < 0) throw ConfigError("normalized_acf: max_lag below stored resolution");

  std::vector<const Mat*> keep;
  for (int t = 0; t < trajectories.n_traj(); ++t) {
    if (!trajectories.excluded[static_cast<std::size_t>(t)]) {
      keep.push_back(&trajectories.q[static_cast<std::size_t>(t)]);
    }
  }
  if (keep.empty()) throw DegenerateDataError("normalized_acf: all trajectories excluded");

  Vec mu = Vec::Zero(d);
  long long count = 0;
  for (const Mat* q : keep) {
    for (long long i = burn; i < n; ++i) {
      mu += q->row(i).transpose();
      ++count;
    }
  }
  mu /= static_cast<double>(count);

  Vec lags(max_shift + 1);
  Mat acf(max_shift + 1, d);
  Vec denom = Vec::Zero(d);
  for (long long shift = 0; shift <= max_shift; ++shift) {
    lags[shift] = static_cast<double>(shift) * dt;
    Vec num = Vec::Zero(d);
    long long terms = 0;
    for (const Mat* q : keep) {
      for (long long i = burn; i + shift < n; ++i) {
        for (int c = 0; c < d; ++c) {
          num[c] += ((*q)(i, c) - mu[c]) * ((*q)(i + shift, c) - mu[c]);
        }
        ++terms;
      }
    }
    num /= static_cast<double>(terms);
    if (shift == 0) {
      denom = num;
      for (int c = 0; c < d; ++c) {
        if (!(denom[c] > 0.0)) {
          throw DegenerateDataError("normalized_acf: zero covariance in coordinate " +
                                    std::to_string(c));
        }
      }
    }
    for (int c = 0; c < d; ++c) acf(shift, c) = num[c] / denom[c];
  }
  return {lags, acf};
}

DiagnosticsReport make_diagnostics(const Trajectories& trajectories,
                                   const DiagnosticsParams& params) {
  DiagnosticsReport rep;
  rep.times = trajectories.times;
  rep.mean_path = mean_trajectory(trajectories);
  auto [lags, acf] = normalized_acf(trajectories, params.max_lag, params.acf_burn_frac);
  rep.lags = lags;
  rep.acf = acf;
  rep.n_traj = trajectories.n_traj();
  rep.n_excluded = trajectories.n_excluded;
  rep.equilibrium_window = params.equilibrium_window;

  const int d = trajectories.dim();
  const long long n = trajectories.times.size();
  const double t_min = params.equilibrium_window * trajectories.times[n - 1];
  long long first = 0;
  while (first < n && trajectories.times[first] < t_min) ++first;
  if (first >= n) first = n - 1;
  long long rows = 0;
  for (int t = 0; t < trajectories.n_traj(); ++t) {
    if (!trajectories.excluded[static_cast<std::size_t>(t)]) rows += n - first;
  }
  Mat pooled(rows, d);
  long long r = 0;
  for (int t = 0; t < trajectories.n_traj(); ++t) {
    if (trajectories.excluded[static_cast<std::size_t>(t)]) continue;
    const Mat& q = trajectories.q[static_cast<std::size_t>(t)];
    for (long long i = first; i < n; ++i) pooled.row(r++) = q.row(i);
  }
  rep.equilibrium = histogram_density(pooled, std::vector<int>(d, params.equilibrium_bins));

  if (params.with_phase && trajectories.n_traj() > 0) {
    rep.phase.resize(n, 2 * d);
    rep.phase.leftCols(d) = trajectories.q[0];
    rep.phase.rightCols(d) = trajectories.p[0];
  }
  return rep;
}

namespace {

// Linear interpolation of column c of (xs, ys) at x; xs ascending.
double interp1(const Vec& xs, const Mat& ys, int c, double x) {
  const Eigen::Index n = xs.size();
  if (x <= xs[0]) return ys(0, c);
  if (x >= xs[n - 1]) return ys(n - 1, c);
  Eigen::Index lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    Eigen::Index mid = (lo + hi) / 2;
    if (xs[mid] <= x) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double w = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return (1.0 - w) * ys(lo, c) + w * ys(hi, c);
}

struct CurveDiff {
  double linf = 0.0;
  double l2 = 0.0;
};

CurveDiff curve_discrepancy(const Vec& xa, const Mat& ya, const Vec& xb, const Mat& yb) {
  if (ya.cols() != yb.cols()) throw ContractError("compare_reports: dimension mismatch");
  const double lo = std::max(xa[0], xb[0]);
  const double hi = std::min(xa[xa.size() - 1], xb[xb.size() - 1]);
  if (!(hi > lo)) throw ContractError("compare_reports: non-overlapping grids");
  CurveDiff diff;
  double ss = 0.0;
  long long n_used = 0;
  for (Eigen::Index i = 0; i < xa.size(); ++i) {
    if (xa[i] < lo || xa[i] > hi) continue;
    for (int c = 0; c < ya.cols(); ++c) {
      double delta = ya(i, c) - interp1(xb, yb, c, xa[i]);
      diff.linf = std::max(diff.linf, std::abs(delta));
      ss += delta * delta;
    }
    ++n_used;
  }
  diff.l2 = std::sqrt(ss / static_cast<double>(std::max<long long>(1, n_used) * ya.cols()));
  return diff;
}

// Exact L1 distance between piecewise-constant densities on (possibly
// different) uniform grids, integrated over the union of supports.
std::pair<double, double> density_l1_overlap(const Histogram& a, const Histogram& b) {
  const int d = a.dims();
  if (b.dims() != d) throw ContractError("compare_reports: histogram dimension mismatch");

  auto merged_edges = [](const Vec& ea, const Vec& eb) {
    std::set<double> s(ea.data(), ea.data() + ea.size());
    s.insert(eb.data(), eb.data() + eb.size());
    return std::vector<double>(s.begin(), s.end());
  };
  auto bin_of = [](const Vec& edges, double x) -> int {
    if (x < edges[0] || x > edges[edges.size() - 1]) return -1;
    int n = static_cast<int>(edges.size()) - 1;
    int i = static_cast<int>(std::floor((x - edges[0]) / (edges[1] - edges[0])));
    return std::clamp(i, 0, n - 1);
  };

  double l1 = 0.0, overlap = 0.0;
  if (d == 1) {
    auto xs = merged_edges(a.edges[0], b.edges[0]);
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
      double mid = 0.5 * (xs[i] + xs[i + 1]);
      double len = xs[i + 1] - xs[i];
      int ia = bin_of(a.edges[0], mid);
      int ib = bin_of(b.edges[0], mid);
      double fa = ia >= 0 ? a.density[static_cast<std::size_t>(ia)] : 0.0;
      double fb = ib >= 0 ? b.density[static_cast<std::size_t>(ib)] : 0.0;
      l1 += std::abs(fa - fb) * len;
      overlap += std::min(fa, fb) * len;
    }
    return {l1, overlap};
  }
  if (d != 2) throw ContractError("compare_reports: only 1D and 2D equilibria supported");
  auto xs = merged_edges(a.edges[0], b.edges[0]);
  auto ys = merged_edges(a.edges[1], b.edges[1]);
  const int nya = a.bins(1), nyb = b.bins(1);
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    double mx = 0.5 * (xs[i] + xs[i + 1]);
    double wx = xs[i + 1] - xs[i];
    int iax = bin_of(a.edges[0], mx);
    int ibx = bin_of(b.edges[0], mx);
    for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
      double my = 0.5 * (ys[j] + ys[j + 1]);
      double wy = ys[j + 1] - ys[j];
      int iay = bin_of(a.edges[1], my);
      int iby = bin_of(b.edges[1], my);
      double fa = (iax >= 0 && iay >= 0)
                      ? a.density[static_cast<std::size_t>(iax) * nya + iay]
                      : 0.0;
      double fb = (ibx >= 0 && iby >= 0)
                      ? b.density[static_cast<std::size_t>(ibx) * nyb + iby]
                      : 0.0;
      l1 += std::abs(fa - fb) * wx * wy;
      overlap += std::min(fa, fb) * wx * wy;
    }
  }
  return {l1, overlap};
}

}  // namespace

Discrepancy compare_reports(const DiagnosticsReport& a, const DiagnosticsReport& b) {
  Discrepancy disc;
  CurveDiff mean = curve_discrepancy(a.times, a.mean_path, b.times, b.mean_path);
  disc.mean_path_linf = mean.linf;
  disc.mean_path_l2 = mean.l2;
  CurveDiff acf = curve_discrepancy(a.lags, a.acf, b.lags, b.acf);
  disc.acf_linf = acf.linf;
  disc.acf_l2 = acf.l2;
  auto [l1, overlap] = density_l1_overlap(a.equilibrium, b.equilibrium);
  disc.equilibrium_tv = 0.5 * l1;
  disc.disjoint_support = overlap < 1e-12;
  return disc;
}

nlohmann::json Discrepancy::to_json() const {
  nlohmann::json j;
  j["mean_path_linf"] = mean_path_linf;
  j["mean_path_l2"] = mean_path_l2;
  j["acf_linf"] = acf_linf;
  j["acf_l2"] = acf_l2;
  j["equilibrium_tv"] = equilibrium_tv;
  j["disjoint_support"] = disjoint_support;
  return j;
}

nlohmann::json DiagnosticsReport::to_json() const {
  nlohmann::json j;
  j["n_traj"] = n_traj;
  j["n_excluded"] = n_excluded;
  j["equilibrium_window"] = equilibrium_window;
  j["times"] = std::vector<double>(times.data(), times.data() + times.size());
  j["lags"] = std::vector<double>(lags.data(), lags.data() + lags.size());
  auto matj = [](const Mat& m) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      rows.emplace_back(m.row(i).data(), m.row(i).data() + m.cols());
    }
    return rows;
  };
  j["mean_path"] = matj(mean_path);
  j["acf"] = matj(acf);
  j["acf0"] = acf.rows() > 0 ? acf(0, 0) : 0.0;
  return j;
}

void write_mean_path_csv(const std::string& path, const DiagnosticsReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "t";
  for (int c = 0; c < report.mean_path.cols(); ++c) out << ",qbar_" << (c + 1);
  out << "\n";
  for (Eigen::Index i = 0; i < report.times.size(); ++i) {
    out << csv::fmt(report.times[i]);
    for (int c = 0; c < report.mean_path.cols(); ++c) out << "," << csv::fmt(report.mean_path(i, c));
    out << "\n";
  }
}

void write_acf_csv(const std::string& path, const DiagnosticsReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "tau";
  for (int c = 0; c < report.acf.cols(); ++c) out << ",acf_" << (c + 1);
  out << "\n";
  for (Eigen::Index i = 0; i < report.lags.size(); ++i) {
    out << csv::fmt(report.lags[i]);
    for (int c = 0; c < report.acf.cols(); ++c) out << "," << csv::fmt(report.acf(i, c));
    out << "\n";
  }
}

void write_equilibrium_csv(const std::string& path, const DiagnosticsReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  const Histogram& h = report.equilibrium;
  const int d = h.dims();
  for (int k = 0; k < d; ++k) out << "bin_" << (k + 1) << ",";
  out << "density\n";
  for (std::size_t i = 0; i < h.density.size(); ++i) {
    Vec c = h.center(static_cast<long long>(i));
    for (int k = 0; k < d; ++k) out << csv::fmt(c[k]) << ",";
    out << csv::fmt(h.density[i]) << "\n";
  }
}

void write_phase_csv(const std::string& path, const DiagnosticsReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  const int d = static_cast<int>(report.phase.cols()) / 2;
  for (int c = 0; c < d; ++c) out << "q_" << (c + 1) << ",";
  for (int c = 0; c < d; ++c) out << "p_" << (c + 1) << (c + 1 < d ? "," : "");
  out << "\n";
  for (Eigen::Index i = 0; i < report.phase.rows(); ++i) {
    for (int c = 0; c < 2 * d; ++c) {
      out << csv::fmt(report.phase(i, c)) << (c + 1 < 2 * d ? "," : "");
    }
    out << "\n";
  }
}

void write_trajectory_csv(const std::string& path, const Trajectories& trajectories, int index) {
  if (index < 0 || index >= trajectories.n_traj()) {
    throw ContractError("write_trajectory_csv: trajectory index out of range");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  const Mat& q = trajectories.q[static_cast<std::size_t>(index)];
  const Mat& p = trajectories.p[static_cast<std::size_t>(index)];
  const int d = static_cast<int>(q.cols());
  out << "t";
  for (int c = 0; c < d; ++c) out << ",q_" << (c + 1);
  for (int c = 0; c < d; ++c) out << ",p_" << (c + 1);
  out << "\n";
  for (Eigen::Index i = 0; i < trajectories.times.size(); ++i) {
    out << csv::fmt(trajectories.times[i]);
    for (int c = 0; c < d; ++c) out << "," << csv::fmt(q(i, c));
    for (int c = 0; c < d; ++c) out << "," << csv::fmt(p(i, c));
    out << "\n";
  }
}

}  // namespace effpot
