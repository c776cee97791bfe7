#include "effpot/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "effpot/csv.hpp"
#include "effpot/parallel.hpp"

namespace effpot {

namespace {

// Integrated autocorrelation time of a scalar series, with early stop once
// correlations are negligible. Used to pick a decorrelating thinning stride.
double integrated_autocorr_time(const double* x, long long n) {
  if (n < 100) return 1.0;
  long long n_use = std::min<long long>(n, 100000);
  double mean = 0.0;
  for (long long i = 0; i < n_use; ++i) mean += x[i];
  mean /= static_cast<double>(n_use);
  double var = 0.0;
  for (long long i = 0; i < n_use; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(n_use);
  if (var <= 0.0) return 1.0;
  double tau = 1.0;
  long long max_lag = std::min<long long>(n_use / 4, 2000);
  for (long long k = 1; k <= max_lag; ++k) {
    double c = 0.0;
    for (long long i = 0; i + k < n_use; ++i) c += (x[i] - mean) * (x[i + k] - mean);
    c /= static_cast<double>(n_use - k) * var;
    if (c < 0.05) break;
    tau += 2.0 * c;
  }
  return tau;
}

struct Moments {
  double mean, var, skew, ex_kurt;
  bool degenerate = false;
};

// Standardizes before the higher moments: scale-invariant and immune to
// underflow when the momenta have decayed to ~0.
Moments central_moments(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double m2 = 0.0;
  for (double v : x) m2 += (v - mean) * (v - mean);
  m2 /= n;
  Moments out;
  out.mean = mean;
  out.var = m2;
  if (!(m2 > 0.0)) {
    out.skew = 0.0;
    out.ex_kurt = 0.0;
    out.degenerate = true;
    return out;
  }
  const double s = std::sqrt(m2);
  double m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    double z = (v - mean) / s;
    double z2 = z * z;
    m3 += z2 * z;
    m4 += z2 * z2;
  }
  out.skew = m3 / n;
  out.ex_kurt = m4 / n - 3.0;
  return out;
}

double safe_div(double num, double den) { return den != 0.0 ? num / den : 0.0; }

}  // namespace

nlohmann::json NormalityReport::to_json() const {
  nlohmann::json j;
  j["per_dim_stat"] = std::vector<double>(per_dim_stat.data(), per_dim_stat.data() + per_dim_stat.size());
  j["per_dim_p"] = std::vector<double>(per_dim_p.data(), per_dim_p.data() + per_dim_p.size());
  j["cross_corr_max"] = cross_corr_max;
  j["verdict"] = verdict ? "pass" : "fail";
  j["threshold"] = threshold;
  j["n_used"] = n_used;
  j["stride"] = stride;
  j["tau_int"] = tau_int;
  return j;
}

NormalityReport normality_test(const SampleSet& samples, double threshold, long long max_points) {
  const long long n = samples.size();
  const int d = samples.dim();
  if (n < 1000) {
    throw InsufficientDataError("normality_test needs at least 1000 momentum samples, got " +
                                std::to_string(n));
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("normality threshold must be in (0,1)");
  if (max_points < 1000 || max_points > 1000000) {
    throw ConfigError("normality max_points must be in [1000, 1e6]");
  }

  NormalityReport report;
  report.threshold = threshold;

  double tau = 1.0;
  for (int c = 0; c < d; ++c) {
    Vec col = samples.ps.col(c);
    tau = std::max(tau, integrated_autocorr_time(col.data(), n));
  }
  report.tau_int = tau;

  long long stride = std::max<long long>(
      (n + max_points - 1) / max_points, static_cast<long long>(std::ceil(2.0 * tau)));
  if (n / std::max<long long>(stride, 1) < 1000) stride = std::max<long long>(1, n / 1000);
  report.stride = stride;

  const long long n_used = n / stride;
  report.n_used = n_used;
  report.per_dim_stat.resize(d);
  report.per_dim_p.resize(d);

  Mat thin(n_used, d);
  for (long long i = 0; i < n_used; ++i) thin.row(i) = samples.ps.row(i * stride);

  for (int c = 0; c < d; ++c) {
    std::vector<double> x(thin.col(c).data(), thin.col(c).data() + n_used);
    Moments mo = central_moments(x);
    if (mo.degenerate) {
      // a point mass is as far from normal as it gets
      report.per_dim_stat[c] = std::numeric_limits<double>::infinity();
      report.per_dim_p[c] = 0.0;
      continue;
    }
    double jb = static_cast<double>(n_used) / 6.0 *
                (mo.skew * mo.skew + 0.25 * mo.ex_kurt * mo.ex_kurt);
    report.per_dim_stat[c] = jb;
    report.per_dim_p[c] = std::min(1.0, std::exp(-0.5 * jb));  // chi^2 with 2 dof
  }

  report.cross_corr_max = 0.0;
  if (d > 1) {
    Vec mean = thin.colwise().mean();
    Mat centered = thin.rowwise() - mean.transpose();
    Mat cov = centered.transpose() * centered / static_cast<double>(n_used);
    for (int i = 0; i < d; ++i) {
      for (int j = i + 1; j < d; ++j) {
        double denom = std::sqrt(cov(i, i) * cov(j, j));
        double corr = denom > 0 ? std::abs(cov(i, j)) / denom : 0.0;
        report.cross_corr_max = std::max(report.cross_corr_max, corr);
      }
    }
  }

  report.verdict = report.per_dim_p.minCoeff() >= threshold;
  return report;
}

BetaEstimate estimate_beta(const SampleSet& samples) {
  const long long n = samples.size();
  if (n < 2) throw InsufficientDataError("estimate_beta needs at least 2 samples");
  BetaEstimate est;
  if (samples.dim() > 1) {
    // Multi-dimensional runs are friction-calibrated to unit temperature.
    est.value = 1.0;
    est.var_p = std::numeric_limits<double>::quiet_NaN();
    return est;
  }
  double mean = samples.ps.col(0).mean();
  double ss = (samples.ps.col(0).array() - mean).square().sum();
  double var = ss / static_cast<double>(n - 1);
  // roundoff floor: a constant series leaves ss at summation-noise level
  if (!(var > 1e-28 * (1.0 + mean * mean))) {
    throw DegenerateDataError("momentum variance is zero; cannot estimate beta");
  }
  est.var_p = var;
  est.value = 1.0 / var;
  est.out_of_range = !(est.value > 0.2 && est.value < 1.25);
  return est;
}

double Histogram::bin_volume() const {
  double v = 1.0;
  for (int d = 0; d < dims(); ++d) v *= bin_width(d);
  return v;
}

long long Histogram::flat_index(const std::vector<int>& idx) const {
  long long flat = 0;
  for (int d = 0; d < dims(); ++d) flat = flat * bins(d) + idx[d];
  return flat;
}

Vec Histogram::center(long long flat) const {
  const int nd = dims();
  Vec c(nd);
  for (int d = nd - 1; d >= 0; --d) {
    int nb = bins(d);
    int i = static_cast<int>(flat % nb);
    flat /= nb;
    c[d] = 0.5 * (edges[d][i] + edges[d][i + 1]);
  }
  return c;
}

Histogram histogram_density(const Mat& samples, const std::vector<int>& bins_per_dim,
                            const std::optional<std::pair<Vec, Vec>>& domain) {
  const long long n = samples.rows();
  const int d = static_cast<int>(samples.cols());
  if (n < 1) throw InsufficientDataError("histogram_density: empty sample set");
  if (static_cast<int>(bins_per_dim.size()) != d) {
    throw ConfigError("histogram_density: bins_per_dim size must equal sample dimension");
  }
  for (int k = 0; k < d; ++k) {
    if (bins_per_dim[k] < 1) throw ConfigError("histogram_density: bins_per_dim must be >= 1");
  }

  Histogram h;
  h.edges.resize(d);
  Vec lo(d), hi(d);
  for (int k = 0; k < d; ++k) {
    if (domain) {
      lo[k] = domain->first[k];
      hi[k] = domain->second[k];
      if (!(hi[k] > lo[k])) throw ConfigError("histogram_density: empty domain");
    } else {
      double mn = samples.col(k).minCoeff();
      double mx = samples.col(k).maxCoeff();
      double range = mx - mn;
      if (range <= 0.0) range = std::max(1e-12, std::abs(mn) * 1e-12 + 1e-12);
      lo[k] = mn - 0.005 * range;
      hi[k] = mx + 0.005 * range;
    }
    int nb = bins_per_dim[k];
    h.edges[k].resize(nb + 1);
    double w = (hi[k] - lo[k]) / nb;
    for (int i = 0; i <= nb; ++i) h.edges[k][i] = lo[k] + w * i;
  }

  long long total_bins = 1;
  for (int k = 0; k < d; ++k) total_bins *= bins_per_dim[k];
  h.counts.assign(static_cast<std::size_t>(total_bins), 0);

  std::vector<int> idx(d);
  for (long long i = 0; i < n; ++i) {
    bool inside = true;
    for (int k = 0; k < d; ++k) {
      double x = samples(i, k);
      double w = h.bin_width(k);
      int b = static_cast<int>(std::floor((x - lo[k]) / w));
      if (x == hi[k]) b = bins_per_dim[k] - 1;
      if (b < 0 || b >= bins_per_dim[k]) {
        inside = false;
        break;
      }
      idx[k] = b;
    }
    if (!inside) {
      ++h.dropped;
      continue;
    }
    ++h.counts[static_cast<std::size_t>(h.flat_index(idx))];
  }

  h.total = n - h.dropped;
  if (h.total < 1) throw InsufficientDataError("histogram_density: all samples outside domain");
  const double norm = 1.0 / (static_cast<double>(h.total) * h.bin_volume());
  h.density.resize(h.counts.size());
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    h.density[i] = static_cast<double>(h.counts[i]) * norm;
  }
  return h;
}

BSplineBasis::BSplineBasis(double a, double b, int m) : a(a), b(b), m(m) {
  if (m < 4) throw ConfigError("B-spline basis needs at least 4 functions");
  if (!(b > a)) throw ConfigError("B-spline basis needs b > a");
}

double BSplineBasis::knot(int i) const {
  if (i <= 3) return a;
  if (i >= m) return b;
  return a + (b - a) * static_cast<double>(i - 3) / static_cast<double>(m - 3);
}

void BSplineBasis::eval(double x, int& first, std::array<double, 4>& vals,
                        std::array<double, 4>* ders) const {
  x = std::clamp(x, a, b);
  const double h = (b - a) / static_cast<double>(m - 3);
  int cell = static_cast<int>(std::floor((x - a) / h));
  cell = std::clamp(cell, 0, m - 4);
  const int s = cell + 3;  // knot span: t_s <= x < t_{s+1}
  first = s - 3;

  double n_tri[4];  // triangular scheme, degree 0..3
  double left[4], right[4];
  n_tri[0] = 1.0;
  std::array<double, 3> deg2{0.0, 0.0, 0.0};
  for (int j = 1; j <= 3; ++j) {
    left[j] = x - knot(s + 1 - j);
    right[j] = knot(s + j) - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      double den = right[r + 1] + left[j - r];
      double temp = den != 0.0 ? n_tri[r] / den : 0.0;
      n_tri[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n_tri[j] = saved;
    if (j == 2) deg2 = {n_tri[0], n_tri[1], n_tri[2]};
  }
  vals = {n_tri[0], n_tri[1], n_tri[2], n_tri[3]};

  if (ders) {
    // d/dx B_{i,4} = 3 [ B_{i,3}/(t_{i+3}-t_i) - B_{i+1,3}/(t_{i+4}-t_{i+1}) ]
    // where the degree-2 (order-3) functions active at span s are
    // B_{s-2,3}, B_{s-1,3}, B_{s,3} = deg2[0..2].
    auto deg2_at = [&](int i) -> double {
      int k = i - (s - 2);
      return (k >= 0 && k < 3) ? deg2[static_cast<std::size_t>(k)] : 0.0;
    };
    for (int k = 0; k < 4; ++k) {
      int i = first + k;
      double term1 = safe_div(deg2_at(i), knot(i + 3) - knot(i));
      double term2 = safe_div(deg2_at(i + 1), knot(i + 4) - knot(i + 1));
      (*ders)[static_cast<std::size_t>(k)] = 3.0 * (term1 - term2);
    }
  }
}

namespace {

FittedPotential fit_spline_1d(const Histogram& hist, double beta_hat, const FitParams& params) {
  const int nb = hist.bins(0);
  std::vector<double> xs, ys, ws;
  xs.reserve(static_cast<std::size_t>(nb));
  for (int i = 0; i < nb; ++i) {
    long long c = hist.counts[static_cast<std::size_t>(i)];
    if (c < params.bin_floor) continue;
    xs.push_back(0.5 * (hist.edges[0][i] + hist.edges[0][i + 1]));
    ys.push_back(-std::log(hist.density[static_cast<std::size_t>(i)]) / beta_hat);
    ws.push_back(static_cast<double>(c));
  }
  const int m = params.basis_size;
  if (static_cast<int>(xs.size()) < m) {
    throw IllPosedFitError("fit_potential: only " + std::to_string(xs.size()) +
                           " bins above the count floor; need at least basis_size = " +
                           std::to_string(m));
  }

  BSplineBasis basis(xs.front(), xs.back(), m);
  Mat normal = Mat::Zero(m, m);
  Vec rhs = Vec::Zero(m);
  Vec support = Vec::Zero(m);
  int first;
  std::array<double, 4> vals;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    basis.eval(xs[j], first, vals);
    for (int r = 0; r < 4; ++r) {
      support[first + r] += ws[j] * vals[static_cast<std::size_t>(r)] * vals[static_cast<std::size_t>(r)];
      rhs[first + r] += ws[j] * vals[static_cast<std::size_t>(r)] * ys[j];
      for (int c = 0; c < 4; ++c) {
        normal(first + r, first + c) +=
            ws[j] * vals[static_cast<std::size_t>(r)] * vals[static_cast<std::size_t>(c)];
      }
    }
  }
  for (int i = 0; i < m; ++i) {
    if (support[i] <= 0.0) {
      throw IllPosedFitError("fit_potential: no data supports basis function " + std::to_string(i) +
                             " on [" + std::to_string(basis.knot(i)) + ", " +
                             std::to_string(basis.knot(i + 4)) + "]");
    }
  }
  Eigen::LDLT<Mat> ldlt(normal);
  if (ldlt.info() != Eigen::Success) {
    throw IllPosedFitError("fit_potential: rank-deficient normal equations");
  }
  Vec coeffs = ldlt.solve(rhs);
  if (!coeffs.allFinite()) throw IllPosedFitError("fit_potential: non-finite solution");

  FittedPotential fit;
  fit.basis = FittedPotential::Basis::BSpline1D;
  fit.beta_hat = beta_hat;
  fit.a = basis.a;
  fit.b = basis.b;
  fit.m = m;
  fit.coeffs = coeffs;

  // weighted RMS residual of the log-density regression
  double wsum = 0.0, rss = 0.0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    basis.eval(xs[j], first, vals);
    double pred = 0.0;
    for (int r = 0; r < 4; ++r) pred += coeffs[first + r] * vals[static_cast<std::size_t>(r)];
    rss += ws[j] * (pred - ys[j]) * (pred - ys[j]);
    wsum += ws[j];
  }
  fit.residual_rms = std::sqrt(rss / wsum);

  // gauge: shift so the minimum over the fitted domain is zero (B-splines
  // form a partition of unity, so a coefficient shift is a value shift)
  double vmin = std::numeric_limits<double>::infinity();
  const int n_grid = 4096;
  for (int i = 0; i <= n_grid; ++i) {
    double x = fit.a + (fit.b - fit.a) * i / n_grid;
    basis.eval(x, first, vals);
    double v = 0.0;
    for (int r = 0; r < 4; ++r) v += coeffs[first + r] * vals[static_cast<std::size_t>(r)];
    vmin = std::min(vmin, v);
  }
  fit.coeffs.array() -= vmin;
  fit.gauge = vmin;
  return fit;
}

FittedPotential fit_bilinear_2d(const Histogram& hist, double beta_hat, const FitParams& params) {
  const int nx = hist.bins(0);
  const int ny = hist.bins(1);
  FittedPotential fit;
  fit.basis = FittedPotential::Basis::Bilinear2D;
  fit.beta_hat = beta_hat;
  fit.xs.resize(nx);
  fit.ys.resize(ny);
  for (int i = 0; i < nx; ++i) fit.xs[i] = 0.5 * (hist.edges[0][i] + hist.edges[0][i + 1]);
  for (int j = 0; j < ny; ++j) fit.ys[j] = 0.5 * (hist.edges[1][j] + hist.edges[1][j + 1]);

  Mat raw = Mat::Zero(nx, ny);
  Mat weight = Mat::Zero(nx, ny);
  fit.observed.setZero(nx, ny);
  long long n_obs = 0;
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      long long flat = static_cast<long long>(i) * ny + j;
      long long c = hist.counts[static_cast<std::size_t>(flat)];
      if (c < params.bin_floor) continue;
      raw(i, j) = -std::log(hist.density[static_cast<std::size_t>(flat)]) / beta_hat;
      weight(i, j) = static_cast<double>(c);
      fit.observed(i, j) = 1;
      ++n_obs;
    }
  }
  if (n_obs < 16) {
    throw IllPosedFitError("fit_potential: only " + std::to_string(n_obs) +
                           " occupied bins; 2D fit needs at least 16");
  }

  // count-weighted 3x3 smoothing of the log-density surface
  Mat v = raw;
  for (int pass = 0; pass < params.smooth_passes; ++pass) {
    Mat next = v;
    for (int i = 0; i < nx; ++i) {
      for (int j = 0; j < ny; ++j) {
        if (!fit.observed(i, j)) continue;
        double acc = 0.0, wacc = 0.0;
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            int ii = i + di, jj = j + dj;
            if (ii < 0 || ii >= nx || jj < 0 || jj >= ny || !fit.observed(ii, jj)) continue;
            acc += weight(ii, jj) * v(ii, jj);
            wacc += weight(ii, jj);
          }
        }
        next(i, j) = acc / wacc;
      }
    }
    v = next;
  }

  double wsum = 0.0, rss = 0.0;
  double vmin = std::numeric_limits<double>::infinity();
  double vmax = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      if (!fit.observed(i, j)) continue;
      rss += weight(i, j) * (v(i, j) - raw(i, j)) * (v(i, j) - raw(i, j));
      wsum += weight(i, j);
      vmin = std::min(vmin, v(i, j));
      vmax = std::max(vmax, v(i, j));
    }
  }
  fit.residual_rms = std::sqrt(rss / wsum);
  fit.gauge = vmin;
  fit.cap = vmax - vmin + 1.0;
  fit.values = Mat::Constant(nx, ny, fit.cap);
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      if (fit.observed(i, j)) fit.values(i, j) = v(i, j) - vmin;
    }
  }
  return fit;
}

}  // namespace

FittedPotential fit_potential(const Histogram& hist, double beta_hat, const FitParams& params) {
  if (!(beta_hat > 0.0)) throw ConfigError("fit_potential: beta_hat must be > 0");
  if (params.bin_floor < 1) throw ConfigError("fit_potential: bin_floor must be >= 1");
  if (hist.dims() == 1) return fit_spline_1d(hist, beta_hat, params);
  if (hist.dims() == 2) return fit_bilinear_2d(hist, beta_hat, params);
  throw ConfigError("fit_potential supports 1D and 2D histograms");
}

std::pair<Vec, Vec> FittedPotential::domain() const {
  if (basis == Basis::BSpline1D) {
    Vec lo(1), hi(1);
    lo[0] = a;
    hi[0] = b;
    return {lo, hi};
  }
  Vec lo(2), hi(2);
  lo << xs[0], ys[0];
  hi << xs[xs.size() - 1], ys[ys.size() - 1];
  return {lo, hi};
}

double FittedPotential::value(const Vec& q) const {
  if (basis == Basis::BSpline1D) {
    double x = q[0];
    BSplineBasis bs(a, b, m);
    int first;
    std::array<double, 4> vals, ders;
    if (x >= a && x <= b) {
      bs.eval(x, first, vals);
      double v = 0.0;
      for (int r = 0; r < 4; ++r) v += coeffs[first + r] * vals[static_cast<std::size_t>(r)];
      return v;
    }
    double xb = x < a ? a : b;
    bs.eval(xb, first, vals, &ders);
    double vb = 0.0, gb = 0.0;
    for (int r = 0; r < 4; ++r) {
      vb += coeffs[first + r] * vals[static_cast<std::size_t>(r)];
      gb += coeffs[first + r] * ders[static_cast<std::size_t>(r)];
    }
    double dx = x - xb;
    return vb + gb * dx + 0.5 * dx * dx;
  }

  // 2D bilinear with box-clamped quadratic continuation
  const int nx = static_cast<int>(xs.size()), ny = static_cast<int>(ys.size());
  double x = std::clamp(q[0], xs[0], xs[nx - 1]);
  double y = std::clamp(q[1], ys[0], ys[ny - 1]);
  double hx = xs[1] - xs[0], hy = ys[1] - ys[0];
  int i = std::clamp(static_cast<int>((x - xs[0]) / hx), 0, nx - 2);
  int j = std::clamp(static_cast<int>((y - ys[0]) / hy), 0, ny - 2);
  double tx = (x - xs[i]) / hx;
  double ty = (y - ys[j]) / hy;
  double v00 = values(i, j), v10 = values(i + 1, j), v01 = values(i, j + 1),
         v11 = values(i + 1, j + 1);
  double v = (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 + (1 - tx) * ty * v01 + tx * ty * v11;
  double ddx = q[0] - x, ddy = q[1] - y;
  return v + 0.5 * (ddx * ddx + ddy * ddy);
}

void FittedPotential::gradient(const Vec& q, Vec& grad) const {
  if (basis == Basis::BSpline1D) {
    double x = q[0];
    BSplineBasis bs(a, b, m);
    int first;
    std::array<double, 4> vals, ders;
    if (x >= a && x <= b) {
      bs.eval(x, first, vals, &ders);
      double g = 0.0;
      for (int r = 0; r < 4; ++r) g += coeffs[first + r] * ders[static_cast<std::size_t>(r)];
      grad[0] = g;
      return;
    }
    double xb = x < a ? a : b;
    bs.eval(xb, first, vals, &ders);
    double gb = 0.0;
    for (int r = 0; r < 4; ++r) gb += coeffs[first + r] * ders[static_cast<std::size_t>(r)];
    grad[0] = gb + (x - xb);
    return;
  }

  const int nx = static_cast<int>(xs.size()), ny = static_cast<int>(ys.size());
  double x = std::clamp(q[0], xs[0], xs[nx - 1]);
  double y = std::clamp(q[1], ys[0], ys[ny - 1]);
  double hx = xs[1] - xs[0], hy = ys[1] - ys[0];
  int i = std::clamp(static_cast<int>((x - xs[0]) / hx), 0, nx - 2);
  int j = std::clamp(static_cast<int>((y - ys[0]) / hy), 0, ny - 2);
  double tx = (x - xs[i]) / hx;
  double ty = (y - ys[j]) / hy;
  double v00 = values(i, j), v10 = values(i + 1, j), v01 = values(i, j + 1),
         v11 = values(i + 1, j + 1);
  grad[0] = ((v10 - v00) * (1 - ty) + (v11 - v01) * ty) / hx + (q[0] - x);
  grad[1] = ((v01 - v00) * (1 - tx) + (v11 - v10) * tx) / hy + (q[1] - y);
}

namespace {

class FittedOracle final : public PotentialOracle {
 public:
  explicit FittedOracle(FittedPotential fit) : fit_(std::move(fit)) {}
  int dim() const override { return fit_.dim(); }
  double value(const Vec& q) const override { return fit_.value(q); }
  void gradient(const Vec& q, Vec& grad) const override { fit_.gradient(q, grad); }
  std::string name() const override { return "fitted_potential"; }

 private:
  FittedPotential fit_;
};

}  // namespace

OraclePtr FittedPotential::oracle() const { return std::make_shared<FittedOracle>(*this); }

nlohmann::json FittedPotential::to_json() const {
  nlohmann::json j;
  j["beta_hat"] = beta_hat;
  j["gauge"] = gauge;
  j["residual_rms"] = residual_rms;
  if (basis == Basis::BSpline1D) {
    j["basis"] = "bspline1d";
    j["domain"] = {a, b};
    j["basis_size"] = m;
    j["coeffs"] = std::vector<double>(coeffs.data(), coeffs.data() + coeffs.size());
    std::vector<double> knots;
    BSplineBasis bs(a, b, m);
    for (int i = 0; i <= m + 3; ++i) knots.push_back(bs.knot(i));
    j["knots"] = knots;
  } else {
    j["basis"] = "bilinear2d";
    j["x_nodes"] = std::vector<double>(xs.data(), xs.data() + xs.size());
    j["y_nodes"] = std::vector<double>(ys.data(), ys.data() + ys.size());
    std::vector<double> vals;
    std::vector<int> obs;
    for (int i = 0; i < values.rows(); ++i) {
      for (int jj = 0; jj < values.cols(); ++jj) {
        vals.push_back(values(i, jj));
        obs.push_back(observed(i, jj));
      }
    }
    j["values"] = vals;
    j["observed"] = obs;
    j["cap"] = cap;
  }
  return j;
}

FittedPotential FittedPotential::from_json(const nlohmann::json& j) {
  FittedPotential fit;
  fit.beta_hat = j.at("beta_hat").get<double>();
  fit.gauge = j.at("gauge").get<double>();
  fit.residual_rms = j.value("residual_rms", 0.0);
  std::string basis = j.at("basis").get<std::string>();
  if (basis == "bspline1d") {
    fit.basis = Basis::BSpline1D;
    fit.a = j.at("domain")[0].get<double>();
    fit.b = j.at("domain")[1].get<double>();
    fit.m = j.at("basis_size").get<int>();
    auto c = j.at("coeffs").get<std::vector<double>>();
    if (static_cast<int>(c.size()) != fit.m) throw ConfigError("fitted potential: coeff count mismatch");
    fit.coeffs = Eigen::Map<const Vec>(c.data(), static_cast<Eigen::Index>(c.size()));
  } else if (basis == "bilinear2d") {
    fit.basis = Basis::Bilinear2D;
    auto x = j.at("x_nodes").get<std::vector<double>>();
    auto y = j.at("y_nodes").get<std::vector<double>>();
    fit.xs = Eigen::Map<const Vec>(x.data(), static_cast<Eigen::Index>(x.size()));
    fit.ys = Eigen::Map<const Vec>(y.data(), static_cast<Eigen::Index>(y.size()));
    auto vals = j.at("values").get<std::vector<double>>();
    auto obs = j.at("observed").get<std::vector<int>>();
    int nx = static_cast<int>(x.size()), ny = static_cast<int>(y.size());
    if (static_cast<int>(vals.size()) != nx * ny) throw ConfigError("fitted potential: grid size mismatch");
    fit.values.resize(nx, ny);
    fit.observed.resize(nx, ny);
    for (int i = 0; i < nx; ++i) {
      for (int jj = 0; jj < ny; ++jj) {
        fit.values(i, jj) = vals[static_cast<std::size_t>(i) * ny + jj];
        fit.observed(i, jj) = static_cast<std::uint8_t>(obs[static_cast<std::size_t>(i) * ny + jj]);
      }
    }
    fit.cap = j.at("cap").get<double>();
  } else {
    throw ConfigError("fitted potential: unknown basis " + basis);
  }
  return fit;
}

std::vector<ScanEntry> scale_scan(const PotentialOracle& oracle, const std::vector<double>& deltas,
                                  const ScanParams& params, int jobs) {
  if (deltas.empty()) throw ConfigError("scale_scan: empty delta list");
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (!(deltas[i] > 0.0)) throw ConfigError("scale_scan: deltas must be > 0");
    if (i > 0 && !(deltas[i] < deltas[i - 1])) {
      throw ConfigError("scale_scan: deltas must be strictly decreasing");
    }
  }
  const int d = oracle.dim();
  std::vector<ScanEntry> entries(deltas.size());
  parallel_jobs(static_cast<int>(deltas.size()), jobs, [&](int k) {
    ScanEntry& e = entries[static_cast<std::size_t>(k)];
    e.delta = deltas[static_cast<std::size_t>(k)];
    try {
      SimConfig cfg = SimConfig::isotropic(
          d, e.delta, params.gamma, params.n_steps,
          params.burn_in >= 0 ? params.burn_in : params.n_steps / 10, params.subsample,
          splitmix64(params.seed + static_cast<std::uint64_t>(k)));
      State init;
      init.q = params.init_q.size() == d ? params.init_q : Vec::Zero(d);
      init.p = params.init_p.size() == d ? params.init_p : Vec::Zero(d);
      SampleSet samples = simulate_damped(oracle, cfg, init);
      e.normality = normality_test(samples, params.normality_threshold);
      if (d == 1) {
        BetaEstimate beta = estimate_beta(samples);
        e.beta_hat = beta.value;
        e.beta_warning = beta.out_of_range;
      } else {
        e.beta_hat = 1.0;
      }
      e.completed = true;
      if (e.normality.verdict) {
        Histogram hist = histogram_density(samples.qs, std::vector<int>(d, params.bins));
        e.fit = fit_potential(hist, e.beta_hat, params.fit);
        e.fitted = true;
      }
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
  });
  return entries;
}

void write_histogram_csv(const std::string& path, const Histogram& hist) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  const int d = hist.dims();
  for (int k = 0; k < d; ++k) out << "center_" << (k + 1) << ",";
  out << "count,density\n";
  for (std::size_t i = 0; i < hist.counts.size(); ++i) {
    Vec c = hist.center(static_cast<long long>(i));
    for (int k = 0; k < d; ++k) out << csv::fmt(c[k]) << ",";
    out << hist.counts[i] << "," << csv::fmt(hist.density[i]) << "\n";
  }
}

}  // namespace effpot
