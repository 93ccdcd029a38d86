#include "towerlab/linear_models.hpp"

#include <cmath>
#include <stdexcept>

#include "towerlab/rng.hpp"

namespace towerlab {

namespace {

std::vector<double> column_means(const DataMatrix& x) {
  std::vector<double> mu(static_cast<std::size_t>(x.cols), 0.0);
  for (int r = 0; r < x.rows; ++r) {
    const double* row = x.row(r);
    for (int c = 0; c < x.cols; ++c) mu[static_cast<std::size_t>(c)] += row[c];
  }
  for (double& m : mu) m /= x.rows;
  return mu;
}

double sigmoid(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, int n) {
  // Cholesky A = L L^T with a small diagonal jitter fallback.
  for (int attempt = 0; attempt < 4; ++attempt) {
    std::vector<double> l = a;
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      for (int j = 0; j <= i; ++j) {
        double sum = l[static_cast<std::size_t>(i) * n + j];
        for (int k = 0; k < j; ++k) {
          sum -= l[static_cast<std::size_t>(i) * n + k] * l[static_cast<std::size_t>(j) * n + k];
        }
        if (i == j) {
          if (sum <= 0.0) {
            ok = false;
            break;
          }
          l[static_cast<std::size_t>(i) * n + j] = std::sqrt(sum);
        } else {
          l[static_cast<std::size_t>(i) * n + j] = sum / l[static_cast<std::size_t>(j) * n + j];
        }
      }
    }
    if (!ok) {
      const double jitter = std::pow(10.0, attempt - 8);
      for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i) * n + i] += jitter;
      continue;
    }
    // forward then backward substitution
    std::vector<double> y(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      double sum = b[static_cast<std::size_t>(i)];
      for (int k = 0; k < i; ++k) sum -= l[static_cast<std::size_t>(i) * n + k] * y[static_cast<std::size_t>(k)];
      y[static_cast<std::size_t>(i)] = sum / l[static_cast<std::size_t>(i) * n + i];
    }
    std::vector<double> out(static_cast<std::size_t>(n), 0.0);
    for (int i = n; i-- > 0;) {
      double sum = y[static_cast<std::size_t>(i)];
      for (int k = i + 1; k < n; ++k) sum -= l[static_cast<std::size_t>(k) * n + i] * out[static_cast<std::size_t>(k)];
      out[static_cast<std::size_t>(i)] = sum / l[static_cast<std::size_t>(i) * n + i];
    }
    return out;
  }
  throw std::runtime_error("solve_spd: matrix not positive definite");
}

RidgeModel ridge_fit(const DataMatrix& x, std::span<const double> y, double lambda) {
  const int n = x.rows;
  const int p = x.cols;
  RidgeModel m;
  m.x_mean = column_means(x);
  m.y_mean = 0.0;
  for (double v : y) m.y_mean += v;
  m.y_mean /= n;

  if (p <= n) {
    // primal: (Xc'Xc + lambda I) beta = Xc' yc
    std::vector<double> a(static_cast<std::size_t>(p) * static_cast<std::size_t>(p), 0.0);
    std::vector<double> b(static_cast<std::size_t>(p), 0.0);
    std::vector<double> xc(static_cast<std::size_t>(p), 0.0);
    for (int r = 0; r < n; ++r) {
      const double* row = x.row(r);
      for (int c = 0; c < p; ++c) xc[static_cast<std::size_t>(c)] = row[c] - m.x_mean[static_cast<std::size_t>(c)];
      const double yc = y[static_cast<std::size_t>(r)] - m.y_mean;
      for (int i = 0; i < p; ++i) {
        const double xi = xc[static_cast<std::size_t>(i)];
        if (xi == 0.0) continue;
        double* arow = a.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(p);
        for (int j = 0; j < p; ++j) arow[j] += xi * xc[static_cast<std::size_t>(j)];
        b[static_cast<std::size_t>(i)] += xi * yc;
      }
    }
    for (int i = 0; i < p; ++i) a[static_cast<std::size_t>(i) * p + i] += lambda;
    m.beta = solve_spd(std::move(a), std::move(b), p);
  } else {
    // dual: beta = Xc' (Xc Xc' + lambda I)^{-1} yc
    DataMatrix xc;
    xc.resize(n, p);
    for (int r = 0; r < n; ++r) {
      const double* src = x.row(r);
      double* dst = xc.row(r);
      for (int c = 0; c < p; ++c) dst[c] = src[c] - m.x_mean[static_cast<std::size_t>(c)];
    }
    std::vector<double> k(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j <= i; ++j) {
        double acc = 0.0;
        const double* ri = xc.row(i);
        const double* rj = xc.row(j);
        for (int c = 0; c < p; ++c) acc += ri[c] * rj[c];
        k[static_cast<std::size_t>(i) * n + j] = acc;
        k[static_cast<std::size_t>(j) * n + i] = acc;
      }
      k[static_cast<std::size_t>(i) * n + i] += lambda;
    }
    std::vector<double> yc(static_cast<std::size_t>(n), 0.0);
    for (int r = 0; r < n; ++r) yc[static_cast<std::size_t>(r)] = y[static_cast<std::size_t>(r)] - m.y_mean;
    const std::vector<double> alpha = solve_spd(std::move(k), std::move(yc), n);
    m.beta.assign(static_cast<std::size_t>(p), 0.0);
    for (int r = 0; r < n; ++r) {
      const double a = alpha[static_cast<std::size_t>(r)];
      if (a == 0.0) continue;
      const double* row = xc.row(r);
      for (int c = 0; c < p; ++c) m.beta[static_cast<std::size_t>(c)] += a * row[c];
    }
  }
  return m;
}

double ridge_predict(const RidgeModel& m, const double* x) {
  double acc = m.y_mean;
  for (std::size_t c = 0; c < m.beta.size(); ++c) acc += m.beta[c] * (x[c] - m.x_mean[c]);
  return acc;
}

LogisticModel logistic_fit(const DataMatrix& x, std::span<const double> y01,
                           double lambda, double tol, int max_iter) {
  const int n = x.rows;
  const int p = x.cols;
  LogisticModel m;
  m.x_mean = column_means(x);
  m.beta.assign(static_cast<std::size_t>(p), 0.0);
  m.bias = 0.0;

  // Centered design with appended bias column; the bias shares the L2 penalty,
  // which is inert here because classes are balanced and features centered.
  const int pa = p + 1;
  DataMatrix xa;
  xa.resize(n, pa);
  for (int r = 0; r < n; ++r) {
    const double* src = x.row(r);
    double* dst = xa.row(r);
    for (int c = 0; c < p; ++c) dst[c] = src[c] - m.x_mean[static_cast<std::size_t>(c)];
    dst[p] = 1.0;
  }

  std::vector<double> w(static_cast<std::size_t>(pa), 0.0);
  std::vector<double> prob(static_cast<std::size_t>(n), 0.0);
  std::vector<double> grad_vec(static_cast<std::size_t>(pa), 0.0);

  auto objective = [&](const std::vector<double>& wt) {
    double obj = 0.0;
    for (int r = 0; r < n; ++r) {
      const double* row = xa.row(r);
      double z = 0.0;
      for (int c = 0; c < pa; ++c) z += row[c] * wt[static_cast<std::size_t>(c)];
      // -log likelihood, numerically stable
      const double yz = (y01[static_cast<std::size_t>(r)] > 0.5 ? 1.0 : -1.0) * z;
      obj += yz > -30 ? std::log1p(std::exp(-yz)) : -yz;
    }
    double pen = 0.0;
    for (double v : wt) pen += v * v;
    return obj + 0.5 * lambda * pen;
  };

  double cur_obj = objective(w);
  const bool use_dual = pa > n;

  for (int iter = 0; iter < max_iter; ++iter) {
    // gradient = Xa'(prob - y) + lambda w ; S = diag(prob (1-prob))
    std::vector<double> s(static_cast<std::size_t>(n), 0.0);
    for (int r = 0; r < n; ++r) {
      const double* row = xa.row(r);
      double z = 0.0;
      for (int c = 0; c < pa; ++c) z += row[c] * w[static_cast<std::size_t>(c)];
      prob[static_cast<std::size_t>(r)] = sigmoid(z);
      s[static_cast<std::size_t>(r)] =
          std::max(prob[static_cast<std::size_t>(r)] * (1.0 - prob[static_cast<std::size_t>(r)]), 1e-10);
    }
    for (int c = 0; c < pa; ++c) grad_vec[static_cast<std::size_t>(c)] = lambda * w[static_cast<std::size_t>(c)];
    for (int r = 0; r < n; ++r) {
      const double d = prob[static_cast<std::size_t>(r)] - y01[static_cast<std::size_t>(r)];
      if (d == 0.0) continue;
      const double* row = xa.row(r);
      for (int c = 0; c < pa; ++c) grad_vec[static_cast<std::size_t>(c)] += d * row[c];
    }
    double gmax = 0.0;
    for (double g : grad_vec) gmax = std::max(gmax, std::abs(g));
    if (gmax <= tol) {
      m.converged = true;
      m.iterations = iter;
      break;
    }

    // Newton direction d solves (Xa' S Xa + lambda I) d = grad.
    std::vector<double> dir;
    if (!use_dual) {
      std::vector<double> h(static_cast<std::size_t>(pa) * static_cast<std::size_t>(pa), 0.0);
      for (int r = 0; r < n; ++r) {
        const double* row = xa.row(r);
        const double sr = s[static_cast<std::size_t>(r)];
        for (int i = 0; i < pa; ++i) {
          const double v = sr * row[i];
          if (v == 0.0) continue;
          double* hrow = h.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(pa);
          for (int j = 0; j < pa; ++j) hrow[j] += v * row[j];
        }
      }
      for (int i = 0; i < pa; ++i) h[static_cast<std::size_t>(i) * pa + i] += lambda;
      dir = solve_spd(std::move(h), grad_vec, pa);
    } else {
      // Woodbury: (lambda I + Xa' S Xa)^{-1} g
      //   = g/lambda - Xa' (lambda S^{-1} + Xa Xa')^{-1} Xa g / lambda.
      std::vector<double> b(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
          double acc = 0.0;
          const double* ri = xa.row(i);
          const double* rj = xa.row(j);
          for (int c = 0; c < pa; ++c) acc += ri[c] * rj[c];
          b[static_cast<std::size_t>(i) * n + j] = acc;
          b[static_cast<std::size_t>(j) * n + i] = acc;
        }
      }
      for (int i = 0; i < n; ++i) {
        b[static_cast<std::size_t>(i) * n + i] += lambda / s[static_cast<std::size_t>(i)];
      }
      std::vector<double> xg(static_cast<std::size_t>(n), 0.0);
      for (int r = 0; r < n; ++r) {
        const double* row = xa.row(r);
        double acc = 0.0;
        for (int c = 0; c < pa; ++c) acc += row[c] * grad_vec[static_cast<std::size_t>(c)];
        xg[static_cast<std::size_t>(r)] = acc;
      }
      const std::vector<double> t = solve_spd(std::move(b), std::move(xg), n);
      dir.assign(static_cast<std::size_t>(pa), 0.0);
      for (int c = 0; c < pa; ++c) dir[static_cast<std::size_t>(c)] = grad_vec[static_cast<std::size_t>(c)];
      for (int r = 0; r < n; ++r) {
        const double tr = t[static_cast<std::size_t>(r)];
        if (tr == 0.0) continue;
        const double* row = xa.row(r);
        for (int c = 0; c < pa; ++c) dir[static_cast<std::size_t>(c)] -= tr * row[c];
      }
      for (double& v : dir) v /= lambda;
    }

    // Damped update: halve the step until the objective improves.
    double step = 1.0;
    std::vector<double> trial(w);
    bool improved = false;
    for (int h = 0; h < 30; ++h) {
      for (int c = 0; c < pa; ++c) {
        trial[static_cast<std::size_t>(c)] = w[static_cast<std::size_t>(c)] - step * dir[static_cast<std::size_t>(c)];
      }
      const double obj = objective(trial);
      if (obj <= cur_obj + 1e-12) {
        w = trial;
        cur_obj = obj;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    m.iterations = iter + 1;
    if (!improved) break;
  }

  m.beta.assign(w.begin(), w.begin() + p);
  m.bias = w[static_cast<std::size_t>(p)];
  return m;
}

double logistic_prob(const LogisticModel& m, const double* x) {
  double z = m.bias;
  for (std::size_t c = 0; c < m.beta.size(); ++c) z += m.beta[c] * (x[c] - m.x_mean[c]);
  return sigmoid(z);
}

std::vector<int> stratified_folds(std::span<const double> labels, int k,
                                  std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  std::vector<int> fold(static_cast<std::size_t>(n), 0);
  std::vector<int> pos, neg;
  for (int i = 0; i < n; ++i) {
    (labels[static_cast<std::size_t>(i)] > 0.5 ? pos : neg).push_back(i);
  }
  Rng rng(derive_seed(seed, SeedDomain::Folds));
  rng.shuffle(pos);
  rng.shuffle(neg);
  int next = 0;
  for (int i : pos) fold[static_cast<std::size_t>(i)] = next++ % k;
  for (int i : neg) fold[static_cast<std::size_t>(i)] = next++ % k;
  return fold;
}

std::vector<int> plain_folds(int n, int k, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, SeedDomain::Folds));
  rng.shuffle(idx);
  std::vector<int> fold(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) fold[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = i % k;
  return fold;
}

}  // namespace towerlab
