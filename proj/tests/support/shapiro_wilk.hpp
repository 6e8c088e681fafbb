#pragma once

// Shapiro–Wilk W and its p-value for 12 <= n <= 5000, using Royston's
// polynomial approximations for the coefficients and the normalizing
// transform of log(1 - W).

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace testdata {

struct ShapiroWilk {
  double w = 0.0;
  double p_value = 0.0;
};

inline ShapiroWilk shapiro_wilk(std::vector<double> x) {
  const std::size_t n = x.size();
  if (n < 12 || n > 5000) throw std::invalid_argument("shapiro_wilk: need 12 <= n <= 5000");
  std::sort(x.begin(), x.end());
  const boost::math::normal_distribution<double> norm;
  const double dn = static_cast<double>(n);

  std::vector<double> m(n);
  double mm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = boost::math::quantile(norm, (static_cast<double>(i + 1) - 0.375) / (dn + 0.25));
    mm += m[i] * m[i];
  }
  const double u = 1.0 / std::sqrt(dn);
  const double an = -2.706056 * std::pow(u, 5) + 4.434685 * std::pow(u, 4) - 2.071190 * std::pow(u, 3) -
                    0.147981 * u * u + 0.221157 * u + m[n - 1] / std::sqrt(mm);
  const double an1 = -3.582633 * std::pow(u, 5) + 5.682633 * std::pow(u, 4) - 1.752461 * std::pow(u, 3) -
                     0.293762 * u * u + 0.042981 * u + m[n - 2] / std::sqrt(mm);
  const double phi = (mm - 2 * m[n - 1] * m[n - 1] - 2 * m[n - 2] * m[n - 2]) / (1 - 2 * an * an - 2 * an1 * an1);

  std::vector<double> a(n);
  for (std::size_t i = 2; i + 2 < n; ++i) a[i] = m[i] / std::sqrt(phi);
  a[n - 1] = an;
  a[n - 2] = an1;
  a[0] = -an;
  a[1] = -an1;

  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= dn;
  double num = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += a[i] * x[i];
    ss += (x[i] - mean) * (x[i] - mean);
  }
  ShapiroWilk out;
  out.w = std::min(1.0, num * num / ss);

  const double ln = std::log(dn);
  const double mu = 0.0038915 * ln * ln * ln - 0.083751 * ln * ln - 0.31082 * ln - 1.5861;
  const double sigma = std::exp(0.0030302 * ln * ln - 0.082676 * ln - 0.4803);
  out.p_value = boost::math::cdf(boost::math::complement(norm, (std::log1p(-out.w) - mu) / sigma));
  return out;
}

}  // namespace testdata
