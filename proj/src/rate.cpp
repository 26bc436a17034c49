#include "urllc/rate.hpp"

#include <cmath>
#include <numbers>

namespace urllc {

namespace {

// Acklam's rational approximation to the inverse normal CDF, then two Newton
// corrections against the erfc-based exact CDF. Accurate to ~1e-15 over the
// full open interval.
double inverse_normal_cdf(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
          c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  for (int it = 0; it < 2; ++it) {
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    x -= u / (1.0 + x * u / 2.0);
  }
  return x;
}

}  // namespace

double inverse_q(double eps) {
  if (eps <= 0.0 || eps >= 1.0)
    throw std::invalid_argument("inverse_q argument must be in (0,1)");
  return -inverse_normal_cdf(eps);
}

double rate_of(double p_w, double h, double bandwidth_hz, double sigma2_w,
               const RateModel& model) {
  if (p_w <= 0.0 || h <= 0.0) return 0.0;
  const double s = p_w * h / sigma2_w;
  const double shannon = bandwidth_hz * std::log2(1.0 + s);
  if (model.kind == RateModel::Kind::shannon) return shannon;
  const double one_plus = 1.0 + s;
  const double dispersion = 1.0 - 1.0 / (one_plus * one_plus);
  const double penalty =
      bandwidth_hz *
      std::sqrt(dispersion / static_cast<double>(model.blocklength_n)) *
      inverse_q(model.decode_error) / std::numbers::ln2;
  const double r = shannon - penalty;
  return r > 0.0 ? r : 0.0;
}

}  // namespace urllc
