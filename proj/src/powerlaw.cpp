#include "qdiff/powerlaw.hpp"

#include "qdiff/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace qdiff {

PowerLawFit fit_power_law(std::span<const double> t, std::span<const double> y,
                          double t_min, double t_max) {
    if (t.size() != y.size()) throw ValidationError("fit_power_law: size mismatch");
    std::vector<double> lx;
    std::vector<double> ly;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] < t_min || t[i] > t_max) continue;
        if (!(t[i] > 0.0) || !(y[i] > 0.0)) {
            throw ValidationError("fit_power_law: nonpositive value at t = " + std::to_string(t[i]));
        }
        lx.push_back(std::log(t[i]));
        ly.push_back(std::log(y[i]));
    }
    const std::size_t n = lx.size();
    if (n < 3) {
        throw ValidationError("fit_power_law: need at least 3 points in range, got " + std::to_string(n));
    }
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (!(sxx > 0.0)) throw ValidationError("fit_power_law: all abscissae coincide");

    PowerLawFit fit;
    fit.exponent = sxy / sxx;
    const double intercept = my - fit.exponent * mx;
    fit.prefactor = std::exp(intercept);
    double ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ly[i] - (intercept + fit.exponent * lx[i]);
        ssr += r * r;
    }
    fit.residual = std::sqrt(ssr / static_cast<double>(n));
    const double sigma2 = ssr / static_cast<double>(n - 2);
    fit.exponent_err = std::sqrt(sigma2 / sxx);
    fit.log_prefactor_err = std::sqrt(sigma2 * (1.0 / static_cast<double>(n) + mx * mx / sxx));
    double lo = lx.front();
    double hi = lx.front();
    for (double v : lx) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    fit.fit_range = {std::exp(lo), std::exp(hi)};
    fit.n_points = n;
    return fit;
}

PowerLawFit fit_power_law(std::span<const double> t, std::span<const double> y) {
    return fit_power_law(t, y, 0.0, std::numeric_limits<double>::infinity());
}

}  // namespace qdiff
