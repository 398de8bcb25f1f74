#ifndef QDIFF_POWERLAW_HPP
#define QDIFF_POWERLAW_HPP

#include <cstddef>
#include <span>
#include <utility>

namespace qdiff {

/// y = prefactor * t^exponent fitted by least squares in log-log space.
struct PowerLawFit {
    double exponent = 0.0;
    double prefactor = 0.0;
    double exponent_err = 0.0;
    double log_prefactor_err = 0.0;
    std::pair<double, double> fit_range{0.0, 0.0};
    double residual = 0.0;  // rms of log-space residuals
    std::size_t n_points = 0;
};

/// Ordinary least squares of log y on log t over the points whose t lies in
/// [t_min, t_max]. Requires at least three such points, all positive.
PowerLawFit fit_power_law(std::span<const double> t, std::span<const double> y,
                          double t_min, double t_max);

/// Same, over every point.
PowerLawFit fit_power_law(std::span<const double> t, std::span<const double> y);

}  // namespace qdiff

#endif
