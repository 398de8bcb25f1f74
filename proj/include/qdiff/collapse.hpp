#ifndef QDIFF_COLLAPSE_HPP
#define QDIFF_COLLAPSE_HPP

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "qdiff/density.hpp"
#include "qdiff/powerlaw.hpp"
#include "qdiff/qcore.hpp"
#include "qdiff/regimes.hpp"

namespace qdiff {

/// Part of a pdf a fit may use: everything, the core |x| <= w, or the
/// tails |x| > w.
struct FitWindow {
    enum class Kind { Full, Inside, Outside };
    Kind kind = Kind::Full;
    double half_width = std::numeric_limits<double>::infinity();

    static FitWindow full() { return {}; }
    static FitWindow inside(double w) { return {Kind::Inside, w}; }
    static FitWindow outside(double w) { return {Kind::Outside, w}; }
    bool contains(double x) const;
};

/// Per-lag restriction used when pooling several pdfs.
using WindowByLag = std::function<FitWindow(double lag)>;

struct FitOptions {
    /// Points with density at or below floor_ratio * peak are dropped.
    double floor_ratio = 1e-6;
    /// Points where the KDE's relative sampling error exceeds this are also
    /// dropped (see noise_floor; 0 disables).
    double max_noise = 0.2;
    int max_iterations = 500;
    std::vector<double> q_starts{1.2, 1.7, 2.2, 2.7};
    std::size_t min_points = 10;
};

/// Least-squares q-Gaussian fit in log-density space.
struct QFit {
    QParams params;
    double q_err = 0.0;
    double beta_err = 0.0;
    double residual = 0.0;  // rms of log-density misfit
    std::size_t n_points = 0;
    int iterations = 0;
    /// q ended within 1e-3 of the Gaussian edge of the domain.
    bool at_domain_boundary = false;
};

/// Fits log g_q(x; q, beta) to log y. With `fixed_beta` only q is free.
QFit fit_qgauss_points(std::span<const double> x, std::span<const double> y,
                       std::optional<double> fixed_beta = std::nullopt,
                       const FitOptions& opts = {});

struct LagFit {
    double lag = 0.0;
    QParams params;
    double q_err = 0.0;
    double beta_err = 0.0;
    double fit_residual = 0.0;
    std::size_t n_samples = 0;
    std::size_t n_points = 0;
    bool at_domain_boundary = false;
};

/// Fits one pdf with q and beta free, using its absolute (coverage-corrected)
/// density inside `window`.
LagFit fit_qgauss(const EmpiricalPdf& p, const FitWindow& window = FitWindow::full(),
                  const FitOptions& opts = {});

/// beta = (D t)^(-2/alpha) fitted in log-log space, lags weighted uniformly.
struct BetaLaw {
    ScalingLaw scaling;
    double alpha_err = 0.0;
    double d_err = 0.0;
    PowerLawFit fit;
};

BetaLaw fit_beta_law(std::span<const LagFit> fits);

struct CollapsedPoint {
    double x = 0.0;  // x / (D t)^(1/alpha)
    double p = 0.0;  // P (D t)^(1/alpha)
    double lag = 0.0;
};

struct CollapsedCloud {
    std::vector<CollapsedPoint> points;
    ScalingLaw scaling;
};

/// Maps every grid point inside the per-lag window to rescaled coordinates.
/// Densities are the absolute (coverage-corrected) values; points at or
/// below floor_ratio * peak or noise_floor(p, max_noise) are skipped.
CollapsedCloud collapse_pdfs(std::span<const EmpiricalPdf> pdfs, const ScalingLaw& scaling,
                             const WindowByLag& window = {}, double floor_ratio = 1e-6,
                             double max_noise = 0.2);

/// rms spread of log P between lags on the rescaled axis: every lag is
/// interpolated at the abscissae of the narrowest lag and compared with the
/// across-lag mean.
double collapse_spread(const CollapsedCloud& cloud);

struct CollapseResult {
    double q = 0.0;
    double q_err = 0.0;
    double beta = 1.0;
    bool beta_fixed = true;
    ScalingLaw scaling;
    double collapse_residual = 0.0;
    Zone zone = Zone::C;
    std::size_t n_points = 0;
};

/// Fits the q-Gauss g_q(x, beta = 1) (or a free-beta q-Gaussian) to the
/// pooled cloud. Needs at least 50 points.
CollapseResult fit_collapsed(const CollapsedCloud& cloud, bool fix_beta_one = true,
                             Zone zone = Zone::C, const FitOptions& opts = {});

/// Half width at half maximum of a pdf, interpolated on the grid.
double half_max_width(const EmpiricalPdf& p);

nlohmann::json to_json(const LagFit& f);
LagFit lag_fit_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BetaLaw& b);
nlohmann::json to_json(const CollapseResult& c);

}  // namespace qdiff

#endif
