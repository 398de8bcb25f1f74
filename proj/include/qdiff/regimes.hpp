#ifndef QDIFF_REGIMES_HPP
#define QDIFF_REGIMES_HPP

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qdiff/density.hpp"
#include "qdiff/powerlaw.hpp"

namespace qdiff {

/// Strong super-diffusion (A), crossover (B), weak super-diffusion (C).
enum class Zone { A, B, C };

std::string to_string(Zone z);

/// Bump edges detected on one pdf.
struct BoundaryPoint {
    double t = 0.0;
    double x_minus = 0.0;
    double x_plus = 0.0;
};

/// Tuning of the slope-break detector.
///
/// A bump edge is a convex kink of log P seen against log|x - x_peak|: the
/// steep flank of the bump meeting a flatter background. A plain q-Gaussian
/// is concave in these coordinates everywhere, so it never triggers.
struct BoundaryOptions {
    /// Minimum second derivative d^2 log P / d(log r)^2 accepted as an edge.
    double threshold = 0.1;
    /// Half-width of the local quadratic smoothing window, in units of log r.
    double smoothing = 0.25;
    std::size_t log_points = 400;
    /// Ignore grid points whose density is below this fraction of the peak.
    double floor_ratio = 1e-6;
    /// Also ignore points where the estimate's relative sampling error
    /// exceeds this (needs n_samples and bandwidth on the pdf; 0 disables).
    double max_noise = 0.1;
    /// For sampled pdfs the threshold is raised by this many standard
    /// deviations of the curvature's sampling noise.
    double significance = 5.0;
};

/// Innermost convex slope break on each side of the peak; nullopt when
/// either side shows none above the threshold.
std::optional<std::pair<double, double>> bump_boundary(const EmpiricalPdf& p,
                                                       const BoundaryOptions& opts = {});

/// |x| = a (t/t0)^nu
struct BoundaryCurve {
    double a = 0.0;
    double nu = 0.0;
    double t0 = 1.0;
    double a_err = 0.0;
    double nu_err = 0.0;
    PowerLawFit fit;

    double at(double t) const;
};

/// Log-log least squares over both branches pooled by absolute value.
/// Needs boundaries at three or more distinct lags.
BoundaryCurve fit_boundary_curve(std::span<const BoundaryPoint> boundaries, double t0 = 1.0);

/// P_max ~ t^(-1/alpha) over a lag range.
struct HeightLaw {
    PowerLawFit fit;
    double alpha = 0.0;
    double alpha_err = 0.0;
};

HeightLaw fit_height_law(std::span<const double> lags, std::span<const double> heights,
                         double t_min, double t_max);

/// First lag after the last detected bump; nullopt if the bump never dissolves
/// within the ladder or was never seen. `detected[i]` refers to `lags[i]`.
std::optional<double> detect_bump_end(std::span<const double> lags, const std::vector<bool>& detected);

/// Zone geometry in the (x, t) plane.
class RegimePartition {
public:
    RegimePartition(double a, double nu, double t0, double t_cross_start, double t_bump_end);

    double a() const { return a_; }
    double nu() const { return nu_; }
    double t0() const { return t0_; }
    double t_cross_start() const { return t_cross_start_; }
    double t_bump_end() const { return t_bump_end_; }

    double boundary(double t) const;
    bool inside_bump(double x, double t) const;
    Zone classify(double x, double t) const;

    nlohmann::json to_json() const;
    static RegimePartition from_json(const nlohmann::json& j);

private:
    double a_;
    double nu_;
    double t0_;
    double t_cross_start_;
    double t_bump_end_;
};

RegimePartition partition_zones(const BoundaryCurve& curve, double t_cross_start, double t_bump_end);

}  // namespace qdiff

#endif
