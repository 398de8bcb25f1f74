#ifndef QDIFF_DENSITY_HPP
#define QDIFF_DENSITY_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "qdiff/ingest.hpp"
#include "qdiff/powerlaw.hpp"

namespace qdiff {

/// Gridded density estimate at one lag.
///
/// `density` integrates to one over the grid (trapezoid rule). `coverage` is
/// the trapezoid mass the estimate had before that renormalization, so
/// density * coverage is the unbiased absolute density on the grid even when
/// heavy tails spill past its ends.
struct EmpiricalPdf {
    double lag = 1.0;
    std::vector<double> grid;
    std::vector<double> density;
    std::size_t n_samples = 0;
    double bandwidth = 0.0;
    double coverage = 1.0;

    /// Builds a pdf from absolute density values, renormalizing and recording
    /// the coverage. Throws on a degenerate grid or zero mass.
    static EmpiricalPdf from_values(double lag, std::vector<double> grid,
                                    std::vector<double> values, std::size_t n_samples = 0,
                                    double bandwidth = 0.0);

    double raw(std::size_t i) const { return density[i] * coverage; }
    double half_extent() const;
    double peak() const;
    std::size_t size() const { return grid.size(); }
};

/// Density (absolute units) below which a Gaussian KDE with this pdf's sample
/// size and bandwidth has relative standard error above `max_noise`. Zero for
/// pdfs without sampling metadata or when max_noise <= 0.
double noise_floor(const EmpiricalPdf& p, double max_noise);

/// Kernel bandwidth, either in data units or as a fraction of the ensemble's
/// core scale (see core_scale()).
struct Bandwidth {
    enum class Kind { Absolute, Relative };
    Kind kind = Kind::Absolute;
    double value = 0.005;

    static Bandwidth absolute(double h) { return {Kind::Absolute, h}; }
    static Bandwidth relative(double fraction) { return {Kind::Relative, fraction}; }
    double resolve(double core) const { return kind == Kind::Absolute ? value : value * core; }
};

/// Layout of the KDE grid: `points` uniform abscissae on [-W, W]. When
/// `half_width` is unset, W = min(max|x| + 4h, tail_multiple * core + |median|),
/// floored at 8h.
struct GridSpec {
    std::size_t points = 8193;
    std::optional<double> half_width;
    double tail_multiple = 20.0;
};

/// Robust width of the central part of a sample: the 40%-60% quantile
/// spacing rescaled so it equals sigma for a Gaussian. Finite for any
/// q-Gaussian, unlike the standard deviation.
double core_scale(std::span<const double> samples);

/// Uniform grid with exactly antisymmetric abscissae.
std::vector<double> symmetric_grid(double half_width, std::size_t points);

/// Trapezoid integral of y over x.
double trapezoid(std::span<const double> x, std::span<const double> y);

/// Gaussian-kernel density estimate.
EmpiricalPdf kde(const ReturnEnsemble& ensemble, double bandwidth, const GridSpec& grid = {});
EmpiricalPdf kde(const ReturnEnsemble& ensemble, Bandwidth bandwidth, const GridSpec& grid = {});

struct PeakHeight {
    double x_peak = 0.0;
    double height = 0.0;
};

/// Grid argmax of the density; ties go to the smallest |x|, then smallest x.
PeakHeight pdf_height(const EmpiricalPdf& p);

/// Trapezoid integral of x^2 P(x) over [-window, window].
double second_moment(const EmpiricalPdf& p, double window);

struct MomentSeries {
    std::vector<double> lags;
    std::vector<double> second_moment;
    std::vector<double> window;
};

/// Second moment of every pdf over its own grid extent (the "full" pdf) or
/// over the given per-lag windows.
MomentSeries moment_series(std::span<const EmpiricalPdf> pdfs,
                           std::span<const double> windows = {});

/// Power law <x^2> ~ t^(2/alpha) fitted to a moment series; alpha = 2/exponent.
struct MomentLaw {
    PowerLawFit fit;
    double alpha = 0.0;
};
MomentLaw fit_moment_law(const MomentSeries& m);

}  // namespace qdiff

#endif
