#include "qdiff/density.hpp"

#include "qdiff/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace qdiff {

namespace {

// 0.6-quantile of the standard normal.
constexpr double kNormalQ60 = 0.2533471031357997;
// Kernel support in bandwidths; exp(-32) is below double resolution of the peak.
constexpr double kKernelReach = 8.0;

double quantile_in_place(std::vector<double>& v, double prob) {
    const double pos = prob * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    const double a = v[lo];
    if (lo + 1 >= v.size()) return a;
    const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return a + (pos - static_cast<double>(lo)) * (b - a);
}

}  // namespace

double trapezoid(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return s;
}

std::vector<double> symmetric_grid(double half_width, std::size_t points) {
    if (points < 3 || !(half_width > 0.0)) throw ValidationError("degenerate grid");
    std::vector<double> g(points);
    const double denom = static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i) {
        const double k = 2.0 * static_cast<double>(i) - denom;
        g[i] = half_width * (k / denom);
    }
    return g;
}

EmpiricalPdf EmpiricalPdf::from_values(double lag, std::vector<double> grid,
                                       std::vector<double> values, std::size_t n_samples,
                                       double bandwidth) {
    if (grid.size() < 3 || grid.size() != values.size()) {
        throw ValidationError("EmpiricalPdf: need matching grid and values with >= 3 points");
    }
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (!(grid[i] > grid[i - 1])) throw ValidationError("EmpiricalPdf: grid not increasing");
    }
    for (double v : values) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("EmpiricalPdf: invalid density value");
    }
    const double mass = trapezoid(grid, values);
    if (!(mass > 0.0)) throw ComputationError("EmpiricalPdf: zero mass on grid");
    EmpiricalPdf p;
    p.lag = lag;
    p.grid = std::move(grid);
    p.density = std::move(values);
    for (auto& v : p.density) v /= mass;
    p.coverage = mass;
    p.n_samples = n_samples;
    p.bandwidth = bandwidth;
    return p;
}

double EmpiricalPdf::half_extent() const { return std::min(-grid.front(), grid.back()); }

double EmpiricalPdf::peak() const { return *std::max_element(density.begin(), density.end()); }

double noise_floor(const EmpiricalPdf& p, double max_noise) {
    if (p.n_samples == 0 || !(p.bandwidth > 0.0) || !(max_noise > 0.0)) return 0.0;
    // Relative standard error of a Gaussian KDE is sqrt(R(K) / (n h P)), R(K) = 1/(2 sqrt(pi)).
    const double roughness = 0.5 / std::sqrt(std::numbers::pi);
    return roughness / (static_cast<double>(p.n_samples) * p.bandwidth * max_noise * max_noise);
}

double core_scale(std::span<const double> samples) {
    if (samples.size() < 2) return 0.0;
    std::vector<double> v(samples.begin(), samples.end());
    const double hi = quantile_in_place(v, 0.6);
    const double lo = quantile_in_place(v, 0.4);
    return (hi - lo) / (2.0 * kNormalQ60);
}

EmpiricalPdf kde(const ReturnEnsemble& ensemble, double bandwidth, const GridSpec& spec) {
    const auto& xs = ensemble.returns;
    if (xs.empty()) throw ValidationError("kde: empty ensemble");
    if (!(bandwidth > 0.0)) throw ValidationError("kde: bandwidth must be positive");
    if (spec.points < 3) throw ValidationError("kde: grid needs at least 3 points");

    double half = 0.0;
    if (spec.half_width) {
        half = *spec.half_width;
    } else {
        double max_abs = 0.0;
        for (double x : xs) max_abs = std::max(max_abs, std::abs(x));
        std::vector<double> tmp(xs);
        const double median = quantile_in_place(tmp, 0.5);
        const double tail = spec.tail_multiple * core_scale(xs) + std::abs(median);
        half = std::max(std::min(max_abs + 4.0 * bandwidth, tail), kKernelReach * bandwidth);
    }
    if (!(half > 0.0) || !std::isfinite(half)) throw ValidationError("kde: degenerate grid extent");

    auto grid = symmetric_grid(half, spec.points);
    const std::size_t m = grid.size();
    const double x0 = grid.front();
    const double dx = grid[1] - grid[0];
    const double n = static_cast<double>(xs.size());
    const double norm = 1.0 / (n * bandwidth * std::sqrt(2.0 * std::numbers::pi));
    std::vector<double> raw(m, 0.0);

    const bool binned = xs.size() > 20000 && dx <= bandwidth / 3.0;
    if (binned) {
        // Linear binning onto a padded grid, then discrete convolution.
        const auto pad = static_cast<std::ptrdiff_t>(std::ceil(kKernelReach * bandwidth / dx));
        const auto total = static_cast<std::ptrdiff_t>(m) + 2 * pad;
        std::vector<double> bins(static_cast<std::size_t>(total), 0.0);
        for (double x : xs) {
            const double u = (x - x0) / dx + static_cast<double>(pad);
            if (!(u >= 0.0) || u > static_cast<double>(total - 1)) continue;
            const auto j = static_cast<std::ptrdiff_t>(std::floor(u));
            const double frac = u - static_cast<double>(j);
            bins[static_cast<std::size_t>(j)] += 1.0 - frac;
            if (j + 1 < total) bins[static_cast<std::size_t>(j + 1)] += frac;
        }
        std::vector<double> kernel(static_cast<std::size_t>(2 * pad + 1));
        for (std::ptrdiff_t k = -pad; k <= pad; ++k) {
            const double z = static_cast<double>(k) * dx / bandwidth;
            kernel[static_cast<std::size_t>(k + pad)] = std::exp(-0.5 * z * z);
        }
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            const auto c = static_cast<std::ptrdiff_t>(i) + pad;
            for (std::ptrdiff_t k = -pad; k <= pad; ++k) {
                s += bins[static_cast<std::size_t>(c + k)] * kernel[static_cast<std::size_t>(k + pad)];
            }
            raw[i] = s * norm;
        }
    } else {
        const double reach = kKernelReach * bandwidth;
        for (double x : xs) {
            const double lo_u = std::ceil((x - reach - x0) / dx);
            const double hi_u = std::floor((x + reach - x0) / dx);
            if (hi_u < 0.0 || lo_u > static_cast<double>(m - 1)) continue;
            const auto lo = static_cast<std::size_t>(std::max(lo_u, 0.0));
            const auto hi = static_cast<std::size_t>(std::min(hi_u, static_cast<double>(m - 1)));
            for (std::size_t i = lo; i <= hi; ++i) {
                const double z = (grid[i] - x) / bandwidth;
                raw[i] += std::exp(-0.5 * z * z);
            }
        }
        for (auto& v : raw) v *= norm;
    }
    return EmpiricalPdf::from_values(ensemble.lag, std::move(grid), std::move(raw), xs.size(),
                                     bandwidth);
}

EmpiricalPdf kde(const ReturnEnsemble& ensemble, Bandwidth bandwidth, const GridSpec& grid) {
    if (ensemble.returns.empty()) throw ValidationError("kde: empty ensemble");
    const double core =
        bandwidth.kind == Bandwidth::Kind::Relative ? core_scale(ensemble.returns) : 0.0;
    if (bandwidth.kind == Bandwidth::Kind::Relative && !(core > 0.0)) {
        throw ValidationError("kde: relative bandwidth on an ensemble with zero core scale");
    }
    return kde(ensemble, bandwidth.resolve(core), grid);
}

PeakHeight pdf_height(const EmpiricalPdf& p) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
        const double a = p.density[i];
        const double b = p.density[best];
        if (a > b) {
            best = i;
        } else if (a == b) {
            const double ai = std::abs(p.grid[i]);
            const double bi = std::abs(p.grid[best]);
            if (ai < bi || (ai == bi && p.grid[i] < p.grid[best])) best = i;
        }
    }
    return {p.grid[best], p.density[best]};
}

double second_moment(const EmpiricalPdf& p, double window) {
    if (!(window > 0.0)) throw ValidationError("second_moment: window must be positive");
    if (window > p.half_extent() * (1.0 + 1e-12)) {
        throw ValidationError("second_moment: window " + std::to_string(window) +
                              " exceeds the grid extent " + std::to_string(p.half_extent()));
    }
    double s = 0.0;
    for (std::size_t i = 1; i < p.size(); ++i) {
        double xa = p.grid[i - 1];
        double xb = p.grid[i];
        if (xb <= -window || xa >= window) continue;
        const double pa = p.density[i - 1];
        const double pb = p.density[i];
        auto interp = [&](double x) { return pa + (pb - pa) * (x - p.grid[i - 1]) / (p.grid[i] - p.grid[i - 1]); };
        double fa = xa * xa * pa;
        double fb = xb * xb * pb;
        if (xa < -window) {
            xa = -window;
            fa = xa * xa * interp(xa);
        }
        if (xb > window) {
            xb = window;
            fb = xb * xb * interp(xb);
        }
        s += 0.5 * (xb - xa) * (fa + fb);
    }
    return s;
}

MomentSeries moment_series(std::span<const EmpiricalPdf> pdfs, std::span<const double> windows) {
    if (!windows.empty() && windows.size() != pdfs.size()) {
        throw ValidationError("moment_series: one window per pdf required");
    }
    MomentSeries m;
    for (std::size_t i = 0; i < pdfs.size(); ++i) {
        const double w = windows.empty() ? pdfs[i].half_extent() : windows[i];
        m.lags.push_back(pdfs[i].lag);
        m.window.push_back(w);
        m.second_moment.push_back(second_moment(pdfs[i], w));
    }
    return m;
}

MomentLaw fit_moment_law(const MomentSeries& m) {
    MomentLaw law;
    law.fit = fit_power_law(m.lags, m.second_moment);
    if (!(law.fit.exponent > 0.0)) {
        throw ComputationError("second moment does not grow with the lag");
    }
    law.alpha = 2.0 / law.fit.exponent;
    return law;
}

}  // namespace qdiff
