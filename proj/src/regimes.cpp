#include "qdiff/regimes.hpp"

#include "qdiff/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace qdiff {

namespace {

// Distance from the peak to the innermost convex slope break on one side.
std::optional<double> side_break(const EmpiricalPdf& p, std::size_t ipeak, int dir,
                                 const BoundaryOptions& opts) {
    const double dx = p.grid[1] - p.grid[0];
    double floor = opts.floor_ratio * p.density[ipeak];
    // Squared relative KDE error at density P (normalized units) is noise_scale / P.
    const bool noisy = p.n_samples > 0 && p.bandwidth > 0.0;
    const double noise_scale = noise_floor(p, 1.0) / p.coverage;
    if (noisy && opts.max_noise > 0.0) {
        floor = std::max(floor, noise_floor(p, opts.max_noise) / p.coverage);
    }
    const double r_min = std::max(20.0 * dx, 2.0 * p.bandwidth);

    std::vector<double> r;
    std::vector<double> logp;
    const auto n = static_cast<std::ptrdiff_t>(p.size());
    for (auto i = static_cast<std::ptrdiff_t>(ipeak) + dir; i >= 0 && i < n; i += dir) {
        const auto k = static_cast<std::size_t>(i);
        if (!(p.density[k] > floor)) break;
        const double dist = std::abs(p.grid[k] - p.grid[ipeak]);
        if (dist < r_min) continue;
        r.push_back(std::log(dist));
        logp.push_back(std::log(p.density[k]));
    }
    const std::size_t m = opts.log_points;
    if (r.size() < 8 || m < 16) return std::nullopt;
    const double s_lo = r.front();
    const double s_hi = r.back();
    const double ds = (s_hi - s_lo) / static_cast<double>(m - 1);
    const auto half = static_cast<std::ptrdiff_t>(std::llround(opts.smoothing / ds));
    if (half < 2 || 2 * half + 1 >= static_cast<std::ptrdiff_t>(m)) return std::nullopt;

    // Resample log P onto a uniform log-distance grid.
    std::vector<double> ell(m);
    std::size_t cursor = 0;
    for (std::size_t j = 0; j < m; ++j) {
        const double s = std::min(s_lo + ds * static_cast<double>(j), s_hi);
        while (cursor + 2 < r.size() && r[cursor + 1] < s) ++cursor;
        const double w = (s - r[cursor]) / (r[cursor + 1] - r[cursor]);
        ell[j] = logp[cursor] + std::clamp(w, 0.0, 1.0) * (logp[cursor + 1] - logp[cursor]);
    }

    // Local quadratic (Savitzky-Golay) second derivative. With a symmetric
    // window the i^2 basis orthogonalised against 1 isolates the curvature.
    double m2 = 0.0;
    for (auto i = -half; i <= half; ++i) m2 += static_cast<double>(i * i);
    m2 /= static_cast<double>(2 * half + 1);
    double denom = 0.0;
    for (auto i = -half; i <= half; ++i) {
        const double b = static_cast<double>(i * i) - m2;
        denom += b * b;
    }
    double c2sum = 0.0;
    for (auto i = -half; i <= half; ++i) {
        const double c = 2.0 * (static_cast<double>(i * i) - m2) / denom / (ds * ds);
        c2sum += c * c;
    }
    // Curvature noise: KDE errors are correlated over about 2h, i.e. over
    // 2h/r in log distance, so fewer resampled points are independent.
    auto noise_threshold = [&](std::size_t j) {
        if (!noisy || opts.significance <= 0.0) return 0.0;
        const double s = s_lo + ds * static_cast<double>(j);
        const double sigma = std::sqrt(noise_scale / std::exp(ell[j]));
        const double corr = std::max(1.0, 2.0 * p.bandwidth / std::exp(s) / ds);
        return opts.significance * sigma * std::sqrt(c2sum * corr);
    };
    std::vector<double> curv(m, -std::numeric_limits<double>::infinity());
    for (auto j = half; j + half < static_cast<std::ptrdiff_t>(m); ++j) {
        double c2 = 0.0;
        for (auto i = -half; i <= half; ++i) {
            c2 += (static_cast<double>(i * i) - m2) * ell[static_cast<std::size_t>(j + i)];
        }
        curv[static_cast<std::size_t>(j)] = 2.0 * (c2 / denom) / (ds * ds);
    }
    for (auto j = half + 1; j + half + 1 < static_cast<std::ptrdiff_t>(m); ++j) {
        const auto k = static_cast<std::size_t>(j);
        if (curv[k] > opts.threshold + noise_threshold(k) && curv[k] >= curv[k - 1] && curv[k] > curv[k + 1]) {
            // Parabolic refinement of the maximum position.
            const double a = curv[k - 1];
            const double b = curv[k];
            const double c = curv[k + 1];
            const double d = a - 2.0 * b + c;
            const double shift = d < 0.0 ? std::clamp(0.5 * (a - c) / d, -0.5, 0.5) : 0.0;
            return std::exp(s_lo + ds * (static_cast<double>(j) + shift));
        }
    }
    return std::nullopt;
}

}  // namespace

std::string to_string(Zone z) {
    switch (z) {
        case Zone::A: return "A";
        case Zone::B: return "B";
        case Zone::C: return "C";
    }
    return "?";
}

std::optional<std::pair<double, double>> bump_boundary(const EmpiricalPdf& p,
                                                       const BoundaryOptions& opts) {
    if (p.size() < 16) return std::nullopt;
    std::size_t ipeak = 0;
    const auto peak = pdf_height(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.grid[i] == peak.x_peak) ipeak = i;
    }
    const auto right = side_break(p, ipeak, +1, opts);
    const auto left = side_break(p, ipeak, -1, opts);
    if (!right || !left) return std::nullopt;
    return std::make_pair(peak.x_peak - *left, peak.x_peak + *right);
}

double BoundaryCurve::at(double t) const { return a * std::pow(t / t0, nu); }

BoundaryCurve fit_boundary_curve(std::span<const BoundaryPoint> boundaries, double t0) {
    if (!(t0 > 0.0)) throw ValidationError("fit_boundary_curve: t0 must be positive");
    std::set<double> distinct;
    std::vector<double> t;
    std::vector<double> x;
    for (const auto& b : boundaries) {
        distinct.insert(b.t);
        t.push_back(b.t / t0);
        x.push_back(std::abs(b.x_minus));
        t.push_back(b.t / t0);
        x.push_back(std::abs(b.x_plus));
    }
    if (distinct.size() < 3) {
        throw ValidationError("fit_boundary_curve: need boundaries at >= 3 lags, got " +
                              std::to_string(distinct.size()));
    }
    BoundaryCurve c;
    c.fit = fit_power_law(t, x);
    c.t0 = t0;
    c.a = c.fit.prefactor;
    c.nu = c.fit.exponent;
    c.nu_err = c.fit.exponent_err;
    c.a_err = c.a * c.fit.log_prefactor_err;
    return c;
}

HeightLaw fit_height_law(std::span<const double> lags, std::span<const double> heights,
                         double t_min, double t_max) {
    for (std::size_t i = 0; i < heights.size(); ++i) {
        if (lags[i] >= t_min && lags[i] <= t_max && !(heights[i] > 0.0)) {
            throw ValidationError("fit_height_law: nonpositive height");
        }
    }
    HeightLaw h;
    h.fit = fit_power_law(lags, heights, t_min, t_max);
    if (!(h.fit.exponent < -1e-9)) {
        throw ComputationError("fit_height_law: heights do not decay, alpha undefined (exponent " +
                               std::to_string(h.fit.exponent) + ")");
    }
    h.alpha = -1.0 / h.fit.exponent;
    h.alpha_err = h.fit.exponent_err / (h.fit.exponent * h.fit.exponent);
    return h;
}

std::optional<double> detect_bump_end(std::span<const double> lags, const std::vector<bool>& detected) {
    if (lags.size() != detected.size()) throw ValidationError("detect_bump_end: size mismatch");
    std::optional<std::size_t> last;
    for (std::size_t i = 0; i < lags.size(); ++i) {
        if (detected[i]) last = i;
    }
    if (!last || *last + 1 >= lags.size()) return std::nullopt;
    return lags[*last + 1];
}

RegimePartition::RegimePartition(double a, double nu, double t0, double t_cross_start,
                                 double t_bump_end)
    : a_(a), nu_(nu), t0_(t0), t_cross_start_(t_cross_start), t_bump_end_(t_bump_end) {
    if (!(a > 0.0)) throw ValidationError("RegimePartition: a must be positive");
    if (!(nu > 0.0 && nu < 1.0)) {
        throw ValidationError("RegimePartition: nu must lie in (0, 1), got " + std::to_string(nu));
    }
    if (!(t0 > 0.0)) throw ValidationError("RegimePartition: t0 must be positive");
    if (!(t_cross_start < t_bump_end)) {
        throw ValidationError("RegimePartition: crossover start must precede bump end");
    }
}

double RegimePartition::boundary(double t) const { return a_ * std::pow(t / t0_, nu_); }

bool RegimePartition::inside_bump(double x, double t) const {
    return t > 0.0 && std::abs(x) <= boundary(t);
}

Zone RegimePartition::classify(double x, double t) const {
    if (inside_bump(x, t)) {
        if (t < t_cross_start_) return Zone::A;
        if (t < t_bump_end_) return Zone::B;
    }
    return Zone::C;
}

nlohmann::json RegimePartition::to_json() const {
    return {{"a", a_}, {"nu", nu_}, {"t0", t0_}, {"t_cross_start", t_cross_start_},
            {"t_bump_end", t_bump_end_}};
}

RegimePartition RegimePartition::from_json(const nlohmann::json& j) {
    return {j.at("a").get<double>(), j.at("nu").get<double>(), j.at("t0").get<double>(),
            j.at("t_cross_start").get<double>(), j.at("t_bump_end").get<double>()};
}

RegimePartition partition_zones(const BoundaryCurve& curve, double t_cross_start, double t_bump_end) {
    return {curve.a, curve.nu, curve.t0, t_cross_start, t_bump_end};
}

}  // namespace qdiff
