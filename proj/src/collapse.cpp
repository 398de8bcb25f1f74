#include "qdiff/collapse.hpp"

#include "qdiff/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>

namespace qdiff {

namespace {

constexpr double kQLower = 1.0 + 1e-6;
constexpr double kQUpper = 3.0 - 1e-6;

double dlog_c_q(double q) {
    const double h = 1e-6;
    if (q - h < 1.0 + 2e-8) return (log_c_q(q + h) - log_c_q(q)) / h;
    if (q + h > 3.0 - 2e-8) return (log_c_q(q) - log_c_q(q - h)) / h;
    return (log_c_q(q + h) - log_c_q(q - h)) / (2.0 * h);
}

// Levenberg-Marquardt on r_i = log g_q(x_i; q, beta) - log y_i over the
// parameters (q, log beta), or q alone when beta is pinned.
class QGaussProblem {
public:
    QGaussProblem(std::span<const double> x, std::span<const double> y, std::optional<double> fixed_beta)
        : fixed_log_beta_(fixed_beta ? std::optional<double>(std::log(*fixed_beta)) : std::nullopt) {
        x2_.reserve(x.size());
        logy_.reserve(y.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            x2_.push_back(x[i] * x[i]);
            logy_.push_back(std::log(y[i]));
        }
    }

    std::size_t n_params() const { return fixed_log_beta_ ? 1 : 2; }
    std::size_t n_points() const { return x2_.size(); }

    double cost(double q, double lb) const {
        const double lc = log_c_q(q);
        const double eps = q - 1.0;
        const double beta = std::exp(lb);
        double s = 0.0;
        for (std::size_t i = 0; i < x2_.size(); ++i) {
            const double r = 0.5 * lb - lc - std::log1p(eps * beta * x2_[i]) / eps - logy_[i];
            s += r * r;
        }
        return 0.5 * s;
    }

    // Normal equations: A = J^T J, g = J^T r, ordered (q, log beta).
    void normal_equations(double q, double lb, std::array<double, 4>& a, std::array<double, 2>& g) const {
        const double lc = log_c_q(q);
        const double dlc = dlog_c_q(q);
        const double eps = q - 1.0;
        const double beta = std::exp(lb);
        a = {0.0, 0.0, 0.0, 0.0};
        g = {0.0, 0.0};
        for (std::size_t i = 0; i < x2_.size(); ++i) {
            const double bx2 = beta * x2_[i];
            const double u = eps * bx2;
            const double l1p = std::log1p(u);
            const double r = 0.5 * lb - lc - l1p / eps - logy_[i];
            const double jq = -dlc + l1p / (eps * eps) - bx2 / (eps * (1.0 + u));
            const double jb = 0.5 - bx2 / (1.0 + u);
            a[0] += jq * jq;
            a[1] += jq * jb;
            a[3] += jb * jb;
            g[0] += jq * r;
            g[1] += jb * r;
        }
        a[2] = a[1];
    }

    std::optional<double> fixed_log_beta() const { return fixed_log_beta_; }

private:
    std::vector<double> x2_;
    std::vector<double> logy_;
    std::optional<double> fixed_log_beta_;
};

struct LmOutcome {
    double q = 0.0;
    double lb = 0.0;
    double cost = 0.0;
    int iterations = 0;
    bool converged = false;
};

LmOutcome levenberg_marquardt(const QGaussProblem& prob, double q, double lb, int max_iter) {
    const bool both = prob.n_params() == 2;
    double cost = prob.cost(q, lb);
    double lambda = 1e-3;
    std::array<double, 4> a{};
    std::array<double, 2> g{};
    LmOutcome out;
    bool fresh = true;
    for (int it = 0; it < max_iter; ++it) {
        out.iterations = it + 1;
        if (fresh) prob.normal_equations(q, lb, a, g);
        fresh = false;
        double dq = 0.0;
        double dlb = 0.0;
        if (both) {
            const double a00 = a[0] * (1.0 + lambda);
            const double a11 = a[3] * (1.0 + lambda);
            const double det = a00 * a11 - a[1] * a[2];
            if (!(std::abs(det) > 0.0)) {
                lambda *= 10.0;
                continue;
            }
            dq = -(a11 * g[0] - a[1] * g[1]) / det;
            dlb = -(a00 * g[1] - a[2] * g[0]) / det;
            // q pinned at a domain edge: step in beta alone.
            if ((q <= kQLower && dq < 0.0) || (q >= kQUpper && dq > 0.0)) {
                dq = 0.0;
                dlb = -g[1] / a11;
            }
        } else {
            const double a00 = a[0] * (1.0 + lambda);
            if (!(a00 > 0.0)) break;
            dq = -g[0] / a00;
        }
        const double q_new = std::clamp(q + dq, kQLower, kQUpper);
        const double lb_new = lb + dlb;
        const double cost_new = prob.cost(q_new, lb_new);
        if (std::isfinite(cost_new) && cost_new <= cost) {
            const bool tiny_step = std::abs(q_new - q) < 1e-13 && std::abs(lb_new - lb) < 1e-13;
            const bool flat = cost - cost_new <= 1e-15 * cost;
            q = q_new;
            lb = lb_new;
            cost = cost_new;
            lambda = std::max(lambda / 3.0, 1e-12);
            fresh = true;
            if (tiny_step || flat || cost < 1e-28) {
                out.converged = true;
                break;
            }
        } else {
            lambda *= 4.0;
            if (lambda > 1e16) {
                out.converged = true;  // no descent direction left: stationary point
                break;
            }
        }
    }
    out.q = q;
    out.lb = lb;
    out.cost = cost;
    return out;
}

}  // namespace

bool FitWindow::contains(double x) const {
    switch (kind) {
        case Kind::Full: return true;
        case Kind::Inside: return std::abs(x) <= half_width;
        case Kind::Outside: return std::abs(x) > half_width;
    }
    return true;
}

QFit fit_qgauss_points(std::span<const double> x, std::span<const double> y,
                       std::optional<double> fixed_beta, const FitOptions& opts) {
    if (x.size() != y.size()) throw ValidationError("fit_qgauss: size mismatch");
    if (x.size() < std::max<std::size_t>(opts.min_points, 3)) {
        throw ValidationError("fit_qgauss: " + std::to_string(x.size()) +
                              " points in the fit window, need " + std::to_string(opts.min_points));
    }
    for (double v : y) {
        if (!(v > 0.0)) throw ValidationError("fit_qgauss: density must be positive on the fitted support");
    }
    if (fixed_beta && !(*fixed_beta > 0.0)) throw ValidationError("fit_qgauss: fixed beta must be positive");
    const QGaussProblem prob(x, y, fixed_beta);

    const auto imax = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
    std::optional<LmOutcome> best;
    for (double q0 : opts.q_starts) {
        q0 = std::clamp(q0, kQLower, kQUpper);
        double lb0 = 0.0;
        if (fixed_beta) {
            lb0 = *prob.fixed_log_beta();
        } else {
            // Peak height sqrt(beta)/C_q, pulled back by the offset of the peak point.
            const double lb_peak = 2.0 * (std::log(y[imax]) + log_c_q(q0));
            double best_cost = std::numeric_limits<double>::infinity();
            for (int k = -2; k <= 2; ++k) {
                const double cand = lb_peak + std::log(10.0) * k;
                const double c = prob.cost(q0, cand);
                if (c < best_cost) {
                    best_cost = c;
                    lb0 = cand;
                }
            }
        }
        const auto run = levenberg_marquardt(prob, q0, lb0, opts.max_iterations);
        if (!run.converged) continue;
        if (!best || run.cost < best->cost) best = run;
    }
    if (!best) {
        throw ComputationError("fit_qgauss: no start converged within " +
                               std::to_string(opts.max_iterations) + " iterations");
    }

    QFit fit;
    fit.params = {best->q, std::exp(best->lb), false};
    fit.n_points = prob.n_points();
    fit.iterations = best->iterations;
    fit.residual = std::sqrt(2.0 * best->cost / static_cast<double>(prob.n_points()));
    fit.at_domain_boundary = best->q - 1.0 < 1e-3;

    std::array<double, 4> a{};
    std::array<double, 2> g{};
    prob.normal_equations(best->q, best->lb, a, g);
    const auto dof = static_cast<double>(prob.n_points() - prob.n_params());
    const double sigma2 = 2.0 * best->cost / std::max(dof, 1.0);
    if (prob.n_params() == 2) {
        const double det = a[0] * a[3] - a[1] * a[2];
        if (det > 0.0) {
            fit.q_err = std::sqrt(sigma2 * a[3] / det);
            fit.beta_err = fit.params.beta * std::sqrt(sigma2 * a[0] / det);
        }
    } else if (a[0] > 0.0) {
        fit.q_err = std::sqrt(sigma2 / a[0]);
    }
    return fit;
}

LagFit fit_qgauss(const EmpiricalPdf& p, const FitWindow& window, const FitOptions& opts) {
    double peak = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) peak = std::max(peak, p.raw(i));
    const double floor = std::max(opts.floor_ratio * peak, noise_floor(p, opts.max_noise));
    std::vector<double> x;
    std::vector<double> y;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double v = p.raw(i);
        if (window.contains(p.grid[i]) && v > floor) {
            x.push_back(p.grid[i]);
            y.push_back(v);
        }
    }
    if (x.size() < opts.min_points) {
        throw ValidationError("fit_qgauss: degenerate restriction at lag " + std::to_string(p.lag) +
                              " (" + std::to_string(x.size()) + " usable grid points)");
    }
    const auto f = fit_qgauss_points(x, y, std::nullopt, opts);
    LagFit out;
    out.lag = p.lag;
    out.params = f.params;
    out.q_err = f.q_err;
    out.beta_err = f.beta_err;
    out.fit_residual = f.residual;
    out.n_samples = p.n_samples;
    out.n_points = f.n_points;
    out.at_domain_boundary = f.at_domain_boundary;
    return out;
}

BetaLaw fit_beta_law(std::span<const LagFit> fits) {
    if (fits.size() < 3) {
        throw ValidationError("fit_beta_law: need at least 3 lags, got " + std::to_string(fits.size()));
    }
    std::vector<double> t;
    std::vector<double> beta;
    for (const auto& f : fits) {
        if (!(f.params.beta > 0.0)) throw ValidationError("fit_beta_law: nonpositive beta");
        t.push_back(f.lag);
        beta.push_back(f.params.beta);
    }
    BetaLaw law;
    law.fit = fit_power_law(t, beta);
    const double slope = law.fit.exponent;  // -2/alpha
    if (!(slope < -1e-9)) {
        throw ComputationError("fit_beta_law: beta does not decay with the lag (slope " +
                               std::to_string(slope) + "), no scaling law");
    }
    const double intercept = std::log(law.fit.prefactor);  // -(2/alpha) log D
    law.scaling.alpha = -2.0 / slope;
    law.scaling.d_coef = std::exp(intercept / slope);
    law.alpha_err = 2.0 * law.fit.exponent_err / (slope * slope);
    const double dlogd = std::hypot(law.fit.log_prefactor_err / slope,
                                    intercept * law.fit.exponent_err / (slope * slope));
    law.d_err = law.scaling.d_coef * dlogd;
    return law;
}

CollapsedCloud collapse_pdfs(std::span<const EmpiricalPdf> pdfs, const ScalingLaw& scaling,
                             const WindowByLag& window, double floor_ratio, double max_noise) {
    scaling.validate();
    CollapsedCloud cloud;
    cloud.scaling = scaling;
    for (const auto& p : pdfs) {
        const double width = scaling.scale(p.lag);
        const FitWindow w = window ? window(p.lag) : FitWindow::full();
        double peak = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) peak = std::max(peak, p.raw(i));
        const double floor = std::max(floor_ratio * peak, noise_floor(p, max_noise));
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double v = p.raw(i);
            if (!w.contains(p.grid[i]) || !(v > floor)) continue;
            cloud.points.push_back({p.grid[i] / width, v * width, p.lag});
        }
    }
    return cloud;
}

double collapse_spread(const CollapsedCloud& cloud) {
    struct Group {
        std::vector<double> x;
        std::vector<double> logp;
        double step = 0.0;
    };
    std::map<double, Group> groups;
    for (const auto& pt : cloud.points) {
        auto& g = groups[pt.lag];
        g.x.push_back(pt.x);
        g.logp.push_back(std::log(pt.p));
    }
    if (groups.size() < 2) return 0.0;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    const Group* ref = nullptr;
    double ref_span = std::numeric_limits<double>::infinity();
    for (auto& [lag, g] : groups) {
        g.step = std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < g.x.size(); ++i) g.step = std::min(g.step, g.x[i] - g.x[i - 1]);
        lo = std::max(lo, g.x.front());
        hi = std::min(hi, g.x.back());
        if (g.x.back() - g.x.front() < ref_span) {
            ref_span = g.x.back() - g.x.front();
            ref = &g;
        }
    }
    double sum = 0.0;
    std::size_t count = 0;
    std::vector<double> vals;
    for (const double xr : ref->x) {
        if (xr < lo || xr > hi) continue;
        vals.clear();
        bool ok = true;
        for (const auto& [lag, g] : groups) {
            const auto it = std::lower_bound(g.x.begin(), g.x.end(), xr);
            const auto j = static_cast<std::size_t>(it - g.x.begin());
            if (j < g.x.size() && g.x[j] == xr) {
                vals.push_back(g.logp[j]);
                continue;
            }
            if (j == 0 || j >= g.x.size() || g.x[j] - g.x[j - 1] > 1.5 * g.step) {
                ok = false;
                break;
            }
            const double w = (xr - g.x[j - 1]) / (g.x[j] - g.x[j - 1]);
            vals.push_back(g.logp[j - 1] + w * (g.logp[j] - g.logp[j - 1]));
        }
        if (!ok) continue;
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        for (double v : vals) {
            sum += (v - mean) * (v - mean);
            ++count;
        }
    }
    if (count == 0) throw ComputationError("collapse_spread: lags do not overlap on the rescaled axis");
    return std::sqrt(sum / static_cast<double>(count));
}

CollapseResult fit_collapsed(const CollapsedCloud& cloud, bool fix_beta_one, Zone zone,
                             const FitOptions& opts) {
    if (cloud.points.size() < 50) {
        throw ValidationError("fit_collapsed: need at least 50 pooled points, got " +
                              std::to_string(cloud.points.size()));
    }
    std::vector<double> x;
    std::vector<double> y;
    x.reserve(cloud.points.size());
    y.reserve(cloud.points.size());
    for (const auto& pt : cloud.points) {
        x.push_back(pt.x);
        y.push_back(pt.p);
    }
    const auto f = fit_qgauss_points(x, y, fix_beta_one ? std::optional<double>(1.0) : std::nullopt, opts);
    CollapseResult r;
    r.q = f.params.q;
    r.q_err = f.q_err;
    r.beta = f.params.beta;
    r.beta_fixed = fix_beta_one;
    r.scaling = cloud.scaling;
    r.collapse_residual = f.residual;
    r.zone = zone;
    r.n_points = f.n_points;
    return r;
}

double half_max_width(const EmpiricalPdf& p) {
    const auto peak = pdf_height(p);
    std::size_t ip = 0;
    while (p.grid[ip] != peak.x_peak) ++ip;
    const double half = 0.5 * peak.height;
    auto walk = [&](int dir) -> double {
        auto i = static_cast<std::ptrdiff_t>(ip);
        const auto n = static_cast<std::ptrdiff_t>(p.size());
        while (i + dir >= 0 && i + dir < n) {
            const auto a = static_cast<std::size_t>(i);
            const auto b = static_cast<std::size_t>(i + dir);
            if (p.density[b] < half) {
                const double w = (p.density[a] - half) / (p.density[a] - p.density[b]);
                return std::abs(p.grid[a] + w * (p.grid[b] - p.grid[a]) - peak.x_peak);
            }
            i += dir;
        }
        throw ComputationError("half_max_width: density never drops to half maximum on the grid");
    };
    return 0.5 * (walk(+1) + walk(-1));
}

nlohmann::json to_json(const LagFit& f) {
    return {{"lag", f.lag},           {"q", f.params.q},
            {"beta", f.params.beta},  {"q_err", f.q_err},
            {"beta_err", f.beta_err}, {"fit_residual", f.fit_residual},
            {"n_samples", f.n_samples}, {"n_points", f.n_points},
            {"at_domain_boundary", f.at_domain_boundary}};
}

LagFit lag_fit_from_json(const nlohmann::json& j) {
    LagFit f;
    f.lag = j.at("lag").get<double>();
    f.params = {j.at("q").get<double>(), j.at("beta").get<double>(), false};
    f.q_err = j.value("q_err", 0.0);
    f.beta_err = j.value("beta_err", 0.0);
    f.fit_residual = j.value("fit_residual", 0.0);
    f.n_samples = j.value("n_samples", std::size_t{0});
    f.n_points = j.value("n_points", std::size_t{0});
    f.at_domain_boundary = j.value("at_domain_boundary", false);
    return f;
}

nlohmann::json to_json(const BetaLaw& b) {
    return {{"alpha", b.scaling.alpha},     {"alpha_err", b.alpha_err},
            {"d_coef", b.scaling.d_coef},   {"d_err", b.d_err},
            {"slope", b.fit.exponent},      {"residual", b.fit.residual},
            {"n_lags", b.fit.n_points}};
}

nlohmann::json to_json(const CollapseResult& c) {
    return {{"zone", to_string(c.zone)},
            {"q", c.q},
            {"q_err", c.q_err},
            {"beta", c.beta},
            {"beta_fixed", c.beta_fixed},
            {"alpha", c.scaling.alpha},
            {"d_coef", c.scaling.d_coef},
            {"collapse_residual", c.collapse_residual},
            {"n_points", c.n_points}};
}

}  // namespace qdiff
