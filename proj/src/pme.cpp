#include "qdiff/pme.hpp"

#include "qdiff/error.hpp"
#include "qdiff/qcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace qdiff {

namespace {

bool is_heat(double m) { return std::abs(m - 1.0) < 1e-12; }

void check_exponent(double m) {
    if (!(m > -1.0) || m == 0.0 || !std::isfinite(m)) {
        throw DomainError("porous media exponent m = " + std::to_string(m) +
                          " outside (-1, 0) U (0, inf)");
    }
}

// Coefficient of xi^2 in the Barenblatt bracket C - k xi^2.
double bracket_k(double m) { return (m - 1.0) / (2.0 * std::abs(m) * (m + 1.0)); }

// Integral of the unit-C profile: integral of (1 -/+ s^2)^p ds.
double log_profile_integral(double m) {
    const double p = 1.0 / (m - 1.0);
    const double half_log_pi = 0.5 * std::log(std::numbers::pi);
    if (m < 1.0) return half_log_pi + std::lgamma(-p - 0.5) - std::lgamma(-p);
    return half_log_pi + std::lgamma(p + 1.0) - std::lgamma(p + 1.5);
}

// Nonlinear potential Phi(u) with d/du Phi = |m| u^(m-1) > 0.
struct Potential {
    double m;
    double floor;

    double clamp(double u) const { return m < 1.0 ? std::max(u, floor) : std::max(u, 0.0); }
    double phi(double u) const {
        if (is_heat(m)) return u;
        const double v = clamp(u);
        return (m > 0.0 ? 1.0 : -1.0) * std::pow(v, m);
    }
    double dphi(double u) const {
        if (is_heat(m)) return 1.0;
        const double v = clamp(u);
        if (v == 0.0) return 0.0;
        return std::abs(m) * std::pow(v, m - 1.0);
    }
};

// Solves a tridiagonal system in place (Thomas algorithm); rhs becomes the solution.
void solve_tridiagonal(std::vector<double>& lower, std::vector<double>& diag,
                       std::vector<double>& upper, std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

class Stepper {
public:
    Stepper(const PmeField& f, const SolveOptions& opts)
        : grid_(f.grid), n_(f.grid.size()), dx_(f.dx()), pot_{f.m, opts.floor}, opts_(opts) {}

    // (L Phi)_i with the configured boundary treatment; end rows are unused for Dirichlet.
    void apply(const std::vector<double>& u, std::vector<double>& out) const {
        std::vector<double> ph(n_);
        for (std::size_t i = 0; i < n_; ++i) ph[i] = pot_.phi(u[i]);
        const double inv = 1.0 / (dx_ * dx_);
        out.assign(n_, 0.0);
        for (std::size_t i = 1; i + 1 < n_; ++i) out[i] = (ph[i + 1] - 2.0 * ph[i] + ph[i - 1]) * inv;
        if (!dirichlet()) {
            out[0] = 2.0 * (ph[1] - ph[0]) * inv;
            out[n_ - 1] = 2.0 * (ph[n_ - 2] - ph[n_ - 1]) * inv;
        }
    }

    // Net flux into the domain through both ends, (Phi_{N-1}-Phi_{N-2} - (Phi_1-Phi_0))/dx.
    double boundary_flux(const std::vector<double>& u) const {
        if (!dirichlet()) return 0.0;
        return (pot_.phi(u[n_ - 1]) - pot_.phi(u[n_ - 2]) - (pot_.phi(u[1]) - pot_.phi(u[0]))) / dx_;
    }

    double max_diffusivity(const std::vector<double>& u) const {
        double d = 0.0;
        for (double v : u) d = std::max(d, pot_.dphi(v));
        return d;
    }

    bool dirichlet() const { return opts_.boundary.dirichlet(); }

    // One theta step from (u, t) to t + dt; returns the boundary inflow.
    double theta_step(std::vector<double>& u, double t, double dt, double theta, SolveReport& rep) {
        const std::vector<double> old = u;
        std::vector<double> l_old;
        apply(old, l_old);
        const double flux_old = boundary_flux(old);
        const double end_old = old.front() + old.back();
        if (dirichlet()) {
            u.front() = opts_.boundary.value(grid_.front(), t + dt);
            u.back() = opts_.boundary.value(grid_.back(), t + dt);
        }
        const std::size_t lo = dirichlet() ? 1 : 0;
        const std::size_t hi = dirichlet() ? n_ - 1 : n_;  // exclusive
        const std::size_t k = hi - lo;
        const double c = dt * theta / (dx_ * dx_);
        std::vector<double> l_new;
        std::vector<double> a(k), b(k), cu(k), r(k), d(n_);
        bool converged = false;
        for (int it = 0; it < opts_.newton_max; ++it) {
            ++rep.newton_iterations;
            apply(u, l_new);
            for (std::size_t i = 0; i < n_; ++i) d[i] = pot_.dphi(u[i]);
            for (std::size_t j = 0; j < k; ++j) {
                const std::size_t i = lo + j;
                r[j] = -(u[i] - old[i] - dt * (theta * l_new[i] + (1.0 - theta) * l_old[i]));
                double left = 1.0;
                double right = 1.0;
                if (!dirichlet() && i == 0) right = 2.0;
                if (!dirichlet() && i == n_ - 1) left = 2.0;
                b[j] = 1.0 + 2.0 * c * d[i];
                a[j] = i > 0 ? -c * left * d[i - 1] : 0.0;
                cu[j] = i + 1 < n_ ? -c * right * d[i + 1] : 0.0;
            }
            solve_tridiagonal(a, b, cu, r);
            // Damp steps that would push values below half their size (m < 1
            // profiles must stay positive).
            double scale = 1.0;
            if (pot_.m < 1.0) {
                for (std::size_t j = 0; j < k; ++j) {
                    const double ui = u[lo + j];
                    if (r[j] < 0.0 && ui > 0.0 && ui + r[j] < 0.5 * ui) scale = std::min(scale, -0.5 * ui / r[j]);
                }
            }
            double step = 0.0;
            double size = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                u[lo + j] += scale * r[j];
                step = std::max(step, std::abs(scale * r[j]));
                size = std::max(size, std::abs(u[lo + j]));
            }
            if (step <= opts_.newton_tol * std::max(size, 1e-300)) {
                converged = true;
                break;
            }
        }
        if (!converged) {
            throw ComputationError("solve_pme: Newton iteration did not converge at t = " + std::to_string(t));
        }
        enforce_sign(u, rep);
        const double flux = theta * boundary_flux(u) + (1.0 - theta) * flux_old;
        return dt * flux + 0.5 * dx_ * (u.front() + u.back() - end_old) * (dirichlet() ? 1.0 : 0.0);
    }

    double explicit_step(std::vector<double>& u, double t, double dt, SolveReport& rep) {
        std::vector<double> l;
        apply(u, l);
        const double flux = boundary_flux(u);
        const double end_old = u.front() + u.back();
        const std::size_t lo = dirichlet() ? 1 : 0;
        const std::size_t hi = dirichlet() ? n_ - 1 : n_;
        for (std::size_t i = lo; i < hi; ++i) u[i] += dt * l[i];
        if (dirichlet()) {
            u.front() = opts_.boundary.value(grid_.front(), t + dt);
            u.back() = opts_.boundary.value(grid_.back(), t + dt);
        }
        enforce_sign(u, rep);
        return dt * flux + 0.5 * dx_ * (u.front() + u.back() - end_old) * (dirichlet() ? 1.0 : 0.0);
    }

private:
    void enforce_sign(std::vector<double>& u, SolveReport& rep) const {
        double top = 0.0;
        for (double v : u) top = std::max(top, v);
        for (auto& v : u) {
            if (pot_.m < 1.0 && !is_heat(pot_.m)) {
                if (v < opts_.floor) {
                    if (v < -1e-6 * top) throw ComputationError("solve_pme: negative u beyond floor tolerance");
                    v = opts_.floor;
                    ++rep.floor_activations;
                }
            } else if (v < 0.0) {
                if (v < -1e-6 * top) throw ComputationError("solve_pme: negative u beyond floor tolerance");
                v = 0.0;
                ++rep.floor_activations;
            }
        }
    }

    const std::vector<double>& grid_;
    std::size_t n_;
    double dx_;
    Potential pot_;
    const SolveOptions& opts_;
};

}  // namespace

double PmeField::mass() const {
    double s = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) s += 0.5 * (grid[i] - grid[i - 1]) * (u[i] + u[i - 1]);
    return s;
}

void PmeField::validate() const {
    if (grid.size() < 3 || grid.size() != u.size()) throw ValidationError("PmeField: grid/u size mismatch");
    const double h = grid[1] - grid[0];
    if (!(h > 0.0)) throw ValidationError("PmeField: grid must increase");
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (std::abs(grid[i] - grid[i - 1] - h) > 1e-9 * h) throw ValidationError("PmeField: grid not uniform");
    }
    for (double v : u) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("PmeField: u must be finite and nonnegative");
    }
    check_exponent(m);
}

double barenblatt(double x, double t, double m, double c_int) {
    if (!(t > 0.0)) throw DomainError("barenblatt: t must be positive");
    check_exponent(m);
    if (!(c_int > 0.0)) throw DomainError("barenblatt: integration constant must be positive");
    if (is_heat(m)) {
        return c_int / std::sqrt(4.0 * std::numbers::pi * t) * std::exp(-x * x / (4.0 * t));
    }
    const double a = 1.0 / (m + 1.0);
    const double scale = std::pow(t, -a);
    const double xi = x * scale;
    const double bracket = c_int - bracket_k(m) * xi * xi;
    if (bracket <= 0.0) return 0.0;
    return scale * std::pow(bracket, 1.0 / (m - 1.0));
}

double barenblatt_mass(double m, double c_int) {
    check_exponent(m);
    if (!(c_int > 0.0)) throw DomainError("barenblatt_mass: integration constant must be positive");
    if (is_heat(m)) return c_int;
    const double p = 1.0 / (m - 1.0);
    const double kabs = std::abs(bracket_k(m));
    return std::exp((p + 0.5) * std::log(c_int) - 0.5 * std::log(kabs) + log_profile_integral(m));
}

double barenblatt_constant_for_mass(double m, double mass) {
    check_exponent(m);
    if (!(mass > 0.0)) throw DomainError("barenblatt_constant_for_mass: mass must be positive");
    if (is_heat(m)) return mass;
    const double p = 1.0 / (m - 1.0);
    const double log_unit = -0.5 * std::log(std::abs(bracket_k(m))) + log_profile_integral(m);
    return std::exp((std::log(mass) - log_unit) / (p + 0.5));
}

double barenblatt_support(double t, double m, double c_int) {
    if (!(m > 1.0) || is_heat(m)) return std::numeric_limits<double>::infinity();
    return std::sqrt(c_int / bracket_k(m)) * std::pow(t, 1.0 / (m + 1.0));
}

nlohmann::json GoverningParams::to_json() const {
    return {{"q", q}, {"alpha", alpha}, {"d_coef", d_coef}, {"xi", xi}, {"b_coef", b_coef},
            {"c_int", c_int}, {"c_q", c_q}, {"m", m()}};
}

GoverningParams GoverningParams::from_json(const nlohmann::json& j) {
    GoverningParams g;
    g.q = j.at("q").get<double>();
    g.alpha = j.at("alpha").get<double>();
    g.d_coef = j.at("d_coef").get<double>();
    g.xi = j.at("xi").get<double>();
    g.b_coef = j.at("b_coef").get<double>();
    g.c_int = j.at("c_int").get<double>();
    g.c_q = j.at("c_q").get<double>();
    return g;
}

GoverningParams map_constants(double q, double alpha, double d_coef, double c_q_value) {
    ScalingLaw{alpha, d_coef}.validate();
    if (std::abs(q - 2.0) < 1e-6) {
        throw DomainError("map_constants: q = 2 is singular (factor 2 - q vanishes)");
    }
    if (!(c_q_value > 0.0)) throw DomainError("map_constants: C_q must be positive");
    GoverningParams g;
    g.q = q;
    g.alpha = alpha;
    g.d_coef = d_coef;
    g.c_q = c_q_value;
    g.xi = xi_exponent(q, alpha);
    if (std::abs(q - 1.0) < kQLimitTol) {
        // Heat kernel of unit mass at tau = (D t)^(2/alpha) / 4.
        g.q = 1.0;
        g.c_int = 1.0;
        g.b_coef = d_coef * std::pow(2.0, -alpha);
        return g;
    }
    if (!(q > 1.0 && q < 3.0)) throw DomainError("map_constants: q must lie in (1, 3)");
    const double s = 2.0 * std::abs(2.0 - q) * (3.0 - q);
    const double c_abs = std::pow(c_q_value * std::sqrt(s), 2.0 * (q - 1.0) / (3.0 - q));
    g.c_int = q < 2.0 ? c_abs : -c_abs;
    g.b_coef = d_coef / std::pow(s * c_abs, alpha / 2.0);

    // Substitute back into both relations.
    const double d_back = g.b_coef * std::pow(2.0 * g.c_int * (2.0 - q) * (3.0 - q), alpha / 2.0);
    const double cq_back = std::pow(g.b_coef, 1.0 / alpha) * std::pow(c_abs, 1.0 / (q - 1.0)) *
                           std::pow(d_coef, -1.0 / alpha);
    if (!(c_abs > 0.0) || std::abs(d_back / d_coef - 1.0) > 1e-10 ||
        std::abs(cq_back / c_q_value - 1.0) > 1e-10) {
        throw ComputationError("map_constants: constants fail the round trip");
    }
    return g;
}

GoverningParams map_constants(double q, double alpha, double d_coef) {
    return map_constants(q, alpha, d_coef, c_q(q));
}

double governing_tau(double t, const GoverningParams& g) {
    if (!(t > 0.0)) throw DomainError("governing_tau: t must be positive");
    return std::pow(g.b_coef * t, g.xi);
}

double governing_time(double tau, const GoverningParams& g) {
    return std::pow(tau, 1.0 / g.xi) / g.b_coef;
}

double governing_profile(double x, double t, const GoverningParams& g) {
    return barenblatt(x, governing_tau(t, g), g.m(), std::abs(g.c_int));
}

double governing_coefficient(const GoverningParams& g) { return g.xi * std::pow(g.b_coef, g.xi); }

double black_scholes_d2(double x, double t, const GoverningParams& g) {
    if (!(t > 0.0)) throw DomainError("black_scholes_d2: t must be positive");
    const double q = g.q;
    const double a = g.alpha;
    const double lead = (3.0 - q) * std::pow(g.d_coef, 2.0 / a) /
                        (a * std::pow(g.c_q, 1.0 - q) * std::pow(t, (a - 2.0) / a));
    return lead * (1.0 - (1.0 - q) * x * x / std::pow(g.d_coef * t, 2.0 / a));
}

std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::Explicit: return "explicit";
        case Scheme::BackwardEuler: return "backward-euler";
        case Scheme::CrankNicolson: return "crank-nicolson";
    }
    return "?";
}

Scheme scheme_from_string(const std::string& s) {
    if (s == "explicit") return Scheme::Explicit;
    if (s == "backward-euler" || s == "implicit") return Scheme::BackwardEuler;
    if (s == "crank-nicolson") return Scheme::CrankNicolson;
    throw ValidationError("unknown scheme '" + s + "'");
}

PmeField solve_pme(const PmeField& initial, double t_end, const SolveOptions& opts, SolveReport* report) {
    initial.validate();
    if (!(t_end > initial.time)) throw ValidationError("solve_pme: t_end must exceed the initial time");
    SolveReport rep;
    rep.scheme = opts.scheme;
    PmeField f = initial;
    const double m0 = f.mass();
    const bool all_zero = std::all_of(f.u.begin(), f.u.end(), [](double v) { return v == 0.0; });
    if (all_zero && !opts.boundary.dirichlet()) {
        f.time = t_end;
        if (report) *report = rep;
        return f;
    }

    Stepper stepper(f, opts);
    double inflow = 0.0;
    double t = f.time;
    if (opts.scheme == Scheme::Explicit) {
        const double dx2 = f.dx() * f.dx();
        while (t < t_end) {
            const double dmax = stepper.max_diffusivity(f.u);
            double dt = opts.cfl * dx2 / (2.0 * std::max(dmax, 1e-300));
            if (t + dt > t_end) dt = t_end - t;
            if (++rep.steps > opts.max_steps) {
                throw ComputationError("solve_pme: explicit stability limit needs more than " +
                                       std::to_string(opts.max_steps) + " steps; use an implicit scheme");
            }
            inflow += stepper.explicit_step(f.u, t, dt, rep);
            t += dt;
            rep.dt = dt;
        }
    } else {
        const std::size_t steps = opts.steps > 0 ? opts.steps : std::max<std::size_t>(200, f.grid.size() / 2);
        const double dt = (t_end - t) / static_cast<double>(steps);
        rep.dt = dt;
        for (std::size_t n = 0; n < steps; ++n) {
            const double t_next = (n + 1 == steps) ? t_end : f.time + dt * static_cast<double>(n + 1);
            const double h = t_next - t;
            if (opts.scheme == Scheme::CrankNicolson && n == 0) {
                // Backward-Euler start-up damps the stiff modes CN leaves undamped.
                for (int sub = 0; sub < 4; ++sub) inflow += stepper.theta_step(f.u, t + 0.25 * h * sub, 0.25 * h, 1.0, rep);
            } else {
                const double theta = opts.scheme == Scheme::CrankNicolson ? 0.5 : 1.0;
                inflow += stepper.theta_step(f.u, t, h, theta, rep);
            }
            t = t_next;
            ++rep.steps;
        }
    }
    f.time = t_end;
    rep.boundary_inflow = inflow;
    const double m1 = f.mass();
    const double ref = m0 > 0.0 ? m0 : std::max(m1, 1e-300);
    rep.mass_drift = std::abs(m1 - m0 - inflow) / ref;
    if (report) *report = rep;
    if (rep.mass_drift > opts.mass_tol) {
        throw ComputationError("solve_pme: mass drift " + std::to_string(rep.mass_drift) + " exceeds tolerance");
    }
    return f;
}

PmeField solve_governing(const PmeField& initial, double t_end, const GoverningParams& g,
                         const SolveOptions& opts, SolveReport* report) {
    if (!(initial.time > 0.0)) throw DomainError("solve_governing: start time must be positive");
    if (!(t_end > initial.time)) throw ValidationError("solve_governing: t_end must exceed the start time");
    PmeField mapped = initial;
    mapped.m = g.m();
    mapped.time = governing_tau(initial.time, g);
    SolveOptions inner = opts;
    if (opts.boundary.dirichlet()) {
        auto real_time = opts.boundary.value;
        inner.boundary.value = [real_time, g](double x, double tau) { return real_time(x, governing_time(tau, g)); };
    }
    PmeField out = solve_pme(mapped, governing_tau(t_end, g), inner, report);
    out.time = t_end;
    return out;
}

nlohmann::json PmeVerification::to_json() const {
    nlohmann::json j = {{"m", m},
                        {"c_int", c_int},
                        {"t1", t1},
                        {"t2", t2},
                        {"half_width", half_width},
                        {"points", points},
                        {"sup_errors", sup_errors},
                        {"sup_error", sup_error},
                        {"mass_drift", mass_drift},
                        {"order", order},
                        {"floor_activations", floor_activations}};
    if (m > 1.0 && !is_heat(m)) {
        j["front_numeric"] = front_numeric;
        j["front_analytic"] = front_analytic;
        j["front_cells"] = front_cells;
    }
    return j;
}

PmeVerification verify_pme(double m, double t1, double t2, std::size_t points, double half_width,
                           double c_int, Scheme scheme) {
    check_exponent(m);
    if (!(t1 > 0.0) || !(t2 > t1)) throw ValidationError("verify_pme: need 0 < t1 < t2");
    if (points < 11) throw ValidationError("verify_pme: need at least 11 grid points");
    PmeVerification v;
    v.m = m;
    v.c_int = c_int;
    v.t1 = t1;
    v.t2 = t2;
    if (!(half_width > 0.0)) {
        if (is_heat(m)) {
            half_width = 10.0 * std::sqrt(2.0 * t2);
        } else if (m > 1.0) {
            half_width = 1.5 * barenblatt_support(t2, m, c_int);
        } else {
            // Core width at t2; for m < 0 it grows so fast that a wide box
            // leaves the core at t1 unresolved.
            const double core = std::sqrt(c_int / std::abs(bracket_k(m))) * std::pow(t2, 1.0 / (m + 1.0));
            half_width = (m > 0.0 ? 10.0 : 1.25) * core;
        }
    }
    v.half_width = half_width;
    const double peak = barenblatt(0.0, t2, m, c_int);
    std::vector<PmeField> results;
    for (int level = 0; level < 3; ++level) {
        const std::size_t n = (points - 1) * (std::size_t{1} << level) + 1;
        PmeField f;
        f.m = m;
        f.time = t1;
        f.grid.resize(n);
        f.u.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            f.grid[i] = -half_width + 2.0 * half_width * static_cast<double>(i) / static_cast<double>(n - 1);
            f.u[i] = barenblatt(f.grid[i], t1, m, c_int);
        }
        SolveOptions opts;
        opts.scheme = scheme;
        opts.steps = (points - 1) * (std::size_t{1} << level);
        opts.boundary.value = [m, c_int](double x, double t) { return barenblatt(x, t, m, c_int); };
        SolveReport rep;
        PmeField out = solve_pme(f, t2, opts, &rep);
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(out.u[i] - barenblatt(out.grid[i], t2, m, c_int)));
        v.points.push_back(n);
        v.sup_errors.push_back(err / peak);
        v.mass_drift = rep.mass_drift;
        v.floor_activations = rep.floor_activations;
        results.push_back(std::move(out));
    }
    v.sup_error = v.sup_errors.back();
    v.order = std::log2(v.sup_errors[1] / v.sup_errors[2]);
    if (m > 1.0 && !is_heat(m)) {
        // The pressure u^(m-1) falls linearly to zero at the front; extrapolate
        // it from the two outermost points clearly above the precursor.
        const auto& f = results.back();
        double front = 0.0;
        for (int dir : {-1, 1}) {
            std::size_t i = dir > 0 ? f.grid.size() - 1 : 0;
            while (f.u[i] <= 1e-3 * peak) i -= dir;
            const double p_out = std::pow(f.u[i], m - 1.0);
            const double p_in = std::pow(f.u[i - dir], m - 1.0);
            const double x_out = f.grid[i];
            front += 0.5 * std::abs(x_out + (x_out - f.grid[i - dir]) * p_out / (p_in - p_out));
        }
        v.front_numeric = front;
        v.front_analytic = barenblatt_support(t2, m, c_int);
        v.front_cells = std::abs(front - v.front_analytic) / f.dx();
    }
    return v;
}

}  // namespace qdiff
