#ifndef QDIFF_PME_HPP
#define QDIFF_PME_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace qdiff {

/// u(x) on a uniform grid at time `time` for the equation
///     u_t = d/dx ( |m| u^(m-1) du/dx ),
/// which is the porous media equation u_t = (u^m)_xx for m > 0 and its
/// well-posed (ultrafast diffusion) form for -1 < m < 0.
struct PmeField {
    std::vector<double> grid;
    std::vector<double> u;
    double time = 0.0;
    double m = 1.0;

    double mass() const;
    double dx() const { return grid[1] - grid[0]; }
    void validate() const;
};

/// Barenblatt self-similar solution
///     u = t^(-1/(m+1)) [C - (m-1)/(2|m|(m+1)) x^2 t^(-2/(m+1))]_+^(1/(m-1)).
/// Positive everywhere for m < 1, compactly supported for m > 1. At m = 1 it
/// is the heat kernel and `c_int` is read as its mass.
double barenblatt(double x, double t, double m, double c_int);

/// Total mass of the Barenblatt solution (time independent).
double barenblatt_mass(double m, double c_int);

/// Integration constant C giving the requested mass.
double barenblatt_constant_for_mass(double m, double mass);

/// Edge |x| of the support for m > 1; +inf otherwise.
double barenblatt_support(double t, double m, double c_int);

/// Constants of the time map P(x, t) = u_(2-q)(x, tau), tau = (B t)^xi.
struct GoverningParams {
    double q = 1.5;
    double alpha = 2.0;
    double d_coef = 1.0;
    double xi = 1.0;
    double b_coef = 1.0;
    /// Integration constant C, signed as in D = B (2 C (2-q)(3-q))^(alpha/2):
    /// negative for q > 2. Powers of C use |C|.
    double c_int = 1.0;
    double c_q = 1.0;

    double m() const { return 2.0 - q; }
    nlohmann::json to_json() const;
    static GoverningParams from_json(const nlohmann::json& j);
};

/// Solves D = B (2C(2-q)(3-q))^(alpha/2) and C_q = B^(1/alpha) C^(1/(q-1)) D^(-1/alpha)
/// for (B, C) and verifies the round trip. Rejects |q - 2| < 1e-6.
GoverningParams map_constants(double q, double alpha, double d_coef, double c_q);
GoverningParams map_constants(double q, double alpha, double d_coef);

/// tau = (B t)^xi and its inverse.
double governing_tau(double t, const GoverningParams& g);
double governing_time(double tau, const GoverningParams& g);

/// Self-similar density evaluated through the Barenblatt route.
double governing_profile(double x, double t, const GoverningParams& g);

/// Coefficient K of t^(1-xi) dP/dt = K d/dx(|2-q| P^(1-q) dP/dx); equals xi B^xi.
double governing_coefficient(const GoverningParams& g);

/// Diffusion coefficient D2(x, t) of the linear Fokker-Planck form
/// dP/dt = d^2(D2 P)/dx^2.
double black_scholes_d2(double x, double t, const GoverningParams& g);

enum class Scheme { Explicit, BackwardEuler, CrankNicolson };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

/// Zero flux at both ends, or both end values prescribed as functions of
/// (x, time) in the solver's own time variable.
struct Boundary {
    std::function<double(double x, double time)> value;
    bool dirichlet() const { return static_cast<bool>(value); }
};

struct SolveOptions {
    Scheme scheme = Scheme::CrankNicolson;
    /// Number of time steps for the implicit schemes; 0 picks max(200, N/2).
    std::size_t steps = 0;
    /// Explicit step as a fraction of the stability limit dx^2 / (2 max D(u)).
    double cfl = 0.45;
    std::size_t max_steps = 50'000'000;
    int newton_max = 50;
    double newton_tol = 1e-13;
    /// Values are floored here before negative powers are taken (m < 1).
    double floor = 1e-30;
    double mass_tol = 1e-6;
    Boundary boundary;
};

struct SolveReport {
    Scheme scheme = Scheme::CrankNicolson;
    std::size_t steps = 0;
    double dt = 0.0;
    std::size_t floor_activations = 0;
    std::size_t newton_iterations = 0;
    /// Net mass that entered through the boundaries.
    double boundary_inflow = 0.0;
    /// |M_end - M_start - inflow| / M_start.
    double mass_drift = 0.0;
};

/// Evolves the field from initial.time to t_end. Conservative in flux form;
/// throws ComputationError on stability or mass-balance failure.
PmeField solve_pme(const PmeField& initial, double t_end, const SolveOptions& opts = {},
                   SolveReport* report = nullptr);

/// Evolves a density obeying the time-rescaled governing equation from
/// initial.time (> 0) to t_end by mapping to tau = (B t)^xi and solving the
/// m = 2 - q porous media equation. Boundary callbacks take real time.
PmeField solve_governing(const PmeField& initial, double t_end, const GoverningParams& g,
                         const SolveOptions& opts = {}, SolveReport* report = nullptr);

/// Analytic-solution check of the solver for one exponent.
struct PmeVerification {
    double m = 0.0;
    double c_int = 1.0;
    double t1 = 1.0;
    double t2 = 4.0;
    double half_width = 0.0;
    std::vector<std::size_t> points;
    std::vector<double> sup_errors;   // relative to the analytic peak at t2
    double sup_error = 0.0;           // finest grid
    double mass_drift = 0.0;          // finest grid
    double order = 0.0;               // from the two finest refinements
    std::size_t floor_activations = 0;
    double front_numeric = 0.0;       // m > 1 only
    double front_analytic = 0.0;
    double front_cells = 0.0;

    nlohmann::json to_json() const;
};

/// Runs solve_pme from the Barenblatt profile at t1 to t2 on three nested
/// grids (points, 2 points - 1, 4 points - 3) with Dirichlet ends pinned to the
/// analytic solution. half_width <= 0 picks a default from the profile scale.
PmeVerification verify_pme(double m, double t1, double t2, std::size_t points = 401,
                           double half_width = 0.0, double c_int = 1.0,
                           Scheme scheme = Scheme::CrankNicolson);

}  // namespace qdiff

#endif
