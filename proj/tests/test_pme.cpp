#include <doctest.h>

#include "qdiff/error.hpp"
#include "qdiff/pme.hpp"
#include "qdiff/qcore.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cmath>
#include <numbers>

using namespace qdiff;

namespace {

PmeField make_field(double half_width, std::size_t n, double time, double m, const std::function<double(double)>& f) {
    PmeField p;
    p.m = m;
    p.time = time;
    p.grid.resize(n);
    p.u.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        p.grid[i] = -half_width + 2.0 * half_width * static_cast<double>(i) / static_cast<double>(n - 1);
        p.u[i] = f(p.grid[i]);
    }
    return p;
}

// Sixth-order central differences.
template <class F>
double d1(F f, double x, double h) {
    return (-f(x - 3 * h) + 9 * f(x - 2 * h) - 45 * f(x - h) + 45 * f(x + h) - 9 * f(x + 2 * h) + f(x + 3 * h)) / (60 * h);
}
template <class F>
double d2(F f, double x, double h) {
    return (2 * f(x - 3 * h) - 27 * f(x - 2 * h) + 270 * f(x - h) - 490 * f(x) + 270 * f(x + h) - 27 * f(x + 2 * h) +
            2 * f(x + 3 * h)) /
           (180 * h * h);
}

double mass_by_quadrature(double m, double c) {
    boost::math::quadrature::tanh_sinh<double> ts;
    return 2.0 * ts.integrate(
        [&](double th, double thc) {
            // x = tan(th); the distance to pi/2 comes from the complement for precision.
            const double d = th > std::numbers::pi / 4 ? std::abs(thc) : std::numbers::pi / 2 - th;
            const double cs = std::sin(d);
            if (cs == 0.0) return 0.0;
            return std::exp(std::log(barenblatt(std::cos(d) / cs, 1.0, m, c)) - 2.0 * std::log(cs));
        },
        0.0, std::numbers::pi / 2);
}

}  // namespace

TEST_CASE("barenblatt profile") {
    CHECK(barenblatt(0.0, 1.0, 0.29, 1.7) == doctest::Approx(std::pow(1.7, 1.0 / (0.29 - 1.0))).epsilon(1e-14));
    SUBCASE("heat kernel at m = 1") {
        for (double x : {0.0, 0.7, 3.0}) {
            const double t = 2.5;
            CHECK(barenblatt(x, t, 1.0, 3.0) ==
                  doctest::Approx(3.0 * std::exp(-x * x / (4 * t)) / std::sqrt(4 * std::numbers::pi * t)).epsilon(1e-14));
        }
        // Close to m = 1 the profile of equal mass approaches the heat kernel.
        const double m = 1.0 + 1e-4;
        const double c = barenblatt_constant_for_mass(m, 3.0);
        for (double x : {0.0, 0.5, 2.0}) {
            CHECK(barenblatt(x, 2.0, m, c) == doctest::Approx(barenblatt(x, 2.0, 1.0, 3.0)).epsilon(1e-3));
        }
    }
    SUBCASE("mass") {
        for (double m : {0.29, 0.5, -0.5}) {
            CHECK(barenblatt_mass(m, 1.3) == doctest::Approx(mass_by_quadrature(m, 1.3)).epsilon(1e-9));
            CHECK(barenblatt_mass(m, barenblatt_constant_for_mass(m, 2.0)) == doctest::Approx(2.0).epsilon(1e-12));
        }
        const double m = 1.5;
        const double edge = barenblatt_support(1.0, m, 1.3);
        boost::math::quadrature::tanh_sinh<double> ts;
        const double compact = 2.0 * ts.integrate([&](double x) { return barenblatt(x, 1.0, m, 1.3); }, 0.0, edge);
        CHECK(barenblatt_mass(m, 1.3) == doctest::Approx(compact).epsilon(1e-9));
        CHECK(barenblatt(edge * 1.001, 1.0, m, 1.3) == 0.0);
        CHECK(std::isinf(barenblatt_support(1.0, 0.5, 1.0)));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(barenblatt(0.0, 1.0, 0.0, 1.0), DomainError);
        CHECK_THROWS_AS(barenblatt(0.0, 1.0, -1.0, 1.0), DomainError);
        CHECK_THROWS_AS(barenblatt(0.0, 0.0, 0.5, 1.0), DomainError);
        CHECK_THROWS_AS(barenblatt(0.0, 1.0, 0.5, -1.0), DomainError);
    }
}

TEST_CASE("barenblatt solves the porous media equation") {
    for (double m : {0.29, 0.5, -0.73}) {
        const double c = 1.0;
        const double t = 1.0;
        const double peak = barenblatt(0.0, t, m, c);
        const double core = std::pow(t, 1.0 / (m + 1.0));
        double worst = 0.0;
        for (double y = -5.0; y <= 5.0; y += 0.125) {
            const double x = y * core;
            const double h = 1e-2 * core;
            const double ut = d1([&](double s) { return barenblatt(x, s, m, c); }, t, 1e-3 * t);
            // d/dx(|m| u^(m-1) u_x) = sgn(m) (u^m)_xx
            const double rhs = (m > 0 ? 1.0 : -1.0) * d2([&](double s) { return std::pow(barenblatt(s, t, m, c), m); }, x, h);
            worst = std::max(worst, std::abs(ut - rhs));
        }
        CAPTURE(m);
        CHECK(worst < 1e-6 * peak);
    }
}

TEST_CASE("constant relations") {
    SUBCASE("classical limit") {
        const auto g = map_constants(1.0, 2.0, 0.3);
        CHECK(g.xi == 1.0);
        CHECK(g.c_q == doctest::Approx(std::sqrt(std::numbers::pi)));
    }
    for (auto [q, a, d] : {std::tuple{1.71, 1.79, 0.1118}, std::tuple{2.73, 1.26, 4.8e-3}, std::tuple{1.3, 1.9, 2.0}}) {
        CAPTURE(q);
        const auto g = map_constants(q, a, d);
        CHECK(g.xi * g.alpha + g.q == 3.0);
        CHECK(g.xi == (3.0 - q) / a);
        // D = B (2 C (2-q)(3-q))^(alpha/2) on the branch where the base is positive.
        const double base = 2.0 * g.c_int * (2.0 - q) * (3.0 - q);
        CHECK(base > 0.0);
        CHECK(g.b_coef * std::pow(base, a / 2.0) == doctest::Approx(d).epsilon(1e-10));
        CHECK(std::pow(g.b_coef, 1.0 / a) * std::pow(std::abs(g.c_int), 1.0 / (q - 1.0)) * std::pow(d, -1.0 / a) ==
              doctest::Approx(c_q(q)).epsilon(1e-10));
        CHECK(governing_coefficient(g) == doctest::Approx(g.xi * std::pow(g.b_coef, g.xi)).epsilon(1e-15));
        CHECK(governing_time(governing_tau(7.0, g), g) == doctest::Approx(7.0).epsilon(1e-13));
        const auto back = GoverningParams::from_json(g.to_json());
        CHECK(back.b_coef == g.b_coef);
        CHECK(back.c_int == g.c_int);
        // The Barenblatt route reproduces the self-similar density.
        for (double t : {1.0, 30.0, 1000.0}) {
            for (double y : {0.0, 0.5, 4.0, 50.0}) {
                const ScalingLaw s{a, d};
                const double x = y * s.scale(t);
                CHECK(governing_profile(x, t, g) == doctest::Approx(selfsim_pdf(x, t, q, s)).epsilon(1e-12));
            }
        }
    }
    CHECK(map_constants(2.73, 1.26, 4.8e-3).c_int < 0.0);
    CHECK_THROWS_AS(map_constants(2.0, 1.5, 1.0), DomainError);
    CHECK_THROWS_AS(map_constants(2.0 + 5e-7, 1.5, 1.0), DomainError);
    CHECK_THROWS_AS(map_constants(3.2, 1.5, 1.0), DomainError);
    CHECK_THROWS_AS(map_constants(1.5, -1.0, 1.0), DomainError);
}

TEST_CASE("D2 coefficient") {
    const auto classical = map_constants(1.0, 2.0, 0.37);
    for (double t : {0.1, 1.0, 50.0}) {
        for (double x : {0.0, 1.0, 100.0}) CHECK(std::abs(black_scholes_d2(x, t, classical) - 0.37) < 1e-12);
    }
    const auto g = map_constants(1.71, 1.79, 0.1118);
    const double t = 20.0;
    const double w = std::pow(0.1118 * t, 1.0 / 1.79);
    const double slope = std::log(black_scholes_d2(1e4 * w, t, g) / black_scholes_d2(1e2 * w, t, g)) / std::log(100.0);
    CHECK(std::abs(slope / 2.0 - 1.0) < 0.01);
    for (auto [q, a, d] : {std::tuple{1.71, 1.79, 0.1118}, std::tuple{2.73, 1.26, 4.8e-3}}) {
        const auto gg = map_constants(q, a, d);
        const ScalingLaw s{a, d};
        for (double tt : {1.0, 10.0, 300.0}) {
            for (double y : {0.0, 0.3, 2.0, 40.0}) {
                const double x = y * s.scale(tt);
                const double p = selfsim_pdf(x, tt, q, s);
                const double xi = (3.0 - q) / a;
                const double expected = xi * std::pow(d, xi) * std::pow(p, 1.0 - q) * std::pow(tt, xi - 1.0);
                CHECK(black_scholes_d2(x, tt, gg) == doctest::Approx(expected).epsilon(1e-10));
            }
        }
    }
    CHECK_THROWS_AS(black_scholes_d2(0.0, 0.0, g), DomainError);
}

TEST_CASE("solve_pme") {
    SUBCASE("heat equation") {
        const auto init = make_field(20.0, 1601, 1.0, 1.0, [](double x) { return barenblatt(x, 1.0, 1.0, 1.0); });
        for (auto scheme : {Scheme::CrankNicolson, Scheme::Explicit}) {
            SolveOptions o;
            o.scheme = scheme;
            SolveReport r;
            const auto out = solve_pme(init, 4.0, o, &r);
            double err = 0.0;
            for (std::size_t i = 0; i < out.grid.size(); ++i) err = std::max(err, std::abs(out.u[i] - barenblatt(out.grid[i], 4.0, 1.0, 1.0)));
            CHECK(err < 1e-4 * barenblatt(0.0, 4.0, 1.0, 1.0));
            CHECK(r.mass_drift < 1e-6);
            CHECK(out.time == 4.0);
        }
    }
    SUBCASE("zero field") {
        const auto z = make_field(1.0, 101, 0.0, 0.5, [](double) { return 0.0; });
        const auto out = solve_pme(z, 1.0);
        for (double v : out.u) CHECK(v == 0.0);
    }
    SUBCASE("mass is conserved with closed ends") {
        for (double m : {0.5, 1.5, -0.5}) {
            const auto init = make_field(10.0, 801, 0.0, m, [](double x) { return 0.1 + std::exp(-x * x) * (1.0 + 0.3 * std::sin(3 * x)); });
            SolveReport r;
            const auto out = solve_pme(init, 0.5, {}, &r);
            CHECK(std::abs(out.mass() / init.mass() - 1.0) < 1e-6);
            CHECK(r.mass_drift < 1e-6);
            for (double v : out.u) CHECK(v >= 0.0);
        }
    }
    SUBCASE("rescaled solutions") {
        const double m = 0.5;
        const double lambda = 3.0;
        const double s = std::pow(lambda, 1.0 / (m + 1.0));
        auto shape = [](double x) { return barenblatt(x, 1.0, 0.5, 1.0) * (1.0 + 0.1 * std::cos(2 * x)); };
        const auto a = make_field(8.0, 401, 1.0, m, shape);
        const auto b = make_field(8.0 * s, 401, lambda, m, [&](double x) { return shape(x / s) / s; });
        SolveOptions o;
        o.steps = 300;
        const auto ua = solve_pme(a, 2.0, o);
        const auto ub = solve_pme(b, 2.0 * lambda, o);
        double err = 0.0;
        for (std::size_t i = 0; i < ua.u.size(); ++i) err = std::max(err, std::abs(ub.u[i] * s - ua.u[i]));
        CHECK(err < 1e-10 * shape(0.0));
    }
    SUBCASE("errors") {
        const auto f = make_field(1.0, 101, 1.0, 0.5, [](double) { return 1.0; });
        CHECK_THROWS_AS(solve_pme(f, 0.5), ValidationError);
        auto neg = f;
        neg.u[3] = -1.0;
        CHECK_THROWS_AS(solve_pme(neg, 2.0), ValidationError);
        auto bad = f;
        bad.m = 0.0;
        CHECK_THROWS_AS(solve_pme(bad, 2.0), DomainError);
        CHECK(scheme_from_string("implicit") == Scheme::BackwardEuler);
        CHECK(to_string(scheme_from_string("crank-nicolson")) == "crank-nicolson");
        CHECK_THROWS_AS(scheme_from_string("leapfrog"), ValidationError);
    }
}

TEST_CASE("verification against the Barenblatt solution") {
    for (auto [m, points] : {std::pair{0.29, std::size_t{401}}, std::pair{0.5, std::size_t{401}}, std::pair{-0.73, std::size_t{1001}}}) {
        CAPTURE(m);
        const auto v = verify_pme(m, 1.0, 4.0, points);
        CHECK(v.sup_error < 1e-3);
        CHECK(std::abs(v.order - 2.0) < 0.3);
        CHECK(v.mass_drift < 1e-6);
        CHECK(v.sup_errors[0] > v.sup_errors[1]);
    }
    const auto heat = verify_pme(1.0, 1.0, 4.0);
    CHECK(heat.sup_error < 1e-4);
    const auto pm = verify_pme(1.5, 1.0, 4.0);
    CHECK(pm.front_cells <= 2.0);
    CHECK(pm.front_analytic == doctest::Approx(barenblatt_support(4.0, 1.5, 1.0)));
    CHECK_THROWS_AS(verify_pme(0.5, 4.0, 1.0), ValidationError);
    CHECK_THROWS_AS(verify_pme(-1.5, 1.0, 4.0), DomainError);
}

TEST_CASE("governing equation") {
    SUBCASE("weak regime from t = 10 to t = 100") {
        const auto g = map_constants(1.71, 1.79, 0.1118);
        const ScalingLaw s{1.79, 0.1118};
        const double w = 12.0 * s.scale(100.0);
        const auto init = make_field(w, 1601, 10.0, g.m(), [&](double x) { return selfsim_pdf(x, 10.0, 1.71, s); });
        SolveOptions o;
        o.boundary.value = [&](double x, double t) { return selfsim_pdf(x, t, 1.71, s); };
        const auto out = solve_governing(init, 100.0, g, o);
        double err = 0.0;
        for (std::size_t i = 0; i < out.grid.size(); ++i) err = std::max(err, std::abs(out.u[i] - selfsim_pdf(out.grid[i], 100.0, 1.71, s)));
        CHECK(err < 1e-3 * selfsim_pdf(0.0, 100.0, 1.71, s));
        CHECK(out.time == 100.0);
    }
    SUBCASE("classical limit is the heat equation") {
        const double d = 0.5;
        const auto g = map_constants(1.0, 2.0, d);
        const ScalingLaw s{2.0, d};
        const auto init = make_field(30.0, 2401, 1.0, g.m(), [&](double x) { return selfsim_pdf(x, 1.0, 1.0, s); });
        const auto out = solve_governing(init, 10.0, g);
        double err = 0.0;
        for (std::size_t i = 0; i < out.grid.size(); ++i) err = std::max(err, std::abs(out.u[i] - selfsim_pdf(out.grid[i], 10.0, 1.0, s)));
        CHECK(err < 1e-4 * selfsim_pdf(0.0, 10.0, 1.0, s));
    }
    SUBCASE("perturbations relax onto the self-similar profile") {
        const auto g = map_constants(1.71, 1.79, 0.1118);
        const ScalingLaw s{1.79, 0.1118};
        const double w = 40.0 * s.scale(100.0);
        auto init = make_field(w, 2001, 10.0, g.m(), [&](double x) {
            const double y = x / s.scale(10.0);
            return selfsim_pdf(x, 10.0, 1.71, s) * (1.0 + 0.1 * std::cos(3.0 * y));
        });
        const double norm = init.mass();
        for (auto& v : init.u) v /= norm;
        SolveOptions o;
        o.boundary.value = [&](double x, double t) { return selfsim_pdf(x, t, 1.71, s); };
        auto residual = [&](const PmeField& f) {
            // rms log misfit on the rescaled core |x| <= 3 (D t)^(1/alpha)
            const double sc = s.scale(f.time);
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < f.grid.size(); ++i) {
                if (std::abs(f.grid[i]) > 3.0 * sc) continue;
                const double r = std::log(f.u[i] / selfsim_pdf(f.grid[i], f.time, 1.71, s));
                sum += r * r;
                ++n;
            }
            return std::sqrt(sum / n);
        };
        std::vector<double> history{residual(init)};
        PmeField cur = init;
        for (double t : {15.0, 20.0, 30.0, 50.0, 70.0, 100.0}) {
            cur = solve_governing(cur, t, g, o);
            history.push_back(residual(cur));
        }
        for (std::size_t i = 1; i < history.size(); ++i) CHECK(history[i] < history[i - 1]);
        CHECK(history.back() < 0.2 * history.front());
    }
    CHECK_THROWS_AS(solve_governing(make_field(1.0, 11, 0.0, 0.29, [](double) { return 1.0; }), 1.0, map_constants(1.71, 1.79, 0.1118)),
                    DomainError);
}
