// Acceptance checks: one PASS/FAIL line each, exit status 1 if any fails.

#include "qdiff/collapse.hpp"
#include "qdiff/density.hpp"
#include "qdiff/pipeline.hpp"
#include "qdiff/pme.hpp"
#include "qdiff/qcore.hpp"
#include "qdiff/regimes.hpp"
#include "qdiff/synth.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>

using namespace qdiff;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kWeakQTol = 0.05;
constexpr double kWeakAlphaTol = 0.05;
constexpr double kWeakDRel = 0.10;
constexpr double kWeakRuntime = 600.0;  // seconds
constexpr double kStrongQTol = 0.08;
constexpr double kStrongAlphaTol = 0.08;
constexpr double kStrongDRel = 0.15;
constexpr double kHeightExact = 1e-6;
constexpr double kHeightSampled = 0.05;
constexpr double kBoundaryExact = 1e-12;
constexpr double kNuTol = 0.1;
constexpr double kResidualRel = 1e-6;
constexpr double kSolveRel = 1e-3;
constexpr double kOrder = 2.0;
constexpr double kOrderTol = 0.3;
constexpr double kGoverningRel = 1e-3;
constexpr double kRoundTrip = 1e-10;
constexpr double kD2Classical = 1e-12;
constexpr double kD2Slope = 0.01;
constexpr double kD2Identity = 1e-10;
constexpr double kNormTol = 1e-8;
constexpr double kTailTol = 0.02;
constexpr double kGaussTol = 1e-6;
constexpr double kKsTol = 0.002;
constexpr double kMomentAlphaLo = 1.7;
constexpr double kMomentAlphaHi = 1.9;

constexpr std::size_t kSamples = 1'000'000;
const ScalingLaw kWeak{1.79, 0.1118};
constexpr double kWeakQ = 1.71;
const ScalingLaw kStrong{1.26, 4.8e-3};
constexpr double kStrongQ = 2.73;

struct Check {
    bool ok = true;
    std::ostringstream detail;
    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void report(int number, const std::string& name, Check& c) {
    std::printf("%s %d. %s:%s\n", c.ok ? "PASS" : "FAIL", number, name.c_str(), c.detail.str().c_str());
    std::fflush(stdout);
    if (!c.ok) ++failures;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

double rel(double a, double b) { return std::abs(a / b - 1.0); }

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "qdiff_acceptance" / name;
    fs::remove_all(dir);
    return dir;
}

std::vector<ReturnEnsemble> sample_family(double q, const ScalingLaw& s, const std::vector<double>& lags,
                                          std::uint64_t seed) {
    std::vector<ReturnEnsemble> out;
    std::uint64_t stream = 0;
    for (double t : lags) out.push_back(synth_selfsim(q, s, t, kSamples, derive_seed(seed, ++stream)));
    return out;
}

template <class F>
double root_in(F f, double a, double b) {
    std::uintmax_t iters = 200;
    const auto r = boost::math::tools::toms748_solve(f, a, b, boost::math::tools::eps_tolerance<double>(50), iters);
    return 0.5 * (r.first + r.second);
}

// Innermost crossing of the weighted component densities, scanning outward.
double crossing(const TwoRegimeSpec& spec, double t) {
    auto f = [&](double x) {
        return spec.bump_weight * selfsim_pdf(x, t, spec.strong_q, spec.strong) -
               (1.0 - spec.bump_weight) * selfsim_pdf(x, t, spec.weak_q, spec.weak);
    };
    double a = 1e-3 * spec.strong.scale(t);
    double b = a * 1.02;
    while (f(a) * f(b) > 0.0) a = b, b *= 1.02;
    return root_in(f, a, b);
}

// Sixth-order central differences.
template <class F>
double diff1(F f, double x, double h) {
    return (-f(x - 3 * h) + 9 * f(x - 2 * h) - 45 * f(x - h) + 45 * f(x + h) - 9 * f(x + 2 * h) + f(x + 3 * h)) / (60 * h);
}
template <class F>
double diff2(F f, double x, double h) {
    return (2 * f(x - 3 * h) - 27 * f(x - 2 * h) + 270 * f(x - h) - 490 * f(x) + 270 * f(x + h) - 27 * f(x + 2 * h) +
            2 * f(x + 3 * h)) /
           (180 * h * h);
}

PipelineResult weak_run;
std::vector<ReturnEnsemble> strong_data;
std::vector<EmpiricalPdf> strong_pdfs;

void weak_round_trip() {
    Check c;
    const auto lags = lag_ladder(1, 3000, 4);
    RunConfig config;
    config.output_dir = scratch("weak");
    config.detrend = false;
    config.bandwidth = Bandwidth::relative(0.03);
    const auto start = std::chrono::steady_clock::now();
    weak_run = run_pipeline(config, sample_family(kWeakQ, kWeak, lags, 1001), {{"kind", "synthetic weak regime"}});
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    c.require(lags.size() == 15, "15 lags");
    c.require(weak_run.collapses.size() == 1 && weak_run.collapses[0].zone == Zone::C, "one weak-zone collapse");
    if (c.ok) {
        const auto& r = weak_run.collapses[0];
        const double q = r.result.q;
        const double alpha = r.beta_law.scaling.alpha;
        const double d = r.beta_law.scaling.d_coef;
        c.detail << " q=" << fmt(q) << " alpha=" << fmt(alpha) << " D=" << fmt(d) << " (" << lags.size() << " lags, "
                 << kSamples << " samples/lag, " << fmt(seconds) << " s)";
        c.require(std::abs(q - kWeakQ) <= kWeakQTol, "q");
        c.require(std::abs(alpha - kWeak.alpha) <= kWeakAlphaTol, "alpha");
        c.require(rel(d, kWeak.d_coef) <= kWeakDRel, "D");
        c.require(seconds < kWeakRuntime, "runtime");
    }
    report(1, "weak-regime round trip", c);
}

void strong_round_trip() {
    Check c;
    const auto lags = lag_ladder(1, 35, 4);
    strong_data = sample_family(kStrongQ, kStrong, lags, 2002);
    std::vector<LagFit> fits;
    std::map<double, FitWindow> windows;
    for (const auto& e : strong_data) {
        strong_pdfs.push_back(kde(e, Bandwidth::relative(0.03)));
        const auto w = FitWindow::inside(10.0 * half_max_width(strong_pdfs.back()));
        windows[e.lag] = w;
        fits.push_back(fit_qgauss(strong_pdfs.back(), w));
    }
    const auto law = fit_beta_law(fits);
    const auto cloud = collapse_pdfs(strong_pdfs, law.scaling, [&](double t) { return windows.at(t); });
    const auto res = fit_collapsed(cloud, true, Zone::A);
    c.detail << " q=" << fmt(res.q) << " alpha=" << fmt(law.scaling.alpha) << " D=" << fmt(law.scaling.d_coef)
             << " (" << lags.size() << " lags in [1, 35], window 10 HWHM)";
    c.require(std::abs(res.q - kStrongQ) <= kStrongQTol, "q");
    c.require(std::abs(law.scaling.alpha - kStrong.alpha) <= kStrongAlphaTol, "alpha");
    c.require(rel(law.scaling.d_coef, kStrong.d_coef) <= kStrongDRel, "D");
    report(2, "strong-regime round trip", c);
}

void height_laws() {
    Check c;
    const auto lags = lag_ladder(1, 3000, 8);
    std::vector<double> hs;
    std::vector<double> hw;
    for (double t : lags) {
        hs.push_back(selfsim_pdf(0.0, t, kStrongQ, kStrong));
        hw.push_back(selfsim_pdf(0.0, t, kWeakQ, kWeak));
    }
    const double a_s = fit_height_law(lags, hs, 1.0, 35.0).alpha;
    const double a_w = fit_height_law(lags, hw, 78.0, 3000.0).alpha;
    c.detail << " noiseless alpha=" << fmt(a_s) << "," << fmt(a_w);
    c.require(std::abs(a_s - kStrong.alpha) <= kHeightExact, "noiseless strong");
    c.require(std::abs(a_w - kWeak.alpha) <= kHeightExact, "noiseless weak");

    std::vector<double> sl;
    std::vector<double> sh;
    for (const auto& p : strong_pdfs) {
        sl.push_back(p.lag);
        sh.push_back(pdf_height(p).height);
    }
    const double s_s = fit_height_law(sl, sh, 1.0, 35.0).alpha;
    c.require(weak_run.weak_height_law.has_value(), "weak height law from the pipeline");
    const double s_w = weak_run.weak_height_law ? weak_run.weak_height_law->alpha : 0.0;
    c.detail << "; sampled alpha=" << fmt(s_s) << "," << fmt(s_w);
    c.require(std::abs(s_s - kStrong.alpha) <= kHeightSampled, "sampled strong");
    c.require(std::abs(s_w - kWeak.alpha) <= kHeightSampled, "sampled weak");
    report(3, "height power laws", c);
}

void boundary_curve() {
    Check c;
    std::vector<BoundaryPoint> exact;
    for (double t : lag_ladder(1, 78, 4)) {
        const double x = 0.0339 * std::pow(t, 0.62);
        exact.push_back({t, -x, x});
    }
    const auto curve = fit_boundary_curve(exact);
    c.detail << " exact a=" << fmt(curve.a) << " nu=" << fmt(curve.nu);
    c.require(rel(curve.a, 0.0339) <= kBoundaryExact, "exact a");
    c.require(std::abs(curve.nu - 0.62) <= kBoundaryExact, "exact nu");

    const TwoRegimeSpec spec;
    RunConfig config;
    config.output_dir = scratch("two_regime");
    config.detrend = false;
    config.bandwidth = Bandwidth::relative(0.03);
    config.points_per_decade = 16;
    const auto lags = lag_ladder(config.lag_min, config.lag_max, config.points_per_decade);
    std::vector<ReturnEnsemble> data;
    std::uint64_t stream = 0;
    for (double t : lags) data.push_back(synth_two_regime(spec, t, kSamples, derive_seed(3003, ++stream)));
    const auto r = run_pipeline(config, std::move(data), {{"kind", "synthetic two-regime"}, {"spec", spec.to_json()}});
    c.require(r.boundary_curve.has_value(), "boundary curve detected");
    if (r.boundary_curve) {
        // Construction exponent: the same fit applied to the analytic edges at the detected lags.
        std::vector<BoundaryPoint> truth;
        for (const auto& b : r.boundaries) {
            if (b.t < spec.t_bump_end) {
                const double x = crossing(spec, b.t);
                truth.push_back({b.t, -x, x});
            }
        }
        const double nu_true = fit_boundary_curve(truth).nu;
        c.detail << "; two-regime nu=" << fmt(r.boundary_curve->nu) << " vs construction " << fmt(nu_true);
        c.require(std::abs(r.boundary_curve->nu - nu_true) <= kNuTol, "two-regime nu");
        if (r.detected_bump_end) c.detail << ", bump end " << fmt(*r.detected_bump_end) << " vs " << spec.t_bump_end;
    }
    report(4, "boundary curve", c);
}

void barenblatt_checks() {
    Check c;
    for (double m : {0.29, -0.73, 0.5}) {
        const double peak = barenblatt(0.0, 1.0, m, 1.0);
        double worst = 0.0;
        for (double y = -5.0; y <= 5.0; y += 0.125) {
            const double ut = diff1([&](double s) { return barenblatt(y, s, m, 1.0); }, 1.0, 1e-3);
            const double rhs = (m > 0 ? 1.0 : -1.0) * diff2([&](double s) { return std::pow(barenblatt(s, 1.0, m, 1.0), m); }, y, 1e-2);
            worst = std::max(worst, std::abs(ut - rhs));
        }
        const auto v = verify_pme(m, 1.0, 4.0, m < 0.0 ? 1001 : 401);
        c.detail << " m=" << m << ": residual " << fmt(worst / peak) << ", sup " << fmt(v.sup_error) << ", order "
                 << fmt(v.order) << ";";
        c.require(worst < kResidualRel * peak, "residual m=" + fmt(m));
        c.require(v.sup_error < kSolveRel, "solve m=" + fmt(m));
        c.require(std::abs(v.order - kOrder) <= kOrderTol, "order m=" + fmt(m));
    }
    report(5, "Barenblatt verification", c);
}

void governing_checks() {
    Check c;
    const auto g = map_constants(kWeakQ, kWeak.alpha, kWeak.d_coef);
    const double w = 12.0 * kWeak.scale(100.0);
    PmeField f;
    f.m = g.m();
    f.time = 10.0;
    const std::size_t n = 1601;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = -w + 2.0 * w * static_cast<double>(i) / static_cast<double>(n - 1);
        f.grid.push_back(x);
        f.u.push_back(selfsim_pdf(x, 10.0, kWeakQ, kWeak));
    }
    SolveOptions o;
    o.boundary.value = [](double x, double t) { return selfsim_pdf(x, t, kWeakQ, kWeak); };
    const auto out = solve_governing(f, 100.0, g, o);
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(out.u[i] - selfsim_pdf(out.grid[i], 100.0, kWeakQ, kWeak)));
    const double peak = selfsim_pdf(0.0, 100.0, kWeakQ, kWeak);
    c.detail << " sup error " << fmt(err / peak) << " of peak;";
    c.require(err < kGoverningRel * peak, "t=10 -> 100 solve");

    for (auto [q, s] : {std::pair{kWeakQ, kWeak}, std::pair{kStrongQ, kStrong}}) {
        const auto p = map_constants(q, s.alpha, s.d_coef);
        const double d_back = p.b_coef * std::pow(2.0 * p.c_int * (2.0 - q) * (3.0 - q), s.alpha / 2.0);
        const double cq_back = std::pow(p.b_coef, 1.0 / s.alpha) * std::pow(std::abs(p.c_int), 1.0 / (q - 1.0)) *
                               std::pow(s.d_coef, -1.0 / s.alpha);
        c.detail << " q=" << q << " round trip " << fmt(std::max(rel(d_back, s.d_coef), rel(cq_back, c_q(q)))) << ";";
        c.require(rel(d_back, s.d_coef) <= kRoundTrip && rel(cq_back, c_q(q)) <= kRoundTrip, "constant round trip");
        c.require(p.xi == (3.0 - q) / s.alpha, "xi");
    }
    report(6, "governing equation", c);
}

void d2_checks() {
    Check c;
    const auto classical = map_constants(1.0, 2.0, 0.1118);
    double worst = 0.0;
    for (double t : {0.5, 10.0, 3000.0}) {
        for (double x : {0.0, 0.1, 10.0, 1e3}) worst = std::max(worst, std::abs(black_scholes_d2(x, t, classical) - 0.1118));
    }
    c.detail << " classical deviation " << fmt(worst) << ";";
    c.require(worst <= kD2Classical, "classical limit");

    const auto g = map_constants(kWeakQ, kWeak.alpha, kWeak.d_coef);
    const double t = 20.0;
    const double w = kWeak.scale(t);
    const double slope = std::log(black_scholes_d2(1e4 * w, t, g) / black_scholes_d2(1e2 * w, t, g)) / std::log(100.0);
    c.detail << " large-x slope " << fmt(slope) << ";";
    c.require(std::abs(slope / 2.0 - 1.0) <= kD2Slope, "slope");

    double id = 0.0;
    for (auto [q, s] : {std::pair{kWeakQ, kWeak}, std::pair{kStrongQ, kStrong}}) {
        const auto p = map_constants(q, s.alpha, s.d_coef);
        const double xi = (3.0 - q) / s.alpha;
        for (double tt : {1.0, 35.0, 3000.0}) {
            for (double y : {0.0, 0.5, 3.0, 100.0}) {
                const double x = y * s.scale(tt);
                const double expected =
                    xi * std::pow(s.d_coef, xi) * std::pow(selfsim_pdf(x, tt, q, s), 1.0 - q) * std::pow(tt, xi - 1.0);
                id = std::max(id, rel(black_scholes_d2(x, tt, p), expected));
            }
        }
    }
    c.detail << " identity " << fmt(id);
    c.require(id <= kD2Identity, "identity");
    report(7, "D2 coefficient", c);
}

void qcore_suite() {
    Check c;
    boost::math::quadrature::tanh_sinh<double> ts;
    double norm = 0.0;
    for (double q : {1.1, 1.5, 1.71, 2.0, 2.5, 2.73, 2.9}) {
        for (double beta : {0.1, 1.0, 10.0}) {
            const double total = 2.0 * ts.integrate(
                [&](double th, double thc) {
                    const double d = th > std::numbers::pi / 4 ? std::abs(thc) : std::numbers::pi / 2 - th;
                    const double s = std::sin(d);
                    if (s == 0.0) return 0.0;
                    const double log_x = std::log(std::cos(d)) - std::log(s) - 0.5 * std::log(beta);
                    const double log_a = std::log((q - 1.0) * beta) + 2.0 * log_x;
                    const double log1p_a = log_a > 40.0 ? log_a : std::log1p(std::exp(log_a));
                    const double log_g = 0.5 * std::log(beta) - std::log(c_q(q)) - log1p_a / (q - 1.0);
                    return std::exp(log_g - 2.0 * std::log(s) - 0.5 * std::log(beta));
                },
                0.0, std::numbers::pi / 2);
            norm = std::max(norm, std::abs(total - 1.0));
        }
    }
    c.detail << " normalization " << fmt(norm) << ";";
    c.require(norm < kNormTol, "normalization");

    double tail = 0.0;
    for (double q : {1.5, 2.0, 2.5}) {
        const QParams p{q, 1.0};
        const double slope = (log_qgauss_pdf(1e5, p) - log_qgauss_pdf(1e3, p)) / std::log(100.0);
        tail = std::max(tail, rel(slope, -2.0 / (q - 1.0)));
    }
    c.detail << " tail " << fmt(tail) << ";";
    c.require(tail <= kTailTol, "tail exponent");

    double gauss = 0.0;
    for (double beta : {0.5, 1.0, 3.0}) {
        for (int i = 0; i <= 2000; ++i) {
            const double x = -10.0 + 0.01 * i;
            const double var = 1.0 / (2.0 * beta);
            const double normal = std::exp(-x * x / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
            gauss = std::max(gauss, std::abs(qgauss_pdf(x, {1.0 + 1e-10, beta}) - normal));
        }
    }
    c.detail << " Gaussian limit " << fmt(gauss) << ";";
    c.require(gauss < kGaussTol, "Gaussian limit");

    const QParams p{1.5, 1.0};
    auto s = qgauss_sample(p, kSamples, 4004);
    std::sort(s.begin(), s.end());
    auto f = [&](double x) { return qgauss_pdf(x, p); };
    boost::math::quadrature::exp_sinh<double> es;
    double cdf = es.integrate(f, -std::numeric_limits<double>::infinity(), s.front());
    const double n = static_cast<double>(s.size());
    double ks = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i > 0) cdf += boost::math::quadrature::gauss<double, 7>::integrate(f, s[i - 1], s[i]);
        ks = std::max({ks, std::abs(cdf - static_cast<double>(i) / n), std::abs(cdf - static_cast<double>(i + 1) / n)});
    }
    c.detail << " KS " << fmt(ks);
    c.require(ks < kKsTol, "sampler KS distance");
    report(8, "q-Gaussian core", c);
}

void moment_scaling() {
    Check c;
    c.require(weak_run.moment_law.has_value(), "moment law");
    if (weak_run.moment_law) {
        const double a = weak_run.moment_law->alpha;
        c.detail << " exponent " << fmt(weak_run.moment_law->fit.exponent) << " -> alpha=" << fmt(a);
        c.require(a >= kMomentAlphaLo && a <= kMomentAlphaHi, "alpha range");
    }
    report(9, "second-moment scaling", c);
}

template <class F>
void guarded(int number, const std::string& name, F f) {
    try {
        f();
    } catch (const std::exception& e) {
        Check c;
        c.require(false, e.what());
        report(number, name, c);
    }
}

}  // namespace

int main() {
    guarded(1, "weak-regime round trip", weak_round_trip);
    guarded(2, "strong-regime round trip", strong_round_trip);
    guarded(3, "height power laws", height_laws);
    guarded(4, "boundary curve", boundary_curve);
    guarded(5, "Barenblatt verification", barenblatt_checks);
    guarded(6, "governing equation", governing_checks);
    guarded(7, "D2 coefficient", d2_checks);
    guarded(8, "q-Gaussian core", qcore_suite);
    guarded(9, "second-moment scaling", moment_scaling);
    std::printf("%d of 9 failed\n", failures);
    return failures == 0 ? 0 : 1;
}
