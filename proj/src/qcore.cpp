#include "qdiff/qcore.hpp"

#include "qdiff/error.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

namespace qdiff {

namespace {

constexpr double kPi = std::numbers::pi;

bool near_one(double q) { return std::abs(q - 1.0) < kQLimitTol; }

// Tail of the Stirling series for log Gamma(x), x >= ~100.
double stirling_tail(double x) {
    const double r = 1.0 / x;
    const double r2 = r * r;
    return r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 / 1680.0)));
}

void check_q_window(double q) {
    if (near_one(q)) return;
    if (!(q > 1.0 + kQLimitTol && q < 3.0 - kQLimitTol)) {
        throw DomainError("q = " + std::to_string(q) + " outside the normalizable window (1, 3)");
    }
}

// Uniform draw in the open interval (0, 1) with 53 random bits.
double open_uniform(std::mt19937_64& gen) {
    return (static_cast<double>(gen() >> 11) + 0.5) * 0x1p-53;
}

}  // namespace

bool QParams::is_gaussian() const { return gaussian_limit || near_one(q); }

void QParams::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) {
        throw DomainError("beta must be positive and finite, got " + std::to_string(beta));
    }
    if (gaussian_limit) {
        if (q != 1.0) throw DomainError("Gaussian-limit QParams must carry q = 1");
        return;
    }
    if (q == 1.0) throw DomainError("q = 1 requires QParams::gaussian()");
    check_q_window(q);
}

void ScalingLaw::validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw DomainError("alpha must be positive, got " + std::to_string(alpha));
    }
    if (!(d_coef > 0.0) || !std::isfinite(d_coef)) {
        throw DomainError("D must be positive, got " + std::to_string(d_coef));
    }
}

double ScalingLaw::scale(double t) const { return std::pow(d_coef * t, 1.0 / alpha); }

double q_exponential(double x, double q) {
    if (near_one(q)) return std::exp(x);
    const double base = 1.0 + (1.0 - q) * x;
    if (base <= 0.0) {
        return q < 1.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return std::exp(std::log(base) / (1.0 - q));
}

double q_logarithm(double x, double q) {
    if (near_one(q)) return std::log(x);
    return std::expm1((1.0 - q) * std::log(x)) / (1.0 - q);
}

double log_c_q(double q) {
    if (near_one(q)) return 0.5 * std::log(kPi);
    check_q_window(q);
    const double eps = q - 1.0;
    if (eps < 0.01) {
        // C_q = sqrt(pi/eps) Gamma(z - 1/2)/Gamma(z), z = 1/eps. The two
        // log-gammas are nearly equal here, so take their difference from the
        // Stirling series directly.
        const double z = 1.0 / eps;
        return 0.5 * std::log(kPi) + (z - 1.0) * std::log1p(-0.5 / z) + 0.5 +
               stirling_tail(z - 0.5) - stirling_tail(z);
    }
    return 0.5 * std::log(kPi / eps) + std::lgamma((3.0 - q) / (2.0 * eps)) -
           std::lgamma(1.0 / eps);
}

double c_q(double q) { return std::exp(log_c_q(q)); }

double log_qgauss_pdf(double x, const QParams& p) {
    p.validate();
    const double bx2 = p.beta * x * x;
    if (p.is_gaussian()) return 0.5 * std::log(p.beta / kPi) - bx2;
    const double eps = p.q - 1.0;
    return 0.5 * std::log(p.beta) - log_c_q(p.q) - std::log1p(eps * bx2) / eps;
}

double qgauss_pdf(double x, const QParams& p) { return std::exp(log_qgauss_pdf(x, p)); }

std::vector<double> qgauss_sample(const QParams& p, std::size_t n, std::uint64_t seed) {
    p.validate();
    if (n == 0) throw ValidationError("qgauss_sample: n must be at least 1");
    const double q = p.is_gaussian() ? 1.0 : p.q;
    // Z = sqrt(-2 ln_{q'} U1) cos(2 pi U2) is q-Gaussian with beta = 1/(3 - q).
    const double q_prime = (1.0 + q) / (3.0 - q);
    const double scale = 1.0 / std::sqrt(p.beta * (3.0 - q));
    std::mt19937_64 gen(seed);
    std::vector<double> out(n);
    for (auto& v : out) {
        const double u1 = open_uniform(gen);
        const double u2 = open_uniform(gen);
        const double radius = std::sqrt(-2.0 * q_logarithm(u1, q_prime));
        v = scale * radius * std::cos(2.0 * kPi * u2);
    }
    return out;
}

double selfsim_pdf(double x, double t, double q, const ScalingLaw& s) {
    if (!(t > 0.0)) throw DomainError("selfsim_pdf: time must be positive");
    s.validate();
    const double width = s.scale(t);
    const double y = x / width;
    if (near_one(q)) return std::exp(-y * y) / (std::sqrt(kPi) * width);
    check_q_window(q);
    const double eps = q - 1.0;
    return std::exp(-log_c_q(q) - std::log1p(eps * y * y) / eps) / width;
}

double xi_exponent(double q, double alpha) {
    if (!(alpha > 0.0)) throw DomainError("xi_exponent: alpha must be positive");
    return (3.0 - q) / alpha;
}

}  // namespace qdiff
