#ifndef QDIFF_QCORE_HPP
#define QDIFF_QCORE_HPP

#include <cstdint>
#include <vector>

namespace qdiff {

/// |q - 1| below this is treated as the Gaussian / exponential limit.
inline constexpr double kQLimitTol = 1e-8;

/// Shape (q) and inverse width (beta) of a q-Gaussian density.
///
/// Valid when 1 < q < 3 and beta > 0. The Gaussian (q = 1) member is only
/// reachable through QParams::gaussian(), or with q within kQLimitTol of 1.
struct QParams {
    double q = 1.5;
    double beta = 1.0;
    bool gaussian_limit = false;

    static QParams gaussian(double beta) { return {1.0, beta, true}; }

    bool is_gaussian() const;
    /// Throws DomainError when the pair is outside the normalizable window.
    void validate() const;
};

/// Self-similar time scaling: the width of the density grows as (D t)^(1/alpha).
struct ScalingLaw {
    double alpha = 2.0;
    double d_coef = 1.0;

    void validate() const;
    /// (D t)^(1/alpha)
    double scale(double t) const;
    bool is_superdiffusive() const { return alpha < 2.0; }
};

/// q-exponential [1 + (1-q) x]^(1/(1-q)).
///
/// Total function: exp(x) near q = 1; 0 past the cutoff for q < 1; +inf
/// past the pole for q > 1.
double q_exponential(double x, double q);

/// q-logarithm (x^(1-q) - 1)/(1-q), inverse of q_exponential on x > 0.
double q_logarithm(double x, double q);

/// Normalization constant C_q of the q-Gaussian; sqrt(pi) in the q -> 1 limit.
double c_q(double q);

/// log C_q, evaluated without overflow for q close to 1 or 3.
double log_c_q(double q);

/// q-Gaussian density sqrt(beta)/C_q * e_q(-beta x^2).
double qgauss_pdf(double x, const QParams& p);

/// log of qgauss_pdf, accurate far into the tails.
double log_qgauss_pdf(double x, const QParams& p);

/// n i.i.d. draws from the q-Gaussian, generalized Box-Muller method.
/// Deterministic for a fixed seed.
std::vector<double> qgauss_sample(const QParams& p, std::size_t n, std::uint64_t seed);

/// Self-similar q-Gaussian family P(x, t) = g_q(x / L; beta = 1) / L with
/// L = (D t)^(1/alpha).
double selfsim_pdf(double x, double t, double q, const ScalingLaw& s);

/// xi = (3 - q)/alpha, the exponent of the time map tau = (B t)^xi.
double xi_exponent(double q, double alpha);

}  // namespace qdiff

#endif
