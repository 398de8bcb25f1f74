#ifndef QDIFF_SYNTH_HPP
#define QDIFF_SYNTH_HPP

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "qdiff/ingest.hpp"
#include "qdiff/qcore.hpp"

namespace qdiff {

/// Independent seed for stream `stream` of a run seeded with `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// n draws from selfsim_pdf(., lag): unit q-Gaussian samples scaled by (D t)^(1/alpha).
ReturnEnsemble synth_selfsim(double q, const ScalingLaw& s, double lag, std::size_t n,
                             std::uint64_t seed);

/// Two-regime returns: for t < t_bump_end a fraction `bump_weight` of the
/// samples comes from the strong family confined to the bump |x| < x_b(t),
/// the rest from the weak family; afterwards only the weak family remains.
/// x_b(t) is the innermost point where the two weighted densities cross,
///     w g_strong(x, t) = (1 - w) g_weak(x, t).
struct TwoRegimeSpec {
    double strong_q = 2.73;
    ScalingLaw strong{1.26, 4.8e-3};
    double weak_q = 1.71;
    ScalingLaw weak{1.79, 0.1118};
    double bump_weight = 0.5;
    double t_bump_end = 78.0;

    void validate() const;
    nlohmann::json to_json() const;
    static TwoRegimeSpec from_json(const nlohmann::json& j);
};

/// Bump edge x_b(t); throws DomainError for t >= t_bump_end or when the
/// strong family never dominates at the centre.
double two_regime_edge(const TwoRegimeSpec& spec, double t);

/// Exact density of synth_two_regime at lag t.
double two_regime_pdf(double x, double t, const TwoRegimeSpec& spec);

ReturnEnsemble synth_two_regime(const TwoRegimeSpec& spec, double lag, std::size_t n,
                                std::uint64_t seed);

}  // namespace qdiff

#endif
