#include "qdiff/synth.hpp"

#include "qdiff/error.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <cmath>
#include <random>

namespace qdiff {

namespace {

// Mass of the unit (beta = 1) q-Gaussian inside |y| < c. With
// z = (q-1) y^2 / (1 + (q-1) y^2) the density maps onto a Beta(1/2, 1/(q-1) - 1/2) law.
double central_mass(double q, double c) {
    const double e = q - 1.0;
    const double z = e * c * c / (1.0 + e * c * c);
    return boost::math::ibeta(0.5, 1.0 / e - 0.5, z);
}

double bump_excess(const TwoRegimeSpec& s, double x, double t) {
    return s.bump_weight * selfsim_pdf(x, t, s.strong_q, s.strong) -
           (1.0 - s.bump_weight) * selfsim_pdf(x, t, s.weak_q, s.weak);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

ReturnEnsemble synth_selfsim(double q, const ScalingLaw& s, double lag, std::size_t n,
                             std::uint64_t seed) {
    s.validate();
    if (!(lag > 0.0)) throw ValidationError("synth: lag must be positive");
    QParams p{q, 1.0};
    if (std::abs(q - 1.0) < kQLimitTol) p = QParams::gaussian(1.0);
    ReturnEnsemble e;
    e.lag = lag;
    e.returns = qgauss_sample(p, n, seed);
    const double width = s.scale(lag);
    for (auto& v : e.returns) v *= width;
    return e;
}

void TwoRegimeSpec::validate() const {
    strong.validate();
    weak.validate();
    QParams{strong_q, 1.0}.validate();
    QParams{weak_q, 1.0}.validate();
    if (!(bump_weight > 0.0 && bump_weight < 1.0)) throw ValidationError("two-regime: bump weight must lie in (0, 1)");
    if (!(t_bump_end > 0.0)) throw ValidationError("two-regime: bump end must be positive");
}

nlohmann::json TwoRegimeSpec::to_json() const {
    return {{"strong_q", strong_q}, {"strong_alpha", strong.alpha}, {"strong_d", strong.d_coef},
            {"weak_q", weak_q},     {"weak_alpha", weak.alpha},     {"weak_d", weak.d_coef},
            {"bump_weight", bump_weight}, {"t_bump_end", t_bump_end}};
}

TwoRegimeSpec TwoRegimeSpec::from_json(const nlohmann::json& j) {
    TwoRegimeSpec s;
    s.strong_q = j.at("strong_q").get<double>();
    s.strong = {j.at("strong_alpha").get<double>(), j.at("strong_d").get<double>()};
    s.weak_q = j.at("weak_q").get<double>();
    s.weak = {j.at("weak_alpha").get<double>(), j.at("weak_d").get<double>()};
    s.bump_weight = j.at("bump_weight").get<double>();
    s.t_bump_end = j.at("t_bump_end").get<double>();
    return s;
}

double two_regime_edge(const TwoRegimeSpec& spec, double t) {
    spec.validate();
    if (!(t > 0.0) || t >= spec.t_bump_end) throw DomainError("two_regime_edge: no bump at this lag");
    if (!(bump_excess(spec, 0.0, t) > 0.0)) {
        throw DomainError("two_regime_edge: strong component does not dominate the centre");
    }
    // March outward to the first sign change, then bisect.
    const double limit = 100.0 * spec.weak.scale(t);
    double lo = 1e-6 * std::min(spec.strong.scale(t), spec.weak.scale(t));
    double hi = lo;
    while (bump_excess(spec, hi, t) > 0.0) {
        lo = hi;
        hi *= 1.05;
        if (hi > limit) throw DomainError("two_regime_edge: densities do not cross");
    }
    for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (bump_excess(spec, mid, t) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double two_regime_pdf(double x, double t, const TwoRegimeSpec& spec) {
    spec.validate();
    const double weak = selfsim_pdf(x, t, spec.weak_q, spec.weak);
    if (t >= spec.t_bump_end) return weak;
    const double edge = two_regime_edge(spec, t);
    const double w = spec.bump_weight;
    double out = (1.0 - w) * weak;
    if (std::abs(x) < edge) {
        const double inside = central_mass(spec.strong_q, edge / spec.strong.scale(t));
        out += w * selfsim_pdf(x, t, spec.strong_q, spec.strong) / inside;
    }
    return out;
}

ReturnEnsemble synth_two_regime(const TwoRegimeSpec& spec, double lag, std::size_t n,
                                std::uint64_t seed) {
    spec.validate();
    if (n == 0) throw ValidationError("synth: n must be at least 1");
    if (lag >= spec.t_bump_end) return synth_selfsim(spec.weak_q, spec.weak, lag, n, seed);

    const double edge = two_regime_edge(spec, lag);
    std::mt19937_64 gen(derive_seed(seed, 0));
    std::bernoulli_distribution pick(spec.bump_weight);
    std::size_t n_strong = 0;
    std::vector<bool> strong(n);
    for (std::size_t i = 0; i < n; ++i) {
        strong[i] = pick(gen);
        n_strong += strong[i] ? 1 : 0;
    }
    auto weak = synth_selfsim(spec.weak_q, spec.weak, lag, n, derive_seed(seed, 1));

    // Strong draws outside the bump are rejected and redrawn in batches.
    std::vector<double> bump;
    bump.reserve(n_strong);
    for (std::uint64_t batch = 2; bump.size() < n_strong; ++batch) {
        const std::size_t want = n_strong - bump.size();
        auto draws = synth_selfsim(spec.strong_q, spec.strong, lag, want + want / 2 + 16, derive_seed(seed, batch));
        for (double v : draws.returns) {
            if (std::abs(v) < edge && bump.size() < n_strong) bump.push_back(v);
        }
    }
    ReturnEnsemble e;
    e.lag = lag;
    e.returns.resize(n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) e.returns[i] = strong[i] ? bump[k++] : weak.returns[i];
    return e;
}

}  // namespace qdiff
