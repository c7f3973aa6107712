#pragma once

#include "isocorr/extend.hpp"
#include "isocorr/stage.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace isocorr {

// ---------------------------------------------------------------------------
// Rigidity / flexibility gap
// ---------------------------------------------------------------------------

/// Per-node values of <du(nu), Lbar(X,X)> and L(X,X) along Sigma, for the unit
/// tangent X. Their difference is the connection gap: zero for smooth
/// isometries, the admissibility margin for the corrugated extensions.
struct GapReport {
    std::vector<double> connection; ///< <d/ds du(X), du(nu)> per Sigma node
    std::vector<double> second_form; ///< L(X,X)
    double min_gap = 0.0;
    double max_gap = 0.0;
};

/// Gauss-formula probe along Sigma: differentiate the unit tangent image
/// along the curve and project onto du(nu), read from the first collar rows.
inline GapReport connection_gap(const MapField& u, const SigmaData& sd, const CollarChart& collar) {
    const Grid& g = u.grid();
    const int m = u.dim();
    const double hx = g.dx();

    // du(X) = d_x u / sqrt(G0) on the Sigma row, then d/ds = (1/sqrt(G0)) d/dx.
    std::vector<double> T(static_cast<std::size_t>(g.nx) * m);
    for (int i = 0; i < g.nx; ++i) {
        const int ip = wrap_index(i + 1, g.nx), im = wrap_index(i - 1, g.nx);
        const double g0 = collar.G.at(i, 0);
        for (int k = 0; k < m; ++k)
            T[static_cast<std::size_t>(i) * m + k] =
                (u.at(ip, 0, k) - u.at(im, 0, k)) / (2.0 * hx * std::sqrt(g0));
    }

    GapReport rep;
    rep.connection.resize(g.nx);
    rep.second_form.resize(g.nx);
    rep.min_gap = std::numeric_limits<double>::max();
    rep.max_gap = -std::numeric_limits<double>::max();
    for (int i = 0; i < g.nx; ++i) {
        const int ip = wrap_index(i + 1, g.nx), im = wrap_index(i - 1, g.nx);
        const double g0 = collar.G.at(i, 0);
        double dot = 0.0;
        for (int k = 0; k < m; ++k) {
            const double dTds = (T[static_cast<std::size_t>(ip) * m + k] -
                                 T[static_cast<std::size_t>(im) * m + k]) /
                                (2.0 * hx * std::sqrt(g0));
            // du(nu) = d_t u at t = 0, one-sided second order
            const double N =
                (-3.0 * u.at(i, 0, k) + 4.0 * u.at(i, 1, k) - u.at(i, 2, k)) / (2.0 * g.dy());
            dot += dTds * N;
        }
        rep.connection[i] = dot;
        rep.second_form[i] = sd.L[i] / g0;
        const double gap = dot - rep.second_form[i];
        rep.min_gap = std::min(rep.min_gap, gap);
        rep.max_gap = std::max(rep.max_gap, gap);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Empirical Holder exponent
// ---------------------------------------------------------------------------

/// Modulus of continuity at each ladder radius: max |f(x) - f(y)| over node
/// pairs at that separation (axes and diagonals).
inline std::vector<double> modulus_ladder(const FieldView& f, const std::vector<double>& ladder) {
    std::vector<double> out;
    out.reserve(ladder.size());
    for (double r : ladder) out.push_back(holder_seminorm(f, 1.0, {r}) * r);
    return out;
}

/// Log-log fit of the modulus of continuity. Throws FitDegenerate when the
/// moduli vanish (constant input).
inline SlopeFit holder_exponent_estimate(const FieldView& f, const std::vector<double>& ladder) {
    const std::vector<double> mods = modulus_ladder(f, ladder);
    for (double m : mods)
        if (m < 1e-14) throw FitDegenerate("holder_exponent_estimate: vanishing modulus");
    return fit_log_slope(ladder, mods);
}

template <class Field>
SlopeFit holder_exponent_estimate(const Field& f, const std::vector<double>& ladder) {
    return holder_exponent_estimate(f.view(), ladder);
}

// ---------------------------------------------------------------------------
// Stage certificates
// ---------------------------------------------------------------------------

struct CertEntry {
    std::string name;
    double measured = 0.0;
    double bound = 0.0; ///< the scaling with constants normalized to one
    double ratio = 0.0; ///< measured / bound: the fitted constant
};

/// One stage: each estimate as a measured/bound ratio.
inline std::vector<CertEntry> stage_certificate(const StageCertificate& c) {
    auto entry = [](const std::string& n, double m, double b) {
        return CertEntry{n, m, b, b > 0.0 ? m / b : 0.0};
    };
    return {
        entry("du_c0", c.du_c0, c.bound_du_c0), entry("du_c1", c.du_c1, c.bound_du_c1),
        entry("v_c2", c.v_c2, c.bound_v_c2),    entry("err_c0", c.err_c0, c.bound_err_c0),
        entry("err_c1", c.err_c1, c.bound_err_c1),
    };
}

struct LadderSlopes {
    SlopeFit err_c0;  ///< expected 2 - 2 tau
    SlopeFit du_c0;   ///< expected -tau
    SlopeFit v_c2;    ///< expected +tau
    double du_c1_spread = 0.0; ///< max/min of the lambda-free estimate across the ladder
};

/// Slope fits across a lambda ladder of stage certificates.
inline LadderSlopes ladder_slopes(const std::vector<StageCertificate>& certs) {
    if (certs.size() < 2) throw PreconditionError("ladder_slopes: need at least two rungs");
    std::vector<double> lambdas, e0, d0, v2, d1;
    for (const auto& c : certs) {
        lambdas.push_back(c.lambda);
        e0.push_back(c.err_c0);
        d0.push_back(c.du_c0);
        v2.push_back(c.v_c2);
        d1.push_back(c.du_c1);
    }
    LadderSlopes out;
    out.err_c0 = fit_log_slope(lambdas, e0);
    out.du_c0 = fit_log_slope(lambdas, d0);
    out.v_c2 = fit_log_slope(lambdas, v2);
    const auto [mn, mx] = std::minmax_element(d1.begin(), d1.end());
    out.du_c1_spread = *mn > 0.0 ? *mx / *mn : std::numeric_limits<double>::infinity();
    return out;
}

} // namespace isocorr
