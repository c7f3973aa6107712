#pragma once

#include "isocorr/fields.hpp"

#include <array>
#include <cmath>
#include <sstream>

namespace isocorr {

/// The n* = 3 unit directions of the rank-one decomposition, together with the
/// 3x3 frame matrix whose rows are (nu_x^2, nu_x nu_y, nu_y^2) and its inverse.
struct DirectionSet {
    std::array<Vec2, 3> nu;
    std::array<std::array<double, 3>, 3> frame;     ///< frame[row=component][col=k]
    std::array<std::array<double, 3>, 3> inverse;
    double det = 0.0;

    Mat2 rank_one(int k) const { return Mat2::outer(nu[k]); }
};

namespace detail {

inline double inv3x3(const std::array<std::array<double, 3>, 3>& m,
                     std::array<std::array<double, 3>, 3>& out) {
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if (det == 0.0) return 0.0;
    const double inv = 1.0 / det;
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv;
    return det;
}

inline std::array<double, 3> apply3(const std::array<std::array<double, 3>, 3>& m,
                                    const std::array<double, 3>& v) {
    return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

} // namespace detail

/// Equiangular frame at angles 0, pi/3, 2pi/3. Sum of the rank-one matrices is
/// (3/2) Id, so the identity decomposes with equal strictly positive weights.
inline DirectionSet standard_directions(int n = 2) {
    if (n != 2) throw PreconditionError("standard_directions: only n = 2 is supported");
    DirectionSet d;
    for (int k = 0; k < 3; ++k) {
        const double ang = k * M_PI / 3.0;
        d.nu[k] = Vec2{std::cos(ang), std::sin(ang)};
    }
    for (int k = 0; k < 3; ++k) {
        const Mat2 r = d.rank_one(k);
        d.frame[0][k] = r.xx;
        d.frame[1][k] = r.xy;
        d.frame[2][k] = r.yy;
    }
    d.det = detail::inv3x3(d.frame, d.inverse);
    return d;
}

/// Plain rank-one decomposition P = sum_k c_k nu_k (x) nu_k with c_k = a_k^2.
/// Exact 3x3 linear solve; fails when any coefficient is nonpositive.
inline std::array<double, 3> decompose_spd(const Mat2& P, const DirectionSet& dirs) {
    const std::array<double, 3> rhs = {P.xx, P.xy, P.yy};
    std::array<double, 3> c = detail::apply3(dirs.inverse, rhs);
    for (int k = 0; k < 3; ++k)
        if (!(c[k] > 0.0)) {
            std::ostringstream os;
            os << "decompose_spd: coefficient " << k + 1 << " nonpositive (" << c[k]
               << "), matrix outside the frame positivity radius";
            throw NotDecomposable(os.str());
        }
    return c;
}

/// Residual of the plain decomposition, for round-trip checks.
inline double decompose_residual(const Mat2& P, const std::array<double, 3>& c,
                                 const DirectionSet& dirs) {
    Mat2 sum{};
    for (int k = 0; k < 3; ++k) sum += c[k] * dirs.rank_one(k);
    return (sum - P).frobenius();
}

/// Matrix perturbations entering the perturbed decomposition
/// P = sum a_i^2 nu_i (x) nu_i + sum a_i Lambda_i + sum a_i a_j Theta_ij.
struct PerturbationData {
    std::array<Mat2, 3> Lambda{};
    std::array<std::array<Mat2, 3>, 3> Theta{};

    double budget() const {
        double s = 0.0;
        for (const Mat2& L : Lambda) s += L.frobenius();
        for (const auto& row : Theta)
            for (const Mat2& T : row) s += T.frobenius();
        return s;
    }
};

struct NewtonTrace {
    int steps = 0;
    std::vector<double> residuals;
};

/// Newton solve of the perturbed decomposition at one point. The seed defaults
/// to square roots of the plain decomposition; positivity of the coefficients
/// is maintained by step halving (up to 10 times per step).
inline std::array<double, 3> perturbed_decompose(const Mat2& P, const PerturbationData& pert,
                                                 const DirectionSet& dirs,
                                                 const std::array<double, 3>& seed,
                                                 double sigma0 = 0.1, const Mat2* P0 = nullptr,
                                                 NewtonTrace* trace = nullptr,
                                                 int max_steps = 25, double tol = 1e-10) {
    const Mat2 ref = P0 ? *P0 : Mat2::identity();
    const double budget = (P - ref).frobenius() + pert.budget();
    if (!(budget < sigma0)) {
        std::ostringstream os;
        os << "perturbed_decompose: smallness budget violated (" << budget << " >= " << sigma0 << ")";
        throw PreconditionError(os.str());
    }
    for (double s : seed)
        if (!(s > 0.0)) throw PreconditionError("perturbed_decompose: seed coefficients must be positive");

    auto residual = [&](const std::array<double, 3>& a) {
        Mat2 r = P * -1.0;
        for (int i = 0; i < 3; ++i) {
            r += (a[i] * a[i]) * dirs.rank_one(i);
            r += a[i] * pert.Lambda[i];
            for (int j = 0; j < 3; ++j) r += (a[i] * a[j]) * pert.Theta[i][j];
        }
        return r;
    };

    std::array<double, 3> a = seed;
    Mat2 F = residual(a);
    double fnorm = F.frobenius();
    if (trace) trace->residuals.push_back(fnorm);

    for (int step = 0; step < max_steps; ++step) {
        if (fnorm <= tol) {
            if (trace) trace->steps = step;
            return a;
        }
        // Jacobian dF/da_k as columns in (xx, xy, yy) coordinates.
        std::array<std::array<double, 3>, 3> J{};
        for (int k = 0; k < 3; ++k) {
            Mat2 col = (2.0 * a[k]) * dirs.rank_one(k) + pert.Lambda[k];
            for (int j = 0; j < 3; ++j) col += a[j] * (pert.Theta[k][j] + pert.Theta[j][k]);
            J[0][k] = col.xx;
            J[1][k] = col.xy;
            J[2][k] = col.yy;
        }
        std::array<std::array<double, 3>, 3> Jinv;
        const double det = detail::inv3x3(J, Jinv);
        if (std::abs(det) < 1e-14)
            throw JacobianSingular("perturbed_decompose: singular linearization");

        const std::array<double, 3> rhs = {F.xx, F.xy, F.yy};
        std::array<double, 3> delta = detail::apply3(Jinv, rhs);

        double scale = 1.0;
        bool accepted = false;
        for (int half = 0; half <= 10; ++half) {
            std::array<double, 3> cand = {a[0] - scale * delta[0], a[1] - scale * delta[1],
                                          a[2] - scale * delta[2]};
            if (cand[0] > 0.0 && cand[1] > 0.0 && cand[2] > 0.0) {
                a = cand;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) throw NoConvergence("perturbed_decompose: cannot keep coefficients positive");
        F = residual(a);
        fnorm = F.frobenius();
        if (trace) trace->residuals.push_back(fnorm);
    }
    if (fnorm <= tol) {
        if (trace) trace->steps = max_steps;
        return a;
    }
    std::ostringstream os;
    os << "perturbed_decompose: no convergence after " << max_steps << " steps (residual " << fnorm
       << ")";
    throw NoConvergence(os.str());
}

inline std::array<double, 3> perturbed_decompose(const Mat2& P, const PerturbationData& pert,
                                                 const DirectionSet& dirs, double sigma0 = 0.1) {
    std::array<double, 3> c = decompose_spd(P, dirs);
    std::array<double, 3> seed = {std::sqrt(c[0]), std::sqrt(c[1]), std::sqrt(c[2])};
    return perturbed_decompose(P, pert, dirs, seed, sigma0, nullptr);
}

/// Follow the solution branch from the plain decomposition by ramping the
/// perturbations: s * (Lambda, Theta) for increasing s, each solve seeded by
/// the previous one. Robust where one full-strength Newton overshoots the
/// positivity region; fails only when the branch itself dies.
inline std::array<double, 3> perturbed_decompose_homotopy(const Mat2& P,
                                                          const PerturbationData& pert,
                                                          const DirectionSet& dirs,
                                                          const std::array<double, 3>& seed,
                                                          double sigma0, const Mat2* P0) {
    try {
        return perturbed_decompose(P, pert, dirs, seed, sigma0, P0);
    } catch (const NumericalError&) {
    }
    for (int steps = 4; steps <= 32; steps *= 2) {
        std::array<double, 3> cur = seed;
        bool ok = true;
        for (int s = 1; s <= steps && ok; ++s) {
            const double frac = static_cast<double>(s) / steps;
            PerturbationData scaled;
            for (int i = 0; i < 3; ++i) {
                scaled.Lambda[i] = frac * pert.Lambda[i];
                for (int j = 0; j < 3; ++j) scaled.Theta[i][j] = frac * pert.Theta[i][j];
            }
            try {
                cur = perturbed_decompose(P, scaled, dirs, cur, sigma0, P0);
            } catch (const NumericalError&) {
                ok = false;
            }
        }
        if (ok) return cur;
    }
    throw NoConvergence("perturbed_decompose_homotopy: branch lost before full perturbation");
}

} // namespace isocorr
