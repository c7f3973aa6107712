#pragma once

#include "isocorr/stage.hpp"

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace isocorr {

// ---------------------------------------------------------------------------
// Parameter schedule
// ---------------------------------------------------------------------------

/// Geometric parameter schedule lambda_{q+1} = lambda_q^b with
/// lambda_1 = A delta_1^{-1/(2 theta)}. The error sizes follow
/// delta_{q+1} = (lambda_{q+1}/A)^{-2 theta} capped at delta_q / 4; the cap
/// keeps the ordering delta_{q+1} <= delta_q / 4 that the convergence argument
/// consumes, at frequency growth rates reachable on a grid.
struct IterSchedule {
    double A = 32.0;
    double b = 1.1;
    double theta = 0.45;
    std::vector<double> deltas;  ///< deltas[q-1] = delta_q, q = 1..q_count
    std::vector<double> lambdas; ///< lambdas[q-1] = lambda_q
    std::vector<bool> lambda_ordering_ok; ///< lambda_{q+1} >= 2 lambda_q
    std::vector<bool> delta_cap_active;   ///< the delta_q/4 cap was binding

    int count() const { return static_cast<int>(deltas.size()); }
    double delta(int q) const { return deltas.at(q - 1); }
    double lambda(int q) const { return lambdas.at(q - 1); }
    /// r_q = lambda_{q+1}^{-1}
    double r(int q) const { return 1.0 / lambda(q + 1); }
    /// Stage frequency exponent tau = 1 + (1-theta)(b-1)/b.
    double tau() const { return 1.0 + (1.0 - theta) * (b - 1.0) / b; }
};

inline IterSchedule build_schedule(double A, double b, double theta, double delta1, int q_max,
                                   bool enforce_ordering = false, double A0 = 1.0) {
    if (!(A >= A0)) throw PreconditionError("build_schedule: A below the configured floor");
    if (!(b > 1.0)) throw PreconditionError("build_schedule: b must exceed 1");
    if (!(theta > 0.0 && theta < 0.5)) throw PreconditionError("build_schedule: theta must lie in (0, 1/2)");
    if (!(delta1 > 0.0 && delta1 < 1.0)) throw PreconditionError("build_schedule: delta_1 must lie in (0,1)");

    IterSchedule s;
    s.A = A;
    s.b = b;
    s.theta = theta;
    const int count = q_max + 3; // stages consume delta_{q+2}, lambda_{q+2}
    s.deltas.resize(count);
    s.lambdas.resize(count);
    s.lambda_ordering_ok.assign(count, true);
    s.delta_cap_active.assign(count, false);

    s.deltas[0] = delta1;
    s.lambdas[0] = A * std::pow(delta1, -1.0 / (2.0 * theta));
    for (int q = 1; q < count; ++q) {
        s.lambdas[q] = std::pow(s.lambdas[q - 1], b);
        const double formula = std::pow(s.lambdas[q] / A, -2.0 * theta);
        const double cap = s.deltas[q - 1] / 4.0;
        s.deltas[q] = std::min(formula, cap);
        s.delta_cap_active[q] = cap < formula;
        s.lambda_ordering_ok[q] = s.lambdas[q] >= 2.0 * s.lambdas[q - 1];
        if (enforce_ordering && !s.lambda_ordering_ok[q]) {
            std::ostringstream os;
            os << "build_schedule: lambda_" << q + 1 << " < 2 lambda_" << q
               << "; A too small for the ordering";
            throw OrderingViolated(os.str());
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Cutoffs
// ---------------------------------------------------------------------------

namespace detail {

inline double smoothstep5(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

inline double ramp_up(double s, double lo, double hi) { return smoothstep5((s - lo) / (hi - lo)); }
inline double ramp_down(double s, double lo, double hi) { return 1.0 - ramp_up(s, lo, hi); }

} // namespace detail

/// Cutoff profiles of the iteration. phi-profiles gate on rho against the
/// next error size; psi-profiles gate on distance to the target set. The
/// tilde variants plateau over the supports of the plain ones.
inline double profile_phi(double s) { return detail::ramp_up(s, 1.7, 2.0); }
inline double profile_phi_tilde(double s) { return detail::ramp_up(s, 1.5, 1.7); }
inline double profile_psi(double s) { return detail::ramp_down(s, 0.6, 0.8); }
inline double profile_psi_tilde(double s) { return detail::ramp_down(s, 0.85, 1.0); }

/// Where the iteration is asked to become isometric: the whole chart or an
/// axis-aligned skeleton (vertices or grid lines of a coarse macro mesh).
struct TargetSet {
    enum class Kind { WholeChart, SkeletonVertices, SkeletonLines };
    Kind kind = Kind::WholeChart;
    int cells = 4;

    ScalarField distance_field(const Grid& g) const {
        ScalarField d(g);
        if (kind == Kind::WholeChart) return d;
        const double px = g.len_x / cells, py = g.len_y / cells;
        auto axis_dist = [](double v, double pitch) {
            const double r = v - pitch * std::round(v / pitch);
            return std::abs(r);
        };
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const double ax = axis_dist(g.x(i), px), ay = axis_dist(g.y(j), py);
                d.at(i, j) = kind == Kind::SkeletonVertices ? std::hypot(ax, ay) : std::min(ax, ay);
            }
        return d;
    }
};

struct CutoffPair {
    ScalarField chi;
    ScalarField chi_tilde;
    double grad_chi_max = 0.0;
    bool nesting_ok = true; ///< supp chi inside {chi_tilde = 1}
};

namespace detail {

// Corrugation phases do not wrap a periodic chart (the direction frame has
// irrational frequency ratios), so on periodic axes each stage keeps its
// support away from a seam cross; stages of the other parity shift the seam
// by half a period, so the two window families cover the chart.
inline double seam_distance(const Grid& g, double x, double y, int parity) {
    double d = std::numeric_limits<double>::max();
    if (g.periodic_x) {
        const double s = parity % 2 == 0 ? 0.0 : 0.5 * g.len_x;
        double r = std::fmod(std::abs(x - s), g.len_x);
        d = std::min(d, std::min(r, g.len_x - r));
    }
    if (g.periodic_y) {
        const double s = parity % 2 == 0 ? 0.0 : 0.5 * g.len_y;
        double r = std::fmod(std::abs(y - s), g.len_y);
        d = std::min(d, std::min(r, g.len_y - r));
    }
    return d;
}

} // namespace detail

inline CutoffPair build_cutoffs(const ScalarField& rho_q, const TargetSet& S,
                                const IterSchedule& sched, int q, double seam_margin_frac = 0.05) {
    const Grid& g = rho_q.grid();
    const double sqrt_d2 = std::sqrt(sched.delta(q + 2));
    const double r_next = sched.r(q + 1);
    if (S.kind != TargetSet::Kind::WholeChart && r_next < 4.0 * g.h_max())
        throw ResolutionError("build_cutoffs: cutoff scale below 4h, unresolvable");

    const bool seam = g.periodic_x || g.periodic_y;
    const double margin = std::min(
        std::max({6.0 * g.h_max(), 2.0 / sched.lambda(q + 2),
                  seam_margin_frac * std::min(g.len_x, g.len_y)}),
        0.125 * std::min(g.len_x, g.len_y));

    const ScalarField dist = S.distance_field(g);
    CutoffPair out{ScalarField(g), ScalarField(g), 0.0, true};
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const double s1 = rho_q.at(i, j) / sqrt_d2;
            const double s2 = dist.at(i, j) / r_next;
            double w = 1.0, wt = 1.0;
            if (seam) {
                const double d = detail::seam_distance(g, g.x(i), g.y(j), q);
                w = detail::ramp_up(d, margin, 2.0 * margin);
                wt = detail::ramp_up(d, 0.5 * margin, 0.95 * margin);
            }
            out.chi.at(i, j) = profile_phi(s1) * profile_psi(s2) * w;
            out.chi_tilde.at(i, j) = profile_phi_tilde(s1) * profile_psi_tilde(s2) * wt;
            if (out.chi.at(i, j) > 0.0 && out.chi_tilde.at(i, j) < 1.0) out.nesting_ok = false;
        }
    out.grad_chi_max = sup_norm(gradient(out.chi));
    return out;
}

/// rho_{q+1}^2 = rho_q^2 (1 - chi_q^2) + delta_{q+2} chi_q^2
inline ScalarField rho_update(const ScalarField& rho_q, const ScalarField& chi_q, double delta_q2) {
    ScalarField out(rho_q.grid());
    for (std::size_t n = 0; n < out.raw().size(); ++n) {
        const double r2 = rho_q.raw()[n] * rho_q.raw()[n];
        const double c2 = chi_q.raw()[n] * chi_q.raw()[n];
        out.raw()[n] = std::sqrt(r2 * (1.0 - c2) + delta_q2 * c2);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adapted triples and the inductive step
// ---------------------------------------------------------------------------

/// Short map together with the defect factorization g - u#e = rho^2 (g + h).
struct AdaptedTriple {
    MapField u;
    ScalarField rho;
    SymMatrixField h;
    SymMatrixField G;   ///< background metric on the chart
    double theta = 0.45;
    double A = 32.0;

    /// Sup over nodes of |G - Du^T Du - rho^2 (G + h)| (Frobenius).
    double defect_identity_error() const {
        const SymMatrixField pb = pullback_metric(u);
        const Grid& g = u.grid();
        double worst = 0.0;
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const double r2 = rho.at(i, j) * rho.at(i, j);
                const Mat2 res = G.at(i, j) - pb.at(i, j) - r2 * (G.at(i, j) + h.at(i, j));
                worst = std::max(worst, res.frobenius());
            }
        return worst;
    }

    /// Sup of |g - u#e| itself, the quantity driven to zero.
    double defect_sup() const {
        const SymMatrixField pb = pullback_metric(u);
        const Grid& g = u.grid();
        double worst = 0.0;
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i)
                worst = std::max(worst, (G.at(i, j) - pb.at(i, j)).frobenius());
        return worst;
    }

    /// Checks the structural invariants: identity residual within tol,
    /// -g/2 <= h <= g/2, rho >= 0.
    void validate(double tol = 1e-8) const {
        const Grid& g = u.grid();
        for (double r : rho.raw())
            if (r < 0.0) throw PreconditionError("AdaptedTriple: rho must be nonnegative");
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const Mat2 lo = h.at(i, j) + 0.5 * G.at(i, j);
                const Mat2 hi = 0.5 * G.at(i, j) - h.at(i, j);
                if (lo.eigenvalues()[0] < -1e-9 || hi.eigenvalues()[0] < -1e-9)
                    throw PreconditionError("AdaptedTriple: h outside [-g/2, g/2]");
            }
        const double err = defect_identity_error();
        if (err > tol) {
            std::ostringstream os;
            os << "AdaptedTriple: defect identity residual " << err << " exceeds " << tol;
            throw PreconditionError(os.str());
        }
    }
};

/// Stage-level knobs threaded through the iteration.
struct IterExtras {
    double gamma = 4.0;
    double sigma0 = 0.1;
    // tau sits close to one inside the iteration, so the cutoff constant must
    // stay near one for eps < delta to be satisfiable at grid-scale lambdas
    double C0 = 1.0;
    double lambda0 = 1.0;
    double stage_C = 1.0;  ///< multiplier on lambda_{q+2} handed to the stage
    double seam_margin_frac = 0.05; ///< seam window width on periodic charts
    bool enforce = false;  ///< stage preconditions checked and reported, not fatal
    bool keep_internals = false;
    bool keep_snapshots = false; ///< retain the per-level triples in the report
};

struct StageRow {
    int q = 0;
    bool acted = false;          ///< false when chi_q vanished identically
    double du_c0 = 0.0, du_c1 = 0.0;
    double rho_max = 0.0;
    double defect_sup = 0.0;
    double defect_identity = 0.0;
    double delta_stage = 0.0, lambda_stage = 0.0;
    StageCertificate certificate;
};

struct ConvergenceReport {
    std::vector<StageRow> rows;
    std::vector<AdaptedTriple> snapshots; ///< per-level triples when requested
    double final_defect = 0.0;
    double final_identity_error = 0.0;
    double holder_exponent = 0.0;
    double holder_residual = 0.0;
    bool locality_exact = true; ///< untouched nodes bit-identical to the input triple
    std::string note;           ///< set when the run stopped early
};

struct InductiveStepResult {
    AdaptedTriple triple;
    CutoffPair cutoffs;
    std::optional<StageResult> stage;
};

/// One inductive step: cutoffs, localized amplitude and tensor, one stage,
/// then the rho / h updates. Unchanged (bit-identical) outside supp chi~.
inline InductiveStepResult inductive_step(const AdaptedTriple& t, const IterSchedule& sched, int q,
                                          const TargetSet& S, const IterExtras& x = {}) {
    const Grid& g = t.u.grid();
    CutoffPair cut = build_cutoffs(t.rho, S, sched, q, x.seam_margin_frac);

    double chi_max = 0.0;
    for (double c : cut.chi.raw()) chi_max = std::max(chi_max, c);
    if (chi_max == 0.0) return {t, std::move(cut), std::nullopt};

    const double d_q2 = sched.delta(q + 2);
    ScalarField rho_loc(g);
    SymMatrixField h_loc(g);
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const double chi = cut.chi.at(i, j);
            const double chit = cut.chi_tilde.at(i, j);
            const double r2 = t.rho.at(i, j) * t.rho.at(i, j);
            if (chi > 0.0) rho_loc.at(i, j) = chi * std::sqrt(std::max(r2 - d_q2, 0.0));
            if (chit > 0.0 && r2 > d_q2) h_loc.set(i, j, (chit * r2 / (r2 - d_q2)) * t.h.at(i, j));
        }

    StageParams sp;
    sp.delta = std::min(4.0 * sched.delta(q + 1), 0.99);
    sp.lambda = x.stage_C * sched.lambda(q + 2);
    sp.tau = sched.tau();
    sp.gamma = x.gamma;
    sp.sigma0 = x.sigma0;
    sp.C0 = x.C0;
    sp.lambda0 = x.lambda0;
    sp.enforce = x.enforce;
    sp.keep_internals = x.keep_internals;
    // phase wrap on the seam of this stage's window
    if (g.periodic_x && q % 2 != 0) sp.phase_origin_x = 0.5 * g.len_x;
    if (g.periodic_y && q % 2 != 0) sp.phase_origin_y = 0.5 * g.len_y;

    StageResult stage = perform_stage(t.u, rho_loc, h_loc, t.G, sp);

    AdaptedTriple next{std::move(stage.v), rho_update(t.rho, cut.chi, d_q2), SymMatrixField(g), t.G,
                       t.theta / (sched.b * sched.b), std::pow(t.A, sched.b * sched.b)};

    // Blowup guard from the rho bound on supp chi~.
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            if (cut.chi_tilde.at(i, j) > 0.0 &&
                next.rho.at(i, j) * next.rho.at(i, j) < d_q2 * (1.0 - 1e-9)) {
                std::ostringstream os;
                os << "inductive_step: rho_{q+1}^2 below delta_{q+2} at node (" << i << ", " << j
                   << ")";
                throw DefectBlowup(os.str());
            }

    // h_{q+1} = ((1 - chi^2) rho^2 h - E) / rho_{q+1}^2, which conserves the
    // defect identity exactly against the measured stage error.
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const double rn2 = next.rho.at(i, j) * next.rho.at(i, j);
            if (rn2 == 0.0) {
                next.h.set(i, j, t.h.at(i, j));
                continue;
            }
            const double chi2 = cut.chi.at(i, j) * cut.chi.at(i, j);
            const double r2 = t.rho.at(i, j) * t.rho.at(i, j);
            const Mat2 num = ((1.0 - chi2) * r2) * t.h.at(i, j) - stage.error.at(i, j);
            next.h.set(i, j, (1.0 / rn2) * num);
        }

    return {std::move(next), std::move(cut), std::move(stage)};
}

/// Run Q_max inductive steps, reporting per-stage norms and the final state.
inline std::pair<AdaptedTriple, ConvergenceReport> iterate_to_isometry(const AdaptedTriple& t0,
                                                                       const IterSchedule& sched,
                                                                       const TargetSet& S, int q_max,
                                                                       const IterExtras& x = {}) {
    AdaptedTriple cur = t0;
    ConvergenceReport rep;
    std::vector<char> touched(t0.u.grid().nodes(), 0);

    for (int q = 0; q < q_max; ++q) {
        StageRow row;
        row.q = q;
        try {
            InductiveStepResult step = inductive_step(cur, sched, q, S, x);
            row.acted = step.stage.has_value();
            if (row.acted) {
                const MapField diff = map_axpy(step.triple.u, -1.0, cur.u);
                row.du_c0 = sup_norm(diff);
                row.du_c1 = ck_norm(diff, 1);
                row.certificate = step.stage->certificate;
                row.delta_stage = step.stage->certificate.delta;
                row.lambda_stage = step.stage->certificate.lambda;
            }
            // the amplitude mollification smears the stage's footprint past
            // supp chi~ by its kernel radius, so dilate the audit mask
            const Grid& g = cur.u.grid();
            int smear = 1;
            if (row.acted)
                smear += static_cast<int>(
                    std::ceil(step.stage->certificate.ell_b / std::min(g.dx(), g.dy())));
            for (int j = 0; j < g.ny; ++j)
                for (int i = 0; i < g.nx; ++i) {
                    if (step.cutoffs.chi_tilde.at(i, j) <= 0.0) continue;
                    for (int bj = -smear; bj <= smear; ++bj)
                        for (int bi = -smear; bi <= smear; ++bi) {
                            int ii = i + bi, jj = j + bj;
                            if (g.periodic_x)
                                ii = wrap_index(ii, g.nx);
                            else if (ii < 0 || ii >= g.nx)
                                continue;
                            if (g.periodic_y)
                                jj = wrap_index(jj, g.ny);
                            else if (jj < 0 || jj >= g.ny)
                                continue;
                            touched[g.idx(ii, jj)] = 1;
                        }
                }
            cur = std::move(step.triple);
            row.rho_max = *std::max_element(cur.rho.raw().begin(), cur.rho.raw().end());
            row.defect_sup = cur.defect_sup();
            row.defect_identity = cur.defect_identity_error();
            rep.rows.push_back(row);
            if (x.keep_snapshots) rep.snapshots.push_back(cur);
        } catch (const Error& e) {
            rep.note = std::string("stopped at q = ") + std::to_string(q) + ": " + e.what();
            rep.rows.push_back(row);
            break;
        }
    }

    rep.final_defect = cur.defect_sup();
    rep.final_identity_error = cur.defect_identity_error();

    // Locality audit: nodes never under a chi~ support must be bit-identical.
    {
        const Grid& g = cur.u.grid();
        for (int j = 0; j < g.ny && rep.locality_exact; ++j)
            for (int i = 0; i < g.nx; ++i) {
                if (touched[g.idx(i, j)]) continue;
                for (int k = 0; k < cur.u.dim(); ++k)
                    if (cur.u.at(i, j, k) != t0.u.at(i, j, k)) {
                        rep.locality_exact = false;
                        break;
                    }
                if (cur.rho.at(i, j) != t0.rho.at(i, j)) rep.locality_exact = false;
                if (!rep.locality_exact) break;
            }
    }

    // Empirical Holder exponent of the final gradient.
    try {
        const JacobianField J = jacobian(cur.u);
        const std::vector<double> ladder = default_radius_ladder(cur.u.grid());
        std::vector<double> mods;
        for (double r : ladder) mods.push_back(holder_seminorm(J.view(), 1.0, {r}) * r);
        const SlopeFit fit = fit_log_slope(ladder, mods);
        rep.holder_exponent = fit.slope;
        rep.holder_residual = fit.residual;
    } catch (const Error&) {
        rep.holder_exponent = 0.0;
    }

    return {std::move(cur), std::move(rep)};
}

// ---------------------------------------------------------------------------
// Flat-chart global embedding demo
// ---------------------------------------------------------------------------

struct EmbedDemoConfig {
    double theta = 0.45;
    double b = 1.1;
    double A = 32.0;
    int q_max = 4;
    double eps_target = 0.5;     ///< proximity |u_final - u_0|
    double delta1_target = 0.2;  ///< scale shrink target for the initial short map
    IterExtras extras{};
};

struct EmbedDemoResult {
    AdaptedTriple triple;
    ConvergenceReport report;
    MapField u0;
    double scale_r = 0.0;
    bool constant_rho_start = false; ///< the defect was proportional to g at the start
    double proximity = 0.0;          ///< |u_final - u_0|_0
};

/// Initial strictly short map on a flat or periodic chart: the scaled flat
/// embedding (x, y, 0, ...) or the product-of-circles embedding on a torus
/// chart, with the scale chosen so the defect size max rho_0^2 lands near the
/// requested delta_1.
inline MapField flat_short_embedding(const Grid& g, double r, int m = 8) {
    if (g.periodic_x && g.periodic_y) {
        return MapField::sample(g, m, [&](double x, double y, double* out) {
            const double ax = g.len_x / (2.0 * M_PI), ay = g.len_y / (2.0 * M_PI);
            for (int k = 0; k < m; ++k) out[k] = 0.0;
            out[0] = r * ax * std::cos(x / ax);
            out[1] = r * ax * std::sin(x / ax);
            out[2] = r * ay * std::cos(y / ay);
            out[3] = r * ay * std::sin(y / ay);
        });
    }
    return MapField::sample(g, m, [&](double x, double y, double* out) {
        for (int k = 0; k < m; ++k) out[k] = 0.0;
        out[0] = r * x;
        out[1] = r * y;
    });
}

/// Build the starting adapted triple for the demo: shrink the scale until the
/// map is strictly short and the defect size matches the target, then try the
/// constant-rho form (valid when the defect is proportional to g) and fall
/// back to rho^2 = tr(defect)/2 pointwise.
inline AdaptedTriple demo_initial_triple(const SymMatrixField& G, const EmbedDemoConfig& cfg,
                                         double* scale_out = nullptr,
                                         bool* constant_rho = nullptr) {
    const Grid& g = G.grid();
    double emin = std::numeric_limits<double>::max(), emax = 0.0;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const auto ev = G.at(i, j).eigenvalues();
            emin = std::min(emin, ev[0]);
            emax = std::max(emax, ev[1]);
        }
    // Pullback of the scaled flat embedding is r^2 Id; pick r^2 so the largest
    // rho_0^2 = tr(G - r^2 Id)/2 is close to delta1_target while the defect
    // stays strictly positive definite.
    double r2 = emax - cfg.delta1_target;
    if (r2 <= 0.0 || emin - r2 <= 0.0) r2 = 0.5 * emin;
    const double r = std::sqrt(r2);

    MapField u0 = flat_short_embedding(g, r);
    const SymMatrixField pb = pullback_metric(u0);

    AdaptedTriple t{std::move(u0), ScalarField(g), SymMatrixField(g), G, cfg.theta, cfg.A};
    bool proportional = true;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const Mat2 defect = G.at(i, j) - pb.at(i, j);
            if (defect.eigenvalues()[0] <= 0.0)
                throw ShortnessLost("demo_initial_triple: start map is not strictly short");
            const double rho2 = 0.5 * defect.trace();
            t.rho.at(i, j) = std::sqrt(rho2);
            const Mat2 h = (1.0 / rho2) * defect - G.at(i, j);
            t.h.set(i, j, h);
            if (h.frobenius() > 1e-10) proportional = false;
        }
    if (scale_out) *scale_out = r;
    if (constant_rho) *constant_rho = proportional;
    return t;
}

inline EmbedDemoResult global_embed_demo(const SymMatrixField& G, const EmbedDemoConfig& cfg) {
    EmbedDemoResult out;
    out.triple = demo_initial_triple(G, cfg, &out.scale_r, &out.constant_rho_start);
    out.u0 = out.triple.u;
    out.triple.validate(1e-6);

    double delta1 = 0.0;
    for (double r : out.triple.rho.raw()) delta1 = std::max(delta1, r * r);
    const IterSchedule sched = build_schedule(cfg.A, cfg.b, cfg.theta, delta1, cfg.q_max);

    TargetSet whole{TargetSet::Kind::WholeChart, 1};
    auto [triple, report] = iterate_to_isometry(out.triple, sched, whole, cfg.q_max, cfg.extras);
    out.triple = std::move(triple);
    out.report = std::move(report);
    out.proximity = sup_norm(map_axpy(out.triple.u, -1.0, out.u0));
    return out;
}

} // namespace isocorr
