#pragma once

#include "isocorr/iterate.hpp"

#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

namespace isocorr {

// ---------------------------------------------------------------------------
// Collar geometry
// ---------------------------------------------------------------------------

/// One-sided collar of a closed curve Sigma: x runs along Sigma (periodic),
/// t in [0, eps] is the collar depth, and the metric has the Fermi form
/// g = G(x,t) dx^2 + dt^2.
struct CollarChart {
    Grid grid;     ///< periodic in x, not in t; len_y = eps
    ScalarField G; ///< metric coefficient, positive

    double eps() const { return grid.len_y; }

    Mat2 metric(int i, int j) const { return Mat2{G.at(i, j), 0.0, 1.0}; }

    SymMatrixField metric_field() const {
        SymMatrixField out(grid);
        for (int j = 0; j < grid.ny; ++j)
            for (int i = 0; i < grid.nx; ++i) out.set(i, j, metric(i, j));
        return out;
    }
};

/// Data along Sigma: the isometric curve f, the chosen unit normal mu in R^m,
/// and the scalar second fundamental form L of Sigma inside the collar,
/// L(x) = -1/2 d_t G(x, 0).
struct SigmaData {
    int m = 8;
    int nx = 0;
    std::vector<double> f;  ///< nx * m
    std::vector<double> mu; ///< nx * m
    std::vector<double> L;  ///< nx

    double f_at(int i, int k) const { return f[static_cast<std::size_t>(i) * m + k]; }
    double mu_at(int i, int k) const { return mu[static_cast<std::size_t>(i) * m + k]; }
};

/// Circle of the given radius embedded in the first two coordinates of R^m,
/// inside a collar with metric G = (1 - L0 t)^2 (so the scalar second
/// fundamental form of Sigma is L0). mu is the inward circle normal.
inline std::pair<CollarChart, SigmaData> make_circle_problem(double radius, double L0, double eps,
                                                             int nx, int nt, int m = 8) {
    CollarChart collar;
    collar.grid = make_grid(2.0 * M_PI * radius, eps, nx, nt, true, false);
    collar.G = ScalarField::sample(collar.grid, [&](double, double t) {
        const double s = 1.0 - L0 * t;
        return s * s;
    });

    SigmaData sd;
    sd.m = m;
    sd.nx = nx;
    sd.f.assign(static_cast<std::size_t>(nx) * m, 0.0);
    sd.mu.assign(static_cast<std::size_t>(nx) * m, 0.0);
    sd.L.assign(nx, L0);
    for (int i = 0; i < nx; ++i) {
        const double ang = collar.grid.x(i) / radius;
        sd.f[static_cast<std::size_t>(i) * m + 0] = radius * std::cos(ang);
        sd.f[static_cast<std::size_t>(i) * m + 1] = radius * std::sin(ang);
        sd.mu[static_cast<std::size_t>(i) * m + 0] = -std::cos(ang);
        sd.mu[static_cast<std::size_t>(i) * m + 1] = -std::sin(ang);
    }
    return {std::move(collar), std::move(sd)};
}

namespace detail {

// Periodic central differences along Sigma.
inline void sigma_d1(const SigmaData& sd, double hx, int i, double* out) {
    const int n = sd.nx;
    const int ip = wrap_index(i + 1, n), im = wrap_index(i - 1, n);
    for (int k = 0; k < sd.m; ++k) out[k] = (sd.f_at(ip, k) - sd.f_at(im, k)) / (2.0 * hx);
}

inline void sigma_d2(const SigmaData& sd, double hx, int i, double* out) {
    const int n = sd.nx;
    const int ip = wrap_index(i + 1, n), im = wrap_index(i - 1, n);
    for (int k = 0; k < sd.m; ++k)
        out[k] = (sd.f_at(ip, k) - 2.0 * sd.f_at(i, k) + sd.f_at(im, k)) / (hx * hx);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Admissibility and the short extension
// ---------------------------------------------------------------------------

/// Pointwise admissibility margin <mu, Lbar(X,X)> - L(X,X) for the unit
/// tangent X. Positive everywhere iff a one-sided extension can start.
inline std::vector<double> check_admissible(const SigmaData& sd, const CollarChart& collar) {
    const double hx = collar.grid.dx();
    std::vector<double> margin(sd.nx);
    std::vector<double> fpp(sd.m), fp(sd.m);
    int worst = 0;
    for (int i = 0; i < sd.nx; ++i) {
        detail::sigma_d1(sd, hx, i, fp.data());
        detail::sigma_d2(sd, hx, i, fpp.data());
        const double G0 = collar.G.at(i, 0);
        double mu_fpp = 0.0, mu_fp = 0.0, mu_norm = 0.0;
        for (int k = 0; k < sd.m; ++k) {
            mu_fpp += sd.mu_at(i, k) * fpp[k];
            mu_fp += sd.mu_at(i, k) * fp[k];
            mu_norm += sd.mu_at(i, k) * sd.mu_at(i, k);
        }
        if (std::abs(mu_norm - 1.0) > 1e-8 || std::abs(mu_fp) > 1e-6 * std::sqrt(G0))
            throw PreconditionError("check_admissible: mu is not a unit normal along f");
        margin[i] = (mu_fpp - sd.L[i]) / G0;
        if (margin[i] < margin[worst]) worst = i;
    }
    if (!(margin[worst] > 0.0)) {
        std::ostringstream os;
        os << "check_admissible: margin " << margin[worst] << " at node " << worst;
        throw NotAdmissible(os.str());
    }
    return margin;
}

/// The short extension u(x, t) = f(x) + (t - t^2) mu(x). Isometric at t = 0
/// and strictly short for t > 0 when eps is small enough.
inline MapField short_extension(const SigmaData& sd, const CollarChart& collar) {
    const Grid& g = collar.grid;
    MapField u(g, sd.m);
    for (int j = 0; j < g.ny; ++j) {
        const double t = g.y(j);
        const double w = t - t * t;
        for (int i = 0; i < g.nx; ++i)
            for (int k = 0; k < sd.m; ++k) u.at(i, j, k) = sd.f_at(i, k) + w * sd.mu_at(i, k);
    }
    // A posteriori shortness: the defect must be positive definite off Sigma.
    const SymMatrixField pb = pullback_metric(u);
    for (int j = 1; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const Mat2 defect = collar.metric(i, j) - pb.at(i, j);
            if (defect.eigenvalues()[0] <= 0.0) {
                std::ostringstream os;
                os << "short_extension: shortness lost at node (" << i << ", " << j << "), t = "
                   << g.y(j);
                throw ShortnessLost(os.str());
            }
        }
    return u;
}

/// rho^2 = tr(g - Du^T Du) / n. Requires the map to be short.
inline ScalarField defect_density(const MapField& u, const CollarChart& collar) {
    const Grid& g = u.grid();
    const SymMatrixField pb = pullback_metric(u);
    ScalarField rho(g);
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const double tr = (collar.metric(i, j) - pb.at(i, j)).trace();
            if (tr < -1e-10) {
                std::ostringstream os;
                os << "defect_density: negative trace " << tr << " at node (" << i << ", " << j
                   << ")";
                throw NegativeTrace(os.str());
            }
            rho.at(i, j) = std::sqrt(std::max(tr, 0.0) / 2.0);
        }
    return rho;
}

// ---------------------------------------------------------------------------
// Adapted extension: dyadic layers of corrugations
// ---------------------------------------------------------------------------

struct ExtensionParams {
    double alpha = 0.05;    ///< retained margin fraction
    double K = 8.0;         ///< layer frequency budget: layer q corrugates at K / d_q
    double layer_tau = 1.5; ///< stage exponent used by the layers
    double layer_C0 = 2.0;  ///< degenerate-cutoff constant for layer stages
    int layers = -1;        ///< -1: as many as the grid resolves
    double theta0 = 0.45;   ///< target exponent of the produced triple
    double gamma = 8.0;
    double sigma0 = 0.2;
    bool enforce = false;
    bool keep_internals = false;

    /// Stage frequency base for layer q: the corrugation frequency
    /// lambda^tau equals K / d_q.
    double layer_lambda(double d_q) const { return std::pow(K / d_q, 1.0 / layer_tau); }
};

struct LayerReport {
    int q = 0;
    double d_q = 0.0;
    double lambda = 0.0;
    double du_c0 = 0.0, du_c1 = 0.0, du_c2 = 0.0;
    StageCertificate certificate;
};

struct AdaptedExtensionResult {
    AdaptedTriple triple; ///< rho_out = sqrt(alpha) rho, h_out from the measured defect
    MapField u_short;
    ScalarField rho_short;
    int layers_used = 0;
    double t_floor = 0.0;          ///< below this depth no corrugation acted
    double h_sup_covered = 0.0;    ///< sup |h_out| over the fully covered band
    double covered_fraction = 0.0; ///< fraction of nodes with full layer coverage
    bool sigma_row_untouched = true;
    std::vector<LayerReport> layers;
};

/// Count how many dyadic layers d_q = 2^{-q} eps the grid and the frequency
/// guard can host.
inline int resolvable_layers(const CollarChart& collar, const ExtensionParams& p) {
    const double ht = collar.grid.dy();
    const double h = collar.grid.h_max();
    int q = 0;
    while (true) {
        const double d_q = collar.eps() * std::pow(0.5, q + 1);
        const double lambda = p.layer_lambda(d_q);
        // layer q+1 needs its inner edge resolved, its frequency under the
        // guard, and the degenerate-cutoff scale under the amplitude budget
        const bool depth_ok = 0.5 * d_q >= 8.0 * ht;
        const bool freq_ok = (p.K / d_q) * h <= kNyquistGuard;
        const bool smear_ok = std::pow(lambda, 1.0 - 2.0 * p.layer_tau) + 2.0 * ht < 0.25 * d_q;
        const bool eps_ok = p.layer_C0 * std::pow(lambda, 1.0 - p.layer_tau) < 1.0;
        if (!(depth_ok && freq_ok && smear_ok && eps_ok)) break;
        ++q;
        if (q > 30) break;
    }
    return q;
}

inline AdaptedExtensionResult adapted_extension(const SigmaData& sd, const CollarChart& collar,
                                                const ExtensionParams& p) {
    const Grid& g = collar.grid;
    check_admissible(sd, collar);

    AdaptedExtensionResult out;
    out.u_short = short_extension(sd, collar);
    out.rho_short = defect_density(out.u_short, collar);

    const int Q = p.layers >= 0 ? p.layers : resolvable_layers(collar, p);
    if (Q < 1)
        throw LayerUnresolved("adapted_extension: no dyadic layer is resolvable on this grid");
    if (p.layers >= 0) {
        const int avail = resolvable_layers(collar, p);
        if (p.layers > avail) {
            std::ostringstream os;
            os << "adapted_extension: requested " << p.layers << " layers, grid resolves " << avail;
            throw LayerUnresolved(os.str());
        }
    }
    out.layers_used = Q;

    // Margin-normalized matrix field M = defect / rho^2 - alpha g, frozen from
    // the short map. Rows with vanishing rho copy their first valid neighbor;
    // the layers never reach them.
    const SymMatrixField pb = pullback_metric(out.u_short);
    SymMatrixField M(g);
    for (int i = 0; i < g.nx; ++i) {
        Mat2 last = Mat2::identity();
        for (int j = g.ny - 1; j >= 0; --j) {
            const double rho2 = out.rho_short.at(i, j) * out.rho_short.at(i, j);
            if (rho2 > 1e-14) {
                const Mat2 defect = collar.metric(i, j) - pb.at(i, j);
                last = (1.0 / rho2) * defect - p.alpha * collar.metric(i, j);
            }
            M.set(i, j, last);
        }
    }

    // Dyadic partition ramps: R_q rises across [d_{q+1}, d_q]; layer 1 owns the
    // top of the collar, layer q the band (d_{q+1}, d_{q-1}).
    auto ramp = [&](int q, double t) {
        const double lo = collar.eps() * std::pow(0.5, q + 1);
        const double hi = collar.eps() * std::pow(0.5, q);
        return detail::smoothstep5((t - lo) / (hi - lo));
    };
    auto chi_layer = [&](int q, double t) {
        const double Rq = ramp(q, t);
        if (q == 1) return std::sqrt(Rq);
        const double Rp = ramp(q - 1, t);
        return std::sqrt(std::max(Rq - Rp, 0.0));
    };

    // Corrugation phases do not wrap the periodic Sigma direction, so each
    // layer runs twice with complementary windows w_A^2 + w_B^2 = 1: the A
    // pass stays clear of the x-seam, the B pass patches the seam band. The
    // window width scales with the layer wavelength so the window gradient
    // stays inside the amplitude budget.
    auto window_A = [&](double x, double margin) {
        double r = std::fmod(std::abs(x), g.len_x);
        const double d = std::min(r, g.len_x - r);
        return std::sqrt(detail::smoothstep5((d - margin) / margin));
    };
    auto window_B = [&](double x, double margin) {
        const double wa = window_A(x, margin);
        return std::sqrt(std::max(1.0 - wa * wa, 0.0));
    };

    MapField u_cur = out.u_short;
    for (int parity = 1; parity >= 0; --parity) { // odd layers first, then even
        for (int q = 1; q <= Q; ++q) {
            if (q % 2 != parity) continue;
            const double d_q = collar.eps() * std::pow(0.5, q);
            const double margin = std::min(
                std::max(6.0 * g.dx(), 2.0 / p.layer_lambda(d_q)), 0.2 * g.len_x);
            for (int pass = 0; pass < 2; ++pass) {
                ScalarField rho_layer(g);
                double amp = 0.0;
                for (int j = 0; j < g.ny; ++j) {
                    const double c = chi_layer(q, g.y(j));
                    if (c == 0.0) continue;
                    for (int i = 0; i < g.nx; ++i) {
                        const double w = pass == 0 ? window_A(g.x(i), margin)
                                                   : window_B(g.x(i), margin);
                        rho_layer.at(i, j) = c * w * out.rho_short.at(i, j);
                        amp = std::max(amp, rho_layer.at(i, j));
                    }
                }
                if (amp == 0.0) continue;

                StageParams sp;
                sp.delta = std::min(amp * amp * 1.02, 0.99);
                sp.lambda = p.layer_lambda(d_q);
                sp.tau = p.layer_tau;
                sp.gamma = p.gamma;
                sp.sigma0 = p.sigma0;
                sp.C0 = p.layer_C0;
                sp.lambda0 = 1.0;
                sp.enforce = p.enforce;
                sp.keep_internals = p.keep_internals;
                // primitives are added on top of already-corrugated maps;
                // the cross terms go to the measured error, not the solve
                sp.absorb_perturbations = false;
                // the B pass lives on the seam band, so its phase wraps at L/2
                if (pass == 1) sp.phase_origin_x = 0.5 * g.len_x;

                StageResult stage = perform_stage(u_cur, rho_layer, SymMatrixField(g), M, sp);

                LayerReport lr;
                lr.q = q;
                lr.d_q = d_q;
                lr.lambda = sp.lambda;
                const MapField diff = map_axpy(stage.v, -1.0, u_cur);
                lr.du_c0 = sup_norm(diff);
                lr.du_c1 = ck_norm(diff, 1);
                lr.du_c2 = ck_norm(diff, 2);
                lr.certificate = stage.certificate;
                out.layers.push_back(lr);

                u_cur = std::move(stage.v);
            }
        }
    }

    // Repackage the final map as an adapted triple with rho_out = sqrt(alpha) rho.
    const SymMatrixField pb_v = pullback_metric(u_cur);
    AdaptedTriple t{std::move(u_cur), ScalarField(g), SymMatrixField(g), collar.metric_field(),
                    p.theta0, 1.0};
    const double alpha = p.alpha;
    double cover_floor = collar.eps();
    long covered = 0;
    for (int j = 0; j < g.ny; ++j) {
        double sum_chi2 = 0.0;
        for (int q = 1; q <= Q; ++q) {
            const double c = chi_layer(q, g.y(j));
            sum_chi2 += c * c;
        }
        const bool full = sum_chi2 >= 1.0 - 1e-9;
        for (int i = 0; i < g.nx; ++i) {
            const double rho2 = out.rho_short.at(i, j) * out.rho_short.at(i, j);
            t.rho.at(i, j) = std::sqrt(alpha) * out.rho_short.at(i, j);
            if (rho2 > 1e-14) {
                const Mat2 defect = collar.metric(i, j) - pb_v.at(i, j);
                const Mat2 h = (1.0 / (alpha * rho2)) * defect - collar.metric(i, j);
                t.h.set(i, j, h);
                if (full) {
                    out.h_sup_covered = std::max(out.h_sup_covered, h.frobenius());
                    ++covered;
                }
            }
        }
        if (!full && g.y(j) < cover_floor) cover_floor = g.y(j);
    }
    out.covered_fraction = static_cast<double>(covered) / static_cast<double>(g.nodes());
    out.t_floor = collar.eps() * std::pow(0.5, Q + 1);

    // Sigma row must be bit-identical to f.
    for (int i = 0; i < g.nx && out.sigma_row_untouched; ++i)
        for (int k = 0; k < sd.m; ++k)
            if (t.u.at(i, 0, k) != sd.f_at(i, k)) {
                out.sigma_row_untouched = false;
                break;
            }

    out.triple = std::move(t);
    return out;
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

struct IsometricExtensionConfig {
    ExtensionParams extension{};
    double theta = 0.45;
    double b = 1.1;
    double A = 32.0;
    int q_max = 2;
    TargetSet target{TargetSet::Kind::WholeChart, 1};
    IterExtras extras{};
};

struct IsometricExtensionResult {
    MapField u_final;
    ConvergenceReport report;
    ScalarField rho_short;
    std::vector<double> margin;       ///< admissibility margin per Sigma node
    double final_defect_sup = 0.0;    ///< sup |g - u#e| over the collar
    double sigma_value_error = 0.0;   ///< max |u - f| on the Sigma row
    double mu_match_error = 0.0;      ///< max |d_t u(x,0) - mu|
    bool layers_ran = false;          ///< false when the grid resolves no layer
    int layers_used = 0;
    std::string note;
};

/// Short extension -> adapted extension (when the grid resolves layers) ->
/// the inductive iteration. The output matches f and mu along Sigma and is
/// isometric up to the reported defect.
inline IsometricExtensionResult isometric_extension(const SigmaData& sd, const CollarChart& collar,
                                                    const IsometricExtensionConfig& cfg) {
    const Grid& g = collar.grid;
    IsometricExtensionResult out;
    out.margin = check_admissible(sd, collar);

    AdaptedTriple triple;
    try {
        AdaptedExtensionResult adapted = adapted_extension(sd, collar, cfg.extension);
        out.layers_ran = true;
        out.layers_used = adapted.layers_used;
        out.rho_short = adapted.rho_short;
        triple = std::move(adapted.triple);
    } catch (const LayerUnresolved& e) {
        // Repackage the short extension directly; its anisotropy becomes h.
        out.note = std::string("layers skipped: ") + e.what();
        MapField u = short_extension(sd, collar);
        out.rho_short = defect_density(u, collar);
        const SymMatrixField pb = pullback_metric(u);
        triple = AdaptedTriple{std::move(u), out.rho_short, SymMatrixField(g),
                               collar.metric_field(), cfg.theta, cfg.A};
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const double rho2 = triple.rho.at(i, j) * triple.rho.at(i, j);
                if (rho2 > 1e-14) {
                    const Mat2 defect = collar.metric(i, j) - pb.at(i, j);
                    triple.h.set(i, j, (1.0 / rho2) * defect - collar.metric(i, j));
                }
            }
    }

    double delta1 = 0.0;
    for (double r : triple.rho.raw()) delta1 = std::max(delta1, r * r);
    if (delta1 > 0.0 && cfg.q_max > 0) {
        const IterSchedule sched =
            build_schedule(cfg.A, cfg.b, cfg.theta, std::min(delta1, 0.24), cfg.q_max);
        auto [t_final, rep] = iterate_to_isometry(triple, sched, cfg.target, cfg.q_max, cfg.extras);
        triple = std::move(t_final);
        out.report = std::move(rep);
    }

    // Boundary pinning and the final defect.
    const SymMatrixField pb = pullback_metric(triple.u);
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            out.final_defect_sup =
                std::max(out.final_defect_sup, (collar.metric(i, j) - pb.at(i, j)).frobenius());
    for (int i = 0; i < g.nx; ++i) {
        double val = 0.0, mu_err = 0.0;
        for (int k = 0; k < sd.m; ++k) {
            val = std::max(val, std::abs(triple.u.at(i, 0, k) - sd.f_at(i, k)));
            // one-sided second-order t-derivative at Sigma
            const double dt = (-3.0 * triple.u.at(i, 0, k) + 4.0 * triple.u.at(i, 1, k) -
                               triple.u.at(i, 2, k)) /
                              (2.0 * g.dy());
            mu_err = std::max(mu_err, std::abs(dt - sd.mu_at(i, k)));
        }
        out.sigma_value_error = std::max(out.sigma_value_error, val);
        out.mu_match_error = std::max(out.mu_match_error, mu_err);
    }
    out.u_final = std::move(triple.u);
    return out;
}

} // namespace isocorr
