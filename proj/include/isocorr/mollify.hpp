#pragma once

#include "isocorr/fields.hpp"

#include <cmath>
#include <vector>

namespace isocorr {

/// Boundary extension used when a convolution stencil leaves a non-periodic
/// axis. Even reflection preserves node-value bounds; Affine reflects through
/// the boundary value (2 f(0) - f(i)), which fixes affine maps exactly and is
/// the right extension when the Jacobian must survive smoothing.
enum class Extension { Even, Affine };

/// Discrete mollification kernel at length scale `ell`: the standard radial
/// bump exp(-1/(1-|x/ell|^2)) sampled on node offsets and normalized so the
/// discrete integral is exactly one.
struct Kernel {
    double ell = 0.0;
    int rx = 0, ry = 0;                 ///< stencil radius in nodes, per axis
    std::vector<double> weights;        ///< (2rx+1) x (2ry+1), row-major, sums to 1

    double weight(int a, int b) const { return weights[(b + ry) * (2 * rx + 1) + (a + rx)]; }
};

inline Kernel make_kernel(const Grid& g, double ell) {
    const double h = g.h_max();
    if (ell < 2.0 * h) throw PreconditionError("make_kernel: ell below 2h, kernel unresolvable");
    if (ell > 0.5 * std::min(g.len_x, g.len_y))
        throw PreconditionError("make_kernel: ell exceeds half the chart extent");
    Kernel k;
    k.ell = ell;
    k.rx = static_cast<int>(std::floor(ell / g.dx()));
    k.ry = static_cast<int>(std::floor(ell / g.dy()));
    k.weights.assign(static_cast<std::size_t>(2 * k.rx + 1) * (2 * k.ry + 1), 0.0);
    double total = 0.0;
    for (int b = -k.ry; b <= k.ry; ++b)
        for (int a = -k.rx; a <= k.rx; ++a) {
            const double s = std::hypot(a * g.dx(), b * g.dy()) / ell;
            if (s >= 1.0) continue;
            const double w = std::exp(-1.0 / (1.0 - s * s));
            k.weights[(b + k.ry) * (2 * k.rx + 1) + (a + k.rx)] = w;
            total += w;
        }
    for (double& w : k.weights) w /= total;
    return k;
}

/// Stencil radius beyond which convolution switches to the separable product
/// kernel: the direct radial sum is quadratic in the radius.
inline constexpr int kSeparableRadius = 12;

/// One-dimensional bump weights at scale ell, discretely normalized.
inline std::vector<double> bump_weights_1d(double spacing, double ell) {
    const int r = static_cast<int>(std::floor(ell / spacing));
    std::vector<double> w(2 * r + 1, 0.0);
    double total = 0.0;
    for (int a = -r; a <= r; ++a) {
        const double s = a * spacing / ell;
        if (s * s >= 1.0) continue;
        w[a + r] = std::exp(-1.0 / (1.0 - s * s));
        total += w[a + r];
    }
    for (double& v : w) v /= total;
    return w;
}

namespace detail {

// Sample one component lane at a possibly out-of-range index pair. Reflection
// applies per axis; the Affine mode reflects through the boundary value.
template <class Get>
double extended_sample(const Grid& g, Get&& get, int i, int j, Extension ext) {
    if (g.periodic_x) {
        i = wrap_index(i, g.nx);
    } else if (i < 0 || i >= g.nx) {
        const int anchor = i < 0 ? 0 : g.nx - 1;
        const int ref = reflect_index(i, g.nx);
        if (ext == Extension::Affine)
            return 2.0 * extended_sample(g, get, anchor, j, ext) -
                   extended_sample(g, get, ref, j, ext);
        i = ref;
    }
    if (g.periodic_y) {
        j = wrap_index(j, g.ny);
    } else if (j < 0 || j >= g.ny) {
        const int anchor = j < 0 ? 0 : g.ny - 1;
        const int ref = reflect_index(j, g.ny);
        if (ext == Extension::Affine) return 2.0 * get(i, anchor) - get(i, ref);
        j = ref;
    }
    return get(i, j);
}

template <class GetLane>
void convolve_lane(const Grid& g, const Kernel& k, GetLane&& get, double* out, Extension ext) {
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            double acc = 0.0;
            for (int b = -k.ry; b <= k.ry; ++b)
                for (int a = -k.rx; a <= k.rx; ++a) {
                    const double w = k.weight(a, b);
                    if (w == 0.0) continue;
                    acc += w * extended_sample(g, get, i - a, j - b, ext);
                }
            out[g.idx(i, j)] = acc;
        }
}

// Two-pass tensor-product bump. Same normalization, positivity, evenness and
// per-axis support as the radial kernel; used when the stencil radius would
// make the direct sum quadratic-in-radius expensive.
template <class GetLane>
void convolve_lane_separable(const Grid& g, double ell, GetLane&& get, double* out, Extension ext) {
    const std::vector<double> wx = bump_weights_1d(g.dx(), ell);
    const std::vector<double> wy = bump_weights_1d(g.dy(), ell);
    const int rx = (static_cast<int>(wx.size()) - 1) / 2;
    const int ry = (static_cast<int>(wy.size()) - 1) / 2;
    std::vector<double> mid(g.nodes());
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            double acc = 0.0;
            for (int a = -rx; a <= rx; ++a)
                acc += wx[a + rx] * extended_sample(g, get, i - a, j, ext);
            mid[g.idx(i, j)] = acc;
        }
    auto get_mid = [&](int i, int j) { return mid[g.idx(i, j)]; };
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            double acc = 0.0;
            for (int b = -ry; b <= ry; ++b)
                acc += wy[b + ry] * extended_sample(g, get_mid, i, j - b, ext);
            out[g.idx(i, j)] = acc;
        }
}

template <class GetLane>
void convolve_dispatch(const Grid& g, double ell, GetLane&& get, double* out, Extension ext) {
    const int rx = static_cast<int>(std::floor(ell / g.dx()));
    const int ry = static_cast<int>(std::floor(ell / g.dy()));
    if (std::max(rx, ry) > kSeparableRadius) {
        convolve_lane_separable(g, ell, get, out, ext);
    } else {
        const Kernel k = make_kernel(g, ell);
        convolve_lane(g, k, get, out, ext);
    }
}

} // namespace detail

namespace detail {

inline void check_mollify_scale(const Grid& g, double ell) {
    if (ell < 2.0 * g.h_max())
        throw PreconditionError("mollify: ell below 2h, kernel unresolvable");
    if (ell > 0.5 * std::min(g.len_x, g.len_y))
        throw PreconditionError("mollify: ell exceeds half the chart extent");
}

} // namespace detail

inline ScalarField mollify(const ScalarField& f, double ell, Extension ext = Extension::Even) {
    detail::check_mollify_scale(f.grid(), ell);
    ScalarField out(f.grid());
    detail::convolve_dispatch(f.grid(), ell, [&](int i, int j) { return f.at(i, j); },
                              out.raw().data(), ext);
    return out;
}

inline MapField mollify(const MapField& f, double ell, Extension ext = Extension::Even) {
    detail::check_mollify_scale(f.grid(), ell);
    MapField out(f.grid(), f.dim());
    const Grid& g = f.grid();
    std::vector<double> lane(g.nodes());
    for (int c = 0; c < f.dim(); ++c) {
        detail::convolve_dispatch(g, ell, [&](int i, int j) { return f.at(i, j, c); }, lane.data(),
                                  ext);
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) out.at(i, j, c) = lane[g.idx(i, j)];
    }
    return out;
}

inline SymMatrixField mollify(const SymMatrixField& f, double ell, Extension ext = Extension::Even) {
    detail::check_mollify_scale(f.grid(), ell);
    SymMatrixField out(f.grid());
    const Grid& g = f.grid();
    std::vector<double> lane(g.nodes());
    for (int c = 0; c < 3; ++c) {
        detail::convolve_dispatch(g, ell, [&](int i, int j) { return f.raw()[g.idx(i, j) * 3 + c]; },
                                  lane.data(), ext);
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) out.raw()[g.idx(i, j) * 3 + c] = lane[g.idx(i, j)];
    }
    return out;
}

/// Measured constant of the commutator estimate
/// ||(fg)*phi - (f*phi)(g*phi)||_0 <= C ell^{2 theta} ||f||_theta ||g||_theta.
inline double commutator_defect(const ScalarField& f, const ScalarField& g, double ell, double theta) {
    const std::vector<double> ladder = default_radius_ladder(f.grid());
    const double nf = ck_norm(f, 0) + holder_seminorm(f, theta, ladder);
    const double ng = ck_norm(g, 0) + holder_seminorm(g, theta, ladder);

    const ScalarField fg = f * g;
    const ScalarField lhs_a = mollify(fg, ell);
    const ScalarField mf = mollify(f, ell);
    const ScalarField mg = mollify(g, ell);

    double num = 0.0;
    for (std::size_t n = 0; n < lhs_a.raw().size(); ++n)
        num = std::max(num, std::abs(lhs_a.raw()[n] - mf.raw()[n] * mg.raw()[n]));

    const double denom = std::pow(ell, 2.0 * theta) * nf * ng;
    if (denom == 0.0) {
        if (num == 0.0) return 0.0;
        throw NumericalError("commutator_defect: zero norm denominator with nonzero defect");
    }
    return num / denom;
}

} // namespace isocorr
