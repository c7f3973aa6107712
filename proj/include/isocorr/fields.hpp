#pragma once

#include "isocorr/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace isocorr {

// ---------------------------------------------------------------------------
// Small dense algebra
// ---------------------------------------------------------------------------

struct Vec2 {
    double x = 0.0, y = 0.0;

    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double norm() const { return std::sqrt(x * x + y * y); }
};

/// Symmetric 2x2 matrix, stored as (xx, xy, yy).
struct Mat2 {
    double xx = 0.0, xy = 0.0, yy = 0.0;

    static Mat2 identity() { return {1.0, 0.0, 1.0}; }
    static Mat2 outer(const Vec2& v) { return {v.x * v.x, v.x * v.y, v.y * v.y}; }

    Mat2 operator+(const Mat2& o) const { return {xx + o.xx, xy + o.xy, yy + o.yy}; }
    Mat2 operator-(const Mat2& o) const { return {xx - o.xx, xy - o.xy, yy - o.yy}; }
    Mat2 operator*(double s) const { return {xx * s, xy * s, yy * s}; }
    Mat2& operator+=(const Mat2& o) {
        xx += o.xx;
        xy += o.xy;
        yy += o.yy;
        return *this;
    }

    double trace() const { return xx + yy; }
    double det() const { return xx * yy - xy * xy; }
    double frobenius() const { return std::sqrt(xx * xx + 2.0 * xy * xy + yy * yy); }

    /// Eigenvalues, ascending.
    std::array<double, 2> eigenvalues() const {
        const double mean = 0.5 * (xx + yy);
        const double disc = std::sqrt(0.25 * (xx - yy) * (xx - yy) + xy * xy);
        return {mean - disc, mean + disc};
    }
};

inline Mat2 operator*(double s, const Mat2& m) { return m * s; }

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Rectangular lattice over [0,Lx] x [0,Ly], optionally periodic per axis.
/// Periodic axes place nodes at i*L/n (the node at L is identified with 0);
/// non-periodic axes include both endpoints.
struct Grid {
    double len_x = 1.0, len_y = 1.0;
    int nx = 0, ny = 0;
    bool periodic_x = false, periodic_y = false;

    double dx() const { return periodic_x ? len_x / nx : len_x / (nx - 1); }
    double dy() const { return periodic_y ? len_y / ny : len_y / (ny - 1); }
    double h_max() const { return std::max(dx(), dy()); }
    double diameter() const { return std::sqrt(len_x * len_x + len_y * len_y); }

    double x(int i) const { return i * dx(); }
    double y(int j) const { return j * dy(); }

    std::size_t nodes() const { return static_cast<std::size_t>(nx) * ny; }
    std::size_t idx(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }

    bool operator==(const Grid& o) const {
        return len_x == o.len_x && len_y == o.len_y && nx == o.nx && ny == o.ny &&
               periodic_x == o.periodic_x && periodic_y == o.periodic_y;
    }
};

inline Grid make_grid(double len_x, double len_y, int nx, int ny, bool periodic_x = false,
                      bool periodic_y = false) {
    if (len_x <= 0.0 || len_y <= 0.0)
        throw PreconditionError("make_grid: extent sides must be positive");
    if (nx < 16 || ny < 16)
        throw PreconditionError("make_grid: resolution must be at least 16 nodes per axis");
    return Grid{len_x, len_y, nx, ny, periodic_x, periodic_y};
}

inline Grid make_grid(double len, int n, bool periodic = false) {
    return make_grid(len, len, n, n, periodic, periodic);
}

// Index maps for out-of-range samples. Periodic axes wrap; non-periodic axes
// reflect evenly about the boundary node.
inline int wrap_index(int i, int n) {
    i %= n;
    return i < 0 ? i + n : i;
}

inline int reflect_index(int i, int n) {
    while (i < 0 || i > n - 1) {
        if (i < 0) i = -i;
        if (i > n - 1) i = 2 * (n - 1) - i;
    }
    return i;
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// Non-owning view of a grid-sampled field with `comps` doubles per node.
/// All norm and derivative machinery runs on views so every field kind shares
/// one implementation.
struct FieldView {
    const Grid* grid = nullptr;
    const double* data = nullptr;
    int comps = 0;

    double at(int i, int j, int k) const { return data[grid->idx(i, j) * comps + k]; }
};

namespace detail {

template <class Derived>
class FieldBase {
public:
    FieldBase() = default;
    FieldBase(Grid g, int comps) : grid_(g), comps_(comps), v_(g.nodes() * comps, 0.0) {}

    const Grid& grid() const { return grid_; }
    int comps() const { return comps_; }
    const std::vector<double>& raw() const { return v_; }
    std::vector<double>& raw() { return v_; }

    FieldView view() const { return FieldView{&grid_, v_.data(), comps_}; }

protected:
    Grid grid_{};
    int comps_ = 0;
    std::vector<double> v_;
};

} // namespace detail

class ScalarField : public detail::FieldBase<ScalarField> {
public:
    ScalarField() = default;
    explicit ScalarField(Grid g) : FieldBase(g, 1) {}

    double& at(int i, int j) { return v_[grid_.idx(i, j)]; }
    double at(int i, int j) const { return v_[grid_.idx(i, j)]; }

    template <class F>
    static ScalarField sample(Grid g, F&& f) {
        ScalarField out(g);
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) out.at(i, j) = f(g.x(i), g.y(j));
        return out;
    }
};

/// Grid-sampled map into R^m. VectorField is the same thing with small m.
class MapField : public detail::FieldBase<MapField> {
public:
    MapField() = default;
    MapField(Grid g, int dim) : FieldBase(g, dim) {}

    int dim() const { return comps_; }

    double& at(int i, int j, int k) { return v_[grid_.idx(i, j) * comps_ + k]; }
    double at(int i, int j, int k) const { return v_[grid_.idx(i, j) * comps_ + k]; }

    double* node(int i, int j) { return v_.data() + grid_.idx(i, j) * comps_; }
    const double* node(int i, int j) const { return v_.data() + grid_.idx(i, j) * comps_; }

    template <class F>
    static MapField sample(Grid g, int dim, F&& f) {
        MapField out(g, dim);
        std::vector<double> buf(dim);
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                f(g.x(i), g.y(j), buf.data());
                for (int k = 0; k < dim; ++k) out.at(i, j, k) = buf[k];
            }
        return out;
    }
};

using VectorField = MapField;

/// Symmetric 2x2 tensor field (metrics, defects), stored (xx, xy, yy).
class SymMatrixField : public detail::FieldBase<SymMatrixField> {
public:
    SymMatrixField() = default;
    explicit SymMatrixField(Grid g) : FieldBase(g, 3) {}

    Mat2 at(int i, int j) const {
        const double* p = v_.data() + grid_.idx(i, j) * 3;
        return Mat2{p[0], p[1], p[2]};
    }
    void set(int i, int j, const Mat2& m) {
        double* p = v_.data() + grid_.idx(i, j) * 3;
        p[0] = m.xx;
        p[1] = m.xy;
        p[2] = m.yy;
    }

    static SymMatrixField constant(Grid g, const Mat2& m) {
        SymMatrixField out(g);
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) out.set(i, j, m);
        return out;
    }

    template <class F>
    static SymMatrixField sample(Grid g, F&& f) {
        SymMatrixField out(g);
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) out.set(i, j, f(g.x(i), g.y(j)));
        return out;
    }
};

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------
//
// Second-order central stencils in the interior, second-order one-sided at
// non-periodic boundaries. Exact for affine fields everywhere.

namespace detail {

// d/d(axis) of one component lane. `get(i,j)` reads the lane.
template <class Get>
double d1(const Grid& g, Get&& get, int i, int j, int axis) {
    const int n = axis == 0 ? g.nx : g.ny;
    const double h = axis == 0 ? g.dx() : g.dy();
    const bool periodic = axis == 0 ? g.periodic_x : g.periodic_y;
    const int c = axis == 0 ? i : j;
    auto fetch = [&](int t) {
        const int ti = axis == 0 ? t : i;
        const int tj = axis == 0 ? j : t;
        return get(ti, tj);
    };
    if (periodic) {
        return (fetch(wrap_index(c + 1, n)) - fetch(wrap_index(c - 1, n))) / (2.0 * h);
    }
    if (c == 0) return (-3.0 * fetch(0) + 4.0 * fetch(1) - fetch(2)) / (2.0 * h);
    if (c == n - 1) return (3.0 * fetch(n - 1) - 4.0 * fetch(n - 2) + fetch(n - 3)) / (2.0 * h);
    return (fetch(c + 1) - fetch(c - 1)) / (2.0 * h);
}

} // namespace detail

/// First derivatives of a map: m x 2 per node; component k, axis a at index 2k+a.
class JacobianField : public detail::FieldBase<JacobianField> {
public:
    JacobianField() = default;
    JacobianField(Grid g, int dim) : FieldBase(g, 2 * dim), dim_(dim) {}

    int dim() const { return dim_; }

    double at(int i, int j, int k, int axis) const { return v_[(grid_.idx(i, j) * dim_ + k) * 2 + axis]; }
    double& at(int i, int j, int k, int axis) { return v_[(grid_.idx(i, j) * dim_ + k) * 2 + axis]; }

    /// Column `axis` of the Jacobian at a node, as an m-vector written to out.
    void column(int i, int j, int axis, double* out) const {
        for (int k = 0; k < dim_; ++k) out[k] = at(i, j, k, axis);
    }

    /// Gram matrix (J^T J) at a node.
    Mat2 gram(int i, int j) const {
        double axx = 0.0, axy = 0.0, ayy = 0.0;
        for (int k = 0; k < dim_; ++k) {
            const double gx = at(i, j, k, 0), gy = at(i, j, k, 1);
            axx += gx * gx;
            axy += gx * gy;
            ayy += gy * gy;
        }
        return Mat2{axx, axy, ayy};
    }

private:
    int dim_ = 0;
};

inline JacobianField jacobian(const MapField& f) {
    JacobianField out(f.grid(), f.dim());
    const Grid& g = f.grid();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            for (int k = 0; k < f.dim(); ++k)
                for (int a = 0; a < 2; ++a)
                    out.at(i, j, k, a) =
                        detail::d1(g, [&](int ii, int jj) { return f.at(ii, jj, k); }, i, j, a);
    return out;
}

inline VectorField gradient(const ScalarField& f) {
    VectorField out(f.grid(), 2);
    const Grid& g = f.grid();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            for (int a = 0; a < 2; ++a)
                out.at(i, j, a) = detail::d1(g, [&](int ii, int jj) { return f.at(ii, jj); }, i, j, a);
    return out;
}

/// Second derivatives of a scalar: (fxx, fxy, fyy) per node; fxy computed as
/// d/dy of the discrete d/dx so the stored tensor is symmetric by construction.
class HessianField : public detail::FieldBase<HessianField> {
public:
    HessianField() = default;
    HessianField(Grid g, int dim) : FieldBase(g, 3 * dim), dim_(dim) {}

    int dim() const { return dim_; }
    double at(int i, int j, int k, int entry) const { return v_[(grid_.idx(i, j) * dim_ + k) * 3 + entry]; }
    double& at(int i, int j, int k, int entry) { return v_[(grid_.idx(i, j) * dim_ + k) * 3 + entry]; }

private:
    int dim_ = 0;
};

inline HessianField hessian(const MapField& f) {
    const Grid& g = f.grid();
    JacobianField J = jacobian(f);
    HessianField out(g, f.dim());
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            for (int k = 0; k < f.dim(); ++k) {
                out.at(i, j, k, 0) =
                    detail::d1(g, [&](int ii, int jj) { return J.at(ii, jj, k, 0); }, i, j, 0);
                out.at(i, j, k, 1) =
                    detail::d1(g, [&](int ii, int jj) { return J.at(ii, jj, k, 0); }, i, j, 1);
                out.at(i, j, k, 2) =
                    detail::d1(g, [&](int ii, int jj) { return J.at(ii, jj, k, 1); }, i, j, 1);
            }
    return out;
}

inline HessianField hessian(const ScalarField& f) {
    MapField wrap(f.grid(), 1);
    wrap.raw() = f.raw();
    return hessian(wrap);
}

/// Pullback metric (nabla u)^T (nabla u), symmetric PSD at every node.
inline SymMatrixField pullback_metric(const MapField& u) {
    if (u.dim() < 2) throw PreconditionError("pullback_metric: target dimension must be >= 2");
    JacobianField J = jacobian(u);
    SymMatrixField out(u.grid());
    const Grid& g = u.grid();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) out.set(i, j, J.gram(i, j));
    return out;
}

// ---------------------------------------------------------------------------
// Norms
// ---------------------------------------------------------------------------

namespace detail {

inline double node_norm(const FieldView& f, int i, int j) {
    double s = 0.0;
    for (int k = 0; k < f.comps; ++k) {
        const double v = f.at(i, j, k);
        s += v * v;
    }
    return std::sqrt(s);
}

inline double sup_norm(const FieldView& f) {
    double m = 0.0;
    for (int j = 0; j < f.grid->ny; ++j)
        for (int i = 0; i < f.grid->nx; ++i) m = std::max(m, node_norm(f, i, j));
    return m;
}

// One derivative lane of a view along `axis`, materialized as a vector.
inline std::vector<double> derive(const FieldView& f, int axis) {
    const Grid& g = *f.grid;
    std::vector<double> out(g.nodes() * f.comps);
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            for (int k = 0; k < f.comps; ++k)
                out[g.idx(i, j) * f.comps + k] =
                    d1(g, [&](int ii, int jj) { return f.at(ii, jj, k); }, i, j, axis);
    return out;
}

} // namespace detail

inline double sup_norm(const FieldView& f) { return detail::sup_norm(f); }
template <class Field>
double sup_norm(const Field& f) {
    return detail::sup_norm(f.view());
}

/// Discrete C^k norm per the cumulative definition
/// ||f||_m = sum_{j<=m} max_{|beta|=j} ||d^beta f||_0.
inline double ck_norm(const FieldView& f, int k) {
    if (k < 0 || k > 2) throw PreconditionError("ck_norm: only k in {0,1,2} supported");
    double total = detail::sup_norm(f);
    if (k == 0) return total;

    const Grid& g = *f.grid;
    std::vector<double> dx = detail::derive(f, 0);
    std::vector<double> dy = detail::derive(f, 1);
    FieldView vx{&g, dx.data(), f.comps}, vy{&g, dy.data(), f.comps};
    total += std::max(detail::sup_norm(vx), detail::sup_norm(vy));
    if (k == 1) return total;

    std::vector<double> dxx = detail::derive(vx, 0);
    std::vector<double> dxy = detail::derive(vx, 1);
    std::vector<double> dyy = detail::derive(vy, 1);
    FieldView vxx{&g, dxx.data(), f.comps}, vxy{&g, dxy.data(), f.comps}, vyy{&g, dyy.data(), f.comps};
    total += std::max({detail::sup_norm(vxx), detail::sup_norm(vxy), detail::sup_norm(vyy)});
    return total;
}

template <class Field>
double ck_norm(const Field& f, int k) {
    return ck_norm(f.view(), k);
}

/// Dyadic radius ladder 2h, 4h, ..., capped at a quarter of the extent.
inline std::vector<double> default_radius_ladder(const Grid& g) {
    std::vector<double> out;
    const double h = g.h_max();
    const double cap = 0.25 * std::min(g.len_x, g.len_y);
    for (double r = 2.0 * h; r <= cap; r *= 2.0) out.push_back(r);
    if (out.empty()) out.push_back(2.0 * h);
    return out;
}

/// Holder seminorm estimated over node pairs at the ladder separations, along
/// the axes and both diagonals. A lower bound of the true seminorm.
inline double holder_seminorm(const FieldView& f, double theta, const std::vector<double>& ladder) {
    if (theta <= 0.0 || theta > 1.0) throw PreconditionError("holder_seminorm: theta must lie in (0,1]");
    const Grid& g = *f.grid;
    const double h = g.h_max();
    double best = 0.0;

    auto probe = [&](int si, int sj, double dist) {
        if (dist <= 0.0) return;
        const double w = std::pow(dist, -theta);
        for (int j = 0; j < g.ny; ++j) {
            int jj = j + sj;
            if (g.periodic_y)
                jj = wrap_index(jj, g.ny);
            else if (jj < 0 || jj >= g.ny)
                continue;
            for (int i = 0; i < g.nx; ++i) {
                int ii = i + si;
                if (g.periodic_x)
                    ii = wrap_index(ii, g.nx);
                else if (ii < 0 || ii >= g.nx)
                    continue;
                double s = 0.0;
                for (int k = 0; k < f.comps; ++k) {
                    const double d = f.at(ii, jj, k) - f.at(i, j, k);
                    s += d * d;
                }
                best = std::max(best, std::sqrt(s) * w);
            }
        }
    };

    for (double r : ladder) {
        if (r < 2.0 * h - 1e-12) throw PreconditionError("holder_seminorm: ladder radius below 2h");
        const int sx = std::max(1, static_cast<int>(std::lround(r / g.dx())));
        const int sy = std::max(1, static_cast<int>(std::lround(r / g.dy())));
        probe(sx, 0, sx * g.dx());
        probe(0, sy, sy * g.dy());
        probe(sx, sy, std::hypot(sx * g.dx(), sy * g.dy()));
        probe(sx, -sy, std::hypot(sx * g.dx(), sy * g.dy()));
    }
    return best;
}

template <class Field>
double holder_seminorm(const Field& f, double theta, const std::vector<double>& ladder) {
    return holder_seminorm(f.view(), theta, ladder);
}

template <class Field>
double holder_seminorm(const Field& f, double theta) {
    return holder_seminorm(f.view(), theta, default_radius_ladder(f.grid()));
}

/// Bundle of discrete norms of one field.
struct NormReport {
    double c0 = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    double theta = 0.0;
    double holder = 0.0; ///< [f]_theta over the ladder below
    std::vector<double> ladder;
};

template <class Field>
NormReport norm_report(const Field& f, double theta) {
    NormReport r;
    r.ladder = default_radius_ladder(f.grid());
    r.c0 = ck_norm(f, 0);
    r.c1 = ck_norm(f, 1);
    r.c2 = ck_norm(f, 2);
    r.theta = theta;
    r.holder = holder_seminorm(f.view(), theta, r.ladder);
    return r;
}

// ---------------------------------------------------------------------------
// Assorted helpers used across modules
// ---------------------------------------------------------------------------

inline ScalarField operator*(const ScalarField& a, const ScalarField& b) {
    ScalarField out(a.grid());
    for (std::size_t n = 0; n < out.raw().size(); ++n) out.raw()[n] = a.raw()[n] * b.raw()[n];
    return out;
}

inline MapField map_axpy(const MapField& base, double coeff, const MapField& add) {
    MapField out = base;
    for (std::size_t n = 0; n < out.raw().size(); ++n) out.raw()[n] += coeff * add.raw()[n];
    return out;
}

/// FNV-1a over raw bytes, hex-encoded; used for input hashes in certificates
/// and manifests.
inline std::string fnv1a_hex(const void* data, std::size_t size, std::uint64_t seed = 1469598103934665603ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Least-squares slope of ln(y) against ln(x).
struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0; ///< RMS residual of the log-log fit
};

inline SlopeFit fit_log_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw PreconditionError("fit_log_slope: need at least two samples");
    const std::size_t n = xs.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (xs[k] <= 0.0 || ys[k] <= 0.0) throw FitDegenerate("fit_log_slope: nonpositive sample");
        const double lx = std::log(xs[k]), ly = std::log(ys[k]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-14) throw FitDegenerate("fit_log_slope: degenerate abscissae");
    SlopeFit f;
    f.slope = (n * sxy - sx * sy) / denom;
    f.intercept = (sy - f.slope * sx) / n;
    double rss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double e = std::log(ys[k]) - (f.intercept + f.slope * std::log(xs[k]));
        rss += e * e;
    }
    f.residual = std::sqrt(rss / n);
    return f;
}

} // namespace isocorr
