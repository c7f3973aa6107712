#include "isocorr/mollify.hpp"

#include <doctest.h>

#include <cmath>

using namespace isocorr;

TEST_CASE("kernel structure") {
    const Grid g = make_grid(1.0, 64);
    const Kernel k = make_kernel(g, 0.1);
    double total = 0.0;
    for (double w : k.weights) {
        CHECK(w >= 0.0);
        total += w;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    // support inside the ball of radius ell
    for (int b = -k.ry; b <= k.ry; ++b)
        for (int a = -k.rx; a <= k.rx; ++a)
            if (std::hypot(a * g.dx(), b * g.dy()) >= k.ell) CHECK(k.weight(a, b) == 0.0);
    // radial symmetry
    CHECK(k.weight(3, 2) == doctest::Approx(k.weight(-3, 2)));
    CHECK(k.weight(3, 2) == doctest::Approx(k.weight(2, 3)));
    CHECK_THROWS_AS(make_kernel(g, 0.5 * g.dx()), PreconditionError);
}

TEST_CASE("mollify fixes constants exactly") {
    const Grid g = make_grid(1.0, 64);
    const ScalarField f = ScalarField::sample(g, [](double, double) { return 4.2; });
    const ScalarField mf = mollify(f, 0.12);
    double worst = 0.0;
    for (std::size_t n = 0; n < mf.raw().size(); ++n)
        worst = std::max(worst, std::abs(mf.raw()[n] - 4.2));
    CHECK(worst <= 1e-12);
}

TEST_CASE("mollify fixes affine fields away from the wrap seam on a torus") {
    const Grid g = make_grid(2.0 * M_PI, 64, true);
    const ScalarField f = ScalarField::sample(g, [](double x, double y) { return x - 0.5 * y; });
    const double ell = 0.4;
    const ScalarField mf = mollify(f, ell);
    const int guard = static_cast<int>(std::ceil(ell / g.dx())) + 1;
    double worst = 0.0;
    for (int j = guard; j < g.ny - guard; ++j)
        for (int i = guard; i < g.nx - guard; ++i)
            worst = std::max(worst, std::abs(mf.at(i, j) - f.at(i, j)));
    CHECK(worst <= 1e-12);
}

TEST_CASE("affine extension fixes affine maps globally") {
    const Grid g = make_grid(1.0, 64);
    const MapField u = MapField::sample(g, 3, [](double x, double y, double* out) {
        out[0] = 2.0 * x + 0.3;
        out[1] = y - x;
        out[2] = 0.25 * y;
    });
    const MapField mu_even = mollify(u, 0.15, Extension::Even);
    const MapField mu_aff = mollify(u, 0.15, Extension::Affine);
    double worst_aff = 0.0, worst_even_boundary = 0.0;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            for (int k = 0; k < 3; ++k) {
                worst_aff = std::max(worst_aff, std::abs(mu_aff.at(i, j, k) - u.at(i, j, k)));
                if (i == 0 || j == 0)
                    worst_even_boundary = std::max(
                        worst_even_boundary, std::abs(mu_even.at(i, j, k) - u.at(i, j, k)));
            }
    CHECK(worst_aff <= 1e-12);
    CHECK(worst_even_boundary > 1e-3); // even reflection bends affine data at the boundary
}

TEST_CASE("approximation estimate |f - f*phi| <= C ell [f]_1 with C <= 1") {
    const Grid g = make_grid(2.0 * M_PI, 256, true);
    const ScalarField f = ScalarField::sample(g, [](double x, double) { return std::sin(x); });
    const double ell = 0.1;
    const ScalarField mf = mollify(f, ell);
    double diff = 0.0;
    for (std::size_t n = 0; n < mf.raw().size(); ++n)
        diff = std::max(diff, std::abs(mf.raw()[n] - f.raw()[n]));
    const double lip = holder_seminorm(f, 1.0);
    CHECK(diff <= 1.0 * ell * lip);
    CHECK(diff > 0.0);
}

TEST_CASE("node-value bounds are preserved") {
    const Grid g = make_grid(1.0, 64);
    const ScalarField f =
        ScalarField::sample(g, [](double x, double y) { return std::sin(7.0 * x) * std::cos(3.0 * y); });
    double lo = 1e300, hi = -1e300;
    for (double v : f.raw()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const ScalarField mf = mollify(f, 0.08);
    double worst_lo = 0.0, worst_hi = 0.0;
    for (double v : mf.raw()) {
        worst_lo = std::max(worst_lo, lo - v);
        worst_hi = std::max(worst_hi, v - hi);
    }
    CHECK(worst_lo <= 1e-12);
    CHECK(worst_hi <= 1e-12);
}

TEST_CASE("smoothing gain C2 <= C ell^{-1} C1 with stable constant across the ladder") {
    const Grid g = make_grid(2.0 * M_PI, 256, true);
    // content at every ladder scale, so the gain estimate is tight throughout
    const ScalarField f = ScalarField::sample(g, [](double x, double y) {
        double v = 0.0;
        for (int k = 0; k < 7; ++k)
            v += std::pow(0.5, k) * std::sin(std::pow(2.0, k) * x + 0.3 * k) * std::cos(y + 0.1 * k);
        return v;
    });
    const double c1 = ck_norm(f, 1);
    std::vector<double> constants;
    for (double ell : {0.2, 0.1, 0.05}) {
        const ScalarField mf = mollify(f, ell);
        constants.push_back(ck_norm(mf, 2) * ell / c1);
    }
    const double cmax = *std::max_element(constants.begin(), constants.end());
    const double cmin = *std::min_element(constants.begin(), constants.end());
    CHECK(cmax / cmin <= 2.0);
}

TEST_CASE("repeated mollification does not roughen") {
    const Grid g = make_grid(2.0 * M_PI, 256, true);
    const ScalarField f =
        ScalarField::sample(g, [](double x, double y) { return std::sin(5.0 * x) * std::sin(y); });
    const ScalarField once = mollify(f, 0.1);
    const ScalarField twice = mollify(once, 0.1);
    CHECK(ck_norm(twice, 2) <= ck_norm(once, 2) * (1.0 + 1e-12));
}

TEST_CASE("commutator defect") {
    const Grid g = make_grid(2.0 * M_PI, 256, true);

    SUBCASE("vanishes when one factor is constant") {
        const ScalarField f = ScalarField::sample(g, [](double, double) { return 2.0; });
        const ScalarField h = ScalarField::sample(g, [](double x, double) { return std::sin(x); });
        CHECK(commutator_defect(f, h, 0.1, 1.0) <= 1e-13);
    }

    SUBCASE("constant across an ell ladder within a factor 2") {
        const ScalarField f = ScalarField::sample(g, [](double x, double) { return std::sin(x); });
        std::vector<double> vals;
        for (double ell : {0.2, 0.1, 0.05}) vals.push_back(commutator_defect(f, f, ell, 1.0));
        const double vmax = *std::max_element(vals.begin(), vals.end());
        const double vmin = *std::min_element(vals.begin(), vals.end());
        CHECK(vmax / vmin <= 2.0);
    }

    SUBCASE("zero fields hit the guard path") {
        const ScalarField z(g);
        CHECK(commutator_defect(z, z, 0.1, 0.5) == 0.0);
    }
}

TEST_CASE("mollify commutes with addition") {
    const Grid g = make_grid(1.0, 64);
    const ScalarField f =
        ScalarField::sample(g, [](double x, double y) { return std::sin(5.0 * x) + y; });
    const ScalarField h =
        ScalarField::sample(g, [](double x, double y) { return std::cos(3.0 * y) - x * x; });
    ScalarField sum(g);
    for (std::size_t n = 0; n < sum.raw().size(); ++n) sum.raw()[n] = f.raw()[n] + h.raw()[n];
    const ScalarField m_sum = mollify(sum, 0.1);
    const ScalarField mf = mollify(f, 0.1);
    const ScalarField mh = mollify(h, 0.1);
    double worst = 0.0;
    for (std::size_t n = 0; n < sum.raw().size(); ++n)
        worst = std::max(worst, std::abs(m_sum.raw()[n] - mf.raw()[n] - mh.raw()[n]));
    CHECK(worst <= 1e-13);
}

TEST_CASE("separable path at large stencil radius behaves like the small-kernel one") {
    // ell/h = 38 here, well past the separable switch
    const Grid g = make_grid(1.0, 128);
    const MapField u = MapField::sample(g, 2, [](double x, double y, double* out) {
        out[0] = 0.5 * x - y + 1.0;
        out[1] = 2.0 * y;
    });
    const MapField mu = mollify(u, 0.3, Extension::Affine);
    double worst = 0.0;
    for (std::size_t n = 0; n < mu.raw().size(); ++n)
        worst = std::max(worst, std::abs(mu.raw()[n] - u.raw()[n]));
    CHECK(worst <= 1e-12); // affine fixed exactly through the two-pass kernel

    const ScalarField f =
        ScalarField::sample(g, [](double x, double y) { return std::sin(9.0 * x) * std::cos(4.0 * y); });
    const ScalarField mf = mollify(f, 0.3);
    double lo = 1e300, hi = -1e300;
    for (double v : f.raw()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : mf.raw()) {
        CHECK(v >= lo - 1e-12);
        CHECK(v <= hi + 1e-12);
    }
    // constants preserved exactly on the separable path too
    const ScalarField c = ScalarField::sample(g, [](double, double) { return -3.25; });
    const ScalarField mc = mollify(c, 0.3);
    for (double v : mc.raw()) CHECK(v == doctest::Approx(-3.25).epsilon(1e-14));
}
