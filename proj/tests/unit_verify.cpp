#include "isocorr/verify.hpp"

#include <doctest.h>

#include <cmath>

using namespace isocorr;

namespace {

// exact isometric product extension of the unit circle in the plane, in Fermi
// coordinates: g = (1-t)^2 dx^2 + dt^2, u = (1-t)(cos x, sin x, 0, ...)
std::pair<CollarChart, SigmaData> smooth_isometry_problem(int nx, int nt, MapField* u_out) {
    CollarChart collar;
    collar.grid = make_grid(2.0 * M_PI, 0.1, nx, nt, true, false);
    collar.G = ScalarField::sample(collar.grid,
                                   [](double, double t) { return (1.0 - t) * (1.0 - t); });
    SigmaData sd;
    sd.m = 8;
    sd.nx = nx;
    sd.f.assign(static_cast<std::size_t>(nx) * 8, 0.0);
    sd.mu.assign(static_cast<std::size_t>(nx) * 8, 0.0);
    sd.L.assign(nx, 1.0); // -1/2 d_t (1-t)^2 at t=0
    for (int i = 0; i < nx; ++i) {
        const double x = collar.grid.x(i);
        sd.f[static_cast<std::size_t>(i) * 8 + 0] = std::cos(x);
        sd.f[static_cast<std::size_t>(i) * 8 + 1] = std::sin(x);
        sd.mu[static_cast<std::size_t>(i) * 8 + 0] = -std::cos(x);
        sd.mu[static_cast<std::size_t>(i) * 8 + 1] = -std::sin(x);
    }
    if (u_out)
        *u_out = MapField::sample(collar.grid, 8, [](double x, double t, double* out) {
            for (int k = 0; k < 8; ++k) out[k] = 0.0;
            out[0] = (1.0 - t) * std::cos(x);
            out[1] = (1.0 - t) * std::sin(x);
        });
    return {std::move(collar), std::move(sd)};
}

} // namespace

TEST_CASE("connection gap vanishes for the smooth isometry and refines like h") {
    std::vector<double> hs, gaps;
    for (int n : {64, 128, 256}) {
        MapField u;
        auto [collar, sd] = smooth_isometry_problem(n, std::max(n / 4, 16), &u);
        const GapReport rep = connection_gap(u, sd, collar);
        const double h = collar.grid.h_max();
        const double worst = std::max(std::abs(rep.min_gap), std::abs(rep.max_gap));
        CHECK(worst <= 10.0 * h);
        hs.push_back(h);
        gaps.push_back(worst);
    }
    const SlopeFit fit = fit_log_slope(hs, gaps);
    CHECK(fit.slope >= 1.0);
}

TEST_CASE("connection gap equals the admissibility margin for the short extension") {
    auto [collar, sd] = make_circle_problem(1.0, 0.0, 0.05, 256, 64);
    const std::vector<double> margin = check_admissible(sd, collar);
    const MapField u = short_extension(sd, collar);
    const GapReport rep = connection_gap(u, sd, collar);
    const double h = collar.grid.h_max();
    for (int i = 0; i < sd.nx; i += 13) {
        const double gap = rep.connection[i] - rep.second_form[i];
        CHECK(std::abs(gap - margin[i]) <= 10.0 * h);
        CHECK(gap > 0.0);
    }
}

TEST_CASE("gap report is invariant under target-space rotations") {
    auto [collar, sd] = make_circle_problem(1.0, 0.0, 0.05, 128, 32);
    MapField u = short_extension(sd, collar);
    const GapReport base = connection_gap(u, sd, collar);

    // rotate target coordinates (0, 5) and (1, 6); rotate f and mu with it
    const double c = std::cos(0.8), s = std::sin(0.8);
    auto rotate_vec = [&](double* v) {
        const double a0 = v[0], a5 = v[5], a1 = v[1], a6 = v[6];
        v[0] = c * a0 - s * a5;
        v[5] = s * a0 + c * a5;
        v[1] = c * a1 - s * a6;
        v[6] = s * a1 + c * a6;
    };
    MapField ru = u;
    for (int j = 0; j < collar.grid.ny; ++j)
        for (int i = 0; i < collar.grid.nx; ++i) rotate_vec(ru.node(i, j));
    SigmaData rsd = sd;
    for (int i = 0; i < sd.nx; ++i) {
        rotate_vec(&rsd.f[static_cast<std::size_t>(i) * 8]);
        rotate_vec(&rsd.mu[static_cast<std::size_t>(i) * 8]);
    }
    const GapReport rot = connection_gap(ru, rsd, collar);
    for (int i = 0; i < sd.nx; ++i)
        CHECK(std::abs(base.connection[i] - rot.connection[i]) <= 1e-10);
}

TEST_CASE("holder exponent estimator") {
    SUBCASE("smooth fields read as Lipschitz") {
        const Grid g = make_grid(1.0, 128);
        const ScalarField f =
            ScalarField::sample(g, [](double x, double y) { return std::sin(3.0 * x) + y; });
        const VectorField df = gradient(f);
        const SlopeFit fit = holder_exponent_estimate(df.view(), default_radius_ladder(g));
        CHECK(fit.slope >= 0.95);
    }

    SUBCASE("synthetic power profile is recovered") {
        const Grid g = make_grid(1.0, 129); // cusp centered on a node
        const double cx = 0.5, cy = 0.5;
        // a field whose gradient has a |x - c|^{0.4} cusp profile
        MapField grad_f(g, 2);
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const double dx = g.x(i) - cx, dy = g.y(j) - cy;
                const double r = std::hypot(dx, dy);
                const double mag = std::pow(r, 0.4);
                grad_f.at(i, j, 0) = r > 0 ? mag * dx / r : 0.0;
                grad_f.at(i, j, 1) = r > 0 ? mag * dy / r : 0.0;
            }
        std::vector<double> ladder;
        for (double r = 2.0 * g.h_max(); r <= 0.12; r *= 2.0) ladder.push_back(r);
        const SlopeFit fit = holder_exponent_estimate(grad_f.view(), ladder);
        CHECK(std::abs(fit.slope - 0.4) <= 0.05);

        // brute-force oracle at coarse resolution: max over all pairs at the
        // smallest ladder radius reproduces the estimator's modulus
        const Grid coarse = make_grid(1.0, 32);
        MapField cg(coarse, 2);
        for (int j = 0; j < coarse.ny; ++j)
            for (int i = 0; i < coarse.nx; ++i) {
                const double dx = coarse.x(i) - cx, dy = coarse.y(j) - cy;
                const double r = std::hypot(dx, dy);
                const double mag = std::pow(r, 0.4);
                cg.at(i, j, 0) = r > 0 ? mag * dx / r : 0.0;
                cg.at(i, j, 1) = r > 0 ? mag * dy / r : 0.0;
            }
        const double r0 = 4.0 * coarse.h_max();
        const double est = modulus_ladder(cg.view(), {r0})[0];
        double oracle = 0.0;
        const int step = static_cast<int>(std::lround(r0 / coarse.dx()));
        for (int j = 0; j < coarse.ny; ++j)
            for (int i = 0; i + step < coarse.nx; ++i) {
                double d = 0.0;
                for (int k = 0; k < 2; ++k) {
                    const double t = cg.at(i + step, j, k) - cg.at(i, j, k);
                    d += t * t;
                }
                oracle = std::max(oracle, std::sqrt(d));
            }
        CHECK(est >= oracle - 1e-12); // the estimator also probes diagonals
    }

    SUBCASE("constant field degenerates") {
        const Grid g = make_grid(1.0, 64);
        const ScalarField f = ScalarField::sample(g, [](double, double) { return 7.0; });
        CHECK_THROWS_AS(holder_exponent_estimate(f.view(), default_radius_ladder(g)),
                        FitDegenerate);
    }
}

TEST_CASE("stage certificate ledger") {
    StageCertificate c;
    c.delta = 0.09;
    c.lambda = 50.0;
    c.tau = 1.5;
    c.du_c0 = 1e-3;
    c.bound_du_c0 = 2e-3;
    c.du_c1 = 0.2;
    c.bound_du_c1 = 0.3;
    c.v_c2 = 100.0;
    c.bound_v_c2 = 106.0;
    c.err_c0 = 1e-3;
    c.bound_err_c0 = 1.8e-3;
    c.err_c1 = 4.0;
    c.bound_err_c1 = 4.5;
    const auto entries = stage_certificate(c);
    REQUIRE(entries.size() == 5);
    for (const auto& e : entries) {
        CHECK(std::isfinite(e.ratio));
        CHECK(e.ratio > 0.0);
        CHECK(e.ratio == doctest::Approx(e.measured / e.bound));
    }
}

TEST_CASE("ladder slope fits recover planted scalings") {
    std::vector<StageCertificate> certs;
    for (double lambda : {50.0, 100.0, 200.0}) {
        StageCertificate c;
        c.lambda = lambda;
        c.tau = 1.5;
        c.err_c0 = 3.0 * std::pow(lambda, -1.0);
        c.du_c0 = 0.5 * std::pow(lambda, -1.5);
        c.v_c2 = 0.2 * std::pow(lambda, 1.5);
        c.du_c1 = 0.4;
        certs.push_back(c);
    }
    const LadderSlopes s = ladder_slopes(certs);
    CHECK(s.err_c0.slope == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(s.du_c0.slope == doctest::Approx(-1.5).epsilon(1e-12));
    CHECK(s.v_c2.slope == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(s.du_c1_spread == doctest::Approx(1.0));
}
