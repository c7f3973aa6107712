#include "isocorr/frames.hpp"

#include <doctest.h>

#include <cmath>

using namespace isocorr;

namespace {

MapField flat_inclusion(const Grid& g, int m = 8) {
    return MapField::sample(g, m, [&](double x, double y, double* out) {
        for (int k = 0; k < m; ++k) out[k] = 0.0;
        out[0] = x;
        out[1] = y;
    });
}

MapField graph_map(const Grid& g, double amp, double freq) {
    return MapField::sample(g, 8, [&](double x, double y, double* out) {
        for (int k = 0; k < 8; ++k) out[k] = 0.0;
        out[0] = x;
        out[1] = y;
        out[2] = amp * std::sin(freq * x) * std::cos(freq * y);
    });
}

} // namespace

TEST_CASE("flat inclusion produces the constant coordinate frame") {
    const Grid g = make_grid(1.0, 32);
    const NormalFrame f = normal_frame(flat_inclusion(g), 6);
    CHECK(f.orthonormality_defect <= 1e-12);
    CHECK(f.tangency_defect <= 1e-12);
    CHECK(f.max_neighbor_deviation <= 1e-12);
    for (int s = 0; s < 6; ++s)
        for (int k = 0; k < 8; ++k)
            CHECK(f.zeta[s].at(7, 9, k) == doctest::Approx(k == s + 2 ? 1.0 : 0.0).epsilon(1e-13));
}

TEST_CASE("quadratic graph: tangency within 10 h^2 against the exact normal") {
    const Grid g = make_grid(1.0, 128);
    const double h = g.dx();
    const MapField v = MapField::sample(g, 8, [](double x, double y, double* out) {
        for (int k = 0; k < 8; ++k) out[k] = 0.0;
        out[0] = x;
        out[1] = y;
        out[2] = 0.1 * x * x;
    });
    const NormalFrame f = normal_frame(v, 6);
    CHECK(f.orthonormality_defect <= 1e-10);
    CHECK(f.tangency_defect <= 10.0 * h * h);

    // the first frame member against the closed-form graph normal
    double worst = 0.0;
    for (int j = 2; j < g.ny - 2; ++j)
        for (int i = 2; i < g.nx - 2; ++i) {
            const double slope = 0.2 * g.x(i);
            const double norm = std::sqrt(1.0 + slope * slope);
            const double exact0 = -slope / norm, exact2 = 1.0 / norm;
            worst = std::max(worst, std::abs(f.zeta[0].at(i, j, 0) - exact0));
            worst = std::max(worst, std::abs(f.zeta[0].at(i, j, 2) - exact2));
        }
    CHECK(worst <= 10.0 * h * h);
}

TEST_CASE("tangent-plane seeds lose rank") {
    const Grid g = make_grid(1.0, 32);
    const MapField v = flat_inclusion(g);
    std::vector<std::vector<double>> seeds(2, std::vector<double>(8, 0.0));
    seeds[0][0] = 1.0; // both seeds inside the tangent plane
    seeds[1][1] = 1.0;
    CHECK_THROWS_AS(normal_frame(v, 2, 4.0, &seeds), DegenerateSeed);
}

TEST_CASE("metric bound violation is reported") {
    const Grid g = make_grid(1.0, 32);
    const MapField v = MapField::sample(g, 8, [](double x, double y, double* out) {
        for (int k = 0; k < 8; ++k) out[k] = 0.0;
        out[0] = 5.0 * x; // pullback eigenvalue 25 exceeds gamma = 4
        out[1] = y;
    });
    CHECK_THROWS_AS(normal_frame(v, 6, 4.0), FailsMetricBounds);
}

TEST_CASE("Gram-Schmidt idempotence on the produced frame") {
    const Grid g = make_grid(1.0, 48);
    const NormalFrame f = normal_frame(graph_map(g, 0.08, 3.0), 6);
    // re-orthonormalizing the frame members changes nothing
    for (int j : {0, 17, g.ny - 1})
        for (int i : {0, 23, g.nx - 1}) {
            std::vector<std::vector<double>> z(6, std::vector<double>(8));
            for (int s = 0; s < 6; ++s)
                for (int k = 0; k < 8; ++k) z[s][k] = f.zeta[s].at(i, j, k);
            for (int s = 0; s < 6; ++s) {
                for (int t = 0; t < s; ++t) {
                    double dot = 0.0;
                    for (int k = 0; k < 8; ++k) dot += z[s][k] * z[t][k];
                    for (int k = 0; k < 8; ++k) z[s][k] -= dot * z[t][k];
                }
                double norm = 0.0;
                for (int k = 0; k < 8; ++k) norm += z[s][k] * z[s][k];
                norm = std::sqrt(norm);
                for (int k = 0; k < 8; ++k) {
                    z[s][k] /= norm;
                    CHECK(std::abs(z[s][k] - f.zeta[s].at(i, j, k)) <= 1e-12);
                }
            }
        }
}

TEST_CASE("rotation equivariance with rotated seeds") {
    const Grid g = make_grid(1.0, 32);
    const MapField v = graph_map(g, 0.05, 2.0);

    // rotation in the (2,5) plane of R^8
    const double ang = 0.7;
    auto rotate = [&](const std::vector<double>& in) {
        std::vector<double> out = in;
        out[2] = std::cos(ang) * in[2] - std::sin(ang) * in[5];
        out[5] = std::sin(ang) * in[2] + std::cos(ang) * in[5];
        return out;
    };
    MapField qv(g, 8);
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            std::vector<double> val(8);
            for (int k = 0; k < 8; ++k) val[k] = v.at(i, j, k);
            const std::vector<double> rv = rotate(val);
            for (int k = 0; k < 8; ++k) qv.at(i, j, k) = rv[k];
        }

    std::vector<std::vector<double>> seeds(6, std::vector<double>(8, 0.0));
    for (int s = 0; s < 6; ++s) seeds[s][2 + s] = 1.0;
    std::vector<std::vector<double>> rseeds;
    for (const auto& s : seeds) rseeds.push_back(rotate(s));

    const NormalFrame fa = normal_frame(v, 6, 4.0, &seeds);
    const NormalFrame fb = normal_frame(qv, 6, 4.0, &rseeds);
    double worst = 0.0;
    for (int s = 0; s < 6; ++s)
        for (int j : {3, 20})
            for (int i : {5, 28}) {
                std::vector<double> za(8);
                for (int k = 0; k < 8; ++k) za[k] = fa.zeta[s].at(i, j, k);
                const std::vector<double> rza = rotate(za);
                for (int k = 0; k < 8; ++k)
                    worst = std::max(worst, std::abs(rza[k] - fb.zeta[s].at(i, j, k)));
            }
    CHECK(worst <= 1e-10);
}

TEST_CASE("frame estimate shape across a corrugated family") {
    // |zeta|_1 <= C (1 + |v|_2) with one fitted constant stable within x2
    std::vector<double> constants;
    const Grid g = make_grid(1.0, 96);
    for (double amp : {0.02, 0.05, 0.1}) {
        const MapField v = graph_map(g, amp, 4.0);
        const NormalFrame f = normal_frame(v, 6);
        double zeta_c1 = 0.0;
        for (const MapField& z : f.zeta) zeta_c1 = std::max(zeta_c1, ck_norm(z, 1));
        constants.push_back(zeta_c1 / (1.0 + ck_norm(v, 2)));
    }
    const double cmax = *std::max_element(constants.begin(), constants.end());
    const double cmin = *std::min_element(constants.begin(), constants.end());
    CHECK(cmax / cmin <= 2.0);
}
