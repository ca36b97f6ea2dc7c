#include <catch2/catch_amalgamated.hpp>

#include <superproc/fft.hpp>
#include <superproc/quadrature.hpp>
#include <superproc/rng.hpp>

#include <cmath>
#include <complex>
#include <vector>

using namespace superproc;

TEST_CASE("rng reproduces the same stream for the same seed") {
    Rng a(12345), b(12345);
    for (int i = 0; i < 100; ++i) REQUIRE(a() == b());
}

TEST_CASE("rng uniform stays in [0,1) with sane moments") {
    Rng rng(7);
    double sum = 0.0, sum2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
        sum2 += u * u;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    // sigma(mean) = sqrt(1/12/n) ~ 6.5e-4
    REQUIRE(std::abs(mean - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / n));
    REQUIRE(std::abs(var - 1.0 / 12.0) < 0.002);
}

TEST_CASE("rng exponential and normal moments") {
    Rng rng(99);
    const int n = 400000;
    double se = 0.0, sn = 0.0, sn2 = 0.0, sn4 = 0.0;
    for (int i = 0; i < n; ++i) {
        se += rng.exponential();
        double z = rng.normal();
        sn += z;
        sn2 += z * z;
        sn4 += z * z * z * z;
    }
    REQUIRE(std::abs(se / n - 1.0) < 3.0 / std::sqrt(static_cast<double>(n)));
    REQUIRE(std::abs(sn / n) < 3.0 / std::sqrt(static_cast<double>(n)));
    REQUIRE(std::abs(sn2 / n - 1.0) < 3.0 * std::sqrt(2.0 / n));
    REQUIRE(std::abs(sn4 / n - 3.0) < 3.0 * std::sqrt(96.0 / n));
}

TEST_CASE("seed_stream: same (seed, id) twice gives identical first 100 draws") {
    Rng a = seed_stream(42, 17);
    Rng b = seed_stream(42, 17);
    for (int i = 0; i < 100; ++i) REQUIRE(a() == b());
}

TEST_CASE("seed_stream: ids 0 and 1 are uncorrelated") {
    Rng a = seed_stream(42, 0);
    Rng b = seed_stream(42, 1);
    const int n = 10000;
    double sxy = 0.0, sx = 0.0, sy = 0.0, sx2 = 0.0, sy2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = a.uniform(), y = b.uniform();
        sx += x;
        sy += y;
        sx2 += x * x;
        sy2 += y * y;
        sxy += x * y;
    }
    double cov = sxy / n - (sx / n) * (sy / n);
    double corr = cov / std::sqrt((sx2 / n - (sx / n) * (sx / n)) *
                                  (sy2 / n - (sy / n) * (sy / n)));
    // corr of n iid pairs has sigma ~ 1/sqrt(n)
    REQUIRE(std::abs(corr) < 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("seed_stream: changing the master seed changes the draws") {
    Rng a = seed_stream(42, 0);
    Rng b = seed_stream(43, 0);
    int differing = 0;
    for (int i = 0; i < 100; ++i)
        if (a() != b()) ++differing;
    REQUIRE(differing > 90);
}

TEST_CASE("gl15 integrates low-degree polynomials exactly") {
    auto cube = [](double x) { return x * x * x - 2.0 * x + 1.0; };
    // antiderivative x^4/4 - x^2 + x on [0,2]: 4 - 4 + 2 = 2
    REQUIRE(integrate_gl15(cube, 0.0, 2.0) == Catch::Approx(2.0).epsilon(1e-14));
    auto sq = [](double x) { return x * x; };
    REQUIRE(integrate_gl15(sq, 0.0, 1.0) == Catch::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("adaptive quadrature handles a sharp peak") {
    auto peak = [](double x) { return std::exp(-1000.0 * (x - 0.3) * (x - 0.3)); };
    auto res = integrate_adaptive(peak, 0.0, 1.0, 1e-12);
    const double exact = std::sqrt(3.141592653589793 / 1000.0); // tails < 1e-80
    REQUIRE(res.converged);
    REQUIRE(std::abs(res.value - exact) < 1e-10);
}

TEST_CASE("adaptive quadrature reports oscillatory integrals correctly") {
    auto f = [](double x) { return std::cos(50.0 * x); };
    auto res = integrate_adaptive(f, 0.0, 1.0, 1e-12);
    REQUIRE(res.converged);
    REQUIRE(std::abs(res.value - std::sin(50.0) / 50.0) < 1e-10);
}

TEST_CASE("fft round trip and known transforms") {
    std::vector<std::complex<double>> delta(8, {0.0, 0.0});
    delta[0] = 1.0;
    fft_inplace(delta, false);
    for (auto& z : delta) {
        REQUIRE(z.real() == Catch::Approx(1.0).margin(1e-14));
        REQUIRE(z.imag() == Catch::Approx(0.0).margin(1e-14));
    }

    Rng rng(5);
    std::vector<std::complex<double>> v(256);
    for (auto& z : v) z = {rng.uniform() - 0.5, rng.uniform() - 0.5};
    auto w = v;
    fft_inplace(w, false);

    // Parseval: sum |x|^2 = (1/n) sum |X|^2
    double ex = 0.0, ew = 0.0;
    for (auto& z : v) ex += std::norm(z);
    for (auto& z : w) ew += std::norm(z);
    REQUIRE(ex == Catch::Approx(ew / 256.0).epsilon(1e-12));

    fft_inplace(w, true);
    for (std::size_t i = 0; i < v.size(); ++i)
        REQUIRE(std::abs(w[i] - v[i]) < 1e-12);
}

TEST_CASE("fft of a pure cosine lands in two bins") {
    const std::size_t n = 64;
    const double pi = 3.141592653589793238462643383279502884;
    std::vector<std::complex<double>> v(n);
    for (std::size_t j = 0; j < n; ++j)
        v[j] = std::cos(2.0 * pi * 5.0 * static_cast<double>(j) / n);
    fft_inplace(v, false);
    for (std::size_t k = 0; k < n; ++k) {
        double expected = (k == 5 || k == n - 5) ? n / 2.0 : 0.0;
        REQUIRE(std::abs(v[k] - std::complex<double>(expected, 0.0)) < 1e-10);
    }
}
