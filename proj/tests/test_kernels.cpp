#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsb/kernels.hpp"
#include "rsb/rng.hpp"

using rsb::Rng;
namespace kn = rsb::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rng.normal();
    }
    return v;
}

// Plain triple loops, written independently of the library kernels so they
// can serve as oracles.
void ref_gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t j = 0; j < n; ++j) {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
}

void ref_gemm_tn(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                c[i * n + j] += a[p * m + i] * b[p * n + j];
            }
        }
    }
}

void ref_gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a[i * k + p] * b[j * k + p];
            }
            c[i * n + j] += acc;
        }
    }
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

} // namespace

TEST_SUITE("kernels") {

TEST_CASE("scalar gemm variants match reference triple loops") {
    const kn::Ops& ops = kn::table(kn::Isa::scalar);
    Rng rng(101);
    // Sizes straddle typical vector widths to exercise remainder handling.
    const std::size_t dims[] = {1, 2, 3, 4, 5, 7, 8, 9, 16, 17};
    for (std::size_t m : dims) {
        for (std::size_t k : dims) {
            for (std::size_t n : dims) {
                auto a = random_vec(m * k, rng);
                auto b = random_vec(k * n, rng);
                auto c0 = random_vec(m * n, rng);

                auto got_nn = c0;
                auto want_nn = c0;
                ops.gemm_nn(a.data(), b.data(), got_nn.data(), m, k, n);
                ref_gemm_nn(a.data(), b.data(), want_nn.data(), m, k, n);
                CHECK(max_abs_diff(got_nn, want_nn) < 1e-11);

                auto at = random_vec(k * m, rng);
                auto got_tn = c0;
                auto want_tn = c0;
                ops.gemm_tn(at.data(), b.data(), got_tn.data(), m, k, n);
                ref_gemm_tn(at.data(), b.data(), want_tn.data(), m, k, n);
                CHECK(max_abs_diff(got_tn, want_tn) < 1e-11);

                auto bt = random_vec(n * k, rng);
                auto got_nt = c0;
                auto want_nt = c0;
                ops.gemm_nt(a.data(), bt.data(), got_nt.data(), m, k, n);
                ref_gemm_nt(a.data(), bt.data(), want_nt.data(), m, k, n);
                CHECK(max_abs_diff(got_nt, want_nt) < 1e-11);
            }
        }
    }
}

TEST_CASE("scalar vector ops match hand oracles") {
    const kn::Ops& ops = kn::table(kn::Isa::scalar);

    SUBCASE("dot") {
        const double x[] = {1.0, 2.0, 3.0};
        const double y[] = {4.0, -5.0, 6.0};
        CHECK(ops.dot(x, y, 3) == doctest::Approx(4.0 - 10.0 + 18.0).epsilon(1e-15));
        CHECK(ops.dot(x, y, 0) == 0.0);
    }

    SUBCASE("sum_sq") {
        const double x[] = {3.0, 4.0};
        CHECK(ops.sum_sq(x, 2) == doctest::Approx(25.0).epsilon(1e-15));
        CHECK(ops.sum_sq(x, 0) == 0.0);
    }

    SUBCASE("axpy") {
        const double x[] = {1.0, 2.0, 3.0};
        double y[] = {10.0, 20.0, 30.0};
        ops.axpy(2.0, x, y, 3);
        CHECK(y[0] == 12.0);
        CHECK(y[1] == 24.0);
        CHECK(y[2] == 36.0);
    }

    SUBCASE("add_bias_rows") {
        double mat[] = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};  // 2 x 3
        const double bias[] = {0.5, -0.5, 1.0};
        ops.add_bias_rows(mat, bias, 2, 3);
        CHECK(mat[0] == 1.5);
        CHECK(mat[1] == 1.5);
        CHECK(mat[2] == 4.0);
        CHECK(mat[3] == 4.5);
        CHECK(mat[4] == 4.5);
        CHECK(mat[5] == 7.0);
    }
}

TEST_CASE("scalar adam_update follows the bias-corrected formula") {
    const kn::Ops& ops = kn::table(kn::Isa::scalar);
    const double lr = 0.1;
    const double beta1 = 0.9;
    const double beta2 = 0.999;
    const double eps = 1e-8;

    Rng rng(7);
    const std::size_t n = 5;
    auto w = random_vec(n, rng);
    std::vector<double> m(n, 0.0);
    std::vector<double> v(n, 0.0);
    auto ref_w = w;
    auto ref_m = m;
    auto ref_v = v;

    for (std::uint64_t step = 1; step <= 4; ++step) {
        auto g = random_vec(n, rng);
        const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        ops.adam_update(w.data(), g.data(), m.data(), v.data(), n, lr, beta1, beta2,
                        eps, bias1, bias2);
        // textbook reference recurrence
        for (std::size_t i = 0; i < n; ++i) {
            ref_m[i] = beta1 * ref_m[i] + (1.0 - beta1) * g[i];
            ref_v[i] = beta2 * ref_v[i] + (1.0 - beta2) * g[i] * g[i];
            const double m_hat = ref_m[i] / bias1;
            const double v_hat = ref_v[i] / bias2;
            ref_w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
        CHECK(max_abs_diff(w, ref_w) < 1e-14);
        CHECK(max_abs_diff(m, ref_m) < 1e-14);
        CHECK(max_abs_diff(v, ref_v) < 1e-14);
    }
}

TEST_CASE("avx2 table agrees with scalar on all ops") {
    if (!kn::avx2_available()) {
        MESSAGE("avx2 unavailable on this CPU; equivalence not exercised");
        return;
    }
    const kn::Ops& sc = kn::table(kn::Isa::scalar);
    const kn::Ops& vx = kn::table(kn::Isa::avx2);
    CHECK(std::string(sc.name) == "scalar");
    CHECK(std::string(vx.name) == "avx2");

    Rng rng(202);
    const std::size_t dims[] = {1, 2, 3, 4, 5, 7, 8, 9, 13, 16, 17, 31, 32, 33};

    SUBCASE("gemm") {
        for (std::size_t m : {std::size_t(1), std::size_t(3), std::size_t(8)}) {
            for (std::size_t k : dims) {
                for (std::size_t n : dims) {
                    auto a = random_vec(m * k, rng);
                    auto b = random_vec(k * n, rng);
                    auto c = random_vec(m * n, rng);

                    auto got = c;
                    auto want = c;
                    vx.gemm_nn(a.data(), b.data(), got.data(), m, k, n);
                    sc.gemm_nn(a.data(), b.data(), want.data(), m, k, n);
                    CHECK(max_abs_diff(got, want) < 1e-12);

                    auto at = random_vec(k * m, rng);
                    got = c;
                    want = c;
                    vx.gemm_tn(at.data(), b.data(), got.data(), m, k, n);
                    sc.gemm_tn(at.data(), b.data(), want.data(), m, k, n);
                    CHECK(max_abs_diff(got, want) < 1e-12);

                    auto bt = random_vec(n * k, rng);
                    got = c;
                    want = c;
                    vx.gemm_nt(a.data(), bt.data(), got.data(), m, k, n);
                    sc.gemm_nt(a.data(), bt.data(), want.data(), m, k, n);
                    CHECK(max_abs_diff(got, want) < 1e-12);
                }
            }
        }
    }

    SUBCASE("vector ops") {
        for (std::size_t n : dims) {
            auto x = random_vec(n, rng);
            auto y = random_vec(n, rng);

            CHECK(std::abs(vx.dot(x.data(), y.data(), n) - sc.dot(x.data(), y.data(), n)) <
                  1e-12);
            CHECK(std::abs(vx.sum_sq(x.data(), n) - sc.sum_sq(x.data(), n)) < 1e-12);

            auto y1 = y;
            auto y2 = y;
            vx.axpy(0.37, x.data(), y1.data(), n);
            sc.axpy(0.37, x.data(), y2.data(), n);
            CHECK(max_abs_diff(y1, y2) < 1e-14);
        }
    }

    SUBCASE("add_bias_rows") {
        for (std::size_t cols : dims) {
            const std::size_t rows = 3;
            auto mat1 = random_vec(rows * cols, rng);
            auto mat2 = mat1;
            auto bias = random_vec(cols, rng);
            vx.add_bias_rows(mat1.data(), bias.data(), rows, cols);
            sc.add_bias_rows(mat2.data(), bias.data(), rows, cols);
            CHECK(max_abs_diff(mat1, mat2) < 1e-14);
        }
    }

    SUBCASE("adam_update") {
        for (std::size_t n : dims) {
            auto w1 = random_vec(n, rng);
            auto w2 = w1;
            auto g = random_vec(n, rng);
            auto m1 = random_vec(n, rng);
            auto m2 = m1;
            std::vector<double> v1(n);
            for (auto& e : v1) {
                e = std::abs(rng.normal());
            }
            auto v2 = v1;
            vx.adam_update(w1.data(), g.data(), m1.data(), v1.data(), n, 1e-3, 0.9,
                           0.999, 1e-8, 0.1, 0.001);
            sc.adam_update(w2.data(), g.data(), m2.data(), v2.data(), n, 1e-3, 0.9,
                           0.999, 1e-8, 0.1, 0.001);
            CHECK(max_abs_diff(w1, w2) < 1e-12);
            CHECK(max_abs_diff(m1, m2) < 1e-12);
            CHECK(max_abs_diff(v1, v2) < 1e-12);
        }
    }
}

TEST_CASE("dispatch: force and detect") {
    const kn::Isa detected = kn::detect();
    // detect() must pick something the table accepts
    CHECK_NOTHROW(kn::table(detected));

    kn::force(kn::Isa::scalar);
    CHECK(std::string(kn::active().name) == "scalar");

    if (kn::avx2_available()) {
        kn::force(kn::Isa::avx2);
        CHECK(std::string(kn::active().name) == "avx2");
        CHECK(detected == kn::Isa::avx2);
    } else {
        CHECK_THROWS_AS(kn::force(kn::Isa::avx2), std::runtime_error);
        CHECK_THROWS_AS(kn::table(kn::Isa::avx2), std::runtime_error);
    }

    // leave the process in the default state for the other suites
    kn::force(detected);
}

} // TEST_SUITE
