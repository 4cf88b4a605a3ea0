#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "rsb/dataio.hpp"
#include "rsb/errors.hpp"
#include "rsb/evaluation.hpp"
#include "rsb/model.hpp"
#include "rsb/rng.hpp"

using namespace rsb;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rng.normal();
    }
    return v;
}

// Brute-force twin of pehe_nn, written with its own loops.
double pehe_nn_oracle(const Matrix& xq, const std::vector<int>& tq,
                      const std::vector<double>& yq, const std::vector<double>& y1,
                      const std::vector<double>& y0, const Matrix& xp,
                      const std::vector<int>& tp, const std::vector<double>& yp) {
    double acc = 0.0;
    for (std::size_t i = 0; i < xq.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        double y_nn = 0.0;
        for (std::size_t j = 0; j < xp.rows(); ++j) {
            if (tp[j] == tq[i]) {
                continue;
            }
            double d2 = 0.0;
            for (std::size_t k = 0; k < xq.cols(); ++k) {
                const double d = xq.at(i, k) - xp.at(j, k);
                d2 += d * d;
            }
            if (d2 < best) {
                best = d2;
                y_nn = yp[j];
            }
        }
        const double sign = tq[i] == 1 ? -1.0 : 1.0;
        const double err = sign * (y_nn - yq[i]) - (y1[i] - y0[i]);
        acc += err * err;
    }
    return std::sqrt(acc / static_cast<double>(xq.rows()));
}

} // namespace

TEST_SUITE("eval") {

TEST_CASE("pehe basics and oracle") {
    const std::vector<double> mu1 = {5.0, 6.0, 7.0};
    const std::vector<double> mu0 = {1.0, 2.0, 3.0};
    const std::vector<double> perfect = {4.0, 4.0, 4.0};
    CHECK(pehe(perfect, mu1, mu0) == 0.0);
    CHECK(ate_error(perfect, mu1, mu0) == 0.0);

    // a constant bias c shows up as exactly |c| in both metrics
    const std::vector<double> shifted = {4.5, 4.5, 4.5};
    CHECK(pehe(shifted, mu1, mu0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(ate_error(shifted, mu1, mu0) == doctest::Approx(0.5).epsilon(1e-12));

    // +1/-1 errors cancel in the ATE but not in the PEHE
    const std::vector<double> mu1b = {5.0, 5.0};
    const std::vector<double> mu0b = {1.0, 1.0};
    const std::vector<double> skewed = {5.0, 3.0};
    CHECK(pehe(skewed, mu1b, mu0b) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ate_error(skewed, mu1b, mu0b) == 0.0);

    Rng rng(401);
    const auto tau = random_vec(50, rng);
    const auto m1 = random_vec(50, rng);
    const auto m0 = random_vec(50, rng);
    double acc = 0.0;
    double sum_hat = 0.0;
    double sum_true = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
        const double e = tau[i] - (m1[i] - m0[i]);
        acc += e * e;
        sum_hat += tau[i];
        sum_true += m1[i] - m0[i];
    }
    CHECK(pehe(tau, m1, m0) == doctest::Approx(std::sqrt(acc / 50.0)).epsilon(1e-12));
    CHECK(ate_error(tau, m1, m0) ==
          doctest::Approx(std::fabs(sum_hat / 50.0 - sum_true / 50.0)).epsilon(1e-10));

    const std::vector<double> short_vec = {1.0};
    CHECK_THROWS_AS(pehe(short_vec, mu1, mu0), ContractError);
    CHECK_THROWS_AS(ate_error(short_vec, mu1, mu0), ContractError);
    const std::vector<double> empty;
    CHECK_THROWS_AS(pehe(empty, empty, empty), ContractError);
}

TEST_CASE("ate error never exceeds pehe") {
    // |mean(e)| <= sqrt(mean(e^2)) for any error vector
    Rng rng(402);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 2 + rng.below(20);
        const auto tau = random_vec(n, rng);
        const auto m1 = random_vec(n, rng);
        const auto m0 = random_vec(n, rng);
        CHECK(ate_error(tau, m1, m0) <= pehe(tau, m1, m0) + 1e-12);
    }
}

TEST_CASE("nearest-neighbor proxy on a worked example") {
    const Matrix xq = Matrix::from_rows({{0.0}, {10.0}});
    const std::vector<int> tq = {0, 1};
    const std::vector<double> yq = {1.0, 5.0};
    const std::vector<double> y1_hat = {2.0, 6.0};
    const std::vector<double> y0_hat = {0.5, 3.0};
    const Matrix xp = Matrix::from_rows({{0.1}, {9.5}, {4.0}});
    const std::vector<int> tp = {1, 0, 1};
    const std::vector<double> yp = {3.0, 2.5, 9.9};

    // query 0 pairs with pool 0: proxy 2.0, model 1.5, err 0.5
    // query 1 pairs with pool 1: proxy 2.5, model 3.0, err -0.5
    const double got = pehe_nn(xq, tq, yq, y1_hat, y0_hat, xp, tp, yp);
    CHECK(got == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("nearest-neighbor ties resolve to the lowest pool index") {
    const Matrix xq = Matrix::from_rows({{0.0}});
    const std::vector<int> tq = {0};
    const std::vector<double> yq = {1.0};
    const std::vector<double> y1_hat = {4.0};
    const std::vector<double> y0_hat = {0.0};
    // pool rows 0 and 1 are equidistant from the query, both treated
    const Matrix xp = Matrix::from_rows({{1.0}, {-1.0}, {5.0}});
    const std::vector<int> tp = {1, 1, 0};
    const std::vector<double> yp = {2.0, 9.0, 0.0};

    const double got = pehe_nn(xq, tq, yq, y1_hat, y0_hat, xp, tp, yp);
    // neighbor is pool row 0: proxy 1.0, model 4.0
    CHECK(got == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("a perfect model on duplicated covariates scores zero") {
    // pool rows pair each covariate point with both arms, outcomes on exact
    // surfaces; a model reproducing those surfaces has no proxy error
    const Matrix xq = Matrix::from_rows({{0.0, 0.0}, {2.0, 1.0}, {5.0, -1.0}});
    const std::vector<int> tq = {0, 1, 0};
    auto mu0_of = [](double a, double b) { return a + b; };
    auto mu1_of = [](double a, double b) { return a + b + 7.0; };
    std::vector<double> yq(3);
    std::vector<double> y1_hat(3);
    std::vector<double> y0_hat(3);
    std::vector<std::vector<double>> pool_rows;
    std::vector<int> tp;
    std::vector<double> yp;
    for (std::size_t i = 0; i < 3; ++i) {
        const double a = xq.at(i, 0);
        const double b = xq.at(i, 1);
        yq[i] = tq[i] == 1 ? mu1_of(a, b) : mu0_of(a, b);
        y0_hat[i] = mu0_of(a, b);
        y1_hat[i] = mu1_of(a, b);
        pool_rows.push_back({a, b});
        tp.push_back(0);
        yp.push_back(mu0_of(a, b));
        pool_rows.push_back({a, b});
        tp.push_back(1);
        yp.push_back(mu1_of(a, b));
    }
    const Matrix xp = Matrix::from_rows(pool_rows);
    CHECK(pehe_nn(xq, tq, yq, y1_hat, y0_hat, xp, tp, yp) == 0.0);
}

TEST_CASE("nearest-neighbor proxy agrees with a brute-force twin") {
    Rng rng(403);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t nq = 5 + rng.below(10);
        const std::size_t np = 10 + rng.below(20);
        const std::size_t d = 1 + rng.below(4);
        Matrix xq(nq, d);
        for (auto& v : xq.storage()) {
            v = rng.normal();
        }
        Matrix xp(np, d);
        for (auto& v : xp.storage()) {
            v = rng.normal();
        }
        std::vector<int> tq(nq);
        for (auto& t : tq) {
            t = rng.bernoulli(0.5) ? 1 : 0;
        }
        std::vector<int> tp(np);
        bool has0 = false;
        bool has1 = false;
        for (auto& t : tp) {
            t = rng.bernoulli(0.5) ? 1 : 0;
            (t == 1 ? has1 : has0) = true;
        }
        if (!has0 || !has1) {
            tp[0] = 0;
            tp[1] = 1;
        }
        const auto yq = random_vec(nq, rng);
        const auto yp = random_vec(np, rng);
        const auto y1 = random_vec(nq, rng);
        const auto y0 = random_vec(nq, rng);

        const double got = pehe_nn(xq, tq, yq, y1, y0, xp, tp, yp);
        const double want = pehe_nn_oracle(xq, tq, yq, y1, y0, xp, tp, yp);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("nearest-neighbor proxy contract errors") {
    const Matrix xq = Matrix::from_rows({{0.0}});
    const std::vector<int> tq = {0};
    const std::vector<double> one = {1.0};
    const Matrix xp = Matrix::from_rows({{1.0}, {2.0}});
    const std::vector<double> two = {1.0, 2.0};

    // single-arm pool
    const std::vector<int> all_treated = {1, 1};
    CHECK_THROWS_AS(pehe_nn(xq, tq, one, one, one, xp, all_treated, two), ContractError);

    // mismatched dimensions
    const Matrix xp_wide = Matrix::from_rows({{1.0, 2.0}, {2.0, 3.0}});
    const std::vector<int> mixed = {0, 1};
    CHECK_THROWS_AS(pehe_nn(xq, tq, one, one, one, xp_wide, mixed, two), DimensionError);

    // length mismatch
    CHECK_THROWS_AS(pehe_nn(xq, tq, two, one, one, xp, mixed, two), ContractError);
}

TEST_CASE("scope evaluation wires splits, normalizer and scaler together") {
    // hand-built realization, scored two ways: through evaluate_scope and by
    // replaying the documented pipeline step by step
    Rng rng(404);
    const std::size_t n = 40;
    Matrix x(n, 3);
    for (auto& v : x.storage()) {
        v = rng.normal();
    }
    Realization r;
    r.x = x;
    r.t.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        r.t[i] = static_cast<int>(i % 2);  // both arms in any mixed subset
    }
    r.mu0 = random_vec(n, rng);
    r.mu1.resize(n);
    r.y_f.resize(n);
    r.y_cf.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        r.mu1[i] = r.mu0[i] + 3.0;
        const double e0 = 0.1 * rng.normal();
        const double e1 = 0.1 * rng.normal();
        r.y_f[i] = (r.t[i] == 1 ? r.mu1[i] + e1 : r.mu0[i] + e0);
        r.y_cf[i] = (r.t[i] == 1 ? r.mu0[i] + e0 : r.mu1[i] + e1);
    }

    const SplitSpec sp = split(n, 9001);
    auto has_both = [&](const std::vector<std::size_t>& idx) {
        bool a0 = false;
        bool a1 = false;
        for (std::size_t i : idx) {
            (r.t[i] == 1 ? a1 : a0) = true;
        }
        return a0 && a1;
    };
    REQUIRE(has_both(sp.train_idx));
    REQUIRE(has_both(sp.valid_idx));
    REQUIRE(has_both(sp.test_idx));

    const SplitData train = gather_split(r, sp.train_idx);
    const Normalizer nz = Normalizer::fit(train.x);
    const OutcomeScaler sc = OutcomeScaler::fit(train.y_f);

    NetworkConfig ncfg;
    ncfg.input_dim = 3;
    ncfg.encoder_layers = {6, 4};
    ncfg.rep_dim_a = 1;
    ncfg.rep_dim_bc = 3;
    ncfg.head_layers = {3};
    Rng net_rng(405);
    const RsbNet net(ncfg, net_rng);

    for (EvalScope scope : {EvalScope::within_sample, EvalScope::out_of_sample}) {
        CAPTURE(eval_scope_name(scope));
        const EvalReport rep = evaluate_scope(net, r, sp, nz, &sc, scope, 17);
        CHECK(rep.realization_id == 17);
        CHECK(rep.scope == scope);
        REQUIRE(rep.sqrt_pehe.has_value());
        REQUIRE(rep.ate_error.has_value());

        // replay
        std::vector<std::size_t> query_idx;
        std::vector<std::size_t> pool_idx;
        if (scope == EvalScope::within_sample) {
            query_idx = sp.train_idx;
            query_idx.insert(query_idx.end(), sp.valid_idx.begin(), sp.valid_idx.end());
            pool_idx = query_idx;
        } else {
            query_idx = sp.test_idx;
            pool_idx.resize(n);
            std::iota(pool_idx.begin(), pool_idx.end(), std::size_t{0});
        }
        const SplitData q = gather_split(r, query_idx);
        const SplitData p = gather_split(r, pool_idx);
        const Matrix xqn = nz.apply(q.x);
        const Matrix xpn = nz.apply(p.x);
        const auto [phi_a, phi_bc] = net.encode(xqn);
        const Matrix p1 = net.predict(phi_bc, 1);
        const Matrix p0 = net.predict(phi_bc, 0);
        std::vector<double> y1(q.t.size());
        std::vector<double> y0(q.t.size());
        std::vector<double> tau(q.t.size());
        for (std::size_t i = 0; i < q.t.size(); ++i) {
            y1[i] = sc.inverse(p1.at(i, 0));
            y0[i] = sc.inverse(p0.at(i, 0));
            tau[i] = y1[i] - y0[i];
        }
        CHECK(rep.sqrt_pehe_nn ==
              doctest::Approx(pehe_nn_oracle(xqn, q.t, q.y_f, y1, y0, xpn, p.t, p.y_f))
                  .epsilon(1e-12));
        CHECK(*rep.sqrt_pehe == doctest::Approx(pehe(tau, q.mu1, q.mu0)).epsilon(1e-12));
        CHECK(*rep.ate_error ==
              doctest::Approx(ate_error(tau, q.mu1, q.mu0)).epsilon(1e-12));
    }

    // selection score: validation queries against the train+valid pool
    {
        std::vector<std::size_t> pool_idx = sp.train_idx;
        pool_idx.insert(pool_idx.end(), sp.valid_idx.begin(), sp.valid_idx.end());
        const SplitData q = gather_split(r, sp.valid_idx);
        const SplitData p = gather_split(r, pool_idx);
        const Matrix xqn = nz.apply(q.x);
        const Matrix xpn = nz.apply(p.x);
        const auto [phi_a, phi_bc] = net.encode(xqn);
        const Matrix p1 = net.predict(phi_bc, 1);
        const Matrix p0 = net.predict(phi_bc, 0);
        std::vector<double> y1(q.t.size());
        std::vector<double> y0(q.t.size());
        for (std::size_t i = 0; i < q.t.size(); ++i) {
            y1[i] = sc.inverse(p1.at(i, 0));
            y0[i] = sc.inverse(p0.at(i, 0));
        }
        const double want = pehe_nn_oracle(xqn, q.t, q.y_f, y1, y0, xpn, p.t, p.y_f);
        CHECK(selection_pehe_nn(net, r, sp, nz, &sc) ==
              doctest::Approx(want).epsilon(1e-12));
    }

    // without ground-truth surfaces only the proxy metric is reported
    Realization factual = r;
    factual.mu0.clear();
    factual.mu1.clear();
    const EvalReport rep =
        evaluate_scope(net, factual, sp, nz, &sc, EvalScope::within_sample, 0);
    CHECK_FALSE(rep.sqrt_pehe.has_value());
    CHECK_FALSE(rep.ate_error.has_value());
    CHECK(rep.sqrt_pehe_nn > 0.0);
}

TEST_CASE("summaries") {
    const std::vector<double> two = {1.0, 3.0};
    const MetricSummary s = summarize(two);
    CHECK(s.mean == 2.0);
    CHECK(s.std_error == doctest::Approx(1.0).epsilon(1e-12));  // sd sqrt(2) / sqrt(2)
    CHECK(s.n == 2);

    Rng rng(406);
    const auto values = random_vec(100, rng);
    double mean = 0.0;
    for (double v : values) {
        mean += v;
    }
    mean /= 100.0;
    double var = 0.0;
    for (double v : values) {
        var += (v - mean) * (v - mean);
    }
    var /= 99.0;
    const MetricSummary big = summarize(values);
    CHECK(big.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(big.std_error == doctest::Approx(std::sqrt(var / 100.0)).epsilon(1e-12));

    const std::vector<double> one = {1.0};
    CHECK_THROWS_AS(summarize(one), ContractError);
}

TEST_CASE("aggregation tracks optional metrics") {
    EvalReport a;
    a.sqrt_pehe = 1.0;
    a.ate_error = 0.5;
    a.sqrt_pehe_nn = 2.0;
    EvalReport b = a;
    b.sqrt_pehe = 3.0;
    b.ate_error = 1.5;
    b.sqrt_pehe_nn = 4.0;

    const std::vector<EvalReport> with_truth = {a, b};
    const AggregateReport agg = aggregate(with_truth);
    CHECK(agg.n_realizations == 2);
    CHECK(agg.sqrt_pehe_nn.mean == 3.0);
    REQUIRE(agg.sqrt_pehe.has_value());
    CHECK(agg.sqrt_pehe->mean == 2.0);
    CHECK(agg.ate_error->mean == 1.0);

    EvalReport c = b;
    c.sqrt_pehe.reset();
    c.ate_error.reset();
    const std::vector<EvalReport> mixed = {a, c};
    const AggregateReport partial = aggregate(mixed);
    CHECK_FALSE(partial.sqrt_pehe.has_value());
    CHECK_FALSE(partial.ate_error.has_value());
    CHECK(partial.sqrt_pehe_nn.n == 2);

    const std::vector<EvalReport> single = {a};
    CHECK_THROWS_AS(aggregate(single), ContractError);
}

TEST_CASE("incomplete beta against closed forms") {
    CHECK(incomplete_beta(2.0, 3.0, 0.0) == 0.0);
    CHECK(incomplete_beta(2.0, 3.0, 1.0) == 1.0);
    CHECK(incomplete_beta(2.0, 3.0, -0.5) == 0.0);
    CHECK(incomplete_beta(2.0, 3.0, 1.5) == 1.0);

    // I_x(1,1) = x
    for (double x : {0.1, 0.25, 0.5, 0.9}) {
        CHECK(incomplete_beta(1.0, 1.0, x) == doctest::Approx(x).epsilon(1e-12));
    }
    // I_x(2,2) = 3x^2 - 2x^3
    for (double x : {0.2, 0.5, 0.7}) {
        CHECK(incomplete_beta(2.0, 2.0, x) ==
              doctest::Approx(3.0 * x * x - 2.0 * x * x * x).epsilon(1e-12));
    }
    // I_x(1/2,1/2) = (2/pi) asin(sqrt(x))
    for (double x : {0.3, 0.6}) {
        CHECK(incomplete_beta(0.5, 0.5, x) ==
              doctest::Approx(2.0 / std::numbers::pi * std::asin(std::sqrt(x)))
                  .epsilon(1e-10));
    }
    // symmetry
    for (double x : {0.15, 0.45, 0.8}) {
        CHECK(incomplete_beta(2.5, 4.0, x) ==
              doctest::Approx(1.0 - incomplete_beta(4.0, 2.5, 1.0 - x)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(incomplete_beta(0.0, 1.0, 0.5), ContractError);
    CHECK_THROWS_AS(incomplete_beta(1.0, -1.0, 0.5), ContractError);
}

TEST_CASE("welch test against frozen oracles") {
    // reference numbers computed with an independent statistics package
    const std::vector<double> a = {27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1,
                                   21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4};
    const std::vector<double> b = {27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0,
                                   24.8, 20.2, 21.9, 22.1, 22.9, 30.0, 23.9};
    const WelchResult r1 = welch_t_test(a, b);
    CHECK(r1.t_stat == doctest::Approx(-2.835263800664482).epsilon(1e-10));
    CHECK(r1.dof == doctest::Approx(27.713625968118762).epsilon(1e-10));
    CHECK(r1.p_value == doctest::Approx(0.008452732437443437).epsilon(1e-6));
    CHECK(r1.significant);
    CHECK(r1.alpha == 0.05);

    const std::vector<double> c = {3.0, 4.0, 1.0, 2.1};
    const std::vector<double> d = {5.0, 5.5, 6.5};
    const WelchResult r2 = welch_t_test(c, d);
    CHECK(r2.t_stat == doctest::Approx(-4.04442188347163).epsilon(1e-10));
    CHECK(r2.dof == doctest::Approx(4.877144647643585).epsilon(1e-10));
    CHECK(r2.p_value == doctest::Approx(0.010398216887420925).epsilon(1e-6));
    CHECK(r2.significant);

    // swapping the samples flips the statistic's sign, nothing else
    const WelchResult r2r = welch_t_test(d, c);
    CHECK(r2r.t_stat == doctest::Approx(-r2.t_stat).epsilon(1e-12));
    CHECK(r2r.dof == doctest::Approx(r2.dof).epsilon(1e-12));
    CHECK(r2r.p_value == doctest::Approx(r2.p_value).epsilon(1e-12));

    // identical non-constant samples: no evidence of a difference
    const std::vector<double> same = {1.0, 2.0, 3.0, 4.0};
    const WelchResult r3 = welch_t_test(same, same);
    CHECK(r3.t_stat == 0.0);
    CHECK(r3.p_value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(r3.significant);

    // a stricter alpha flips the significance call
    const WelchResult strict = welch_t_test(c, d, 0.005);
    CHECK(strict.p_value == doctest::Approx(r2.p_value).epsilon(1e-12));
    CHECK_FALSE(strict.significant);

    // degenerate inputs
    const std::vector<double> flat = {2.0, 2.0, 2.0};
    CHECK_THROWS_AS(welch_t_test(flat, flat), ContractError);
    const std::vector<double> tiny = {1.0};
    CHECK_THROWS_AS(welch_t_test(tiny, same), ContractError);
}

} // TEST_SUITE
