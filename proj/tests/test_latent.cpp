#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "quosr/latent.hpp"

using namespace quosr;
using namespace quosr::ad;
using namespace quosr::latent;

namespace {

Mlp zeroed_net(int in, int out) {
    Rng rng(0);
    Mlp net(in, out, MlpConfig{.hidden_width = 4, .hidden_depth = 1}, rng);
    for (auto& p : net.parameters()) p.set_values(std::vector<double>(p.values().size(), 0.0));
    return net;
}

DiagGaussian random_gaussian(Rng& rng, int d, double mu_span = 3.0, double lv_span = 2.0) {
    std::vector<double> mu(static_cast<std::size_t>(d)), lv(static_cast<std::size_t>(d));
    for (auto& v : mu) v = rng.uniform(-mu_span, mu_span);
    for (auto& v : lv) v = rng.uniform(-lv_span, lv_span);
    return DiagGaussian::from_values(std::move(mu), std::move(lv));
}

// Monte Carlo estimate of KL(p||q) by sampling from p; the independent
// oracle for the closed form.
double mc_kl(const DiagGaussian& p, const DiagGaussian& q, int samples, std::uint64_t seed) {
    Rng rng(seed);
    const int d = p.dim();
    double acc = 0.0;
    for (int s = 0; s < samples; ++s) {
        double term = 0.0;
        for (int j = 0; j < d; ++j) {
            const double lvp = p.log_var.values()[static_cast<std::size_t>(j)];
            const double lvq = q.log_var.values()[static_cast<std::size_t>(j)];
            const double sp = std::exp(0.5 * lvp);
            const double z = p.mu.values()[static_cast<std::size_t>(j)] + sp * rng.normal();
            const double dp = z - p.mu.values()[static_cast<std::size_t>(j)];
            const double dq = z - q.mu.values()[static_cast<std::size_t>(j)];
            term += -0.5 * (dp * dp * std::exp(-lvp) + lvp) + 0.5 * (dq * dq * std::exp(-lvq) + lvq);
        }
        acc += term;
    }
    return acc / samples;
}

}  // namespace

TEST_CASE("embed_point through a zero net is the unit Gaussian") {
    Mlp net = zeroed_net(2, 8);  // M=1 plus y, latent d=4
    std::vector<double> x{0.7};
    DiagGaussian g = embed_point(net, x, -2.3);
    for (double v : g.mu.values()) CHECK(v == 0.0);
    for (double v : g.log_var.values()) CHECK(v == 0.0);
}

TEST_CASE("embed_point is deterministic") {
    Rng rng(12);
    Mlp net(2, 8, MlpConfig{.hidden_width = 8, .hidden_depth = 2}, rng);
    std::vector<double> x{-1.4};
    DiagGaussian a = embed_point(net, x, 3.9);
    DiagGaussian b = embed_point(net, x, 3.9);
    CHECK(a.mu.values() == b.mu.values());
    CHECK(a.log_var.values() == b.log_var.values());
}

TEST_CASE("batch embedding equals per-point embeddings") {
    Rng rng(21);
    Mlp net(2, 8, MlpConfig{.hidden_width = 16, .hidden_depth = 2}, rng);
    Rng xr(5);
    std::vector<double> xy;
    std::vector<DiagGaussian> singles;
    const int n = 9;
    for (int i = 0; i < n; ++i) {
        const double x = xr.uniform(-3, 3), y = xr.uniform(-40, 40);
        xy.push_back(x);
        xy.push_back(normalize_response(y));
        std::vector<double> xv{x};
        singles.push_back(embed_point(net, xv, y));
    }
    Tensor batch = embed_batch(net, Tensor::constant(n, 2, xy));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < 4; ++j) {
            CHECK(std::fabs(batch.at(i, j) - singles[static_cast<std::size_t>(i)].mu.values()[static_cast<std::size_t>(j)]) < 1e-12);
            CHECK(std::fabs(batch.at(i, 4 + j) - singles[static_cast<std::size_t>(i)].log_var.values()[static_cast<std::size_t>(j)]) < 1e-12);
        }
}

TEST_CASE("attention intersection: identity, idempotence, and the uniform-logit mean") {
    Rng rng(31);
    Mlp att(4, 1, MlpConfig{.hidden_width = 6, .hidden_depth = 1}, rng);

    DiagGaussian g = DiagGaussian::from_values({1.0, -2.0}, {0.5, -0.25});
    std::vector<DiagGaussian> one{g};
    DiagGaussian r1 = intersect_attention(one, att);
    for (int j = 0; j < 2; ++j) {
        CHECK(r1.mu.values()[static_cast<std::size_t>(j)] == doctest::Approx(g.mu.values()[static_cast<std::size_t>(j)]).epsilon(1e-14));
        CHECK(r1.log_var.values()[static_cast<std::size_t>(j)] == doctest::Approx(g.log_var.values()[static_cast<std::size_t>(j)]).epsilon(1e-14));
    }

    std::vector<DiagGaussian> same{g, g, g};
    DiagGaussian r3 = intersect_attention(same, att);
    for (int j = 0; j < 2; ++j)
        CHECK(r3.mu.values()[static_cast<std::size_t>(j)] == doctest::Approx(g.mu.values()[static_cast<std::size_t>(j)]).epsilon(1e-12));

    // constant logits -> softmax uniform -> arithmetic mean of [mu, log_var]
    Mlp flat = zeroed_net(4, 1);
    DiagGaussian h = DiagGaussian::from_values({3.0, 4.0}, {1.5, -0.5});
    std::vector<DiagGaussian> two{g, h};
    DiagGaussian rm = intersect_attention(two, flat);
    CHECK(rm.mu.values()[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(rm.mu.values()[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rm.log_var.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rm.log_var.values()[1] == doctest::Approx(-0.375).epsilon(1e-12));
}

TEST_CASE("mean intersection follows the variance-then-log rule") {
    DiagGaussian u1 = DiagGaussian::from_values({0.0}, {0.0});
    DiagGaussian u2 = DiagGaussian::from_values({0.0}, {0.0});
    std::vector<DiagGaussian> units{u1, u2};
    DiagGaussian r = intersect_mean(units);
    CHECK(r.mu.values()[0] == 0.0);
    CHECK(r.log_var.values()[0] == doctest::Approx(0.0).epsilon(1e-14));

    // sigma1^2 = 1, sigma2^2 = 3 -> mean variance 2 -> log_var = log 2
    DiagGaussian a = DiagGaussian::from_values({1.0}, {0.0});
    DiagGaussian b = DiagGaussian::from_values({-1.0}, {std::log(3.0)});
    std::vector<DiagGaussian> ab{a, b};
    DiagGaussian m = intersect_mean(ab);
    CHECK(m.mu.values()[0] == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(m.log_var.values()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));

    std::vector<DiagGaussian> single{a};
    DiagGaussian s = intersect_mean(single);
    CHECK(s.mu.values()[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(s.log_var.values()[0] == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("max intersection is elementwise and symmetric") {
    DiagGaussian a = DiagGaussian::from_values({1.0, -2.0}, {0.3, 0.9});
    DiagGaussian b = DiagGaussian::from_values({0.0, 5.0}, {0.8, -1.0});
    std::vector<DiagGaussian> ab{a, b};
    DiagGaussian r = intersect_max(ab);
    CHECK(r.mu.values()[0] == 1.0);
    CHECK(r.mu.values()[1] == 5.0);
    CHECK(r.log_var.values()[0] == 0.8);
    CHECK(r.log_var.values()[1] == 0.9);

    std::vector<DiagGaussian> ba{b, a};
    DiagGaussian rr = intersect_max(ba);
    CHECK(rr.mu.values() == r.mu.values());
    CHECK(rr.log_var.values() == r.log_var.values());

    std::vector<DiagGaussian> single{a};
    DiagGaussian s = intersect_max(single);
    CHECK(s.mu.values() == a.mu.values());
}

TEST_CASE("kl divergence closed-form goldens") {
    DiagGaussian unit = DiagGaussian::from_values({0.0, 0.0}, {0.0, 0.0});
    CHECK(kl_divergence(unit, unit).value() == doctest::Approx(0.0).epsilon(1e-15));

    DiagGaussian p = DiagGaussian::from_values({1.0}, {0.0});
    DiagGaussian q = DiagGaussian::from_values({0.0}, {0.0});
    CHECK(kl_divergence(p, q).value() == doctest::Approx(0.5).epsilon(1e-14));
    // cross-check by Monte Carlo
    CHECK(std::fabs(mc_kl(p, q, 1000000, 77) - 0.5) < 1e-2);

    // asymmetry: N(0,1) vs N(0,4)
    DiagGaussian n01 = DiagGaussian::from_values({0.0}, {0.0});
    DiagGaussian n04 = DiagGaussian::from_values({0.0}, {std::log(4.0)});
    CHECK(kl_divergence(n01, n04).value() == doctest::Approx(0.5 * (0.25 + std::log(4.0) - 1.0)).epsilon(1e-12));
    CHECK(kl_divergence(n04, n01).value() == doctest::Approx(0.5 * (4.0 - std::log(4.0) - 1.0)).epsilon(1e-12));
    CHECK(kl_divergence(n01, n04).value() == doctest::Approx(0.31814718055994526).epsilon(1e-12));
    CHECK(kl_divergence(n04, n01).value() == doctest::Approx(0.8068528194400547).epsilon(1e-12));
}

TEST_CASE("kl is nonnegative, zero only at equality") {
    Rng rng(101);
    for (int t = 0; t < 10000; ++t) {
        DiagGaussian p = random_gaussian(rng, 3);
        DiagGaussian q = random_gaussian(rng, 3);
        const double kl = kl_divergence(p, q).value();
        CHECK(kl > 0.0);
    }
    DiagGaussian p = random_gaussian(rng, 6);
    CHECK(std::fabs(kl_divergence(p, p).value()) < 1e-12);
}

TEST_CASE("closed-form KL matches Monte Carlo on random pairs") {
    Rng rng(55);
    for (int t = 0; t < 5; ++t) {
        const int d = 1 + static_cast<int>(rng.below(8));
        DiagGaussian p = random_gaussian(rng, d, 1.5, 1.0);
        DiagGaussian q = random_gaussian(rng, d, 1.5, 1.0);
        const double closed = kl_divergence(p, q).value();
        const double mc = mc_kl(p, q, 1000000, 1000 + static_cast<std::uint64_t>(t));
        CHECK(std::fabs(closed - mc) < 1e-2);
    }
}

TEST_CASE("cosine similarity on concatenated [mu, sigma]") {
    DiagGaussian p = DiagGaussian::from_values({1.0, 0.0}, {0.0, 0.0});
    CHECK(cosine_similarity(p, p).value() == doctest::Approx(1.0).epsilon(1e-14));

    // antiparallel raw vectors hit exactly -1
    std::vector<double> a{1.0, -2.0, 0.5};
    std::vector<double> b{-2.0, 4.0, -1.0};
    CHECK(cosine_of(a, b) == doctest::Approx(-1.0).epsilon(1e-14));

    // valid Gaussians cannot be exactly antiparallel (sigma > 0), but mu can
    // dominate arbitrarily
    DiagGaussian big = DiagGaussian::from_values({10.0, -10.0}, {-9.9, -9.9});
    DiagGaussian opp = DiagGaussian::from_values({-10.0, 10.0}, {-9.9, -9.9});
    CHECK(cosine_similarity(big, opp).value() < -0.9999);

    // concrete 2-d hand dot product:
    // p: mu=[1,0] sigma=[1,1]; q: mu=[0,1] sigma=[1,1]
    // dot = 0+0+1+1 = 2, norms = sqrt(3) each -> 2/3
    DiagGaussian cp = DiagGaussian::from_values({1.0, 0.0}, {0.0, 0.0});
    DiagGaussian cq = DiagGaussian::from_values({0.0, 1.0}, {0.0, 0.0});
    CHECK(cosine_similarity(cp, cq).value() == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("sampling: degenerate sigma, determinism, and the LLN bound") {
    DiagGaussian tight = DiagGaussian::from_values({2.0, -1.0}, {-30.0, -30.0});
    Tensor s = sample(tight, 100, 9);
    for (int r = 0; r < 100; ++r) {
        CHECK(std::fabs(s.at(r, 0) - 2.0) < 1e-5);
        CHECK(std::fabs(s.at(r, 1) + 1.0) < 1e-5);
    }

    Tensor s1 = sample(tight, 7, 1234);
    Tensor s2 = sample(tight, 7, 1234);
    CHECK(s1.values() == s2.values());

    DiagGaussian g = DiagGaussian::from_values({0.5, -0.25}, {0.4, -0.6});
    const int m = 100000;
    Tensor draws = sample(g, m, 4242);
    for (int j = 0; j < 2; ++j) {
        double mean = 0.0;
        for (int r = 0; r < m; ++r) mean += draws.at(r, j);
        mean /= m;
        const double sigma = std::exp(0.5 * g.log_var.values()[static_cast<std::size_t>(j)]);
        CHECK(std::fabs(mean - g.mu.values()[static_cast<std::size_t>(j)]) < 3.0 * sigma / std::sqrt(static_cast<double>(m)));
    }
}

TEST_CASE("sampling is differentiable through mu and log_var") {
    Tensor mu = Tensor::param(1, 2, {0.3, -0.8});
    Tensor lv = Tensor::param(1, 2, {0.2, -0.4});
    DiagGaussian g{mu, lv};
    Tensor loss = mean_all(mul(sample(g, 16, 3), sample(g, 16, 3)));
    backward(loss);
    CHECK(!mu.grad().empty());
    CHECK(!lv.grad().empty());
    bool any = false;
    for (double v : lv.grad()) any = any || v != 0.0;
    CHECK(any);
}

TEST_CASE("all intersections are permutation invariant") {
    Rng rng(61);
    Mlp att(6, 1, MlpConfig{.hidden_width = 8, .hidden_depth = 1}, rng);
    for (int t = 0; t < 50; ++t) {
        std::vector<DiagGaussian> parts;
        const int n = 2 + static_cast<int>(rng.below(5));
        for (int i = 0; i < n; ++i) parts.push_back(random_gaussian(rng, 3));
        std::vector<DiagGaussian> shuffled = parts;
        for (int i = n - 1; i > 0; --i)
            std::swap(shuffled[static_cast<std::size_t>(i)],
                      shuffled[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);

        auto check_close = [](const DiagGaussian& a, const DiagGaussian& b) {
            for (int j = 0; j < a.dim(); ++j) {
                CHECK(std::fabs(a.mu.values()[static_cast<std::size_t>(j)] - b.mu.values()[static_cast<std::size_t>(j)]) < 1e-12);
                CHECK(std::fabs(a.log_var.values()[static_cast<std::size_t>(j)] - b.log_var.values()[static_cast<std::size_t>(j)]) < 1e-12);
            }
        };
        check_close(intersect_attention(parts, att), intersect_attention(shuffled, att));
        check_close(intersect_mean(parts), intersect_mean(shuffled));
        check_close(intersect_max(parts), intersect_max(shuffled));
    }
}

TEST_CASE("attention output stays in the coordinatewise convex hull") {
    Rng rng(71);
    Mlp att(4, 1, MlpConfig{.hidden_width = 8, .hidden_depth = 1}, rng);
    for (int t = 0; t < 200; ++t) {
        std::vector<DiagGaussian> parts;
        const int n = 2 + static_cast<int>(rng.below(4));
        for (int i = 0; i < n; ++i) parts.push_back(random_gaussian(rng, 2));
        DiagGaussian r = intersect_attention(parts, att);
        for (int j = 0; j < 2; ++j) {
            double lo_mu = 1e300, hi_mu = -1e300, lo_lv = 1e300, hi_lv = -1e300;
            for (const auto& p : parts) {
                lo_mu = std::min(lo_mu, p.mu.values()[static_cast<std::size_t>(j)]);
                hi_mu = std::max(hi_mu, p.mu.values()[static_cast<std::size_t>(j)]);
                lo_lv = std::min(lo_lv, p.log_var.values()[static_cast<std::size_t>(j)]);
                hi_lv = std::max(hi_lv, p.log_var.values()[static_cast<std::size_t>(j)]);
            }
            CHECK(r.mu.values()[static_cast<std::size_t>(j)] >= lo_mu - 1e-12);
            CHECK(r.mu.values()[static_cast<std::size_t>(j)] <= hi_mu + 1e-12);
            CHECK(r.log_var.values()[static_cast<std::size_t>(j)] >= lo_lv - 1e-12);
            CHECK(r.log_var.values()[static_cast<std::size_t>(j)] <= hi_lv + 1e-12);
        }
    }
}

TEST_CASE("dimension mismatches are rejected") {
    DiagGaussian a = DiagGaussian::from_values({0.0}, {0.0});
    DiagGaussian b = DiagGaussian::from_values({0.0, 1.0}, {0.0, 0.0});
    CHECK_THROWS_AS(kl_divergence(a, b), std::invalid_argument);
    CHECK_THROWS_AS(cosine_similarity(a, b), std::invalid_argument);
    std::vector<DiagGaussian> empty;
    CHECK_THROWS_AS(intersect_mean(empty), std::invalid_argument);
}
