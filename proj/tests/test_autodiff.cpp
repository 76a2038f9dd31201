#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "quosr/autodiff.hpp"

using namespace quosr;
using namespace quosr::ad;

namespace {

// Central finite differences on a scalar function of the parameter values.
// Rebuilds the graph per probe, so it is independent of the backward pass.
double fd_grad(const Tensor& p, std::size_t k, const std::function<double()>& loss_value,
               double h = 1e-5) {
    auto& vals = const_cast<std::vector<double>&>(p.values());
    const double keep = vals[k];
    vals[k] = keep + h;
    const double up = loss_value();
    vals[k] = keep - h;
    const double dn = loss_value();
    vals[k] = keep;
    return (up - dn) / (2.0 * h);
}

double max_rel_grad_error(std::span<const Tensor> params,
                          const std::function<Tensor()>& make_loss) {
    Tensor loss = make_loss();
    backward(loss);
    auto value = [&] { return make_loss().value(); };
    double worst = 0.0;
    for (const auto& p : params) {
        REQUIRE(!p.grad().empty());
        for (std::size_t k = 0; k < p.values().size(); ++k) {
            const double fd = fd_grad(p, k, value);
            const double ad = p.grad()[k];
            const double denom = std::max({std::fabs(fd), std::fabs(ad), 1e-8});
            worst = std::max(worst, std::fabs(fd - ad) / denom);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("forward: identity and affine goldens") {
    Rng rng(0);
    // single identity layer: W = I, b = 0
    Mlp net(2, 2, MlpConfig{.hidden_width = 0, .hidden_depth = 0}, rng);
    net.layers()[0].W.set_values(std::vector<double>{1, 0, 0, 1});
    Tensor x = Tensor::constant(1, 2, {3.5, -1.25});
    Tensor y = net.forward(x);
    CHECK(y.values()[0] == 3.5);
    CHECK(y.values()[1] == -1.25);

    Mlp one(1, 1, MlpConfig{.hidden_depth = 0}, rng);
    one.layers()[0].W.set_values(std::vector<double>{2.0});
    one.layers()[0].b.set_values(std::vector<double>{1.0});
    Tensor out = one.forward(Tensor::constant(1, 1, {3.0}));
    CHECK(out.value() == 7.0);
}

TEST_CASE("forward: random 2-layer net matches straight-line oracle") {
    Rng rng(42);
    MlpConfig cfg{.hidden_width = 5, .hidden_depth = 1, .hidden_act = Act::Tanh};
    Mlp net(3, 2, cfg, rng);
    std::vector<double> xin{0.3, -1.2, 0.7};
    Tensor out = net.forward(Tensor::constant(1, 3, xin));

    // independent re-computation with plain loops
    const auto& l0 = net.layers()[0];
    const auto& l1 = net.layers()[1];
    std::vector<double> h(5, 0.0);
    for (int j = 0; j < 5; ++j) {
        double s = l0.b.values()[static_cast<std::size_t>(j)];
        for (int i = 0; i < 3; ++i) s += xin[static_cast<std::size_t>(i)] * l0.W.at(i, j);
        h[static_cast<std::size_t>(j)] = std::tanh(s);
    }
    for (int j = 0; j < 2; ++j) {
        double s = l1.b.values()[static_cast<std::size_t>(j)];
        for (int i = 0; i < 5; ++i) s += h[static_cast<std::size_t>(i)] * l1.W.at(i, j);
        CHECK(out.values()[static_cast<std::size_t>(j)] == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("backward: linear map gradient is the input outer product") {
    Tensor W = Tensor::param(3, 1, {0.5, -0.25, 2.0});
    Tensor x = Tensor::constant(1, 3, {1.5, -2.0, 0.25});
    Tensor loss = sum_all(matmul(x, W));
    backward(loss);
    REQUIRE(W.grad().size() == 3);
    CHECK(W.grad()[0] == doctest::Approx(1.5));
    CHECK(W.grad()[1] == doctest::Approx(-2.0));
    CHECK(W.grad()[2] == doctest::Approx(0.25));
}

TEST_CASE("backward: mean of squares gives 2p/n") {
    Tensor p = Tensor::param(1, 4, {1.0, -2.0, 3.0, 0.5});
    Tensor loss = mean_all(mul(p, p));
    backward(loss);
    for (std::size_t k = 0; k < 4; ++k)
        CHECK(p.grad()[k] == doctest::Approx(2.0 * p.values()[k] / 4.0).epsilon(1e-12));
}

TEST_CASE("backward: 3-layer tanh net matches finite differences") {
    Rng rng(7);
    MlpConfig cfg{.hidden_width = 6, .hidden_depth = 2, .hidden_act = Act::Tanh};
    Mlp net(2, 3, cfg, rng);
    Tensor x = Tensor::constant(2, 2, {0.4, -0.9, 1.3, 0.2});
    auto params = net.parameters();
    auto make_loss = [&] { return sum_all(tanh_(net.forward(x))); };
    CHECK(max_rel_grad_error(params, make_loss) < 1e-4);
}

TEST_CASE("backward: every op kind survives a finite-difference check") {
    Rng rng(11);
    Tensor a = Tensor::param(2, 3, {0.3, 1.2, -0.7, 0.9, 0.31, 1.7});
    Tensor b = Tensor::param(2, 3, {1.1, -0.4, 0.6, 0.25, -1.3, 0.8});
    Tensor row = Tensor::param(1, 3, {0.2, -0.6, 1.4});
    std::vector<Tensor> params{a, b, row};

    auto make_loss = [&] {
        Tensor t1 = mul(add(a, b), sub(a, b));
        Tensor t2 = add_rowvec(t1, row);
        Tensor t3 = mul_rowvec(exp_(scale(t2, 0.1)), row);
        Tensor t4 = div(t3, add_scalar(mul(b, b), 1.0));
        Tensor t5 = softmax_rows(t4);
        Tensor t6 = matmul(t5, transpose(max_elem(a, b)));
        Tensor t7 = log_(add_scalar(mul(t6, t6), 1.0));
        Tensor t8 = concat_cols(std::vector<Tensor>{t7, sqrt_(add_scalar(mul(a, a), 0.5))});
        Tensor t9 = slice_cols(t8, 1, 4);
        Tensor t10 = concat_rows(std::vector<Tensor>{t9, tanh_(t9)});
        Tensor t11 = add(mean_rows(t10), max_rows(t10));
        Tensor t12 = clamp(t11, -5.0, 5.0);
        Tensor t13 = add(sum_rows(broadcast_rows(t12, 3)), slice_rows(t10, 0, 1));
        return mean_all(reshape(t13, 3, 1));
    };
    CHECK(max_rel_grad_error(params, make_loss) < 1e-4);
}

TEST_CASE("backward called twice throws") {
    Tensor p = Tensor::param(1, 2, {1.0, 2.0});
    Tensor loss = sum_all(mul(p, p));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), std::logic_error);
}

TEST_CASE("sgd golden cases") {
    Tensor p = Tensor::param(1, 1, {1.0});
    Tensor loss = sum_all(p);
    backward(loss);  // grad = 1
    std::vector<Tensor> params{p};
    sgd_step(params, 0.1);
    CHECK(p.values()[0] == doctest::Approx(0.9).epsilon(1e-15));

    Tensor q = Tensor::param(1, 1, {0.7});
    q.zero_grad();  // grad = 0
    std::vector<Tensor> qs{q};
    sgd_step(qs, 0.1);
    CHECK(q.values()[0] == 0.7);
}

TEST_CASE("sgd converges on a quadratic") {
    // loss = (p - 3)^2, lr = 0.1, from p = 0: linear contraction by 0.8
    Tensor p = Tensor::param(1, 1, {0.0});
    std::vector<Tensor> params{p};
    for (int i = 0; i < 100; ++i) {
        p.zero_grad();
        Tensor loss = sum_all(mul(add_scalar(p, -3.0), add_scalar(p, -3.0)));
        backward(loss);
        sgd_step(params, 0.1);
    }
    CHECK(std::fabs(p.values()[0] - 3.0) < 1e-6);
}

TEST_CASE("sgd aborts on non-finite gradients") {
    Tensor p = Tensor::param(1, 1, {0.0});
    Tensor loss = log_(p);  // log(0) -> -inf value, grad 1/0 -> inf
    backward(loss);
    std::vector<Tensor> params{p};
    CHECK_THROWS_AS(sgd_step(params, 0.1), SgdError);
    CHECK(p.values()[0] == 0.0);  // untouched
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    Rng rng(3);
    std::vector<double> v(40);
    for (auto& x : v) x = rng.uniform(-30.0, 30.0);
    Tensor t = Tensor::constant(5, 8, v);
    Tensor s = softmax_rows(t);
    for (int r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 8; ++c) sum += s.at(r, c);
        CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("fixed seed gives bitwise-identical training trajectories") {
    auto run = [] {
        Rng rng(99);
        Mlp net(2, 2, MlpConfig{.hidden_width = 4, .hidden_depth = 1}, rng);
        Tensor x = Tensor::constant(3, 2, {0.1, 0.2, -0.4, 0.9, 1.1, -0.3});
        auto params = net.parameters();
        for (int i = 0; i < 20; ++i) {
            for (auto& p : params) p.zero_grad();
            Tensor loss = mean_all(mul(net.forward(x), net.forward(x)));
            backward(loss);
            sgd_step(params, 1e-2);
        }
        std::vector<double> out;
        for (auto& p : params)
            out.insert(out.end(), p.values().begin(), p.values().end());
        return out;
    };
    auto r1 = run();
    auto r2 = run();
    REQUIRE(r1.size() == r2.size());
    CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(double)) == 0);
}

TEST_CASE("checkpoint round-trips bit-exactly and rejects bad magic") {
    const auto path = std::filesystem::temp_directory_path() / "quosr_ck_test.bin";
    Rng rng(5);
    std::vector<double> v(12);
    for (auto& x : v) x = rng.normal() * 1e3;
    v[3] = 0.1 + 0.2;  // a value with a long binary tail

    Checkpoint ck;
    ck.tensors.emplace_back("w", Tensor::constant(3, 4, v));
    ck.meta["iteration"] = "17";
    ck.meta["rng"] = "123 456 789";
    save_checkpoint(path.string(), ck);

    Checkpoint back = load_checkpoint(path.string());
    REQUIRE(back.tensors.size() == 1);
    CHECK(back.tensors[0].first == "w");
    CHECK(std::memcmp(back.tensors[0].second.values().data(), v.data(),
                      v.size() * sizeof(double)) == 0);
    CHECK(back.meta.at("iteration") == "17");
    CHECK(back.meta.at("rng") == "123 456 789");

    // corrupt the magic
    {
        std::FILE* f = std::fopen(path.string().c_str(), "r+b");
        REQUIRE(f);
        std::fputc('X', f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_checkpoint(path.string()), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("shape mismatches are rejected") {
    Tensor a = Tensor::constant(2, 2, {1, 2, 3, 4});
    Tensor b = Tensor::constant(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(matmul(a, Tensor::constant(3, 1, {1, 2, 3})), std::invalid_argument);
    Rng rng(0);
    Mlp net(4, 2, MlpConfig{.hidden_width = 3, .hidden_depth = 1}, rng);
    CHECK_THROWS_AS(net.forward(a), std::invalid_argument);
}
