#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "skeldiff/diffusion.hpp"
#include "skeldiff/error.hpp"
#include "support/gradcheck.hpp"

using namespace skeldiff;
using ad::Tensor;
using skeldiff::testing::random_tensor;

namespace {

// Hand-made single-step table for arithmetic examples.
NoiseSchedule table(double beta, double alpha_bar) {
    NoiseSchedule s;
    s.steps = 1;
    s.betas = {0.0, beta};
    s.alpha_bars = {1.0, alpha_bar};
    return s;
}

struct Moments {
    double mean = 0.0, var = 0.0;
};

Moments moments(std::span<const double> v) {
    Moments m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    for (double x : v) m.var += (x - m.mean) * (x - m.mean);
    m.var /= static_cast<double>(v.size() - 1);
    return m;
}

std::vector<Rng> chains(std::size_t n, std::uint64_t seed) {
    std::vector<Rng> r;
    r.reserve(n);
    for (std::size_t i = 0; i < n; ++i) r.emplace_back(derive_seed(seed, i));
    return r;
}

double normal_cdf(double x, double mean, double sd) { return 0.5 * std::erfc(-(x - mean) / (sd * std::numbers::sqrt2)); }

// Two-component 1-D Gaussian mixture and the exact noise prediction of its
// diffused marginal: eps(x, t) = -sqrt(1 - abar) * d/dx log q_t(x).
struct Mixture {
    double mu[2] = {-1.5, 1.5};
    double sd = 0.4;
    double weight0 = 0.3;

    double eps(double x, double abar) const {
        const double var = abar * sd * sd + (1.0 - abar);
        double w[2], score_num = 0.0, total = 0.0;
        for (int k = 0; k < 2; ++k) {
            const double m = std::sqrt(abar) * mu[k];
            w[k] = (k == 0 ? weight0 : 1.0 - weight0) * std::exp(-0.5 * (x - m) * (x - m) / var);
            total += w[k];
            score_num += w[k] * (-(x - m) / var);
        }
        return -std::sqrt(1.0 - abar) * score_num / total;
    }
    double cdf(double x) const { return weight0 * normal_cdf(x, mu[0], sd) + (1.0 - weight0) * normal_cdf(x, mu[1], sd); }
};

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("linear schedule: hand-computed table and constant case") {
    const auto s = linear_schedule(4, 0.1, 0.4);
    const double expect_b[] = {0.0, 0.1, 0.2, 0.3, 0.4};
    const double expect_ab[] = {1.0, 0.9, 0.72, 0.504, 0.3024};
    for (int t = 0; t <= 4; ++t) {
        CHECK(s.beta(t) == doctest::Approx(expect_b[t]).epsilon(1e-14));
        CHECK(s.alpha_bar(t) == doctest::Approx(expect_ab[t]).epsilon(1e-14));
    }
    const auto c = linear_schedule(10, 0.05, 0.05);
    for (int t = 0; t <= 10; ++t) CHECK(c.alpha_bar(t) == doctest::Approx(std::pow(0.95, t)).epsilon(1e-13));
    CHECK_THROWS_AS(linear_schedule(4, 0.3, 0.2), Error);
    CHECK_THROWS_AS(linear_schedule(4, 0.0, 0.2), Error);
    CHECK_THROWS_AS(linear_schedule(4, 0.1, 1.0), Error);
    CHECK_THROWS_AS(linear_schedule(0, 0.1, 0.2), Error);
}

TEST_CASE("cosine schedule follows the closed form") {
    const auto s = cosine_schedule(1000);
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.alpha_bar(1000) < 1e-3);
    auto f = [](double t) { return std::pow(std::cos((t / 1000.0 + 0.008) / 1.008 * std::numbers::pi / 2), 2); };
    for (int t : {1, 10, 250, 500, 900}) CHECK(s.alpha_bar(t) == doctest::Approx(f(t) / f(0)).epsilon(1e-12));
    for (int t = 1; t <= 1000; ++t) CHECK(s.beta(t) <= 0.999);
    CHECK_THROWS_AS(cosine_schedule(10, 0.0), Error);
}

TEST_CASE("schedules are consistent and monotone") {
    for (const auto& s : {linear_schedule(1000), cosine_schedule(1000), cosine_schedule(200), linear_schedule(7, 0.2, 0.9)}) {
        double prod = 1.0;
        bool ok_beta = true, ok_mono = true, ok_ratio = true, ok_prod = true;
        for (int t = 1; t <= s.steps; ++t) {
            ok_beta &= s.beta(t) > 0.0 && s.beta(t) < 1.0;
            ok_mono &= s.alpha_bar(t) < s.alpha_bar(t - 1);
            ok_ratio &= std::abs(s.alpha_bar(t) / s.alpha_bar(t - 1) - (1.0 - s.beta(t))) <= 1e-12;
            prod *= 1.0 - s.beta(t);
            ok_prod &= std::abs(prod - s.alpha_bar(t)) <= 1e-12;
        }
        CHECK(ok_beta);
        CHECK(ok_mono);
        CHECK(ok_ratio);
        CHECK(ok_prod);
    }
}

TEST_CASE("one-step kernels compose to the direct kernel") {
    const auto s = cosine_schedule(200);
    double mean_coeff = 1.0, var = 0.0;
    for (int t = 1; t <= s.steps; ++t) {
        mean_coeff *= std::sqrt(1.0 - s.beta(t));
        var = (1.0 - s.beta(t)) * var + s.beta(t);
        CHECK(mean_coeff == doctest::Approx(std::sqrt(s.alpha_bar(t))).epsilon(1e-12));
        CHECK(var == doctest::Approx(1.0 - s.alpha_bar(t)).epsilon(1e-12));
    }

    // Monte-Carlo: 60 single steps from x0 = 1 against the direct marginal.
    const int t = 60;
    const std::size_t n = 10000;
    Rng rng(5);
    std::vector<double> xs(n);
    for (auto& x : xs) {
        x = 1.0;
        for (int k = 1; k <= t; ++k) x = std::sqrt(1.0 - s.beta(k)) * x + std::sqrt(s.beta(k)) * rng.normal();
    }
    const auto m = moments(xs);
    const double sd = std::sqrt(1.0 - s.alpha_bar(t));
    CHECK(std::abs(m.mean - std::sqrt(s.alpha_bar(t))) < 3.0 * sd / std::sqrt(n));
    CHECK(std::abs(std::sqrt(m.var) - sd) < 3.0 * sd / std::sqrt(2.0 * n));
}

TEST_CASE("q_sample arithmetic and limits") {
    const auto s = table(0.19, 0.64);
    CHECK(q_sample(Tensor({1}, {1.0}), 1, Tensor({1}, {0.5}), s)[0] == doctest::Approx(1.1).epsilon(1e-15));
    auto one = table(0.0, 1.0);
    const Tensor x0({3}, {0.1, -2.0, 4.0});
    CHECK(q_sample(x0, 1, Tensor({3}, {9.0, 9.0, 9.0}), one) == x0);
    CHECK_THROWS_AS(q_sample(x0, 2, x0, s), Error);
    CHECK_THROWS_AS(q_sample(x0, 0, x0, s), Error);
    CHECK_THROWS_AS(q_sample(x0, 1, Tensor({2}), s), Error);
}

TEST_CASE("q_sample Monte-Carlo moments") {
    const auto s = cosine_schedule(200);
    const int t = 80;
    const std::size_t n = 10000;
    Rng rng(6);
    Tensor x0({n}, 0.7), eps({n});
    rng.fill_normal(eps.values());
    const Tensor xt = q_sample(x0, t, eps, s);
    const auto m = moments(xt.values());
    const double sd = std::sqrt(1.0 - s.alpha_bar(t));
    CHECK(std::abs(m.mean - std::sqrt(s.alpha_bar(t)) * 0.7) < 3.0 * sd / std::sqrt(n));
    CHECK(std::abs(std::sqrt(m.var) - sd) < 3.0 * sd / std::sqrt(2.0 * n));
}

TEST_CASE("predict_x0 inverts q_sample") {
    const auto s = table(0.19, 0.64);
    CHECK(predict_x0(Tensor({1}, {1.1}), 1, Tensor({1}, {0.5}), s)[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(predict_x0(Tensor({1}, {1.1}), 1, Tensor({1}, {0.0}), s)[0] == doctest::Approx(1.1 / 0.8).epsilon(1e-15));

    const auto c = cosine_schedule(200);
    Rng rng(7);
    Tensor x0({64}), eps({64});
    rng.fill_normal(x0.values());
    rng.fill_normal(eps.values());
    for (int t : {1, 50, 150, 199}) {
        const Tensor back = predict_x0(q_sample(x0, t, eps, c), t, eps, c);
        double worst = 0.0;
        for (std::size_t i = 0; i < 64; ++i) worst = std::max(worst, std::abs(back[i] - x0[i]));
        CHECK(worst <= 1e-10);
    }
    CHECK_THROWS_AS(predict_x0(x0, 1, eps, table(0.5, 1e-13)), Error);
}

TEST_CASE("posterior_mean arithmetic and limits") {
    const auto s = table(0.19, 0.64);
    CHECK(posterior_mean(Tensor({1}, {1.1}), 1, Tensor({1}, {0.5}), s)[0] ==
          doctest::Approx((1.1 - 0.19 / 0.6 * 0.5) / 0.9).epsilon(1e-14));
    CHECK(posterior_mean(Tensor({1}, {1.1}), 1, Tensor({1}, {0.0}), s)[0] == doctest::Approx(1.1 / 0.9).epsilon(1e-15));
    const double mu = posterior_mean(Tensor({1}, {1.1}), 1, Tensor({1}, {3.0}), table(1e-12, 0.5))[0];
    CHECK(mu == doctest::Approx(1.1).epsilon(1e-10));
}

TEST_CASE("projected posterior mean: clamped examples and the unclamped identity") {
    NoiseSchedule s;
    s.steps = 2;
    s.betas = {0.0, 0.19, 0.5};
    s.alpha_bars = {1.0, 0.81, 0.405};
    // x0 estimates 4.15 and -1.08 are clamped to +1 and -1.
    const auto mu = posterior_mean_projected(Tensor({2}, {1.1, -0.3}), 2, Tensor({2}, {-2.0, 0.5}), s, X0Projection{1.0});
    CHECK(mu[0] == doctest::Approx(1.0046812054924177).epsilon(1e-14));
    CHECK(mu[1] == doctest::Approx(-0.8240421622313164).epsilon(1e-14));

    const Tensor xt({3}, {0.4, -2.0, 1.3}), eps({3}, {0.1, 0.7, -0.9});
    CHECK(posterior_mean_projected(xt, 2, eps, s, X0Projection{}) == posterior_mean(xt, 2, eps, s));
    const auto cs = cosine_schedule(200);
    Rng rng(12);
    double worst = 0.0;
    for (int t : {1, 2, 50, 199, 200}) {
        const auto x = random_tensor({64}, rng), e = random_tensor({64}, rng);
        const auto a = posterior_mean_projected(x, t, e, cs, X0Projection{1e12}), b = posterior_mean(x, t, e, cs);
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]) / (1.0 + std::abs(b[i])));
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("x0 projection zeroes outside the block and clamps inside") {
    // (1, 2, 3, 4) batch with a 2x2 block at row 1, col 1.
    Tensor x({1, 2, 3, 4});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * (static_cast<double>(i) - 11.0);
    const X0Projection p{1.0, 1, 1, 2, 2};
    auto y = x;
    p.apply(y);
    const std::vector<double> want{0, 0, 0, 0, 0, -1, -1, 0, 0, -1, -0.5, 0,
                                   0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0};
    CHECK(y.storage() == want);

    auto m = x;
    p.mask(m);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(m[i] == (want[i] == 0.0 ? 0.0 : x[i]));

    auto same = x;
    X0Projection{}.apply(same);
    CHECK(same == x);
    CHECK(X0Projection{}.identity());
    CHECK_FALSE((X0Projection{0.0, 0, 0, 1, 1}.identity()));
    auto bad = x;
    CHECK_THROWS_AS((X0Projection{0.0, 2, 0, 2, 2}.mask(bad)), Error);
    auto flat = Tensor({8});
    CHECK_THROWS_AS((X0Projection{0.0, 0, 0, 1, 1}.mask(flat)), Error);
}

TEST_CASE("p_sample: variance kinds, last step and determinism") {
    const auto s = cosine_schedule(50);
    const int t = 20;
    CHECK(s.variance(t, SigmaKind::beta) == s.beta(t));
    CHECK(s.variance(t, SigmaKind::beta_tilde) ==
          doctest::Approx(s.beta(t) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t))).epsilon(1e-14));

    const std::size_t n = 10000;
    const Tensor xt({n}, 0.3), eps({n}, -0.2);
    const double mu = posterior_mean(Tensor({1}, {0.3}), t, Tensor({1}, {-0.2}), s)[0];
    for (SigmaKind k : {SigmaKind::beta, SigmaKind::beta_tilde}) {
        auto rngs = chains(n, 8);
        const auto m = moments(p_sample(xt, t, eps, s, k, rngs).values());
        const double var = s.variance(t, k);
        CHECK(std::abs(m.mean - mu) < 3.0 * std::sqrt(var / n));
        CHECK(std::abs(m.var - var) < 3.0 * var * std::sqrt(2.0 / (n - 1)));
    }

    Rng a(9), b(9);
    CHECK(p_sample(xt, t, eps, s, SigmaKind::beta, a) == p_sample(xt, t, eps, s, SigmaKind::beta, b));
    Rng c(10);
    const Tensor last = p_sample(xt, 1, eps, s, SigmaKind::beta, c);
    CHECK(last == posterior_mean(xt, 1, eps, s));
    CHECK_THROWS_AS(p_sample(xt, 0, eps, s, SigmaKind::beta, c), Error);
}

TEST_CASE("sample_loop: one-step loop, determinism and chain independence") {
    const auto s1 = linear_schedule(1, 0.1, 0.1);
    int calls = 0;
    EpsModel zero = [&](const Tensor& x, int) {
        ++calls;
        return Tensor(x.shape());
    };
    auto r1 = chains(3, 1);
    const Tensor out = sample_loop(zero, s1, SigmaKind::beta, r1, {3, 2});
    CHECK(calls == 1);
    auto r2 = chains(3, 1);
    const Tensor init = chain_normal({3, 2}, r2);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out[i] == doctest::Approx(init[i] / std::sqrt(0.9)).epsilon(1e-15));

    const auto s = cosine_schedule(20);
    EpsModel damp = [](const Tensor& x, int) {
        Tensor e = x;
        for (double& v : e.values()) v *= 0.3;
        return e;
    };
    auto a = chains(4, 2), b = chains(4, 2);
    const Tensor xa = sample_loop(damp, s, SigmaKind::beta_tilde, a, {4, 5});
    CHECK(xa == sample_loop(damp, s, SigmaKind::beta_tilde, b, {4, 5}));
    // Chain 2 alone gives the same trajectory as inside the batch.
    std::vector<Rng> solo{Rng(derive_seed(2, 2))};
    const Tensor x2 = sample_loop(damp, s, SigmaKind::beta_tilde, solo, {1, 5});
    for (std::size_t i = 0; i < 5; ++i) CHECK(x2[i] == xa[10 + i]);
    auto bad = chains(3, 2);
    CHECK_THROWS_AS(sample_loop(damp, s, SigmaKind::beta, bad, {4, 5}), Error);
}

TEST_CASE("sampling with the exact score recovers a 1-D Gaussian mixture") {
    const Mixture mix;
    const auto s = cosine_schedule(200);
    EpsModel exact = [&](const Tensor& x, int t) {
        Tensor e(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) e[i] = mix.eps(x[i], s.alpha_bar(t));
        return e;
    };
    const std::size_t n = 10000;
    auto rngs = chains(n, 11);
    const Tensor x0 = sample_loop(exact, s, SigmaKind::beta_tilde, rngs, {n, 1});

    const double lo = -3.5, hi = 3.5;
    const int bins = 20;
    const double w = (hi - lo) / bins;
    std::vector<double> hist(bins + 2, 0.0);  // plus two tail bins
    for (double v : x0.values()) {
        const int b = v < lo ? 0 : v >= hi ? bins + 1 : 1 + std::min(bins - 1, static_cast<int>((v - lo) / w));
        hist[static_cast<std::size_t>(b)] += 1.0 / n;
    }
    double tv = 0.0;
    for (int b = 0; b < bins + 2; ++b) {
        const double a = b == 0 ? -INFINITY : lo + (b - 1) * w;
        const double c = b == bins + 1 ? INFINITY : lo + b * w;
        const double p = (std::isinf(c) ? 1.0 : mix.cdf(c)) - (std::isinf(a) ? 0.0 : mix.cdf(a));
        tv += std::abs(hist[static_cast<std::size_t>(b)] - p);
    }
    tv *= 0.5;
    MESSAGE("total variation " << tv);
    CHECK(tv < 0.05);
}

TEST_CASE("schedule CSV lists every step") {
    std::ostringstream out;
    write_schedule_csv(out, linear_schedule(4, 0.1, 0.4));
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,beta,alpha_bar");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 5);
    CHECK(parse_schedule_kind("cosine") == ScheduleKind::cosine);
    CHECK_THROWS_AS(parse_schedule_kind("sigmoid"), Error);
    CHECK(parse_sigma_kind(sigma_kind_name(SigmaKind::beta_tilde)) == SigmaKind::beta_tilde);
}

}  // TEST_SUITE
