#include <catch2/catch_amalgamated.hpp>

#include <salt/rng.hpp>
#include <salt/schedule.hpp>

using namespace salt;

TEST_CASE("build_schedule hand values") {
    auto s1 = build_schedule(1, 0.02, 0.02);
    REQUIRE(s1.alpha_bar[0] == Catch::Approx(0.98).epsilon(1e-12));

    auto s2 = build_schedule(2, 1e-4, 0.02);
    REQUIRE(s2.beta[0] == Catch::Approx(1e-4));
    REQUIRE(s2.beta[1] == Catch::Approx(0.02));
    REQUIRE(s2.alpha_bar[0] == Catch::Approx(0.9999).epsilon(1e-12));
    REQUIRE(s2.alpha_bar[1] == Catch::Approx(0.9999 * 0.98).epsilon(1e-12));
}

TEST_CASE("build_schedule rejects bad ranges") {
    REQUIRE_THROWS_AS(build_schedule(0, 1e-4, 0.02), config_error);
    REQUIRE_THROWS_AS(build_schedule(10, 0.0, 0.02), config_error);
    REQUIRE_THROWS_AS(build_schedule(10, 0.03, 0.02), config_error);
    REQUIRE_THROWS_AS(build_schedule(10, 1e-4, 1.0), config_error);
}

TEST_CASE("schedule invariants") {
    auto s = default_schedule();
    REQUIRE(s.T == 200);
    REQUIRE(s.alpha_bar_at(0) == 1.0);
    for (int t = 1; t <= s.T; ++t) {
        double ab = s.alpha_bar_at(t);
        REQUIRE(ab > 0.0);
        REQUIRE(ab < 1.0);
        REQUIRE(ab < s.alpha_bar_at(t - 1));
        // exact recurrence to accumulation precision
        REQUIRE(ab == Catch::Approx(s.alpha_bar_at(t - 1) * (1.0 - s.beta[t - 1])).epsilon(1e-14));
        // variance-preserving coefficient identity
        double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        REQUIRE(a * a + b * b == Catch::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("q_sample boundary and hand value") {
    auto s = default_schedule();
    Rng rng(7);
    Grid<double> z0 = randn<double>({2, 4, 4}, rng);
    Grid<double> eps = randn<double>({2, 4, 4}, rng);

    SECTION("t=0 returns z0 exactly") {
        Grid<double> out = q_sample(z0, 0, eps, s);
        REQUIRE(out.v == z0.v);
    }
    SECTION("eps=0 scales z0") {
        Grid<double> zero({2, 4, 4});
        Grid<double> out = q_sample(z0, 10, zero, s);
        double a = std::sqrt(s.alpha_bar_at(10));
        for (size_t i = 0; i < out.numel(); ++i)
            REQUIRE(out.v[i] == Catch::Approx(a * z0.v[i]).margin(1e-14));
    }
    SECTION("scalar hand value with ab = 0.25") {
        NoiseSchedule hand;
        hand.T = 1;
        hand.beta = {0.75};
        hand.alpha_bar = {0.25};
        Grid<double> z({1, 1, 1}, 1.0), e({1, 1, 1}, 2.0);
        Grid<double> out = q_sample(z, 1, e, hand);
        REQUIRE(out.v[0] == Catch::Approx(0.5 + std::sqrt(0.75) * 2.0).epsilon(1e-12));
    }
    SECTION("shape mismatch rejected") {
        Grid<double> bad({1, 4, 4});
        REQUIRE_THROWS_AS(q_sample(z0, 5, bad, s), contract_error);
    }
}

TEST_CASE("q_sample is linear in both arguments") {
    auto s = default_schedule();
    Rng rng(123);
    for (int trial = 0; trial < 5; ++trial) {
        Grid<double> a = randn<double>({1, 3, 3}, rng), b = randn<double>({1, 3, 3}, rng);
        Grid<double> ea = randn<double>({1, 3, 3}, rng), eb = randn<double>({1, 3, 3}, rng);
        int t = 1 + int(rng.uniform_int(200));
        Grid<double> sum_in({1, 3, 3}), eps_in({1, 3, 3});
        for (size_t i = 0; i < sum_in.numel(); ++i) {
            sum_in.v[i] = 2.0 * a.v[i] + 3.0 * b.v[i];
            eps_in.v[i] = 2.0 * ea.v[i] + 3.0 * eb.v[i];
        }
        Grid<double> lhs = q_sample(sum_in, t, eps_in, s);
        Grid<double> ra = q_sample(a, t, ea, s), rb = q_sample(b, t, eb, s);
        for (size_t i = 0; i < lhs.numel(); ++i)
            REQUIRE(lhs.v[i] == Catch::Approx(2.0 * ra.v[i] + 3.0 * rb.v[i]).margin(1e-12));
    }
}
