#include <catch2/catch_amalgamated.hpp>

#include "robustreid/fnes.hpp"
#include "test_util.hpp"

using namespace robustreid;

TEST_CASE("smooth_label definition") {
    SoftLabel y = smooth_label(0, 0.9, 4);
    CHECK(y.probs[0] == Catch::Approx(0.9));
    for (int c = 1; c < 4; ++c) CHECK(y.probs[c] == Catch::Approx(0.1 / 3.0));

    SoftLabel z = smooth_label(1, 0.9, 2);
    CHECK(z.probs[0] == Catch::Approx(0.1));
    CHECK(z.probs[1] == Catch::Approx(0.9));

    CHECK_THROWS_AS(smooth_label(0, 0.9, 1), InvalidK);
}

TEST_CASE("redistribute moves mass to the farthest class") {
    SoftLabel base = smooth_label(0, 0.95, 4);
    SoftLabel out = redistribute(base, 0.01, 2, 0);
    CHECK(out.probs[0] == Catch::Approx(0.94));
    CHECK(out.probs[1] == Catch::Approx(0.05 / 3.0));
    CHECK(out.probs[2] == Catch::Approx(0.05 / 3.0 + 0.01));
    CHECK(out.probs[3] == Catch::Approx(0.05 / 3.0));
    CHECK(out.sum() == Catch::Approx(1.0).margin(1e-12));

    // upsilon = 0 is the identity
    SoftLabel same = redistribute(base, 0.0, 2, 0);
    CHECK(same.probs == base.probs);

    CHECK_THROWS_AS(redistribute(base, 0.01, 0, 0), InvalidTransfer);
    CHECK_THROWS_AS(redistribute(base, 0.96, 2, 0), InvalidTransfer);
}

TEST_CASE("apply_fnes worked scalar example") {
    // x = 0.2, x_hat = 0.28, gamma = 1.5, omega = 0.5 -> x_temp = 0.32, x_adv = 0.26
    Image x = testutil::flat_image(2, 1, 0.2, 0.2, 0.2);
    Image x_hat = testutil::flat_image(2, 1, 0.28, 0.28, 0.28);
    FNESConfig cfg;
    FNESResult r = apply_fnes_with_omega(x, x_hat, 0, 3, 4, cfg, 0.5);
    CHECK(r.x_adv.data[0] == Catch::Approx(0.26).margin(1e-12));
}

TEST_CASE("apply_fnes worked label example") {
    // k=4, omega=0.5, lambda1=0.9, lambda2=0.95, upsilon=0.01, farthest=3
    Image x = testutil::flat_image(2, 1, 0.2, 0.2, 0.2);
    Image x_hat = x;
    FNESConfig cfg;
    FNESResult r = apply_fnes_with_omega(x, x_hat, 0, 3, 4, cfg, 0.5);
    CHECK(r.y_adv.probs[0] == Catch::Approx(0.92).margin(1e-12));
    CHECK(r.y_adv.probs[1] == Catch::Approx(0.025).margin(1e-12));
    CHECK(r.y_adv.probs[2] == Catch::Approx(0.025).margin(1e-12));
    CHECK(r.y_adv.probs[3] == Catch::Approx(0.03).margin(1e-12));
}

TEST_CASE("apply_fnes limiting case: gamma=1, omega->1") {
    Image x = testutil::flat_image(2, 1, 0.4, 0.5, 0.6);
    Image x_hat = testutil::flat_image(2, 1, 0.45, 0.55, 0.65);
    FNESConfig cfg;
    cfg.gamma = 1.0;
    FNESResult r = apply_fnes_with_omega(x, x_hat, 1, 2, 4, cfg, 1.0 - 1e-9);
    for (size_t i = 0; i < x.data.size(); ++i)
        CHECK(r.x_adv.data[i] == Catch::Approx(x.data[i]).margin(1e-8));
    SoftLabel phi = smooth_label(1, cfg.lambda1, 4);
    for (int c = 0; c < 4; ++c)
        CHECK(r.y_adv.probs[c] == Catch::Approx(phi.probs[c]).margin(1e-8));
}

TEST_CASE("fnes label algebra invariants over random draws") {
    Rng rng(42);
    for (int trial = 0; trial < 2000; ++trial) {
        int k = 2 + static_cast<int>(rng.index(30));
        double lambda1 = rng.uniform(0.05, 0.95);
        double lambda2 = rng.uniform(0.05, 0.95);
        double upsilon = rng.uniform(1e-6, lambda2 * 0.99);
        double omega = rng.uniform(0.01, 0.99);
        int true_class = static_cast<int>(rng.index(k));
        int farthest = static_cast<int>(rng.index(k - 1));
        if (farthest >= true_class) ++farthest;

        FNESConfig cfg;
        cfg.gamma = rng.uniform(1.0, 3.0);
        cfg.lambda1 = lambda1;
        cfg.lambda2 = lambda2;
        cfg.upsilon = upsilon;

        Image x = testutil::flat_image(2, 1, 0.3, 0.4, 0.5);
        FNESResult r = apply_fnes_with_omega(x, x, true_class, farthest, k, cfg, omega);

        double sum = r.y_adv.sum();
        REQUIRE(std::abs(sum - 1.0) <= 1e-9);
        for (double p : r.y_adv.probs) REQUIRE(p >= 0.0);
        double want_true = omega * lambda1 + (1.0 - omega) * (lambda2 - upsilon);
        REQUIRE(std::abs(r.y_adv.probs[true_class] - want_true) <= 1e-12);
    }
}

TEST_CASE("fnes effective perturbation bound") {
    // ||x_adv - x||inf <= (1-a) * gamma * eps before (and after) pixel clipping
    Rng rng(7);
    FNESConfig cfg;  // omega in (0.3, 0.8), gamma 1.5
    const double eps = 8.0 / 255.0;
    for (int trial = 0; trial < 200; ++trial) {
        Image x(4, 3);
        Image x_hat(4, 3);
        for (size_t i = 0; i < x.data.size(); ++i) {
            x.data[i] = rng.uniform(0.0, 1.0);
            x_hat.data[i] = std::clamp(x.data[i] + rng.uniform(-eps, eps), 0.0, 1.0);
        }
        FNESResult r = apply_fnes(x, x_hat, 0, 1, 4, cfg, rng);
        double bound = (1.0 - cfg.omega_a) * cfg.gamma * eps;
        REQUIRE(linf_distance(r.x_adv, x) <= bound + 1e-9);
        for (double v : r.x_adv.data) REQUIRE((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("fnes config validation") {
    FNESConfig bad;
    bad.gamma = 0.5;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
    bad = FNESConfig{};
    bad.upsilon = 1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
    bad = FNESConfig{};
    bad.omega_a = 0.9;
    bad.omega_b = 0.3;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
}
