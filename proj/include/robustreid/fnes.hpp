#pragma once

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "robustreid/errors.hpp"
#include "robustreid/image.hpp"
#include "robustreid/rng.hpp"

namespace robustreid {

// Probability vector over the identity set; sums to 1 within 1e-9.
struct SoftLabel {
    std::vector<double> probs;

    int k() const { return static_cast<int>(probs.size()); }
    double sum() const {
        double s = 0.0;
        for (double p : probs) s += p;
        return s;
    }
};

struct FNESConfig {
    double gamma = 1.5;        // perturbation scaling, >= 1
    double omega_a = 0.3;      // omega ~ U(omega_a, omega_b)
    double omega_b = 0.8;
    double lambda1 = 0.9;      // true-class mass on the clean path
    double lambda2 = 0.95;     // true-class mass before redistribution
    double upsilon = 0.01;     // mass moved to the farthest negative class

    void validate() const {
        if (gamma < 1.0) throw InvalidSpec("fnes: gamma must be >= 1");
        if (!(0.0 < omega_a && omega_a < omega_b && omega_b < 1.0))
            throw InvalidSpec("fnes: omega range must satisfy 0 < a < b < 1");
        if (!(0.0 < lambda1 && lambda1 < 1.0)) throw InvalidSpec("fnes: lambda1 must be in (0,1)");
        if (!(0.0 < lambda2 && lambda2 < 1.0)) throw InvalidSpec("fnes: lambda2 must be in (0,1)");
        if (!(0.0 < upsilon && upsilon < lambda2))
            throw InvalidSpec("fnes: upsilon must be in (0, lambda2)");
    }

    nlohmann::json to_json() const {
        return {{"gamma", gamma},     {"omega", {omega_a, omega_b}}, {"lambda1", lambda1},
                {"lambda2", lambda2}, {"upsilon", upsilon}};
    }

    static FNESConfig from_json(const nlohmann::json& j) {
        FNESConfig c;
        c.gamma = j.value("gamma", c.gamma);
        if (j.contains("omega")) {
            c.omega_a = j["omega"].at(0).get<double>();
            c.omega_b = j["omega"].at(1).get<double>();
        }
        c.lambda1 = j.value("lambda1", c.lambda1);
        c.lambda2 = j.value("lambda2", c.lambda2);
        c.upsilon = j.value("upsilon", c.upsilon);
        c.validate();
        return c;
    }
};

// Label smoothing: lambda on the true class, (1-lambda)/(k-1) on each other.
inline SoftLabel smooth_label(int true_class, double lambda, int k) {
    if (k < 2) throw InvalidK("smooth_label needs k >= 2, got " + std::to_string(k));
    if (!(0.0 < lambda && lambda < 1.0)) throw InvalidSpec("smooth_label: lambda must be in (0,1)");
    if (true_class < 0 || true_class >= k) throw InvalidSpec("smooth_label: class out of range");
    SoftLabel y;
    y.probs.assign(k, (1.0 - lambda) / (k - 1));
    y.probs[true_class] = lambda;
    return y;
}

// Moves mass upsilon from the true class to the farthest negative class.
inline SoftLabel redistribute(const SoftLabel& soft, double upsilon, int farthest_class,
                              int true_class) {
    if (farthest_class == true_class)
        throw InvalidTransfer("redistribute: farthest class equals true class");
    if (farthest_class < 0 || farthest_class >= soft.k() || true_class < 0 ||
        true_class >= soft.k())
        throw InvalidTransfer("redistribute: class index out of range");
    if (upsilon < 0.0 || soft.probs[true_class] <= upsilon)
        throw InvalidTransfer("redistribute: mass underflow on the true class");
    SoftLabel out = soft;
    out.probs[true_class] -= upsilon;
    out.probs[farthest_class] += upsilon;
    return out;
}

struct FNESResult {
    Image x_adv;
    SoftLabel y_adv;
    double omega = 0.0;  // the single draw shared by the input and label mixes
};

// Perturbation scaling + convex mixing + two-stage label softening with an
// explicit mixing weight; apply_fnes draws omega once per sample.
inline FNESResult apply_fnes_with_omega(const Image& x, const Image& x_hat, int true_class,
                                        int farthest_class, int k, const FNESConfig& cfg,
                                        double omega) {
    cfg.validate();
    if (!x.same_shape(x_hat)) throw ShapeMismatch("apply_fnes: x and x_hat shapes differ");
    if (!(0.0 < omega && omega < 1.0)) throw InvalidSpec("apply_fnes: omega must be in (0,1)");

    FNESResult r;
    r.omega = omega;
    r.x_adv = Image(x.height, x.width);
    for (size_t i = 0; i < x.data.size(); ++i) {
        double temp = x.data[i] + cfg.gamma * (x_hat.data[i] - x.data[i]);
        r.x_adv.data[i] = omega * x.data[i] + (1.0 - omega) * temp;
    }
    r.x_adv.clamp01();  // scaled perturbations can exit pixel range

    SoftLabel clean_path = smooth_label(true_class, cfg.lambda1, k);
    SoftLabel adv_path = redistribute(smooth_label(true_class, cfg.lambda2, k), cfg.upsilon,
                                      farthest_class, true_class);
    r.y_adv.probs.resize(k);
    for (int c = 0; c < k; ++c)
        r.y_adv.probs[c] = omega * clean_path.probs[c] + (1.0 - omega) * adv_path.probs[c];
    return r;
}

inline FNESResult apply_fnes(const Image& x, const Image& x_hat, int true_class,
                             int farthest_class, int k, const FNESConfig& cfg, Rng& rng) {
    double omega = rng.uniform(cfg.omega_a, cfg.omega_b);
    return apply_fnes_with_omega(x, x_hat, true_class, farthest_class, k, cfg, omega);
}

}  // namespace robustreid
