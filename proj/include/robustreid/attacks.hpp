#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "robustreid/errors.hpp"
#include "robustreid/image.hpp"
#include "robustreid/io.hpp"
#include "robustreid/model.hpp"
#include "robustreid/rng.hpp"

namespace robustreid {

enum class AttackKind { FNA, SMA, MIFGSM };

inline const char* attack_name(AttackKind k) {
    switch (k) {
        case AttackKind::FNA: return "fna";
        case AttackKind::SMA: return "sma";
        default: return "mifgsm";
    }
}

inline AttackKind attack_from_name(const std::string& s) {
    if (s == "fna") return AttackKind::FNA;
    if (s == "sma") return AttackKind::SMA;
    if (s == "mifgsm" || s == "ifgsm") return AttackKind::MIFGSM;
    throw InvalidSpec("unknown attack kind: " + s);
}

// L-infinity iterative metric attack. kappa <= 0 selects the default step
// size min(eps, 2*eps/steps). eps == 0 is the degenerate no-op attack.
struct AttackSpec {
    AttackKind kind = AttackKind::FNA;
    double epsilon = 8.0 / 255.0;
    int steps = 16;
    double kappa = 0.0;
    bool random_init = true;

    double step_size() const {
        if (kappa > 0.0) return kappa;
        if (steps < 1 || epsilon == 0.0) return epsilon;
        return std::min(epsilon, 2.0 * epsilon / steps);
    }

    void validate() const {
        if (epsilon < 0.0 || epsilon >= 1.0) throw InvalidSpec("attack: epsilon must be in [0,1)");
        if (steps < 1) throw InvalidSpec("attack: steps must be >= 1");
        if (kappa > 0.0 && kappa > epsilon + 1e-12)
            throw InvalidSpec("attack: kappa must satisfy 0 < kappa <= epsilon");
    }

    nlohmann::json to_json() const {
        return {{"kind", attack_name(kind)},
                {"eps", epsilon},
                {"steps", steps},
                {"kappa", kappa},
                {"random_init", random_init}};
    }

    static AttackSpec from_json(const nlohmann::json& j) {
        AttackSpec s;
        if (j.contains("kind")) s.kind = attack_from_name(j["kind"].get<std::string>());
        if (j.contains("eps")) {
            if (j["eps"].is_string())
                s.epsilon = parse_fraction(j["eps"].get<std::string>());
            else
                s.epsilon = j["eps"].get<double>();
        }
        s.steps = j.value("steps", s.steps);
        s.kappa = j.value("kappa", s.kappa);
        s.random_init = j.value("random_init", s.random_init);
        s.validate();
        return s;
    }
};

// Frozen snapshots of the accessible set: reference features never receive
// gradients. clean_anchor holds E(x) of each anchor (SMA), farthest_ids the
// identity whose mean distance from the anchor is largest (FNA / label
// softening).
struct AttackContext {
    FeatureBatch refs;
    std::vector<int> anchor_ids;
    std::vector<int> farthest_ids;
    FeatureBatch clean_anchor;
};

// ID-to-anchor distance is the mean over that identity's reference features;
// ties break toward the smallest identity.
inline int farthest_negative_id(const double* anchor_feat, const FeatureBatch& refs,
                                int anchor_identity) {
    std::map<int, std::pair<double, int>> acc;  // id -> (sum of distances, count)
    for (int r = 0; r < refs.rows; ++r) {
        int id = refs.identities[r];
        if (id == anchor_identity) continue;
        auto& [sum, count] = acc[id];
        sum += euclidean(anchor_feat, refs.row(r), refs.dim);
        count += 1;
    }
    if (acc.empty())
        throw NoNegativeAvailable("no reference identity differs from anchor " +
                                  std::to_string(anchor_identity));
    int best_id = 0;
    double best = -1.0;
    for (const auto& [id, sc] : acc) {  // ascending ids: strict > keeps the smallest on ties
        double mean = sc.first / sc.second;
        if (mean > best) {
            best = mean;
            best_id = id;
        }
    }
    return best_id;
}

inline AttackContext make_attack_context(const ModelBundle& bundle,
                                         const std::vector<Sample>& anchors,
                                         const std::vector<Sample>& accessible) {
    AttackContext ctx;
    std::vector<Image> ref_imgs, anchor_imgs;
    for (const auto& s : accessible) {
        ref_imgs.push_back(s.image);
        ctx.refs.identities.push_back(s.identity);
        ctx.refs.cameras.push_back(s.camera);
    }
    FeatureBatch rf = encode(bundle, ref_imgs);
    ctx.refs.rows = rf.rows;
    ctx.refs.dim = rf.dim;
    ctx.refs.data = std::move(rf.data);

    for (const auto& s : anchors) anchor_imgs.push_back(s.image);
    ctx.clean_anchor = encode(bundle, anchor_imgs);
    for (const auto& s : anchors) {
        ctx.anchor_ids.push_back(s.identity);
        ctx.farthest_ids.push_back(
            farthest_negative_id(ctx.clean_anchor.row(static_cast<int>(ctx.anchor_ids.size()) - 1),
                                 ctx.refs, s.identity));
    }
    return ctx;
}

// During training the accessible set is the batch itself.
inline AttackContext make_training_context(const ModelBundle& bundle,
                                           const std::vector<Sample>& batch) {
    return make_attack_context(bundle, batch, batch);
}

namespace detail {

// Accumulates d||f-g|| / df into grad (scaled); returns the distance.
inline double add_distance_grad(const double* f, const double* g, int d, double scale,
                                double* grad) {
    double dist = euclidean(f, g, d);
    if (grad && dist > 0.0) {
        double s = scale / dist;
        for (int i = 0; i < d; ++i) grad[i] += s * (f[i] - g[i]);
    }
    return dist;
}

}  // namespace detail

// Scalar the attack ascends; when grad is non-null it receives dL/df.
// FNA:    sum_{p in P∩A} d(f, f_p) - sum_{n in N∩A} d(f, f_n)
// SMA:    d(f, f_clean)
// MIFGSM: sum_{p in P∩A} d(f, f_p)
inline double metric_attack_loss(AttackKind kind, const double* f, const AttackContext& ctx,
                                 int anchor, double* grad = nullptr) {
    if (anchor < 0 || anchor >= static_cast<int>(ctx.anchor_ids.size()))
        throw MissingContext("metric_attack_loss: anchor index out of range");
    int d = ctx.refs.dim;
    if (grad)
        for (int i = 0; i < d; ++i) grad[i] = 0.0;

    if (kind == AttackKind::SMA) {
        if (ctx.clean_anchor.rows == 0)
            throw MissingContext("SMA requires the clean anchor features");
        return detail::add_distance_grad(f, ctx.clean_anchor.row(anchor), d, 1.0, grad);
    }

    if (ctx.refs.rows == 0) throw MissingContext("attack context has no reference features");
    int anchor_id = ctx.anchor_ids[anchor];
    double loss = 0.0;
    for (int r = 0; r < ctx.refs.rows; ++r) {
        if (ctx.refs.identities[r] == anchor_id)
            loss += detail::add_distance_grad(f, ctx.refs.row(r), d, 1.0, grad);
    }
    if (kind == AttackKind::FNA) {
        if (ctx.farthest_ids.empty()) throw MissingContext("FNA requires farthest-negative ids");
        int far_id = ctx.farthest_ids[anchor];
        for (int r = 0; r < ctx.refs.rows; ++r) {
            if (ctx.refs.identities[r] == far_id)
                loss -= detail::add_distance_grad(f, ctx.refs.row(r), d, -1.0, grad);
        }
    }
    return loss;
}

inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

namespace detail {

// The PGD recurrence from a given start point; exactly `steps` ascent steps,
// each followed by the clip to the eps-ball around x and to [0,1].
inline Image pgd_iterate(const ModelBundle& bundle, const nn::EncoderPlan& plan, const Image& x,
                         Image x_hat, const AttackContext& ctx, int anchor,
                         const AttackSpec& spec) {
    double eps = spec.epsilon;
    double kappa = spec.step_size();
    nn::EncoderState<double> st;
    std::vector<double> gfeat(plan.embed_dim), gimage(x.data.size());
    for (int step = 0; step < spec.steps; ++step) {
        nn::encoder_forward(plan, bundle.encoder_params.data(), x_hat.data.data(), st);
        metric_attack_loss(spec.kind, st.feature.data(), ctx, anchor, gfeat.data());
        nn::encoder_backward<double>(plan, bundle.encoder_params.data(), st, gfeat.data(), nullptr,
                             gimage.data());
        for (double g : gimage)
            if (!std::isfinite(g)) throw NonFiniteGradient("pgd: non-finite image gradient");
        for (size_t i = 0; i < x_hat.data.size(); ++i) {
            double v = x_hat.data[i] + kappa * sign0(gimage[i]);
            v = std::clamp(v, x.data[i] - eps, x.data[i] + eps);
            x_hat.data[i] = std::clamp(v, 0.0, 1.0);
        }
    }
    return x_hat;
}

}  // namespace detail

// x_hat(0) = x + eta with eta ~ U(-eps, eps) elementwise when random_init,
// else eta = 0. Model parameters untouched; deterministic under the rng.
inline std::vector<Image> pgd_metric_attack(const ModelBundle& bundle,
                                            const std::vector<Image>& images,
                                            const AttackContext& ctx, const AttackSpec& spec,
                                            Rng& rng) {
    spec.validate();
    if (images.size() != ctx.anchor_ids.size())
        throw MissingContext("pgd: context does not cover the anchor images");
    if (spec.epsilon == 0.0) return images;  // degenerate ball

    nn::EncoderPlan plan = bundle.arch.encoder_plan();
    uint64_t base = rng.u64();
    std::vector<Image> out(images.size());
    for (size_t i = 0; i < images.size(); ++i) {
        check_image_shape(bundle.arch, images[i]);
        Rng local = rng.child_at(base, i);  // per-anchor stream: anchors are independent
        Image x_hat = images[i];
        if (spec.random_init)
            for (double& v : x_hat.data) v += local.uniform(-spec.epsilon, spec.epsilon);
        out[i] = detail::pgd_iterate(bundle, plan, images[i], std::move(x_hat), ctx,
                                     static_cast<int>(i), spec);
    }
    return out;
}

}  // namespace robustreid
