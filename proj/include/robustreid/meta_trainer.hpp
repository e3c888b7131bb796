#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "robustreid/attacks.hpp"
#include "robustreid/dataset.hpp"
#include "robustreid/detail/loss_engine.hpp"
#include "robustreid/errors.hpp"
#include "robustreid/fnes.hpp"
#include "robustreid/losses.hpp"
#include "robustreid/meta.hpp"
#include "robustreid/model.hpp"
#include "robustreid/rng.hpp"

namespace robustreid {

// ---------------------------------------------------------------------------
// Meta partition
// ---------------------------------------------------------------------------

// Disjoint covering split of batch indices. A clean sample and its
// adversarial counterpart always land on the same side (the split is over
// pair indices). Identity-stratified: every identity with >= 2 samples
// contributes to both sides; remainders go to meta-train.
struct MetaSplit {
    std::vector<int> train_indices;
    std::vector<int> test_indices;
    int ratio_train = 3, ratio_test = 1;
};

inline MetaSplit partition_batch(const std::vector<int>& labels, int ratio_train, int ratio_test,
                                 Rng& rng) {
    if (ratio_train < 1 || ratio_test < 0) throw InvalidSpec("partition ratio must be >=1 : >=0");
    std::map<int, std::vector<int>> by_id;
    for (size_t i = 0; i < labels.size(); ++i) by_id[labels[i]].push_back(static_cast<int>(i));
    if (by_id.size() < 2) throw DegenerateBatch("partition_batch needs >= 2 identities");

    MetaSplit split;
    split.ratio_train = ratio_train;
    split.ratio_test = ratio_test;
    for (auto& [id, idx] : by_id) {
        rng.shuffle(idx);
        int s = static_cast<int>(idx.size());
        int n_test = 0;
        if (ratio_test > 0) {
            n_test = (s * ratio_test) / (ratio_train + ratio_test);
            if (n_test == 0 && s >= 2) n_test = 1;  // both sides when possible
        }
        for (int j = 0; j < s; ++j)
            (j < n_test ? split.test_indices : split.train_indices).push_back(idx[j]);
    }
    std::sort(split.train_indices.begin(), split.train_indices.end());
    std::sort(split.test_indices.begin(), split.test_indices.end());
    return split;
}

inline MetaSplit partition_batch(const std::vector<Sample>& batch, int ratio_train,
                                 int ratio_test, Rng& rng) {
    std::vector<int> labels;
    labels.reserve(batch.size());
    for (const auto& s : batch) labels.push_back(s.identity);
    return partition_batch(labels, ratio_train, ratio_test, rng);
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::string mode = "full";  // full | vanilla | metric-at
    uint64_t seed = 0;
    int epochs = 120;
    int batch_p = 16;
    int batch_k = 4;

    double lr = 0.00035;   // beta, the outer rate
    double alpha = -1.0;   // inner rate; < 0 means "use lr"
    double weight_decay = 0.0005;
    std::vector<int> milestones = {20, 40, 60, 80, 100};
    double lr_decay = 0.1;

    double disc_lr = 0.00035;
    double disc_weight_decay = 0.0005;
    double disc_lr_decay = 0.5;

    AttackSpec attack{AttackKind::FNA, 5.0 / 255.0, 8, 0.0, true};
    FNESConfig fnes;
    double le_scale = 0.001;
    double margin = 0.3;

    int meta_train_ratio = 3;
    int meta_test_ratio = 1;
    bool first_order = false;

    // ablation switches, composable with mode=full
    bool no_fnes = false;
    bool no_meta = false;
    bool no_advinv = false;
    bool no_balance = false;

    double inner_alpha() const { return alpha < 0.0 ? lr : alpha; }

    bool use_attack() const { return mode != "vanilla"; }
    bool use_fnes() const { return mode == "full" && !no_fnes; }
    bool use_meta() const { return mode == "full" && !no_meta; }
    bool use_advinv() const { return mode == "full" && !no_advinv; }

    void validate() const {
        if (mode != "full" && mode != "vanilla" && mode != "metric-at")
            throw InvalidSpec("unknown training mode: " + mode);
        if (epochs < 0) throw InvalidSpec("negative epoch count");
        if (batch_p < 2 || batch_k < 1) throw InvalidSpec("batch needs P >= 2, K >= 1");
        if (lr <= 0.0) throw InvalidSpec("lr must be positive");
        if (!std::is_sorted(milestones.begin(), milestones.end()) ||
            std::adjacent_find(milestones.begin(), milestones.end()) != milestones.end())
            throw InvalidSpec("milestones must be strictly increasing");
        if (meta_train_ratio < 1 || meta_test_ratio < 0)
            throw InvalidSpec("meta ratio must be >=1 : >=0");
        attack.validate();
        fnes.validate();
    }

    nlohmann::json to_json() const {
        return {{"mode", mode},
                {"seed", seed},
                {"epochs", epochs},
                {"batch", {{"p", batch_p}, {"k", batch_k}}},
                {"lr", lr},
                {"alpha", alpha},
                {"weight_decay", weight_decay},
                {"milestones", milestones},
                {"lr_decay", lr_decay},
                {"disc", {{"lr", disc_lr}, {"weight_decay", disc_weight_decay}, {"lr_decay", disc_lr_decay}}},
                {"attack", attack.to_json()},
                {"fnes", fnes.to_json()},
                {"le_scale", le_scale},
                {"margin", margin},
                {"meta_ratio", {meta_train_ratio, meta_test_ratio}},
                {"first_order", first_order},
                {"no_fnes", no_fnes},
                {"no_meta", no_meta},
                {"no_advinv", no_advinv},
                {"no_balance", no_balance}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.mode = j.value("mode", c.mode);
        c.seed = j.value("seed", c.seed);
        c.epochs = j.value("epochs", c.epochs);
        if (j.contains("batch")) {
            c.batch_p = j["batch"].value("p", c.batch_p);
            c.batch_k = j["batch"].value("k", c.batch_k);
        }
        c.lr = j.value("lr", c.lr);
        c.alpha = j.value("alpha", c.alpha);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.milestones = j.value("milestones", c.milestones);
        c.lr_decay = j.value("lr_decay", c.lr_decay);
        if (j.contains("disc")) {
            c.disc_lr = j["disc"].value("lr", c.disc_lr);
            c.disc_weight_decay = j["disc"].value("weight_decay", c.disc_weight_decay);
            c.disc_lr_decay = j["disc"].value("lr_decay", c.disc_lr_decay);
        }
        if (j.contains("attack")) c.attack = AttackSpec::from_json(j["attack"]);
        if (j.contains("fnes")) c.fnes = FNESConfig::from_json(j["fnes"]);
        c.le_scale = j.value("le_scale", c.le_scale);
        c.margin = j.value("margin", c.margin);
        if (j.contains("meta_ratio")) {
            c.meta_train_ratio = j["meta_ratio"].at(0).get<int>();
            c.meta_test_ratio = j["meta_ratio"].at(1).get<int>();
        }
        c.first_order = j.value("first_order", c.first_order);
        c.no_fnes = j.value("no_fnes", c.no_fnes);
        c.no_meta = j.value("no_meta", c.no_meta);
        c.no_advinv = j.value("no_advinv", c.no_advinv);
        c.no_balance = j.value("no_balance", c.no_balance);
        c.validate();
        return c;
    }
};

// MultiStep decay: base * decay^(number of milestones passed).
inline double scheduled_lr(double base, double decay, const std::vector<int>& milestones,
                           int epoch) {
    int passed = 0;
    for (int m : milestones)
        if (epoch >= m) ++passed;
    return base * std::pow(decay, passed);
}

// ---------------------------------------------------------------------------
// Optimizer (adaptive moments, L2 weight decay folded into the gradient)
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<double> m, v;
    long t = 0;

    void init(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
};

inline void adam_step(std::vector<double>& params, const std::vector<double>& grad,
                      AdamState& st, double lr, double weight_decay, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
    if (params.size() != grad.size() || params.size() != st.m.size())
        throw ShapeMismatch("adam_step: size mismatch");
    st.t += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
    for (size_t i = 0; i < params.size(); ++i) {
        double g = grad[i] + weight_decay * params[i];
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
        double mhat = st.m[i] / bc1;
        double vhat = st.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        if (!std::isfinite(params[i])) throw NonFiniteGradient("adam_step: non-finite parameter");
    }
}

// ---------------------------------------------------------------------------
// Total loss (public surface) and the self-meta objective
// ---------------------------------------------------------------------------

// Paired clean/adversarial training rows with raw identity per pair.
struct PairedBatch {
    std::vector<Image> clean_images;
    std::vector<Image> adv_images;
    std::vector<SoftLabel> clean_labels;
    std::vector<SoftLabel> adv_labels;
    std::vector<int> ids;

    size_t size() const { return clean_images.size(); }

    detail::LossBatchView view(const std::vector<int>* indices = nullptr) const {
        detail::LossBatchView v;
        auto push = [&](int i) {
            v.clean_images.push_back(&clean_images[i]);
            v.clean_labels.push_back(&clean_labels[i]);
            v.ids.push_back(ids[i]);
            if (!adv_images.empty()) {
                v.adv_images.push_back(&adv_images[i]);
                v.adv_labels.push_back(&adv_labels[i]);
            }
        };
        if (indices) {
            for (int i : *indices) push(i);
        } else {
            for (size_t i = 0; i < size(); ++i) push(static_cast<int>(i));
        }
        return v;
    }
};

// l evaluated on both the clean pairs and the adversarial pairs; the
// adversarial half is mandatory here.
inline LossReport total_loss(const ModelBundle& bundle, const PairedBatch& batch,
                             const detail::LossOptions& opt) {
    if (batch.adv_images.empty())
        throw MissingAdversarialHalf("total_loss requires the adversarial half");
    nn::EncoderPlan eplan = bundle.arch.encoder_plan();
    nn::DiscPlan dplan = bundle.arch.disc_plan();
    std::vector<double> theta = detail::pack_theta_g(bundle);
    detail::LossParts<double> parts;
    detail::batch_loss_grad<double>(bundle.arch, eplan, dplan, theta,
                                    bundle.discriminator_params, batch.view(), opt, nullptr,
                                    &parts);
    LossReport r;
    r.cls = parts.cls;
    r.tri = parts.tri;
    r.enc_adv = parts.enc_adv;
    r.disc = -parts.enc_adv;  // L_D = -L_E on identical features
    r.le_scale = opt.le_scale;
    r.total = parts.total;
    return r;
}

struct SelfMetaResult {
    double loss = 0.0;
    double loss_train = 0.0;
    double loss_test = 0.0;
    std::vector<double> grad;  // w.r.t. theta_g = [encoder | classifier]
};

// L_meta-train(theta_G) + L_meta-test(theta_G - alpha * grad L_meta-train),
// differentiated through both terms (see self_meta_eval).
inline SelfMetaResult self_meta_loss(const ModelBundle& bundle, const MetaSplit& split,
                                     const PairedBatch& batch, const TrainConfig& cfg) {
    nn::EncoderPlan eplan = bundle.arch.encoder_plan();
    nn::DiscPlan dplan = bundle.arch.disc_plan();
    detail::LossOptions opt{cfg.margin, cfg.le_scale, cfg.use_advinv()};

    detail::LossBatchView train_view = batch.view(&split.train_indices);
    detail::LossBatchView test_view = batch.view(&split.test_indices);
    detail::BatchLossFn train_fn{&bundle.arch, &eplan, &dplan, &bundle.discriminator_params,
                                 &train_view, opt};
    std::vector<double> theta = detail::pack_theta_g(bundle);

    SelfMetaResult out;
    if (split.test_indices.empty()) {  // ratio 1:0 degenerates to plain descent
        std::vector<double> grad;
        out.loss_train = detail::batch_loss_grad<double>(bundle.arch, eplan, dplan, theta,
                                                         bundle.discriminator_params, train_view,
                                                         opt, &grad, nullptr);
        out.loss = out.loss_train;
        out.grad = std::move(grad);
        return out;
    }
    detail::BatchLossFn test_fn{&bundle.arch, &eplan, &dplan, &bundle.discriminator_params,
                                &test_view, opt};
    MetaEval ev = self_meta_eval(train_fn, test_fn, theta, cfg.inner_alpha(), cfg.first_order);
    out.loss = ev.loss;
    out.loss_train = ev.loss_train;
    out.loss_test = ev.loss_test;
    out.grad = std::move(ev.grad);
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainState {
    ModelBundle bundle;
    AdamState adam_g, adam_d;
    int epoch = 0;  // number of completed epochs
    std::map<int, int> class_map;  // raw identity -> class index

    void init_optimizers() {
        adam_g.init(bundle.theta_g_size());
        adam_d.init(bundle.discriminator_params.size());
    }
};

struct StepLog {
    LossReport report;
    double meta_train_loss = 0.0;
    double meta_test_loss = 0.0;
};

namespace detail {

inline void disc_training_step(TrainState& state, const FeatureBatch& clean_feats,
                               const FeatureBatch& adv_feats, double lr, double weight_decay) {
    nn::DiscPlan plan = state.bundle.arch.disc_plan();
    const std::vector<double>& p = state.bundle.discriminator_params;
    std::vector<double> grad(p.size(), 0.0);
    nn::DiscState<double> st;
    int nc = clean_feats.rows, na = adv_feats.rows;
    for (int r = 0; r < nc; ++r) {
        double prob = nn::disc_forward(plan, p.data(), clean_feats.row(r), st);
        double gp = -1.0 / (prob * nc);  // d/dp of -mean log p
        nn::disc_backward<double>(plan, p.data(), st, clean_feats.row(r), gp, nullptr, grad.data());
    }
    for (int r = 0; r < na; ++r) {
        double prob = nn::disc_forward(plan, p.data(), adv_feats.row(r), st);
        double gp = 1.0 / ((1.0 - prob) * na);  // d/dp of -mean log(1-p)
        nn::disc_backward<double>(plan, p.data(), st, adv_feats.row(r), gp, nullptr, grad.data());
    }
    adam_step(state.bundle.discriminator_params, grad, state.adam_d, lr, weight_decay);
}

}  // namespace detail

// One Algorithm-1 step: attack, FNES, discriminator update, meta partition,
// self-meta gradient, outer update. lr/disc_lr are the scheduled rates.
inline StepLog train_step(TrainState& state, const std::vector<Sample>& batch,
                          const TrainConfig& cfg, double lr, double disc_lr, Rng& rng) {
    const ModelBundle& bundle = state.bundle;
    const int k = bundle.arch.num_classes;
    auto class_of = [&](int raw) {
        auto it = state.class_map.find(raw);
        if (it == state.class_map.end())
            throw UnknownIdentity("batch identity not in training registry: " + std::to_string(raw));
        return it->second;
    };

    PairedBatch pb;
    pb.ids.reserve(batch.size());
    for (const auto& s : batch) {
        pb.clean_images.push_back(s.image);
        pb.clean_labels.push_back(smooth_label(class_of(s.identity), cfg.fnes.lambda1, k));
        pb.ids.push_back(s.identity);
    }

    if (cfg.use_attack() && cfg.attack.epsilon > 0.0) {
        AttackContext ctx = make_training_context(bundle, batch);
        std::vector<Image> clean_imgs;
        for (const auto& s : batch) clean_imgs.push_back(s.image);
        Rng attack_rng = rng.split(0xa77ac);
        std::vector<Image> x_hat = pgd_metric_attack(bundle, clean_imgs, ctx, cfg.attack, attack_rng);

        Rng fnes_rng = rng.split(0xf7e5);
        for (size_t i = 0; i < batch.size(); ++i) {
            if (cfg.use_fnes()) {
                FNESResult fr = apply_fnes(batch[i].image, x_hat[i], class_of(batch[i].identity),
                                           class_of(ctx.farthest_ids[i]), k, cfg.fnes, fnes_rng);
                pb.adv_images.push_back(std::move(fr.x_adv));
                pb.adv_labels.push_back(std::move(fr.y_adv));
            } else {
                pb.adv_images.push_back(x_hat[i]);
                pb.adv_labels.push_back(pb.clean_labels[i]);
            }
        }

        if (cfg.use_advinv()) {
            FeatureBatch adv_feats = encode(bundle, pb.adv_images);
            detail::disc_training_step(state, ctx.clean_anchor, adv_feats, disc_lr,
                                       cfg.disc_weight_decay);
        }
    }

    detail::LossOptions opt{cfg.margin, cfg.le_scale, cfg.use_advinv() && pb.adv_images.size() > 0};

    StepLog log;
    std::vector<double> theta = detail::pack_theta_g(bundle);
    std::vector<double> grad;
    nn::EncoderPlan eplan = bundle.arch.encoder_plan();
    nn::DiscPlan dplan = bundle.arch.disc_plan();

    if (cfg.use_meta()) {
        Rng split_rng = rng.split(0x5b117);
        MetaSplit split = partition_batch(pb.ids, cfg.meta_train_ratio, cfg.meta_test_ratio,
                                          split_rng);
        SelfMetaResult meta = self_meta_loss(bundle, split, pb, cfg);
        grad = std::move(meta.grad);
        log.meta_train_loss = meta.loss_train;
        log.meta_test_loss = meta.loss_test;
        // report the meta-train side terms
        detail::LossBatchView tv = pb.view(&split.train_indices);
        detail::LossParts<double> parts;
        detail::batch_loss_grad<double>(bundle.arch, eplan, dplan, theta,
                                        bundle.discriminator_params, tv, opt, nullptr, &parts);
        log.report.cls = parts.cls;
        log.report.tri = parts.tri;
        log.report.enc_adv = parts.enc_adv;
        log.report.total = parts.total;
    } else {
        detail::LossBatchView view = pb.view();
        detail::LossParts<double> parts;
        detail::batch_loss_grad<double>(bundle.arch, eplan, dplan, theta,
                                        bundle.discriminator_params, view, opt, &grad, &parts);
        log.report.cls = parts.cls;
        log.report.tri = parts.tri;
        log.report.enc_adv = parts.enc_adv;
        log.report.total = parts.total;
    }
    log.report.le_scale = opt.le_scale;
    log.report.disc = -log.report.enc_adv;
    if (!std::isfinite(log.report.total)) throw NonFiniteLoss("train_step: non-finite loss");

    adam_step(theta, grad, state.adam_g, lr, cfg.weight_decay);
    detail::unpack_theta_g(theta, state.bundle);
    return log;
}

struct TrainLogRow {
    int epoch = 0;
    int step = 0;
    LossReport report;
};

struct FitResult {
    TrainState state;
    std::vector<TrainLogRow> log;
};

using CheckpointSink = std::function<void(const TrainState&, int epoch)>;

// Epoch loop over PK batches. Per-epoch randomness derives from (seed, epoch)
// alone, so resuming from a checkpoint reproduces the uninterrupted run.
inline FitResult fit(const ReIDDataset& train, const TrainConfig& cfg,
                     const CheckpointSink& sink = nullptr,
                     const TrainState* resume_from = nullptr) {
    cfg.validate();
    if (train.samples.empty()) throw EmptyDataset("fit: empty training dataset");

    FitResult result;
    if (resume_from) {
        result.state = *resume_from;
    } else {
        Rng init_rng(splitmix64(cfg.seed) ^ 0x1217);
        ArchSpec arch;  // desk defaults; callers may pre-build via fit_with_arch
        arch.height = train.samples.front().image.height;
        arch.width = train.samples.front().image.width;
        arch.num_classes = train.num_identities();
        result.state.bundle = init_models(arch, init_rng);
        result.state.init_optimizers();
        result.state.epoch = 0;
    }
    result.state.class_map = train.identities;

    int steps_per_epoch =
        std::max<int>(1, static_cast<int>(std::llround(static_cast<double>(train.samples.size()) /
                                                       (cfg.batch_p * cfg.batch_k))));
    for (int epoch = result.state.epoch; epoch < cfg.epochs; ++epoch) {
        double lr = scheduled_lr(cfg.lr, cfg.lr_decay, cfg.milestones, epoch);
        double disc_lr = scheduled_lr(cfg.disc_lr, cfg.disc_lr_decay, cfg.milestones, epoch);
        Rng epoch_rng(splitmix64(cfg.seed) ^ splitmix64(0xe90c + static_cast<uint64_t>(epoch)));
        for (int step = 0; step < steps_per_epoch; ++step) {
            std::vector<Sample> batch = sample_pk_batch(train, cfg.batch_p, cfg.batch_k, epoch_rng);
            StepLog sl = train_step(result.state, batch, cfg, lr, disc_lr, epoch_rng);
            result.log.push_back({epoch, step, sl.report});
        }
        result.state.epoch = epoch + 1;
        if (sink) sink(result.state, epoch + 1);
    }
    return result;
}

// fit with a caller-supplied architecture/state initializer.
inline FitResult fit_with_arch(const ReIDDataset& train, const TrainConfig& cfg, ArchSpec arch,
                               const CheckpointSink& sink = nullptr,
                               const TrainState* resume_from = nullptr) {
    if (resume_from) return fit(train, cfg, sink, resume_from);
    arch.height = train.samples.front().image.height;
    arch.width = train.samples.front().image.width;
    arch.num_classes = train.num_identities();
    TrainState st;
    Rng init_rng(splitmix64(cfg.seed) ^ 0x1217);
    st.bundle = init_models(arch, init_rng);
    st.init_optimizers();
    st.epoch = 0;
    st.class_map = train.identities;
    return fit(train, cfg, sink, &st);
}

}  // namespace robustreid
