#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "robustreid/checkpoint.hpp"
#include "robustreid/meta_trainer.hpp"
#include "test_util.hpp"

using namespace robustreid;

namespace {

ArchSpec desk_arch_small() {
    ArchSpec a;
    a.height = 8;
    a.width = 4;
    a.conv_channels = {4, 8};
    a.embed_dim = 8;
    a.num_classes = 0;  // filled by fit_with_arch
    a.disc_hidden = 8;
    return a;
}

ReIDDataset small_train_set(uint64_t seed = 3) {
    SynthSpec spec;
    spec.num_ids = 6;
    spec.cameras = 3;
    spec.height = 8;
    spec.width = 4;
    spec.per_id_counts.assign(6, 6);
    Rng rng(seed);
    return make_synthetic(spec, rng);
}

TrainConfig fast_config(const std::string& mode) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.seed = 5;
    cfg.epochs = 2;
    cfg.batch_p = 4;
    cfg.batch_k = 3;
    cfg.lr = 0.003;
    cfg.milestones = {};
    cfg.attack.epsilon = 5.0 / 255.0;
    cfg.attack.steps = 2;
    return cfg;
}

TrainState fresh_state(const ReIDDataset& train, const TrainConfig& cfg) {
    ArchSpec arch = desk_arch_small();
    arch.num_classes = train.num_identities();
    TrainState st;
    Rng rng(cfg.seed);
    st.bundle = init_models(arch, rng);
    st.init_optimizers();
    st.class_map = train.identities;
    return st;
}

}  // namespace

TEST_CASE("train_step is deterministic under a fixed seed") {
    ReIDDataset train = small_train_set();
    TrainConfig cfg = fast_config("full");
    TrainState s1 = fresh_state(train, cfg);
    TrainState s2 = fresh_state(train, cfg);

    Rng b1(7), b2(7);
    auto batch1 = sample_pk_batch(train, 4, 3, b1);
    auto batch2 = sample_pk_batch(train, 4, 3, b2);
    Rng r1(9), r2(9);
    train_step(s1, batch1, cfg, cfg.lr, cfg.disc_lr, r1);
    train_step(s2, batch2, cfg, cfg.lr, cfg.disc_lr, r2);

    CHECK(s1.bundle.encoder_params == s2.bundle.encoder_params);
    CHECK(s1.bundle.classifier_params == s2.bundle.classifier_params);
    CHECK(s1.bundle.discriminator_params == s2.bundle.discriminator_params);
}

TEST_CASE("parameter routing: discriminator vs meta step") {
    ReIDDataset train = small_train_set();
    TrainConfig cfg = fast_config("full");

    // the discriminator step alone never touches theta_G
    TrainState st = fresh_state(train, cfg);
    auto enc_before = st.bundle.encoder_params;
    auto clf_before = st.bundle.classifier_params;
    auto disc_before = st.bundle.discriminator_params;
    FeatureBatch clean = testutil::feature_batch({{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8},
                                                  {0.4, 0.1, 0.0, 0.2, 0.9, 0.3, 0.2, 0.1}},
                                                 {1, 2});
    FeatureBatch adv = clean;
    detail::disc_training_step(st, clean, adv, 0.01, 0.0);
    CHECK(st.bundle.encoder_params == enc_before);
    CHECK(st.bundle.classifier_params == clf_before);
    CHECK(st.bundle.discriminator_params != disc_before);

    // a full step with the adversarial-invariant branch disabled leaves theta_D alone
    TrainState st2 = fresh_state(train, cfg);
    TrainConfig no_adv = cfg;
    no_adv.no_advinv = true;
    auto disc2 = st2.bundle.discriminator_params;
    Rng brng(3);
    auto batch = sample_pk_batch(train, 4, 3, brng);
    Rng rng(4);
    train_step(st2, batch, no_adv, cfg.lr, cfg.disc_lr, rng);
    CHECK(st2.bundle.discriminator_params == disc2);
    CHECK(st2.bundle.encoder_params != enc_before);
}

TEST_CASE("the true second-order step differs from the first-order one") {
    ReIDDataset train = small_train_set();
    TrainConfig cfg = fast_config("full");
    TrainConfig fo = cfg;
    fo.first_order = true;

    TrainState a = fresh_state(train, cfg);
    TrainState b = fresh_state(train, fo);
    Rng b1(7), b2(7);
    auto batch1 = sample_pk_batch(train, 4, 3, b1);
    auto batch2 = sample_pk_batch(train, 4, 3, b2);
    Rng r1(9), r2(9);
    train_step(a, batch1, cfg, cfg.lr, cfg.disc_lr, r1);
    train_step(b, batch2, fo, cfg.lr, cfg.disc_lr, r2);
    CHECK(a.bundle.encoder_params != b.bundle.encoder_params);
}

TEST_CASE("fit: zero epochs returns the initial bundle unchanged") {
    ReIDDataset train = small_train_set();
    TrainConfig cfg = fast_config("vanilla");
    cfg.epochs = 0;
    FitResult r = fit_with_arch(train, cfg, desk_arch_small());
    ArchSpec arch = desk_arch_small();
    arch.num_classes = train.num_identities();
    arch.height = 8;
    arch.width = 4;
    Rng init_rng(splitmix64(cfg.seed) ^ 0x1217);
    ModelBundle fresh = init_models(arch, init_rng);
    CHECK(r.state.bundle.encoder_params == fresh.encoder_params);
    CHECK(r.log.empty());
}

TEST_CASE("fit twice with the same seed is bit-identical; resume matches") {
    ReIDDataset train = small_train_set();
    TrainConfig cfg = fast_config("full");
    cfg.epochs = 3;

    FitResult full1 = fit_with_arch(train, cfg, desk_arch_small());
    FitResult full2 = fit_with_arch(train, cfg, desk_arch_small());
    CHECK(full1.state.bundle.encoder_params == full2.state.bundle.encoder_params);
    CHECK(full1.state.bundle.discriminator_params == full2.state.bundle.discriminator_params);

    // interrupted at epoch 2, then resumed
    TrainConfig two = cfg;
    two.epochs = 2;
    FitResult part = fit_with_arch(train, two, desk_arch_small());
    FitResult resumed = fit(train, cfg, nullptr, &part.state);
    CHECK(resumed.state.bundle.encoder_params == full1.state.bundle.encoder_params);
    CHECK(resumed.state.bundle.classifier_params == full1.state.bundle.classifier_params);
    CHECK(resumed.state.bundle.discriminator_params == full1.state.bundle.discriminator_params);
    CHECK(resumed.state.adam_g.m == full1.state.adam_g.m);
}

TEST_CASE("checkpoint round-trip preserves the full training state") {
    ReIDDataset train = small_train_set();
    TrainConfig cfg = fast_config("full");
    FitResult r = fit_with_arch(train, cfg, desk_arch_small());

    testutil::TempDir dir("ckpt");
    std::string path = (dir.path / "state.ckpt").string();
    save_checkpoint(path, r.state);
    TrainState back = load_checkpoint(path);

    CHECK(back.epoch == r.state.epoch);
    CHECK(back.bundle.encoder_params == r.state.bundle.encoder_params);
    CHECK(back.bundle.classifier_params == r.state.bundle.classifier_params);
    CHECK(back.bundle.discriminator_params == r.state.bundle.discriminator_params);
    CHECK(back.adam_g.m == r.state.adam_g.m);
    CHECK(back.adam_g.v == r.state.adam_g.v);
    CHECK(back.adam_g.t == r.state.adam_g.t);
    CHECK(back.adam_d.m == r.state.adam_d.m);
    CHECK(back.class_map == r.state.class_map);
    CHECK(back.bundle.arch.num_classes == r.state.bundle.arch.num_classes);

    // resume from the loaded state matches resume from the in-memory state
    TrainConfig longer = cfg;
    longer.epochs = cfg.epochs + 1;
    FitResult mem = fit(train, longer, nullptr, &r.state);
    FitResult disk = fit(train, longer, nullptr, &back);
    CHECK(mem.state.bundle.encoder_params == disk.state.bundle.encoder_params);
}

TEST_CASE("vanilla and metric-at modes run their reduced paths") {
    ReIDDataset train = small_train_set();

    TrainConfig vanilla = fast_config("vanilla");
    FitResult v = fit_with_arch(train, vanilla, desk_arch_small());
    for (const auto& row : v.log) CHECK(row.report.enc_adv == 0.0);  // no L_E path

    TrainConfig at = fast_config("metric-at");
    FitResult m = fit_with_arch(train, at, desk_arch_small());
    CHECK(m.state.epoch == at.epochs);
    // discriminator untouched in metric-at mode
    Rng init_rng(splitmix64(at.seed) ^ 0x1217);
    ModelBundle fresh = init_models(m.state.bundle.arch, init_rng);
    CHECK(m.state.bundle.discriminator_params == fresh.discriminator_params);
}

TEST_CASE("adam rejects non-finite gradients") {
    std::vector<double> params = {1.0, 2.0};
    std::vector<double> grad = {0.1, std::nan("")};
    AdamState st;
    st.init(2);
    CHECK_THROWS_AS(adam_step(params, grad, st, 0.01, 0.0), NonFiniteGradient);
}

TEST_CASE("scheduled_lr applies milestone decay") {
    CHECK(scheduled_lr(0.1, 0.1, {2, 4}, 0) == Catch::Approx(0.1));
    CHECK(scheduled_lr(0.1, 0.1, {2, 4}, 2) == Catch::Approx(0.01));
    CHECK(scheduled_lr(0.1, 0.1, {2, 4}, 5) == Catch::Approx(0.001));
    CHECK(scheduled_lr(0.1, 0.5, {2, 4}, 3) == Catch::Approx(0.05));
}
