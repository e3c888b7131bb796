#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "robustreid/dataset.hpp"
#include "robustreid/detail/nn.hpp"
#include "robustreid/errors.hpp"
#include "robustreid/image.hpp"
#include "robustreid/rng.hpp"

namespace robustreid {

// Desk-scale architecture. The conv encoder (default) is three conv-relu-pool
// blocks followed by a global average pool; an mlp encoder exists for small
// analytic test models. Larger backbones can plug in behind the same spec.
struct ArchSpec {
    std::string encoder = "conv3";          // "conv3" | "mlp"
    int height = 32;
    int width = 16;
    std::vector<int> conv_channels = {16, 32, 64};  // last entry must equal embed_dim
    std::vector<int> mlp_hidden = {};
    std::string activation = "relu";        // mlp only: "relu" | "tanh"
    int embed_dim = 64;
    int num_classes = 0;                    // k
    int disc_hidden = 64;

    void validate() const {
        if (height < 1 || width < 1) throw InvalidSpec("non-positive image size");
        if (embed_dim < 1) throw InvalidSpec("embed_dim must be >= 1");
        if (num_classes < 1) throw InvalidSpec("num_classes must be >= 1");
        if (disc_hidden < 1) throw InvalidSpec("disc_hidden must be >= 1");
        if (encoder == "conv3") {
            if (conv_channels.empty()) throw InvalidSpec("conv encoder needs channels");
            if (conv_channels.back() != embed_dim)
                throw InvalidSpec("conv encoder: last channel count must equal embed_dim");
        } else if (encoder == "mlp") {
            if (activation != "relu" && activation != "tanh")
                throw InvalidSpec("unknown activation: " + activation);
        } else {
            throw InvalidSpec("unknown encoder kind: " + encoder);
        }
    }

    nn::EncoderPlan encoder_plan() const {
        validate();
        if (encoder == "conv3") return nn::EncoderPlan::conv3(height, width, conv_channels);
        return nn::EncoderPlan::mlp(height, width, mlp_hidden, embed_dim, activation == "tanh");
    }

    nn::DiscPlan disc_plan() const { return nn::DiscPlan::make(embed_dim, disc_hidden); }

    size_t classifier_param_count() const {
        return static_cast<size_t>(num_classes) * embed_dim + num_classes;
    }

    nlohmann::json to_json() const {
        return {{"encoder", encoder},        {"height", height},
                {"width", width},            {"conv_channels", conv_channels},
                {"mlp_hidden", mlp_hidden},  {"activation", activation},
                {"embed_dim", embed_dim},    {"num_classes", num_classes},
                {"disc_hidden", disc_hidden}};
    }

    static ArchSpec from_json(const nlohmann::json& j) {
        ArchSpec a;
        a.encoder = j.value("encoder", a.encoder);
        a.height = j.value("height", a.height);
        a.width = j.value("width", a.width);
        a.conv_channels = j.value("conv_channels", a.conv_channels);
        a.mlp_hidden = j.value("mlp_hidden", a.mlp_hidden);
        a.activation = j.value("activation", a.activation);
        a.embed_dim = j.value("embed_dim", a.embed_dim);
        a.num_classes = j.value("num_classes", a.num_classes);
        a.disc_hidden = j.value("disc_hidden", a.disc_hidden);
        a.validate();
        return a;
    }
};

// theta_G = encoder_params ∪ classifier_params is what the meta step updates;
// discriminator_params move only in the discriminator step.
struct ModelBundle {
    ArchSpec arch;
    std::vector<double> encoder_params;
    std::vector<double> classifier_params;
    std::vector<double> discriminator_params;

    size_t theta_g_size() const { return encoder_params.size() + classifier_params.size(); }
};

struct FeatureBatch {
    int rows = 0;
    int dim = 0;
    std::vector<double> data;    // row-major rows x dim
    std::vector<int> identities;  // aligned raw labels (empty if unknown)
    std::vector<int> cameras;

    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * dim; }
    double* row(int r) { return data.data() + static_cast<size_t>(r) * dim; }
};

inline double euclidean(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
        double t = a[i] - b[i];
        s += t * t;
    }
    return std::sqrt(s);
}

namespace detail {

inline void he_uniform_fill(std::vector<double>& p, size_t w_off, size_t w_len, size_t fan_in,
                            Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (size_t i = 0; i < w_len; ++i) p[w_off + i] = rng.uniform(-limit, limit);
}

}  // namespace detail

// Deterministic under seed: layers are filled in declaration order, weights
// He-uniform, biases zero.
inline ModelBundle init_models(const ArchSpec& arch, Rng& rng) {
    arch.validate();
    ModelBundle b;
    b.arch = arch;

    nn::EncoderPlan ep = arch.encoder_plan();
    b.encoder_params.assign(ep.param_count, 0.0);
    if (ep.conv) {
        for (size_t i = 0; i < ep.stages.size(); ++i) {
            const auto& s = ep.stages[i];
            detail::he_uniform_fill(b.encoder_params, ep.w_off[i],
                                    static_cast<size_t>(s.cout) * s.cin * 9,
                                    static_cast<size_t>(s.cin) * 9, rng);
        }
    } else {
        for (size_t i = 0; i < ep.linears.size(); ++i) {
            auto [in, out] = ep.linears[i];
            detail::he_uniform_fill(b.encoder_params, ep.w_off[i],
                                    static_cast<size_t>(out) * in, in, rng);
        }
    }

    b.classifier_params.assign(arch.classifier_param_count(), 0.0);
    detail::he_uniform_fill(b.classifier_params, 0,
                            static_cast<size_t>(arch.num_classes) * arch.embed_dim,
                            arch.embed_dim, rng);

    nn::DiscPlan dp = arch.disc_plan();
    b.discriminator_params.assign(dp.param_count, 0.0);
    detail::he_uniform_fill(b.discriminator_params, dp.w1,
                            static_cast<size_t>(dp.hidden) * dp.d, dp.d, rng);
    detail::he_uniform_fill(b.discriminator_params, dp.w2, dp.hidden, dp.hidden, rng);
    return b;
}

inline void check_image_shape(const ArchSpec& arch, const Image& img) {
    if (img.height != arch.height || img.width != arch.width)
        throw ShapeMismatch("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                            " vs architecture " + std::to_string(arch.height) + "x" +
                            std::to_string(arch.width));
}

// Deterministic; differentiable w.r.t. both images and encoder parameters
// through the nn:: routines.
inline FeatureBatch encode(const ModelBundle& bundle, const std::vector<Image>& images) {
    nn::EncoderPlan plan = bundle.arch.encoder_plan();
    FeatureBatch fb;
    fb.rows = static_cast<int>(images.size());
    fb.dim = plan.embed_dim;
    fb.data.resize(static_cast<size_t>(fb.rows) * fb.dim);
    nn::EncoderState<double> st;
    for (int r = 0; r < fb.rows; ++r) {
        check_image_shape(bundle.arch, images[r]);
        nn::encoder_forward(plan, bundle.encoder_params.data(), images[r].data.data(), st);
        std::copy(st.feature.begin(), st.feature.end(), fb.row(r));
    }
    return fb;
}

// k logits per feature row.
inline std::vector<double> classify(const ModelBundle& bundle, const FeatureBatch& features) {
    const ArchSpec& a = bundle.arch;
    if (features.dim != a.embed_dim) throw ShapeMismatch("classify: feature dim != embed_dim");
    std::vector<double> logits(static_cast<size_t>(features.rows) * a.num_classes);
    const double* w = bundle.classifier_params.data();
    const double* bias = w + static_cast<size_t>(a.num_classes) * a.embed_dim;
    for (int r = 0; r < features.rows; ++r)
        nn::linear_forward(features.row(r), a.embed_dim, w, bias, a.num_classes,
                           logits.data() + static_cast<size_t>(r) * a.num_classes);
    return logits;
}

// Sigmoid probabilities clamped to (1e-7, 1-1e-7) so log terms stay finite.
inline std::vector<double> discriminate(const ModelBundle& bundle, const FeatureBatch& features) {
    if (features.dim != bundle.arch.embed_dim)
        throw ShapeMismatch("discriminate: feature dim != embed_dim");
    nn::DiscPlan plan = bundle.arch.disc_plan();
    std::vector<double> probs(features.rows);
    nn::DiscState<double> st;
    for (int r = 0; r < features.rows; ++r)
        probs[r] = nn::disc_forward(plan, bundle.discriminator_params.data(), features.row(r), st);
    return probs;
}

}  // namespace robustreid
