#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "robustreid/errors.hpp"
#include "robustreid/fnes.hpp"
#include "robustreid/model.hpp"

namespace robustreid {

struct LossReport {
    double cls = 0.0;      // soft-label classification loss
    double tri = 0.0;      // batch-hard triplet loss
    double enc_adv = 0.0;  // encoder confusion loss L_E
    double disc = 0.0;     // discriminator loss L_D (reported, not in total)
    double le_scale = 0.0;
    double total = 0.0;    // cls + tri + le_scale * enc_adv
};

// Mean over rows of -sum_c target_c * log softmax(logits)_c.
inline double soft_cross_entropy(const std::vector<double>& logits, int k,
                                 const std::vector<SoftLabel>& targets) {
    if (k < 1 || targets.empty() || logits.size() != targets.size() * static_cast<size_t>(k))
        throw ShapeMismatch("soft_cross_entropy: logits/targets shape mismatch");
    double total = 0.0;
    for (size_t r = 0; r < targets.size(); ++r) {
        if (targets[r].k() != k) throw ShapeMismatch("soft_cross_entropy: target length != k");
        const double* z = logits.data() + r * k;
        double zmax = z[0];
        for (int c = 1; c < k; ++c) zmax = std::max(zmax, z[c]);
        double lse = 0.0;
        for (int c = 0; c < k; ++c) lse += std::exp(z[c] - zmax);
        lse = zmax + std::log(lse);
        double dot = 0.0;
        for (int c = 0; c < k; ++c) dot += targets[r].probs[c] * z[c];
        total += lse - dot;
    }
    return total / static_cast<double>(targets.size());
}

// Batch-hard mining: per anchor the same-ID sample at maximum distance and the
// different-ID sample at minimum distance; hinge at 0; mean over anchors that
// have at least one positive. Mining uses identity labels, ties keep the
// smallest index.
inline double triplet_hard(const FeatureBatch& features, const std::vector<int>& labels,
                           double margin) {
    int n = features.rows;
    if (static_cast<int>(labels.size()) != n)
        throw ShapeMismatch("triplet_hard: labels length != feature rows");
    bool multi_id = false, has_pair = false;
    for (int i = 0; i < n && !(multi_id && has_pair); ++i)
        for (int j = i + 1; j < n; ++j) {
            if (labels[i] != labels[j]) multi_id = true;
            if (labels[i] == labels[j]) has_pair = true;
        }
    if (!multi_id || !has_pair)
        throw DegenerateBatch("triplet_hard needs >= 2 identities and a same-ID pair");

    double total = 0.0;
    int anchors = 0;
    for (int a = 0; a < n; ++a) {
        double d_pos = -1.0, d_neg = std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            if (j == a) continue;
            double d = euclidean(features.row(a), features.row(j), features.dim);
            if (labels[j] == labels[a]) {
                if (d > d_pos) d_pos = d;
            } else {
                if (d < d_neg) d_neg = d;
            }
        }
        if (d_pos < 0.0) continue;  // anchor without positives
        total += std::max(0.0, d_pos - d_neg + margin);
        ++anchors;
    }
    return total / anchors;
}

// L_D = -E[log D(E(x))] - E[log(1 - D(E(x_adv)))]; clean labeled 1,
// adversarial labeled 0. Inputs are probabilities in (0,1); gradients of this
// loss are routed to the discriminator parameters only.
inline double discriminator_loss(const std::vector<double>& disc_clean,
                                 const std::vector<double>& disc_adv) {
    double a = 0.0, b = 0.0;
    for (double p : disc_clean) a += std::log(p);
    for (double p : disc_adv) b += std::log(1.0 - p);
    double ea = disc_clean.empty() ? 0.0 : a / disc_clean.size();
    double eb = disc_adv.empty() ? 0.0 : b / disc_adv.size();
    return -ea - eb;
}

// L_E = E[log D(E(x))] + E[log(1 - D(E(x_adv)))] = -L_D pointwise; gradients
// flow to the encoder through the features with the discriminator frozen.
inline double encoder_confusion_loss(const std::vector<double>& disc_clean,
                                     const std::vector<double>& disc_adv) {
    return -discriminator_loss(disc_clean, disc_adv);
}

}  // namespace robustreid
