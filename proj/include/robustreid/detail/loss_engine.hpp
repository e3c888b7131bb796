#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "robustreid/detail/nn.hpp"
#include "robustreid/errors.hpp"
#include "robustreid/fnes.hpp"
#include "robustreid/image.hpp"
#include "robustreid/losses.hpp"
#include "robustreid/model.hpp"

namespace robustreid::detail {

using std::exp;
using std::log;
using std::sqrt;

// A batch side for the total loss: paired clean/adversarial rows. adv may be
// empty only on internal clean-only paths (vanilla training).
struct LossBatchView {
    std::vector<const Image*> clean_images;
    std::vector<const SoftLabel*> clean_labels;
    std::vector<const Image*> adv_images;
    std::vector<const SoftLabel*> adv_labels;
    std::vector<int> ids;  // raw identity per pair, used for triplet mining

    size_t pairs() const { return clean_images.size(); }
    bool has_adv() const { return !adv_images.empty(); }
};

struct LossOptions {
    double margin = 0.3;
    double le_scale = 0.001;
    bool include_confusion = true;  // the L_E term
};

// theta_g layout: [encoder params | classifier params].
inline std::vector<double> pack_theta_g(const ModelBundle& b) {
    std::vector<double> t;
    t.reserve(b.theta_g_size());
    t.insert(t.end(), b.encoder_params.begin(), b.encoder_params.end());
    t.insert(t.end(), b.classifier_params.begin(), b.classifier_params.end());
    return t;
}

inline void unpack_theta_g(const std::vector<double>& t, ModelBundle& b) {
    if (t.size() != b.theta_g_size()) throw ShapeMismatch("unpack_theta_g: size mismatch");
    std::copy(t.begin(), t.begin() + b.encoder_params.size(), b.encoder_params.begin());
    std::copy(t.begin() + b.encoder_params.size(), t.end(), b.classifier_params.begin());
}

// Total loss l = L_cls + L_tri + le_scale * L_E over one batch side evaluated
// at theta_g, with the discriminator frozen. Classification is the mean
// soft cross-entropy per half, summed over halves; the triplet term is
// batch-hard over the union of clean and adversarial features (identity
// labels); L_E uses the sign convention of the encoder confusion loss.
// grad_g accumulates is overwritten when non-null.
template <class T>
struct LossParts {
    T cls{0.0}, tri{0.0}, enc_adv{0.0}, total{0.0};
};

template <class T>
T batch_loss_grad(const ArchSpec& arch, const nn::EncoderPlan& eplan, const nn::DiscPlan& dplan,
                  const std::vector<T>& theta_g, const std::vector<double>& theta_d,
                  const LossBatchView& view, const LossOptions& opt, std::vector<T>* grad_g,
                  LossParts<T>* parts_out) {
    const int d = arch.embed_dim;
    const int k = arch.num_classes;
    const size_t n_clean = view.clean_images.size();
    const size_t n_adv = view.adv_images.size();
    const size_t n = n_clean + n_adv;
    if (n == 0) throw DegenerateBatch("batch_loss_grad: empty batch");
    if (view.ids.size() != n_clean || view.clean_labels.size() != n_clean ||
        view.adv_labels.size() != n_adv || (n_adv != 0 && n_adv != n_clean))
        throw ShapeMismatch("batch_loss_grad: misaligned batch view");

    const T* enc_p = theta_g.data();
    const T* clf_w = theta_g.data() + eplan.param_count;
    const T* clf_b = clf_w + static_cast<size_t>(k) * d;
    std::vector<T> disc_p(theta_d.begin(), theta_d.end());

    // forward: encoder states and features for every row (clean then adv)
    std::vector<nn::EncoderState<T>> states(n);
    std::vector<T> feats(n * static_cast<size_t>(d));
    auto image_of = [&](size_t row) -> const Image& {
        return row < n_clean ? *view.clean_images[row] : *view.adv_images[row - n_clean];
    };
    for (size_t r = 0; r < n; ++r) {
        const Image& img = image_of(r);
        if (img.height != arch.height || img.width != arch.width)
            throw ShapeMismatch("batch_loss_grad: image shape vs architecture");
        nn::encoder_forward(eplan, enc_p, img.data.data(), states[r]);
        std::copy(states[r].feature.begin(), states[r].feature.end(), feats.data() + r * d);
    }
    std::vector<int> row_ids(n);
    for (size_t r = 0; r < n; ++r) row_ids[r] = view.ids[r < n_clean ? r : r - n_clean];

    std::vector<T> gfeat(n * static_cast<size_t>(d), T(0.0));
    std::vector<T> gclf;
    if (grad_g) gclf.assign(static_cast<size_t>(k) * d + k, T(0.0));

    // ---- classification: mean soft CE per half, halves summed -------------
    T cls_loss(0.0);
    {
        std::vector<T> logits(k), probs(k);
        for (size_t r = 0; r < n; ++r) {
            const SoftLabel& target =
                r < n_clean ? *view.clean_labels[r] : *view.adv_labels[r - n_clean];
            if (target.k() != k) throw ShapeMismatch("batch_loss_grad: label length != k");
            nn::linear_forward(feats.data() + r * d, d, clf_w, clf_b, k, logits.data());
            double zmax = value(logits[0]);
            for (int c = 1; c < k; ++c) zmax = std::max(zmax, value(logits[c]));
            T sum(0.0);
            for (int c = 0; c < k; ++c) {
                probs[c] = exp(logits[c] - T(zmax));
                sum += probs[c];
            }
            T lse = T(zmax) + log(sum);
            T dot(0.0);
            for (int c = 0; c < k; ++c) dot += T(target.probs[c]) * logits[c];
            double inv_half = 1.0 / static_cast<double>(r < n_clean ? n_clean : n_adv);
            cls_loss += (lse - dot) * T(inv_half);
            if (grad_g) {
                std::vector<T> dlogits(k);
                for (int c = 0; c < k; ++c)
                    dlogits[c] = (probs[c] / sum - T(target.probs[c])) * T(inv_half);
                std::vector<T> gf(d);
                nn::linear_backward(feats.data() + r * d, clf_w, d, k, dlogits.data(), gf.data(),
                                    gclf.data(), gclf.data() + static_cast<size_t>(k) * d);
                for (int i = 0; i < d; ++i) gfeat[r * d + i] += gf[i];
            }
        }
    }

    // ---- batch-hard triplet over the union ---------------------------------
    T tri_loss(0.0);
    {
        bool multi_id = false;
        for (size_t i = 1; i < n && !multi_id; ++i)
            if (row_ids[i] != row_ids[0]) multi_id = true;
        if (!multi_id) throw DegenerateBatch("batch_loss_grad: triplet needs >= 2 identities");
        // anchors without a positive are skipped; a side may end up with none

        // mining on plain values
        std::vector<double> dist(n * n, 0.0);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) {
                double s = 0.0;
                for (int c = 0; c < d; ++c) {
                    double t = value(feats[i * d + c]) - value(feats[j * d + c]);
                    s += t * t;
                }
                dist[i * n + j] = dist[j * n + i] = std::sqrt(s);
            }
        struct Mined {
            size_t pos, neg;
        };
        std::vector<Mined> mined;
        std::vector<size_t> anchors;
        for (size_t a = 0; a < n; ++a) {
            double best_pos = -1.0, best_neg = std::numeric_limits<double>::infinity();
            size_t pos_idx = n, neg_idx = n;
            for (size_t j = 0; j < n; ++j) {
                if (j == a) continue;
                if (row_ids[j] == row_ids[a]) {
                    if (dist[a * n + j] > best_pos) {
                        best_pos = dist[a * n + j];
                        pos_idx = j;
                    }
                } else if (dist[a * n + j] < best_neg) {
                    best_neg = dist[a * n + j];
                    neg_idx = j;
                }
            }
            if (pos_idx == n || neg_idx == n) continue;
            anchors.push_back(a);
            mined.push_back({pos_idx, neg_idx});
        }
        if (!anchors.empty()) {
            T inv_a(1.0 / static_cast<double>(anchors.size()));
            auto t_distance = [&](size_t i, size_t j) {
                T s(0.0);
                for (int c = 0; c < d; ++c) {
                    T t = feats[i * d + c] - feats[j * d + c];
                    s += t * t;
                }
                return sqrt(s);
            };
            for (size_t m = 0; m < anchors.size(); ++m) {
                size_t a = anchors[m], p = mined[m].pos, q = mined[m].neg;
                T dp = t_distance(a, p), dq = t_distance(a, q);
                T h = dp - dq + T(opt.margin);
                if (value(h) <= 0.0) continue;
                tri_loss += h * inv_a;
                if (grad_g) {
                    if (value(dp) > 0.0) {
                        T s = inv_a / dp;
                        for (int c = 0; c < d; ++c) {
                            T g = (feats[a * d + c] - feats[p * d + c]) * s;
                            gfeat[a * d + c] += g;
                            gfeat[p * d + c] -= g;
                        }
                    }
                    if (value(dq) > 0.0) {
                        T s = inv_a / dq;
                        for (int c = 0; c < d; ++c) {
                            T g = (feats[a * d + c] - feats[q * d + c]) * s;
                            gfeat[a * d + c] -= g;
                            gfeat[q * d + c] += g;
                        }
                    }
                }
            }
        }
    }

    // ---- encoder confusion (discriminator frozen) ---------------------------
    T le_loss(0.0);
    if (opt.include_confusion && n_adv > 0) {
        std::vector<nn::DiscState<T>> dst(n);
        for (size_t r = 0; r < n; ++r) {
            T p = nn::disc_forward(dplan, disc_p.data(), feats.data() + r * d, dst[r]);
            bool clean = r < n_clean;
            double inv_half = 1.0 / static_cast<double>(clean ? n_clean : n_adv);
            le_loss += (clean ? log(p) : log(T(1.0) - p)) * T(inv_half);
            if (grad_g) {
                T gp = (clean ? T(1.0) / p : T(-1.0) / (T(1.0) - p)) * T(inv_half * opt.le_scale);
                std::vector<T> gf(d);
                nn::disc_backward<T>(dplan, disc_p.data(), dst[r], feats.data() + r * d, gp,
                                     gf.data(), nullptr);
                for (int i = 0; i < d; ++i) gfeat[r * d + i] += gf[i];
            }
        }
    }

    T total = cls_loss + tri_loss + T(opt.le_scale) * le_loss;
    if (!std::isfinite(value(total))) throw NonFiniteLoss("batch loss is not finite");

    if (grad_g) {
        grad_g->assign(theta_g.size(), T(0.0));
        T* genc = grad_g->data();
        for (size_t r = 0; r < n; ++r)
            nn::encoder_backward<T>(eplan, enc_p, states[r], gfeat.data() + r * d, genc, nullptr);
        std::copy(gclf.begin(), gclf.end(), grad_g->begin() + eplan.param_count);
    }
    if (parts_out) {
        parts_out->cls = cls_loss;
        parts_out->tri = tri_loss;
        parts_out->enc_adv = le_loss;
        parts_out->total = total;
    }
    return total;
}

// Loss functor over theta_g for the self-meta machinery.
struct BatchLossFn {
    const ArchSpec* arch;
    const nn::EncoderPlan* eplan;
    const nn::DiscPlan* dplan;
    const std::vector<double>* theta_d;
    const LossBatchView* view;
    LossOptions opt;

    template <class T>
    T eval(const std::vector<T>& theta, std::vector<T>& grad) const {
        return batch_loss_grad<T>(*arch, *eplan, *dplan, theta, *theta_d, *view, opt, &grad,
                                  nullptr);
    }
};

}  // namespace robustreid::detail
