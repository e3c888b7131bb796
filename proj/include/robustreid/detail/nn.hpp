#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "robustreid/dual.hpp"

// Hand-written layer forward/backward passes, templated on the scalar type.
// Instantiated with double for plain gradients and with Dual for exact
// Hessian-vector products through the same code path. Input-gradient outputs
// are overwritten; parameter-gradient outputs accumulate.
namespace robustreid::nn {

using std::exp;
using std::log;
using std::sqrt;
using std::tanh;

// ---- primitive layers ------------------------------------------------------

// 3x3 convolution, stride 1, zero padding 1.
template <class T>
void conv3x3_forward(const T* in, int cin, int h, int w, const T* weight, const T* bias,
                     int cout, T* out) {
    const int hw = h * w;
    for (int co = 0; co < cout; ++co) {
        T* o = out + static_cast<size_t>(co) * hw;
        for (int i = 0; i < hw; ++i) o[i] = bias[co];
        for (int ci = 0; ci < cin; ++ci) {
            const T* x = in + static_cast<size_t>(ci) * hw;
            const T* wk = weight + (static_cast<size_t>(co) * cin + ci) * 9;
            for (int ky = -1; ky <= 1; ++ky) {
                int y0 = std::max(0, -ky), y1 = std::min(h, h - ky);
                for (int kx = -1; kx <= 1; ++kx) {
                    T wv = wk[(ky + 1) * 3 + (kx + 1)];
                    int x0 = std::max(0, -kx), x1 = std::min(w, w - kx);
                    for (int y = y0; y < y1; ++y) {
                        T* orow = o + y * w;
                        const T* xrow = x + (y + ky) * w + kx;
                        for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * xrow[xx];
                    }
                }
            }
        }
    }
}

template <class T>
void conv3x3_backward(const T* in, const T* weight, int cin, int h, int w, int cout,
                      const T* gout, T* gin, T* gweight, T* gbias) {
    const int hw = h * w;
    if (gin)
        for (int i = 0; i < cin * hw; ++i) gin[i] = T(0.0);
    for (int co = 0; co < cout; ++co) {
        const T* go = gout + static_cast<size_t>(co) * hw;
        if (gbias) {
            T acc(0.0);
            for (int i = 0; i < hw; ++i) acc += go[i];
            gbias[co] += acc;
        }
        for (int ci = 0; ci < cin; ++ci) {
            const T* x = in + static_cast<size_t>(ci) * hw;
            T* gx = gin ? gin + static_cast<size_t>(ci) * hw : nullptr;
            const T* wk = weight + (static_cast<size_t>(co) * cin + ci) * 9;
            T* gwk = gweight ? gweight + (static_cast<size_t>(co) * cin + ci) * 9 : nullptr;
            for (int ky = -1; ky <= 1; ++ky) {
                int y0 = std::max(0, -ky), y1 = std::min(h, h - ky);
                for (int kx = -1; kx <= 1; ++kx) {
                    int x0 = std::max(0, -kx), x1 = std::min(w, w - kx);
                    T wv = wk[(ky + 1) * 3 + (kx + 1)];
                    T wacc(0.0);
                    for (int y = y0; y < y1; ++y) {
                        const T* gorow = go + y * w;
                        const T* xrow = x + (y + ky) * w + kx;
                        T* gxrow = gx ? gx + (y + ky) * w + kx : nullptr;
                        for (int xx = x0; xx < x1; ++xx) {
                            wacc += gorow[xx] * xrow[xx];
                            if (gxrow) gxrow[xx] += wv * gorow[xx];
                        }
                    }
                    if (gwk) gwk[(ky + 1) * 3 + (kx + 1)] += wacc;
                }
            }
        }
    }
}

template <class T>
void relu_forward(const T* in, int n, T* out) {
    for (int i = 0; i < n; ++i) out[i] = value(in[i]) > 0.0 ? in[i] : T(0.0);
}

template <class T>
void relu_backward(const T* pre, int n, const T* gout, T* gin) {
    for (int i = 0; i < n; ++i) gin[i] = value(pre[i]) > 0.0 ? gout[i] : T(0.0);
}

// 2x2 average pooling, stride 2, ceil mode (border windows shrink).
inline int pooled_extent(int n) { return (n + 1) / 2; }

template <class T>
void avgpool2_forward(const T* in, int ch, int h, int w, T* out) {
    int oh = pooled_extent(h), ow = pooled_extent(w);
    for (int c = 0; c < ch; ++c) {
        const T* x = in + static_cast<size_t>(c) * h * w;
        T* o = out + static_cast<size_t>(c) * oh * ow;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                int y1 = std::min(2 * oy + 2, h), x1 = std::min(2 * ox + 2, w);
                T acc(0.0);
                int count = 0;
                for (int y = 2 * oy; y < y1; ++y)
                    for (int xx = 2 * ox; xx < x1; ++xx) {
                        acc += x[y * w + xx];
                        ++count;
                    }
                o[oy * ow + ox] = acc * T(1.0 / count);
            }
    }
}

template <class T>
void avgpool2_backward(int ch, int h, int w, const T* gout, T* gin) {
    int oh = pooled_extent(h), ow = pooled_extent(w);
    for (int i = 0; i < ch * h * w; ++i) gin[i] = T(0.0);
    for (int c = 0; c < ch; ++c) {
        const T* go = gout + static_cast<size_t>(c) * oh * ow;
        T* gx = gin + static_cast<size_t>(c) * h * w;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                int y1 = std::min(2 * oy + 2, h), x1 = std::min(2 * ox + 2, w);
                int count = (y1 - 2 * oy) * (x1 - 2 * ox);
                T g = go[oy * ow + ox] * T(1.0 / count);
                for (int y = 2 * oy; y < y1; ++y)
                    for (int xx = 2 * ox; xx < x1; ++xx) gx[y * w + xx] += g;
            }
    }
}

template <class T>
void linear_forward(const T* x, int in, const T* weight, const T* bias, int out_n, T* out) {
    for (int o = 0; o < out_n; ++o) {
        const T* wr = weight + static_cast<size_t>(o) * in;
        T acc = bias[o];
        for (int i = 0; i < in; ++i) acc += wr[i] * x[i];
        out[o] = acc;
    }
}

template <class T>
void linear_backward(const T* x, const T* weight, int in, int out_n, const T* gout, T* gx,
                     T* gweight, T* gbias) {
    if (gx)
        for (int i = 0; i < in; ++i) gx[i] = T(0.0);
    for (int o = 0; o < out_n; ++o) {
        T g = gout[o];
        const T* wr = weight + static_cast<size_t>(o) * in;
        T* gwr = gweight ? gweight + static_cast<size_t>(o) * in : nullptr;
        if (gbias) gbias[o] += g;
        for (int i = 0; i < in; ++i) {
            if (gwr) gwr[i] += g * x[i];
            if (gx) gx[i] += g * wr[i];
        }
    }
}

template <class T>
T sigmoid(const T& z) {
    return T(1.0) / (T(1.0) + exp(-z));
}

// ---- encoder ----------------------------------------------------------------

struct ConvStage {
    int cin = 0, cout = 0;
    int h = 0, w = 0;    // input spatial extent
    int oh = 0, ow = 0;  // after 2x2 pooling
};

struct EncoderPlan {
    bool conv = true;
    bool tanh_act = false;  // mlp activation: tanh instead of relu
    int in_h = 0, in_w = 0;
    int embed_dim = 0;
    std::vector<ConvStage> stages;             // conv path
    std::vector<std::pair<int, int>> linears;  // mlp path: (in, out) per layer
    std::vector<size_t> w_off, b_off;          // per-layer offsets into the parameter vector
    size_t param_count = 0;

    int input_size() const { return 3 * in_h * in_w; }

    static EncoderPlan conv3(int h, int w, const std::vector<int>& channels) {
        EncoderPlan p;
        p.conv = true;
        p.in_h = h;
        p.in_w = w;
        p.embed_dim = channels.back();
        int cin = 3;
        for (int cout : channels) {
            ConvStage s;
            s.cin = cin;
            s.cout = cout;
            s.h = h;
            s.w = w;
            s.oh = pooled_extent(h);
            s.ow = pooled_extent(w);
            p.w_off.push_back(p.param_count);
            p.param_count += static_cast<size_t>(cout) * cin * 9;
            p.b_off.push_back(p.param_count);
            p.param_count += cout;
            p.stages.push_back(s);
            cin = cout;
            h = s.oh;
            w = s.ow;
        }
        return p;
    }

    static EncoderPlan mlp(int h, int w, const std::vector<int>& hidden, int embed_dim,
                           bool tanh_act) {
        EncoderPlan p;
        p.conv = false;
        p.tanh_act = tanh_act;
        p.in_h = h;
        p.in_w = w;
        p.embed_dim = embed_dim;
        int in = 3 * h * w;
        std::vector<int> outs = hidden;
        outs.push_back(embed_dim);
        for (int out : outs) {
            p.linears.emplace_back(in, out);
            p.w_off.push_back(p.param_count);
            p.param_count += static_cast<size_t>(out) * in;
            p.b_off.push_back(p.param_count);
            p.param_count += out;
            in = out;
        }
        return p;
    }
};

template <class T>
struct EncoderState {
    std::vector<T> input;              // promoted image
    std::vector<std::vector<T>> pre;   // conv output (pre-relu) / linear pre-activation
    std::vector<std::vector<T>> post;  // after relu+pool / after activation
    std::vector<T> feature;            // embed_dim
};

template <class T>
void encoder_forward(const EncoderPlan& plan, const T* params, const double* image,
                     EncoderState<T>& st) {
    size_t n_layers = plan.conv ? plan.stages.size() : plan.linears.size();
    st.pre.resize(n_layers);
    st.post.resize(n_layers);
    st.input.assign(image, image + plan.input_size());
    st.feature.assign(plan.embed_dim, T(0.0));

    if (plan.conv) {
        std::vector<T> relu_out;
        const T* x = st.input.data();
        for (size_t i = 0; i < plan.stages.size(); ++i) {
            const ConvStage& s = plan.stages[i];
            st.pre[i].resize(static_cast<size_t>(s.cout) * s.h * s.w);
            st.post[i].resize(static_cast<size_t>(s.cout) * s.oh * s.ow);
            conv3x3_forward(x, s.cin, s.h, s.w, params + plan.w_off[i], params + plan.b_off[i],
                            s.cout, st.pre[i].data());
            relu_out.resize(st.pre[i].size());
            relu_forward(st.pre[i].data(), static_cast<int>(st.pre[i].size()), relu_out.data());
            avgpool2_forward(relu_out.data(), s.cout, s.h, s.w, st.post[i].data());
            x = st.post[i].data();
        }
        const ConvStage& last = plan.stages.back();
        int cells = last.oh * last.ow;
        for (int c = 0; c < last.cout; ++c) {
            T acc(0.0);
            for (int i = 0; i < cells; ++i)
                acc += st.post.back()[static_cast<size_t>(c) * cells + i];
            st.feature[c] = acc * T(1.0 / cells);
        }
    } else {
        const T* x = st.input.data();
        for (size_t i = 0; i < plan.linears.size(); ++i) {
            auto [in, out] = plan.linears[i];
            st.pre[i].resize(out);
            linear_forward(x, in, params + plan.w_off[i], params + plan.b_off[i], out,
                           st.pre[i].data());
            bool last = i + 1 == plan.linears.size();
            if (last) {
                st.post[i] = st.pre[i];  // embedding layer has no activation
            } else {
                st.post[i].resize(out);
                if (plan.tanh_act)
                    for (int j = 0; j < out; ++j) st.post[i][j] = tanh(st.pre[i][j]);
                else
                    relu_forward(st.pre[i].data(), out, st.post[i].data());
            }
            x = st.post[i].data();
        }
        st.feature = st.post.back();
    }
}

// gparams accumulates when non-null; gimage (3*h*w) is overwritten when non-null.
template <class T>
void encoder_backward(const EncoderPlan& plan, const T* params, const EncoderState<T>& st,
                      const T* gfeat, T* gparams, T* gimage) {
    if (plan.conv) {
        const ConvStage& last = plan.stages.back();
        int cells = last.oh * last.ow;
        std::vector<T> gpost(static_cast<size_t>(last.cout) * cells);
        for (int c = 0; c < last.cout; ++c) {
            T g = gfeat[c] * T(1.0 / cells);
            for (int i = 0; i < cells; ++i) gpost[static_cast<size_t>(c) * cells + i] = g;
        }
        for (int i = static_cast<int>(plan.stages.size()) - 1; i >= 0; --i) {
            const ConvStage& s = plan.stages[i];
            std::vector<T> grelu(static_cast<size_t>(s.cout) * s.h * s.w);
            avgpool2_backward(s.cout, s.h, s.w, gpost.data(), grelu.data());
            std::vector<T> gpre(grelu.size());
            relu_backward(st.pre[i].data(), static_cast<int>(gpre.size()), grelu.data(),
                          gpre.data());
            const T* layer_in = i == 0 ? st.input.data() : st.post[i - 1].data();
            std::vector<T> gin;
            T* gin_ptr = nullptr;
            if (i > 0) {
                gin.resize(static_cast<size_t>(s.cin) * s.h * s.w);
                gin_ptr = gin.data();
            } else if (gimage) {
                gin_ptr = gimage;
            }
            conv3x3_backward(layer_in, params + plan.w_off[i], s.cin, s.h, s.w, s.cout,
                             gpre.data(), gin_ptr,
                             gparams ? gparams + plan.w_off[i] : nullptr,
                             gparams ? gparams + plan.b_off[i] : nullptr);
            if (i > 0) gpost = std::move(gin);
        }
    } else {
        std::vector<T> gpost(gfeat, gfeat + plan.embed_dim);
        for (int i = static_cast<int>(plan.linears.size()) - 1; i >= 0; --i) {
            auto [in, out] = plan.linears[i];
            std::vector<T> gpre(out);
            bool last = i + 1 == static_cast<int>(plan.linears.size());
            if (last) {
                gpre.assign(gpost.begin(), gpost.end());
            } else if (plan.tanh_act) {
                for (int j = 0; j < out; ++j)
                    gpre[j] = gpost[j] * (T(1.0) - st.post[i][j] * st.post[i][j]);
            } else {
                relu_backward(st.pre[i].data(), out, gpost.data(), gpre.data());
            }
            const T* layer_in = i == 0 ? st.input.data() : st.post[i - 1].data();
            std::vector<T> gin;
            T* gin_ptr = nullptr;
            if (i > 0) {
                gin.resize(in);
                gin_ptr = gin.data();
            } else if (gimage) {
                gin_ptr = gimage;
            }
            linear_backward(layer_in, params + plan.w_off[i], in, out, gpre.data(), gin_ptr,
                            gparams ? gparams + plan.w_off[i] : nullptr,
                            gparams ? gparams + plan.b_off[i] : nullptr);
            if (i > 0) gpost = std::move(gin);
        }
    }
}

// ---- discriminator (linear -> relu -> linear -> clamped sigmoid) ------------

struct DiscPlan {
    int d = 0, hidden = 0;
    size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
    size_t param_count = 0;
    double clamp = 1e-7;  // keeps log terms finite

    static DiscPlan make(int d, int hidden) {
        DiscPlan p;
        p.d = d;
        p.hidden = hidden;
        p.w1 = 0;
        p.b1 = p.w1 + static_cast<size_t>(hidden) * d;
        p.w2 = p.b1 + hidden;
        p.b2 = p.w2 + hidden;
        p.param_count = p.b2 + 1;
        return p;
    }
};

template <class T>
struct DiscState {
    std::vector<T> pre1, post1;
    T z{0.0};
    T prob{0.0};
    bool clamped = false;
};

template <class T>
T disc_forward(const DiscPlan& plan, const T* params, const T* feat, DiscState<T>& st) {
    st.pre1.resize(plan.hidden);
    st.post1.resize(plan.hidden);
    linear_forward(feat, plan.d, params + plan.w1, params + plan.b1, plan.hidden, st.pre1.data());
    relu_forward(st.pre1.data(), plan.hidden, st.post1.data());
    linear_forward(st.post1.data(), plan.hidden, params + plan.w2, params + plan.b2, 1, &st.z);
    T p = sigmoid(st.z);
    st.clamped = false;
    if (value(p) < plan.clamp) {
        p = T(plan.clamp);
        st.clamped = true;
    } else if (value(p) > 1.0 - plan.clamp) {
        p = T(1.0 - plan.clamp);
        st.clamped = true;
    }
    st.prob = p;
    return p;
}

// gprob is dL/dprob. gfeat overwritten when non-null; gparams accumulates.
template <class T>
void disc_backward(const DiscPlan& plan, const T* params, const DiscState<T>& st, const T* feat,
                   const T& gprob, T* gfeat, T* gparams) {
    if (gfeat)
        for (int i = 0; i < plan.d; ++i) gfeat[i] = T(0.0);
    if (st.clamped) return;  // saturated output: zero gradient
    T gz = gprob * st.prob * (T(1.0) - st.prob);
    std::vector<T> gpost1(plan.hidden);
    linear_backward(st.post1.data(), params + plan.w2, plan.hidden, 1, &gz, gpost1.data(),
                    gparams ? gparams + plan.w2 : nullptr, gparams ? gparams + plan.b2 : nullptr);
    std::vector<T> gpre1(plan.hidden);
    relu_backward(st.pre1.data(), plan.hidden, gpost1.data(), gpre1.data());
    linear_backward(feat, params + plan.w1, plan.d, plan.hidden, gpre1.data(), gfeat,
                    gparams ? gparams + plan.w1 : nullptr, gparams ? gparams + plan.b1 : nullptr);
}

}  // namespace robustreid::nn
