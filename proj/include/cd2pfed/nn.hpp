#pragma once

// Minimal deterministic feed-forward engine: strict sequential chains of
// dense / conv2d / maxpool2d / relu / flatten layers, analytical backward,
// SGD with Nesterov momentum and weight decay. Pure value semantics; no
// hidden state, so repeated forwards are bit-identical.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>

#include "cd2pfed/tensor.hpp"

namespace cd2pfed::nn {

enum class LayerKind { dense, conv2d, maxpool2d, relu, flatten };

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    // dense
    int in_units = 0, out_units = 0;
    // conv2d
    int in_channels = 0, out_channels = 0, kernel_size = 0, stride = 1;
    // maxpool2d
    int window = 0, pool_stride = 0;

    static LayerSpec make_dense(int in, int out) {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.in_units = in;
        s.out_units = out;
        return s;
    }
    static LayerSpec make_conv2d(int in_c, int out_c, int k, int stride = 1) {
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.in_channels = in_c;
        s.out_channels = out_c;
        s.kernel_size = k;
        s.stride = stride;
        return s;
    }
    static LayerSpec make_maxpool2d(int window, int stride) {
        LayerSpec s;
        s.kind = LayerKind::maxpool2d;
        s.window = window;
        s.pool_stride = stride;
        return s;
    }
    static LayerSpec make_relu() {
        LayerSpec s;
        s.kind = LayerKind::relu;
        return s;
    }
    static LayerSpec make_flatten() {
        LayerSpec s;
        s.kind = LayerKind::flatten;
        return s;
    }
};

/// Activation shape between layers. height == 0 means a flat feature vector
/// of `channels` entries.
struct ActShape {
    int channels = 0;
    int height = 0;
    int width = 0;

    bool flat() const { return height == 0; }
    int size() const { return flat() ? channels : channels * height * width; }
};

inline std::vector<ActShape> infer_shapes(const std::vector<LayerSpec>& spec, ActShape input) {
    std::vector<ActShape> shapes;
    shapes.push_back(input);
    ActShape cur = input;
    for (std::size_t i = 0; i < spec.size(); ++i) {
        const LayerSpec& l = spec[i];
        switch (l.kind) {
            case LayerKind::dense:
                if (!cur.flat() || cur.channels != l.in_units) {
                    std::ostringstream os;
                    os << "layer " << i << ": dense expects flat input of " << l.in_units
                       << " units, got " << cur.size();
                    throw ConfigError(os.str());
                }
                cur = {l.out_units, 0, 0};
                break;
            case LayerKind::conv2d: {
                if (cur.flat() || cur.channels != l.in_channels)
                    throw ConfigError("layer " + std::to_string(i) + ": conv2d input channel mismatch");
                int oh = (cur.height - l.kernel_size) / l.stride + 1;
                int ow = (cur.width - l.kernel_size) / l.stride + 1;
                if (oh < 1 || ow < 1)
                    throw ConfigError("layer " + std::to_string(i) + ": conv2d kernel larger than input");
                cur = {l.out_channels, oh, ow};
                break;
            }
            case LayerKind::maxpool2d: {
                if (cur.flat())
                    throw ConfigError("layer " + std::to_string(i) + ": maxpool2d on flat input");
                int oh = (cur.height - l.window) / l.pool_stride + 1;
                int ow = (cur.width - l.window) / l.pool_stride + 1;
                if (oh < 1 || ow < 1)
                    throw ConfigError("layer " + std::to_string(i) + ": pool window larger than input");
                cur = {cur.channels, oh, ow};
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::flatten:
                cur = {cur.size(), 0, 0};
                break;
        }
        shapes.push_back(cur);
    }
    return shapes;
}

inline bool is_parametric(const LayerSpec& l) {
    return l.kind == LayerKind::dense || l.kind == LayerKind::conv2d;
}

/// Indices of parametric layers in spec order. The last one is the
/// classifier head; all preceding ones are channel-partitionable.
inline std::vector<std::size_t> parametric_layers(const std::vector<LayerSpec>& spec) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < spec.size(); ++i)
        if (is_parametric(spec[i])) idx.push_back(i);
    if (idx.empty()) throw ConfigError("network has no parametric layer");
    if (spec[idx.back()].kind != LayerKind::dense)
        throw ConfigError("classifier head must be a dense layer");
    return idx;
}

struct ParamTensor {
    std::vector<Scalar> w;  // row-major: out_ch x in_per_out
    std::vector<Scalar> b;  // out_ch
    int out_ch = 0;
    int in_per_out = 0;
};

/// One tensor pair (weight, bias) per parametric layer in canonical order.
struct ModelParams {
    std::vector<ParamTensor> tensors;

    std::size_t entry_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.w.size() + t.b.size();
        return n;
    }
    bool finite() const {
        for (const auto& t : tensors)
            if (!all_finite(t.w) || !all_finite(t.b)) return false;
        return true;
    }
};

using ParamGrads = ModelParams;  // same shapes, gradient values

inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    for (auto& t : z.tensors) {
        std::fill(t.w.begin(), t.w.end(), 0.0);
        std::fill(t.b.begin(), t.b.end(), 0.0);
    }
    return z;
}

/// Kaiming-uniform fan-in init for weights, zero biases.
inline ModelParams init_params(const std::vector<LayerSpec>& spec, std::mt19937_64& rng) {
    ModelParams p;
    for (std::size_t i : parametric_layers(spec)) {
        const LayerSpec& l = spec[i];
        ParamTensor t;
        if (l.kind == LayerKind::dense) {
            t.out_ch = l.out_units;
            t.in_per_out = l.in_units;
        } else {
            t.out_ch = l.out_channels;
            t.in_per_out = l.in_channels * l.kernel_size * l.kernel_size;
        }
        Scalar bound = std::sqrt(6.0 / static_cast<Scalar>(t.in_per_out));
        std::uniform_real_distribution<Scalar> dist(-bound, bound);
        t.w.resize(static_cast<std::size_t>(t.out_ch) * t.in_per_out);
        for (auto& x : t.w) x = dist(rng);
        t.b.assign(t.out_ch, 0.0);
        p.tensors.push_back(std::move(t));
    }
    return p;
}

/// Per-parametric-layer channel keep flags. The head entry is always
/// all-ones (the classifier output dimension is never partitioned);
/// masking the head's input happens implicitly by zeroing the previous
/// layer's masked activations.
struct ForwardMask {
    std::vector<std::vector<std::uint8_t>> keep;

    static ForwardMask full_for(const ModelParams& p) {
        ForwardMask m;
        for (const auto& t : p.tensors) m.keep.emplace_back(t.out_ch, 1);
        return m;
    }
};

struct ForwardCache {
    std::vector<Matrix> acts;  // acts[i] = input to layer i; acts.back() = logits
    std::vector<std::vector<std::size_t>> pool_argmax;  // per layer, flat per sample/output
    std::size_t batch = 0;
};

namespace detail {

inline void dense_forward(const LayerSpec& l, const ParamTensor& t, const Matrix& x, Matrix& y) {
    for (std::size_t s = 0; s < x.rows; ++s) {
        const Scalar* xi = x.row(s);
        Scalar* yi = y.row(s);
        for (int o = 0; o < l.out_units; ++o) {
            Scalar acc = t.b[o];
            const Scalar* wr = t.w.data() + static_cast<std::size_t>(o) * l.in_units;
            for (int j = 0; j < l.in_units; ++j) acc += wr[j] * xi[j];
            yi[o] = acc;
        }
    }
}

inline void conv_forward(const LayerSpec& l, const ParamTensor& t, ActShape in, ActShape out,
                         const Matrix& x, Matrix& y) {
    const int k = l.kernel_size;
    for (std::size_t s = 0; s < x.rows; ++s) {
        const Scalar* xi = x.row(s);
        Scalar* yi = y.row(s);
        for (int oc = 0; oc < out.channels; ++oc) {
            const Scalar* wc = t.w.data() + static_cast<std::size_t>(oc) * t.in_per_out;
            for (int oy = 0; oy < out.height; ++oy)
                for (int ox = 0; ox < out.width; ++ox) {
                    Scalar acc = t.b[oc];
                    for (int ic = 0; ic < in.channels; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                int iy = oy * l.stride + ky;
                                int ix = ox * l.stride + kx;
                                acc += wc[(ic * k + ky) * k + kx] *
                                       xi[(ic * in.height + iy) * in.width + ix];
                            }
                    yi[(oc * out.height + oy) * out.width + ox] = acc;
                }
        }
    }
}

}  // namespace detail

/// Forward pass. Masked channels of hidden parametric layers produce
/// exactly zero activation; the cache holds every intermediate backward
/// needs.
inline ForwardCache forward(const ModelParams& params, const std::vector<LayerSpec>& spec,
                            ActShape input_shape, const Matrix& x, const ForwardMask& mask) {
    auto shapes = infer_shapes(spec, input_shape);
    auto pidx = parametric_layers(spec);
    if (mask.keep.size() != pidx.size())
        throw ConfigError("forward mask layer count does not match network");
    if (x.cols != static_cast<std::size_t>(input_shape.size()))
        throw ConfigError("input width does not match network input shape");

    ForwardCache cache;
    cache.batch = x.rows;
    cache.acts.reserve(spec.size() + 1);
    cache.pool_argmax.resize(spec.size());
    cache.acts.push_back(x);

    std::size_t p = 0;  // parametric-layer cursor
    for (std::size_t i = 0; i < spec.size(); ++i) {
        const LayerSpec& l = spec[i];
        const Matrix& in = cache.acts.back();
        ActShape in_sh = shapes[i], out_sh = shapes[i + 1];
        Matrix out(x.rows, out_sh.size());
        switch (l.kind) {
            case LayerKind::dense:
            case LayerKind::conv2d: {
                const ParamTensor& t = params.tensors[p];
                if (static_cast<int>(mask.keep[p].size()) != t.out_ch)
                    throw ConfigError("mask width mismatch at parametric layer " + std::to_string(p));
                if (l.kind == LayerKind::dense)
                    detail::dense_forward(l, t, in, out);
                else
                    detail::conv_forward(l, t, in_sh, out_sh, in, out);
                // zero out masked channels (never the head: its mask is all-ones)
                const auto& keep = mask.keep[p];
                int per_ch = out_sh.flat() ? 1 : out_sh.height * out_sh.width;
                for (std::size_t s = 0; s < out.rows; ++s) {
                    Scalar* ys = out.row(s);
                    for (int c = 0; c < t.out_ch; ++c)
                        if (!keep[c])
                            std::fill(ys + c * per_ch, ys + (c + 1) * per_ch, 0.0);
                }
                ++p;
                break;
            }
            case LayerKind::relu:
                for (std::size_t j = 0; j < in.data.size(); ++j)
                    out.data[j] = in.data[j] > 0.0 ? in.data[j] : 0.0;
                break;
            case LayerKind::flatten:
                out.data = in.data;
                break;
            case LayerKind::maxpool2d: {
                auto& argmax = cache.pool_argmax[i];
                argmax.resize(out.rows * out.cols);
                for (std::size_t s = 0; s < out.rows; ++s) {
                    const Scalar* xi = in.row(s);
                    Scalar* yi = out.row(s);
                    for (int c = 0; c < out_sh.channels; ++c)
                        for (int oy = 0; oy < out_sh.height; ++oy)
                            for (int ox = 0; ox < out_sh.width; ++ox) {
                                Scalar best = -std::numeric_limits<Scalar>::infinity();
                                std::size_t best_idx = 0;
                                for (int wy = 0; wy < l.window; ++wy)
                                    for (int wx = 0; wx < l.window; ++wx) {
                                        int iy = oy * l.pool_stride + wy;
                                        int ix = ox * l.pool_stride + wx;
                                        std::size_t idx =
                                            (static_cast<std::size_t>(c) * in_sh.height + iy) * in_sh.width + ix;
                                        if (xi[idx] > best) {
                                            best = xi[idx];
                                            best_idx = idx;
                                        }
                                    }
                                std::size_t oidx =
                                    (static_cast<std::size_t>(c) * out_sh.height + oy) * out_sh.width + ox;
                                yi[oidx] = best;
                                argmax[s * out.cols + oidx] = best_idx;
                            }
                }
                break;
            }
        }
        cache.acts.push_back(std::move(out));
    }
    return cache;
}

inline const Matrix& logits_of(const ForwardCache& cache) { return cache.acts.back(); }

/// Backward from head-logit gradients, accumulating into `grads`. Masked
/// channels get zero parameter gradient and pass no gradient upstream.
inline void backward(const ModelParams& params, const std::vector<LayerSpec>& spec,
                     ActShape input_shape, const ForwardMask& mask, const ForwardCache& cache,
                     const Matrix& dlogits, ParamGrads& grads) {
    auto shapes = infer_shapes(spec, input_shape);
    auto pidx = parametric_layers(spec);
    if (cache.acts.size() != spec.size() + 1 || dlogits.cols != cache.acts.back().cols ||
        dlogits.rows != cache.acts.back().rows)
        throw TrainingError("backward: cache/gradient shape drift");

    Matrix dy = dlogits;
    std::size_t p = pidx.size();
    for (std::size_t ii = spec.size(); ii-- > 0;) {
        const LayerSpec& l = spec[ii];
        const Matrix& in = cache.acts[ii];
        ActShape in_sh = shapes[ii], out_sh = shapes[ii + 1];
        Matrix dx(dy.rows, in_sh.size());
        switch (l.kind) {
            case LayerKind::dense:
            case LayerKind::conv2d: {
                --p;
                const ParamTensor& t = params.tensors[p];
                ParamTensor& g = grads.tensors[p];
                const auto& keep = mask.keep[p];
                int per_ch = out_sh.flat() ? 1 : out_sh.height * out_sh.width;
                // kill gradient on masked channels before touching weights
                for (std::size_t s = 0; s < dy.rows; ++s) {
                    Scalar* ds = dy.row(s);
                    for (int c = 0; c < t.out_ch; ++c)
                        if (!keep[c]) std::fill(ds + c * per_ch, ds + (c + 1) * per_ch, 0.0);
                }
                if (l.kind == LayerKind::dense) {
                    for (std::size_t s = 0; s < dy.rows; ++s) {
                        const Scalar* xi = in.row(s);
                        const Scalar* di = dy.row(s);
                        Scalar* dxi = dx.row(s);
                        for (int o = 0; o < l.out_units; ++o) {
                            Scalar d = di[o];
                            if (d == 0.0) continue;
                            Scalar* gw = g.w.data() + static_cast<std::size_t>(o) * l.in_units;
                            const Scalar* wr = t.w.data() + static_cast<std::size_t>(o) * l.in_units;
                            g.b[o] += d;
                            for (int j = 0; j < l.in_units; ++j) {
                                gw[j] += d * xi[j];
                                dxi[j] += d * wr[j];
                            }
                        }
                    }
                } else {
                    const int k = l.kernel_size;
                    for (std::size_t s = 0; s < dy.rows; ++s) {
                        const Scalar* xi = in.row(s);
                        const Scalar* di = dy.row(s);
                        Scalar* dxi = dx.row(s);
                        for (int oc = 0; oc < out_sh.channels; ++oc) {
                            Scalar* gw = g.w.data() + static_cast<std::size_t>(oc) * t.in_per_out;
                            const Scalar* wc = t.w.data() + static_cast<std::size_t>(oc) * t.in_per_out;
                            for (int oy = 0; oy < out_sh.height; ++oy)
                                for (int ox = 0; ox < out_sh.width; ++ox) {
                                    Scalar d = di[(oc * out_sh.height + oy) * out_sh.width + ox];
                                    if (d == 0.0) continue;
                                    g.b[oc] += d;
                                    for (int ic = 0; ic < in_sh.channels; ++ic)
                                        for (int ky = 0; ky < k; ++ky)
                                            for (int kx = 0; kx < k; ++kx) {
                                                int iy = oy * l.stride + ky;
                                                int ix = ox * l.stride + kx;
                                                std::size_t xidx =
                                                    (static_cast<std::size_t>(ic) * in_sh.height + iy) * in_sh.width + ix;
                                                std::size_t widx = (ic * k + ky) * k + kx;
                                                gw[widx] += d * xi[xidx];
                                                dxi[xidx] += d * wc[widx];
                                            }
                                }
                        }
                    }
                }
                break;
            }
            case LayerKind::relu:
                for (std::size_t j = 0; j < dy.data.size(); ++j)
                    dx.data[j] = in.data[j] > 0.0 ? dy.data[j] : 0.0;
                break;
            case LayerKind::flatten:
                dx.data = dy.data;
                break;
            case LayerKind::maxpool2d: {
                const auto& argmax = cache.pool_argmax[ii];
                for (std::size_t s = 0; s < dy.rows; ++s) {
                    const Scalar* di = dy.row(s);
                    Scalar* dxi = dx.row(s);
                    for (std::size_t o = 0; o < dy.cols; ++o)
                        dxi[argmax[s * dy.cols + o]] += di[o];
                }
                break;
            }
        }
        dy = std::move(dx);
    }
}

/// Numerically stabilized row-wise softmax.
inline Matrix softmax(const Matrix& logits) {
    Matrix out(logits.rows, logits.cols);
    for (std::size_t s = 0; s < logits.rows; ++s) {
        const Scalar* z = logits.row(s);
        Scalar* q = out.row(s);
        Scalar mx = z[0];
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, z[j]);
        Scalar sum = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) {
            q[j] = std::exp(z[j] - mx);
            sum += q[j];
        }
        for (std::size_t j = 0; j < logits.cols; ++j) q[j] /= sum;
    }
    return out;
}

/// Mean cross-entropy of softmax probabilities against integer labels.
inline Scalar cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
    Scalar total = 0.0;
    for (std::size_t s = 0; s < probs.rows; ++s) {
        Scalar p = std::max(probs.at(s, static_cast<std::size_t>(labels[s])), 1e-12);
        total += -std::log(p);
    }
    return total / static_cast<Scalar>(probs.rows);
}

struct OptimizerState {
    Scalar lr = 0.01;
    Scalar momentum = 0.9;
    Scalar weight_decay = 5e-4;
    ModelParams velocity;  // same shapes as params

    static OptimizerState for_params(const ModelParams& p, Scalar lr, Scalar momentum,
                                     Scalar weight_decay) {
        OptimizerState s;
        s.lr = lr;
        s.momentum = momentum;
        s.weight_decay = weight_decay;
        s.velocity = zeros_like(p);
        return s;
    }
};

namespace detail {
inline void nesterov_update(std::vector<Scalar>& p, const std::vector<Scalar>& g,
                            std::vector<Scalar>& v, Scalar lr, Scalar m, Scalar wd) {
    for (std::size_t j = 0; j < p.size(); ++j) {
        Scalar gd = g[j] + wd * p[j];
        v[j] = m * v[j] + gd;
        p[j] -= lr * (gd + m * v[j]);
    }
}
}  // namespace detail

/// Nesterov form: v <- m*v + g_decayed; param <- param - lr*(g_decayed + m*v),
/// with g_decayed = g + weight_decay*param.
inline void sgd_step(ModelParams& params, const ParamGrads& grads, OptimizerState& opt,
                     const std::string& context = {}) {
    for (const auto& t : grads.tensors)
        if (!all_finite(t.w) || !all_finite(t.b))
            throw TrainingError("non-finite gradient" + (context.empty() ? "" : " (" + context + ")"));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        detail::nesterov_update(params.tensors[i].w, grads.tensors[i].w, opt.velocity.tensors[i].w,
                                opt.lr, opt.momentum, opt.weight_decay);
        detail::nesterov_update(params.tensors[i].b, grads.tensors[i].b, opt.velocity.tensors[i].b,
                                opt.lr, opt.momentum, opt.weight_decay);
    }
}

}  // namespace cd2pfed::nn
