// Copyright (c) 2026, gradleak contributors
// SPDX-License-Identifier: Apache-2.0
//
// Forward and reverse-mode kernels for the mini classifier layers, templated
// on the scalar type. Instantiated with double for ordinary gradients and
// with Dual for exact directional derivatives of the backward pass itself
// (gradients-of-gradients, input-gradient Jacobians).

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "gradleak/dual.hpp"
#include "gradleak/model.hpp"
#include "gradleak/tensor.hpp"

namespace gradleak::nn::detail {

template <typename S>
struct ForwardTrace {
    // acts[0] is the input; acts[i+1] is the output of layer i.
    std::vector<BasicTensor<S>> acts;
    // For each MaxPool layer: flat input index feeding each output element.
    std::vector<std::vector<std::size_t>> pool_src;
};

template <typename S>
std::vector<LayerTensorsT<S>> zero_like_params(const ModelSpec& spec) {
    const auto shapes = spec.infer_shapes();
    std::vector<LayerTensorsT<S>> out(spec.layers.size());
    Shape3 in = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        if (layer.has_params()) {
            out[i].weight = BasicTensor<S>::zeros(weight_shape(layer, in));
            out[i].bias = BasicTensor<S>::zeros(bias_shape(layer));
        }
        in = shapes[i];
    }
    return out;
}

template <typename S>
BasicTensor<S> affine_forward(const LayerTensorsT<S>& p, const BasicTensor<S>& in) {
    const std::size_t out_n = p.bias.size();
    const std::size_t in_n = in.size();
    BasicTensor<S> out = BasicTensor<S>::zeros({out_n, 1, 1});
    for (std::size_t r = 0; r < out_n; ++r) {
        S acc = p.bias[r];
        const S* w = p.weight.values.data() + r * in_n;
        for (std::size_t c = 0; c < in_n; ++c) acc += w[c] * in[c];
        out[r] = acc;
    }
    return out;
}

template <typename S>
BasicTensor<S> conv_forward(const LayerSpec& layer, const Shape3& in_shape,
                            const LayerTensorsT<S>& p, const BasicTensor<S>& in) {
    const std::size_t ic = in_shape.channels, ih = in_shape.height, iw = in_shape.width;
    const std::size_t oc = layer.out_channels, k = layer.kernel_size;
    const std::size_t oh = ih - k + 1, ow = iw - k + 1;
    BasicTensor<S> out = BasicTensor<S>::zeros({oc, oh, ow});
    for (std::size_t o = 0; o < oc; ++o) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                S acc = p.bias[o];
                for (std::size_t c = 0; c < ic; ++c) {
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const S* wrow = p.weight.values.data() + ((o * ic + c) * k + ky) * k;
                        const S* irow = in.values.data() + (c * ih + y + ky) * iw + x;
                        for (std::size_t kx = 0; kx < k; ++kx) acc += wrow[kx] * irow[kx];
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    return out;
}

template <typename S>
BasicTensor<S> pool_forward(const LayerSpec& layer, const Shape3& in_shape,
                            const BasicTensor<S>& in, std::vector<std::size_t>* src) {
    const std::size_t c_n = in_shape.channels, ih = in_shape.height, iw = in_shape.width;
    const std::size_t w = layer.window;
    const std::size_t oh = (ih + w - 1) / w, ow = (iw + w - 1) / w;
    BasicTensor<S> out = BasicTensor<S>::zeros({c_n, oh, ow});
    if (src) src->assign(out.size(), 0);
    for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t py = 0; py < oh; ++py) {
            for (std::size_t px = 0; px < ow; ++px) {
                const std::size_t y0 = py * w, x0 = px * w;
                const std::size_t y1 = std::min(y0 + w, ih), x1 = std::min(x0 + w, iw);
                std::size_t best = (c * ih + y0) * iw + x0;
                for (std::size_t y = y0; y < y1; ++y) {
                    for (std::size_t x = x0; x < x1; ++x) {
                        const std::size_t idx = (c * ih + y) * iw + x;
                        if (in[idx] > in[best]) best = idx;  // ties keep the first
                    }
                }
                const std::size_t oidx = (c * oh + py) * ow + px;
                out[oidx] = in[best];
                if (src) (*src)[oidx] = best;
            }
        }
    }
    return out;
}

// Runs the network, returning the logits. When trace is given, every
// intermediate activation (and pooling argmax) is recorded for backward.
template <typename S>
BasicTensor<S> run_forward(const ModelSpec& spec, std::span<const LayerTensorsT<S>> params,
                           const BasicTensor<S>& x, ForwardTrace<S>* trace) {
    const auto shapes = spec.infer_shapes();
    if (trace) {
        trace->acts.clear();
        trace->pool_src.assign(spec.layers.size(), {});
        trace->acts.push_back(x);
    }
    BasicTensor<S> cur = x;
    Shape3 in_shape = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        BasicTensor<S> next;
        switch (layer.kind) {
            case LayerKind::Conv2d:
                next = conv_forward(layer, in_shape, params[i], cur);
                break;
            case LayerKind::MaxPool:
                next = pool_forward(layer, in_shape, cur, trace ? &trace->pool_src[i] : nullptr);
                break;
            case LayerKind::ReLU: {
                next = cur;
                for (auto& v : next.values) {
                    if (!(v > S(0.0))) v = S(0.0);
                }
                break;
            }
            case LayerKind::FullyConnected:
            case LayerKind::SoftmaxOutput:
                next = affine_forward(params[i], cur);
                break;
        }
        cur = std::move(next);
        in_shape = shapes[i];
        if (trace) trace->acts.push_back(cur);
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Loss heads over the logits.

struct HardLabel {
    std::size_t y;
};
template <typename S>
struct SoftLabel {
    std::span<const S> q;  // probability weights, sums to one
};
template <typename S>
struct SquaredError {
    std::span<const S> target;  // loss = 1/2 * sum((z - t)^2)
};

template <typename S>
struct HeadOut {
    S loss{0.0};
    std::vector<S> dlogits;
    std::vector<S> dsoft;  // d loss / d q, SoftLabel only
};

template <typename S>
void softmax_terms(const std::vector<S>& z, std::vector<S>& p, S& lse) {
    using std::exp;
    using std::log;
    S m = z[0];
    for (const S& v : z) {
        if (v > m) m = v;
    }
    S sum(0.0);
    p.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = exp(z[i] - m);
        sum += p[i];
    }
    for (auto& v : p) v = v / sum;
    lse = m + log(sum);
}

template <typename S>
HeadOut<S> apply_head(const BasicTensor<S>& logits, HardLabel head) {
    HeadOut<S> out;
    std::vector<S> p;
    S lse;
    softmax_terms(logits.values, p, lse);
    out.loss = lse - logits[head.y];
    out.dlogits = p;
    out.dlogits[head.y] -= S(1.0);
    return out;
}

template <typename S>
HeadOut<S> apply_head(const BasicTensor<S>& logits, SoftLabel<S> head) {
    HeadOut<S> out;
    std::vector<S> p;
    S lse;
    softmax_terms(logits.values, p, lse);
    out.loss = S(0.0);
    out.dlogits.resize(logits.size());
    out.dsoft.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const S nll = lse - logits[i];  // -log softmax(z)_i
        out.loss += head.q[i] * nll;
        out.dlogits[i] = p[i] - head.q[i];
        out.dsoft[i] = nll;
    }
    return out;
}

template <typename S>
HeadOut<S> apply_head(const BasicTensor<S>& logits, SquaredError<S> head) {
    HeadOut<S> out;
    out.loss = S(0.0);
    out.dlogits.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const S r = logits[i] - head.target[i];
        out.loss += S(0.5) * r * r;
        out.dlogits[i] = r;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reverse pass.

template <typename S>
struct BackwardOut {
    S loss{0.0};
    BasicTensor<S> dx;     // filled when want_dx
    std::vector<S> dsoft;  // filled for SoftLabel heads
};

// Accumulates parameter gradients for one sample into grad_accum (+=).
template <typename S, typename Head>
BackwardOut<S> run_backward(const ModelSpec& spec, std::span<const LayerTensorsT<S>> params,
                            const BasicTensor<S>& x, Head head,
                            std::vector<LayerTensorsT<S>>* grad_accum, bool want_dx) {
    const auto shapes = spec.infer_shapes();
    ForwardTrace<S> trace;
    BasicTensor<S> logits = run_forward<S>(spec, params, x, &trace);

    HeadOut<S> h = apply_head(logits, head);
    BackwardOut<S> out;
    out.loss = h.loss;
    out.dsoft = std::move(h.dsoft);

    // delta = d loss / d (current activation), starting at the logits.
    std::vector<S> delta = std::move(h.dlogits);

    for (std::size_t ri = spec.layers.size(); ri-- > 0;) {
        const LayerSpec& layer = spec.layers[ri];
        const BasicTensor<S>& in = trace.acts[ri];
        const Shape3 in_shape = ri == 0 ? spec.input_shape : shapes[ri - 1];
        std::vector<S> din;

        switch (layer.kind) {
            case LayerKind::FullyConnected:
            case LayerKind::SoftmaxOutput: {
                const std::size_t out_n = layer.out_features, in_n = in.size();
                din.assign(in_n, S(0.0));
                const LayerTensorsT<S>& p = params[ri];
                LayerTensorsT<S>* g = grad_accum ? &(*grad_accum)[ri] : nullptr;
                for (std::size_t r = 0; r < out_n; ++r) {
                    const S d = delta[r];
                    const S* w = p.weight.values.data() + r * in_n;
                    if (g) {
                        S* gw = g->weight.values.data() + r * in_n;
                        for (std::size_t c = 0; c < in_n; ++c) gw[c] += d * in[c];
                        g->bias[r] += d;
                    }
                    for (std::size_t c = 0; c < in_n; ++c) din[c] += w[c] * d;
                }
                break;
            }
            case LayerKind::Conv2d: {
                const std::size_t ic = in_shape.channels, ih = in_shape.height,
                                  iw = in_shape.width;
                const std::size_t oc = layer.out_channels, k = layer.kernel_size;
                const std::size_t oh = ih - k + 1, ow = iw - k + 1;
                din.assign(in.size(), S(0.0));
                const LayerTensorsT<S>& p = params[ri];
                LayerTensorsT<S>* g = grad_accum ? &(*grad_accum)[ri] : nullptr;
                for (std::size_t o = 0; o < oc; ++o) {
                    for (std::size_t y = 0; y < oh; ++y) {
                        for (std::size_t xo = 0; xo < ow; ++xo) {
                            const S d = delta[(o * oh + y) * ow + xo];
                            if (g) g->bias[o] += d;
                            for (std::size_t c = 0; c < ic; ++c) {
                                for (std::size_t ky = 0; ky < k; ++ky) {
                                    const std::size_t wbase = ((o * ic + c) * k + ky) * k;
                                    const std::size_t ibase = (c * ih + y + ky) * iw + xo;
                                    for (std::size_t kx = 0; kx < k; ++kx) {
                                        if (g) g->weight[wbase + kx] += d * in[ibase + kx];
                                        din[ibase + kx] += p.weight[wbase + kx] * d;
                                    }
                                }
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::MaxPool: {
                din.assign(in.size(), S(0.0));
                const auto& src = trace.pool_src[ri];
                for (std::size_t j = 0; j < delta.size(); ++j) din[src[j]] += delta[j];
                break;
            }
            case LayerKind::ReLU: {
                din.assign(in.size(), S(0.0));
                for (std::size_t j = 0; j < delta.size(); ++j) {
                    if (in[j] > S(0.0)) din[j] = delta[j];
                }
                break;
            }
        }
        delta = std::move(din);
        if (ri == 0 && want_dx) {
            out.dx = BasicTensor<S>(spec.input_shape.dims(), std::move(delta));
            return out;
        }
    }
    return out;
}

}  // namespace gradleak::nn::detail
