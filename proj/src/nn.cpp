// Copyright (c) 2026, gradleak contributors
// SPDX-License-Identifier: Apache-2.0

#include "gradleak/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "gradleak/nn_kernels.hpp"
#include "gradleak/rng.hpp"

namespace gradleak::nn {

namespace {

std::size_t fan_in_of(const LayerSpec& layer, const Shape3& in) {
    switch (layer.kind) {
        case LayerKind::Conv2d:
            return in.channels * layer.kernel_size * layer.kernel_size;
        case LayerKind::FullyConnected:
        case LayerKind::SoftmaxOutput:
            return in.numel();
        default:
            return 0;
    }
}

std::span<const LayerTensors> as_span(const Params& p) {
    return {p.layers.data(), p.layers.size()};
}

}  // namespace

Params init_params(const ModelSpec& spec, std::uint64_t seed) {
    const auto shapes = spec.infer_shapes();
    Rng rng(seed);
    Params params;
    params.layers.resize(spec.layers.size());
    Shape3 in = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        if (layer.has_params()) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in_of(layer, in)));
            Tensor w = Tensor::zeros(weight_shape(layer, in));
            for (auto& v : w.values) v = rng.uniform(-bound, bound);
            params.layers[i].weight = std::move(w);
            params.layers[i].bias = Tensor::zeros(bias_shape(layer));
        }
        in = shapes[i];
    }
    return params;
}

ForwardResult forward(const ModelSpec& spec, const Params& params, const Tensor& x) {
    if (x.shape != spec.input_shape.dims()) {
        throw ShapeError("forward: input shape " + shape_to_string(x.shape) +
                         " does not match model input " +
                         shape_to_string(spec.input_shape.dims()));
    }
    check_finite(x, "forward input");
    detail::ForwardTrace<double> trace;
    Tensor logits = detail::run_forward<double>(spec, as_span(params), x, &trace);
    check_finite(logits, "forward logits");
    ForwardResult out;
    out.logits = std::move(logits);
    out.activations.assign(trace.acts.begin() + 1, trace.acts.end());
    return out;
}

double cross_entropy(const Tensor& logits, std::size_t y) {
    if (y >= logits.size()) {
        throw std::out_of_range("cross_entropy: class index " + std::to_string(y) +
                                " out of range for " + std::to_string(logits.size()) +
                                " logits");
    }
    std::vector<double> p;
    double lse;
    detail::softmax_terms(logits.values, p, lse);
    return lse - logits[y];
}

BackwardResult backward(const ModelSpec& spec, const Params& params,
                        std::span<const Sample> batch) {
    if (batch.empty()) throw std::invalid_argument("backward: empty batch");
    BackwardResult out;
    out.grads.layers = detail::zero_like_params<double>(spec);
    out.grads.batch_size = batch.size();
    out.grads.epochs = 1;
    for (const Sample& s : batch) {
        if (s.x.shape != spec.input_shape.dims()) {
            throw ShapeError("backward: sample shape " + shape_to_string(s.x.shape) +
                             " does not match model input " +
                             shape_to_string(spec.input_shape.dims()));
        }
        if (s.y >= spec.num_classes) {
            throw std::out_of_range("backward: label " + std::to_string(s.y) + " out of range");
        }
        auto res = detail::run_backward<double>(spec, as_span(params), s.x,
                                                detail::HardLabel{s.y}, &out.grads.layers,
                                                /*want_dx=*/false);
        out.loss += res.loss;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    out.grads = scale(out.grads, inv);
    out.grads.batch_size = batch.size();
    for (const auto& layer : out.grads.layers) {
        check_finite(layer.weight, "backward grads");
        check_finite(layer.bias, "backward grads");
    }
    return out;
}

BackwardResult backward_squared_error(const ModelSpec& spec, const Params& params,
                                      const Tensor& x, const Tensor& target) {
    if (target.size() != spec.num_classes) {
        throw ShapeError("backward_squared_error: target length " +
                         std::to_string(target.size()) + " != num_classes " +
                         std::to_string(spec.num_classes));
    }
    BackwardResult out;
    out.grads.layers = detail::zero_like_params<double>(spec);
    out.grads.batch_size = 1;
    auto res = detail::run_backward<double>(
        spec, as_span(params), x,
        detail::SquaredError<double>{{target.values.data(), target.values.size()}},
        &out.grads.layers, /*want_dx=*/false);
    out.loss = res.loss;
    return out;
}

Params sgd_step(const Params& params, const GradientSet& grads, double lr) {
    check_congruent(params.layers, grads.layers, "sgd_step");
    Params out = params;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        for (std::size_t i = 0; i < out.layers[l].weight.size(); ++i) {
            out.layers[l].weight[i] -= lr * grads.layers[l].weight[i];
        }
        for (std::size_t i = 0; i < out.layers[l].bias.size(); ++i) {
            out.layers[l].bias[i] -= lr * grads.layers[l].bias[i];
        }
    }
    return out;
}

Params train(const ModelSpec& spec, const Params& params, std::span<const Sample> dataset,
             std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    if (epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");

    Params cur = params;
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t e = 0; e < epochs; ++e) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(mix_seed(seed, e));
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(start + batch_size, order.size());
            std::vector<Sample> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
            auto res = backward(spec, cur, batch);
            cur = sgd_step(cur, res.grads, lr);
        }
    }
    return cur;
}

}  // namespace gradleak::nn
