// Copyright (c) 2026, gradleak contributors
// SPDX-License-Identifier: Apache-2.0
//
// Public operations of the tensor/classifier core: seeded initialization,
// forward pass, cross-entropy, exact batch gradients, SGD.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gradleak/model.hpp"
#include "gradleak/tensor.hpp"

namespace gradleak::nn {

// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero, fully
// determined by the seed.
Params init_params(const ModelSpec& spec, std::uint64_t seed);

struct ForwardResult {
    Tensor logits;
    std::vector<Tensor> activations;  // output of every layer, in order
};

ForwardResult forward(const ModelSpec& spec, const Params& params, const Tensor& x);

// -log softmax(logits)[y], natural log.
double cross_entropy(const Tensor& logits, std::size_t y);

struct Sample {
    Tensor x;
    std::size_t y = 0;
};

struct BackwardResult {
    double loss = 0.0;  // batch mean
    GradientSet grads;  // batch mean of per-sample gradients
};

BackwardResult backward(const ModelSpec& spec, const Params& params,
                        std::span<const Sample> batch);

// Squared-error head over the logits (1/2 * ||logits - target||^2); used by
// sensitivity checks on regression-style toy models.
BackwardResult backward_squared_error(const ModelSpec& spec, const Params& params,
                                      const Tensor& x, const Tensor& target);

Params sgd_step(const Params& params, const GradientSet& grads, double lr);

// Mini-batch SGD over the shuffled dataset; shuffle order is seeded per
// epoch, so the result is a pure function of (inputs, seed).
Params train(const ModelSpec& spec, const Params& params, std::span<const Sample> dataset,
             std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed);

}  // namespace gradleak::nn
