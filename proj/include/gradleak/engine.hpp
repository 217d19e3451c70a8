// Copyright (c) 2026, gradleak contributors
// SPDX-License-Identifier: Apache-2.0
//
// Produces the shared updates an attacker observes (FedSGD/FedAvg deltas,
// aggregation, DP clip+noise, masking) and the first/second-order gradient
// machinery used by attacks and sensitivity metrics.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gradleak/nn.hpp"

namespace gradleak::engine {

enum class UpdateMode { FedSgd, FedAvg };

struct DpParams {
    double max_norm = 1.0;
    double sigma = 0.0;
};

struct MaskSpec {
    enum class Mode { Fraction, Count };
    Mode mode = Mode::Fraction;
    double fraction = 1.0;       // (0, 1]
    std::size_t count = 0;       // >= 1 when mode == Count
    std::uint64_t selection_seed = 0;
};

struct Provenance {
    UpdateMode mode = UpdateMode::FedSgd;
    std::size_t epochs = 1;
    std::size_t batch_size = 0;
    double lr = 0.0;
    std::size_t mix_factor = 0;
    std::optional<DpParams> dp;
    std::optional<MaskSpec> mask;
};

// Per-layer retained flat indices (into weight||bias), sorted ascending.
using RetainedIndices = std::vector<std::vector<std::size_t>>;

struct SharedUpdate {
    nn::GradientSet grads;
    Provenance provenance;
    // Entries outside the retained sets are absent for downstream consumers;
    // nullopt means the full update is visible.
    std::optional<RetainedIndices> retained;
};

enum class DistanceKind { L2, Cosine };
enum class DerivBackend { FiniteDifference, Analytic };

SharedUpdate fed_sgd_update(const nn::ModelSpec& spec, const nn::Params& params,
                            std::span<const nn::Sample> batch);

// Parameter delta of a seeded local training run (trained minus initial).
SharedUpdate fed_avg_update(const nn::ModelSpec& spec, const nn::Params& params,
                            std::span<const nn::Sample> dataset, std::size_t epochs,
                            std::size_t batch_size, double lr, std::uint64_t seed);

// (target + sum(nontargets)) / (N+1), elementwise.
SharedUpdate aggregate_mixed(const SharedUpdate& target,
                             std::span<const SharedUpdate> nontargets);

// Whole-update flat l2 clip to max_norm, then i.i.d. Gaussian(0, sigma^2)
// noise per entry, seeded.
SharedUpdate dp_clip_noise(const SharedUpdate& update, double max_norm, double sigma,
                           std::uint64_t seed);

// Retains ceil(fraction*size) (fraction mode) or count indices per layer,
// drawn uniformly without replacement from the layer's seeded stream.
SharedUpdate apply_mask(const SharedUpdate& update, const MaskSpec& mask);

// L2: squared l2 distance over the concatenated subset entries.
// Cosine: 1 - <a,b>/(|a||b|) over the concatenation. Masked entries excluded.
double grad_distance(const nn::GradientSet& g_hat, const nn::GradientSet& g_obs,
                     DistanceKind kind, std::span<const std::size_t> layer_subset,
                     const RetainedIndices* retained = nullptr);

struct DistanceGrad {
    double distance = 0.0;
    Tensor d_input;
    std::vector<double> d_label_logits;
};

// Distance between the dummy gradients at (dummy_x, softmax(dummy_label_logits))
// and the observed update, with its exact gradient w.r.t. both dummy inputs.
// The analytic backend differentiates through the backward pass
// (forward-over-reverse); the FD backend uses central differences with step
// cbrt(eps)*max(1,|x_i|) per coordinate.
DistanceGrad grad_of_grad_distance(const nn::ModelSpec& spec, const nn::Params& params,
                                   const SharedUpdate& observed, const Tensor& dummy_x,
                                   std::span<const double> dummy_label_logits,
                                   DistanceKind kind,
                                   std::span<const std::size_t> layer_subset,
                                   DerivBackend backend);

// Analytic core over an explicit soft label (probability vector); used when
// the label is pinned by label inference. d_label_logits is left empty.
DistanceGrad grad_of_grad_distance_soft(const nn::ModelSpec& spec, const nn::Params& params,
                                        const SharedUpdate& observed, const Tensor& dummy_x,
                                        std::span<const double> soft_label, DistanceKind kind,
                                        std::span<const std::size_t> layer_subset);

struct JacobianMatrix {
    std::size_t layer = 0;  // layer index; layers.size() marks a stacked matrix
    std::size_t rows = 0;   // flattened gradient size
    std::size_t cols = 0;   // flattened input size
    std::vector<double> values;  // row-major

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// Entry (r, c) = d(flat G_layer)_r / d(flat x)_c for a single sample under
// the cross-entropy loss.
JacobianMatrix input_gradient_jacobian(const nn::ModelSpec& spec, const nn::Params& params,
                                       const Tensor& x, std::size_t y, std::size_t layer,
                                       DerivBackend backend);

// Same, under the squared-error head (regression-style toy models).
JacobianMatrix input_gradient_jacobian_squared_error(const nn::ModelSpec& spec,
                                                     const nn::Params& params, const Tensor& x,
                                                     const Tensor& target, std::size_t layer,
                                                     DerivBackend backend);

// Rows of several layers stacked in the given order (cross-entropy loss).
JacobianMatrix input_gradient_jacobian_stacked(const nn::ModelSpec& spec,
                                               const nn::Params& params, const Tensor& x,
                                               std::size_t y,
                                               std::span<const std::size_t> layers,
                                               DerivBackend backend);

// Flat view of one layer's gradients (weight values then bias values),
// restricted to the retained indices when given.
std::vector<double> flat_layer_values(const nn::GradientSet& grads, std::size_t layer,
                                      const RetainedIndices* retained = nullptr);

double flat_l2_norm(const nn::GradientSet& grads);

}  // namespace gradleak::engine
