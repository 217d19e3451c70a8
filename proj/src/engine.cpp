// Copyright (c) 2026, gradleak contributors
// SPDX-License-Identifier: Apache-2.0

#include "gradleak/engine.hpp"

#include <cfloat>
#include <cmath>
#include <stdexcept>

#include "gradleak/nn_kernels.hpp"
#include "gradleak/rng.hpp"

namespace gradleak::engine {

namespace {

using nn::GradientSet;
using nn::LayerTensors;
using nn::LayerTensorsT;
using nn::ModelSpec;
using nn::Params;
using nn::Sample;

double& flat_entry(LayerTensors& t, std::size_t i) {
    return i < t.weight.size() ? t.weight[i] : t.bias[i - t.weight.size()];
}

double flat_entry(const LayerTensors& t, std::size_t i) {
    return i < t.weight.size() ? t.weight[i] : t.bias[i - t.weight.size()];
}

// Visits the entries of the subset layers that are visible downstream
// (all entries, or the retained ones when a mask is in effect).
template <typename Fn>
void for_each_included(const std::vector<LayerTensors>& layers,
                       std::span<const std::size_t> layer_subset,
                       const RetainedIndices* retained, Fn&& fn) {
    for (std::size_t l : layer_subset) {
        if (l >= layers.size()) {
            throw std::out_of_range("layer subset index " + std::to_string(l) +
                                    " out of range");
        }
        const LayerTensors& t = layers[l];
        if (!t.has_params()) {
            throw std::invalid_argument("layer " + std::to_string(l) +
                                        " has no parameters; cannot contribute gradients");
        }
        if (retained) {
            for (std::size_t i : (*retained)[l]) fn(l, i);
        } else {
            for (std::size_t i = 0; i < t.flat_size(); ++i) fn(l, i);
        }
    }
}

std::span<const LayerTensors> as_span(const Params& p) {
    return {p.layers.data(), p.layers.size()};
}

std::vector<double> softmax_probs(std::span<const double> logits) {
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

// distance plus d(distance)/d(g_hat) laid out over full layer tensors
// (zero outside the included entries).
std::pair<double, std::vector<LayerTensors>> distance_and_outer_grad(
    const GradientSet& g_hat, const GradientSet& g_obs, DistanceKind kind,
    std::span<const std::size_t> subset, const RetainedIndices* retained,
    const ModelSpec& spec) {
    std::vector<LayerTensors> v = nn::detail::zero_like_params<double>(spec);
    double dist = 0.0;
    if (kind == DistanceKind::L2) {
        for_each_included(g_hat.layers, subset, retained, [&](std::size_t l, std::size_t i) {
            const double d = flat_entry(g_hat.layers[l], i) - flat_entry(g_obs.layers[l], i);
            dist += d * d;
            flat_entry(v[l], i) = 2.0 * d;
        });
        return {dist, std::move(v)};
    }
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for_each_included(g_hat.layers, subset, retained, [&](std::size_t l, std::size_t i) {
        const double a = flat_entry(g_hat.layers[l], i);
        const double b = flat_entry(g_obs.layers[l], i);
        dot += a * b;
        na2 += a * a;
        nb2 += b * b;
    });
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    if (na == 0.0 || nb == 0.0) {
        throw DegenerateGradientError("cosine distance over a zero-norm gradient vector");
    }
    dist = 1.0 - dot / (na * nb);
    for_each_included(g_hat.layers, subset, retained, [&](std::size_t l, std::size_t i) {
        const double a = flat_entry(g_hat.layers[l], i);
        const double b = flat_entry(g_obs.layers[l], i);
        flat_entry(v[l], i) = -b / (na * nb) + dot * a / (na * na * na * nb);
    });
    return {dist, std::move(v)};
}

std::vector<LayerTensorsT<Dual>> params_with_tangent(const Params& params,
                                                     const std::vector<LayerTensors>* tangent) {
    std::vector<LayerTensorsT<Dual>> out(params.layers.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const LayerTensors& p = params.layers[l];
        out[l].weight.shape = p.weight.shape;
        out[l].bias.shape = p.bias.shape;
        out[l].weight.values.resize(p.weight.size());
        out[l].bias.values.resize(p.bias.size());
        for (std::size_t i = 0; i < p.weight.size(); ++i) {
            out[l].weight.values[i] = {p.weight[i], tangent ? (*tangent)[l].weight[i] : 0.0};
        }
        for (std::size_t i = 0; i < p.bias.size(); ++i) {
            out[l].bias.values[i] = {p.bias[i], tangent ? (*tangent)[l].bias[i] : 0.0};
        }
    }
    return out;
}

BasicTensor<Dual> tensor_to_dual(const Tensor& x) {
    BasicTensor<Dual> out;
    out.shape = x.shape;
    out.values.assign(x.values.begin(), x.values.end());
    return out;
}

GradientSet single_sample_soft_grads(const ModelSpec& spec, const Params& params,
                                     const Tensor& x, std::span<const double> q) {
    GradientSet g;
    g.layers = nn::detail::zero_like_params<double>(spec);
    g.batch_size = 1;
    nn::detail::run_backward<double>(spec, as_span(params), x, nn::detail::SoftLabel<double>{q},
                                     &g.layers, /*want_dx=*/false);
    return g;
}

// Analytic gradient of dist(g_hat(x, q), g_obs) w.r.t. x and (optionally) q,
// via one dual-number backward pass with the parameters perturbed along the
// outer gradient direction.
DistanceGrad analytic_soft_core(const ModelSpec& spec, const Params& params,
                                const SharedUpdate& observed, const Tensor& x,
                                std::span<const double> q, DistanceKind kind,
                                std::span<const std::size_t> subset,
                                std::vector<double>* d_soft_out) {
    const GradientSet g_hat = single_sample_soft_grads(spec, params, x, q);
    auto [dist, v] = distance_and_outer_grad(
        g_hat, observed.grads, kind, subset,
        observed.retained ? &*observed.retained : nullptr, spec);

    auto dual_params = params_with_tangent(params, &v);
    BasicTensor<Dual> dual_x = tensor_to_dual(x);
    std::vector<Dual> dual_q(q.begin(), q.end());

    auto res = nn::detail::run_backward<Dual>(
        spec, {dual_params.data(), dual_params.size()}, dual_x,
        nn::detail::SoftLabel<Dual>{{dual_q.data(), dual_q.size()}}, nullptr,
        /*want_dx=*/true);

    DistanceGrad out;
    out.distance = dist;
    out.d_input = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out.d_input[i] = tangent(res.dx[i]);
    if (d_soft_out) {
        d_soft_out->resize(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) (*d_soft_out)[i] = tangent(res.dsoft[i]);
    }
    return out;
}

double fd_step(double x) { return std::cbrt(DBL_EPSILON) * std::max(1.0, std::fabs(x)); }

}  // namespace

SharedUpdate fed_sgd_update(const ModelSpec& spec, const Params& params,
                            std::span<const Sample> batch) {
    auto res = nn::backward(spec, params, batch);
    SharedUpdate up;
    up.grads = std::move(res.grads);
    up.provenance.mode = UpdateMode::FedSgd;
    up.provenance.epochs = 1;
    up.provenance.batch_size = batch.size();
    return up;
}

SharedUpdate fed_avg_update(const ModelSpec& spec, const Params& params,
                            std::span<const Sample> dataset, std::size_t epochs,
                            std::size_t batch_size, double lr, std::uint64_t seed) {
    Params trained = nn::train(spec, params, dataset, epochs, batch_size, lr, seed);
    SharedUpdate up;
    up.grads.layers = nn::detail::zero_like_params<double>(spec);
    up.grads.batch_size = batch_size;
    up.grads.epochs = epochs;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        for (std::size_t i = 0; i < params.layers[l].weight.size(); ++i) {
            up.grads.layers[l].weight[i] = trained.layers[l].weight[i] - params.layers[l].weight[i];
        }
        for (std::size_t i = 0; i < params.layers[l].bias.size(); ++i) {
            up.grads.layers[l].bias[i] = trained.layers[l].bias[i] - params.layers[l].bias[i];
        }
    }
    up.provenance.mode = UpdateMode::FedAvg;
    up.provenance.epochs = epochs;
    up.provenance.batch_size = batch_size;
    up.provenance.lr = lr;
    return up;
}

SharedUpdate aggregate_mixed(const SharedUpdate& target,
                             std::span<const SharedUpdate> nontargets) {
    GradientSet sum = target.grads;
    for (const SharedUpdate& u : nontargets) sum = nn::add(sum, u.grads);
    SharedUpdate out = target;
    out.grads = nn::scale(sum, 1.0 / static_cast<double>(nontargets.size() + 1));
    out.grads.batch_size = target.grads.batch_size;
    out.grads.epochs = target.grads.epochs;
    out.provenance.mix_factor = nontargets.size();
    return out;
}

SharedUpdate dp_clip_noise(const SharedUpdate& update, double max_norm, double sigma,
                           std::uint64_t seed) {
    if (max_norm <= 0.0) throw std::invalid_argument("dp_clip_noise: max_norm must be > 0");
    if (sigma < 0.0) throw std::invalid_argument("dp_clip_noise: sigma must be >= 0");
    SharedUpdate out = update;
    const double norm = flat_l2_norm(out.grads);
    const double factor = norm > max_norm ? max_norm / norm : 1.0;
    if (factor != 1.0) {
        for (auto& layer : out.grads.layers) {
            for (auto& v : layer.weight.values) v *= factor;
            for (auto& v : layer.bias.values) v *= factor;
        }
    }
    if (sigma > 0.0) {
        Rng rng(seed);
        for (auto& layer : out.grads.layers) {
            for (auto& v : layer.weight.values) v += sigma * rng.normal();
            for (auto& v : layer.bias.values) v += sigma * rng.normal();
        }
    }
    out.provenance.dp = DpParams{max_norm, sigma};
    return out;
}

SharedUpdate apply_mask(const SharedUpdate& update, const MaskSpec& mask) {
    if (mask.mode == MaskSpec::Mode::Fraction &&
        (mask.fraction <= 0.0 || mask.fraction > 1.0)) {
        throw std::invalid_argument("apply_mask: fraction must be in (0, 1]");
    }
    SharedUpdate out = update;
    RetainedIndices retained(update.grads.layers.size());
    for (std::size_t l = 0; l < update.grads.layers.size(); ++l) {
        const LayerTensors& t = update.grads.layers[l];
        if (!t.has_params()) continue;
        const std::size_t size = t.flat_size();
        std::size_t k;
        if (mask.mode == MaskSpec::Mode::Fraction) {
            k = static_cast<std::size_t>(std::ceil(mask.fraction * static_cast<double>(size)));
            k = std::min(k, size);
        } else {
            if (mask.count == 0 || mask.count > size) {
                throw std::invalid_argument("apply_mask: count " + std::to_string(mask.count) +
                                            " out of range for layer " + std::to_string(l) +
                                            " of size " + std::to_string(size));
            }
            k = mask.count;
        }
        Rng rng(mix_seed(mask.selection_seed, l));
        retained[l] = rng.sample_indices(size, k);
    }
    out.retained = std::move(retained);
    out.provenance.mask = mask;
    return out;
}

double grad_distance(const GradientSet& g_hat, const GradientSet& g_obs, DistanceKind kind,
                     std::span<const std::size_t> layer_subset,
                     const RetainedIndices* retained) {
    if (layer_subset.empty()) throw std::invalid_argument("grad_distance: empty layer subset");
    check_congruent(g_hat.layers, g_obs.layers, "grad_distance");
    if (kind == DistanceKind::L2) {
        double dist = 0.0;
        for_each_included(g_hat.layers, layer_subset, retained,
                          [&](std::size_t l, std::size_t i) {
                              const double d = flat_entry(g_hat.layers[l], i) -
                                               flat_entry(g_obs.layers[l], i);
                              dist += d * d;
                          });
        return dist;
    }
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for_each_included(g_hat.layers, layer_subset, retained, [&](std::size_t l, std::size_t i) {
        const double a = flat_entry(g_hat.layers[l], i);
        const double b = flat_entry(g_obs.layers[l], i);
        dot += a * b;
        na2 += a * a;
        nb2 += b * b;
    });
    if (na2 == 0.0 || nb2 == 0.0) {
        throw DegenerateGradientError("cosine distance over a zero-norm gradient vector");
    }
    return 1.0 - dot / (std::sqrt(na2) * std::sqrt(nb2));
}

DistanceGrad grad_of_grad_distance_soft(const ModelSpec& spec, const Params& params,
                                        const SharedUpdate& observed, const Tensor& dummy_x,
                                        std::span<const double> soft_label, DistanceKind kind,
                                        std::span<const std::size_t> layer_subset) {
    return analytic_soft_core(spec, params, observed, dummy_x, soft_label, kind, layer_subset,
                              nullptr);
}

DistanceGrad grad_of_grad_distance(const ModelSpec& spec, const Params& params,
                                   const SharedUpdate& observed, const Tensor& dummy_x,
                                   std::span<const double> dummy_label_logits,
                                   DistanceKind kind,
                                   std::span<const std::size_t> layer_subset,
                                   DerivBackend backend) {
    if (dummy_x.shape != spec.input_shape.dims()) {
        throw ShapeError("grad_of_grad_distance: dummy input shape " +
                         shape_to_string(dummy_x.shape) + " does not match model input " +
                         shape_to_string(spec.input_shape.dims()));
    }
    if (dummy_label_logits.size() != spec.num_classes) {
        throw ShapeError("grad_of_grad_distance: label logits length must equal num_classes");
    }

    if (backend == DerivBackend::Analytic) {
        const std::vector<double> q = softmax_probs(dummy_label_logits);
        std::vector<double> d_soft;
        DistanceGrad out = analytic_soft_core(spec, params, observed, dummy_x, q, kind,
                                              layer_subset, &d_soft);
        // Chain rule through q = softmax(u): du_j = q_j (dq_j - sum_c q_c dq_c).
        double weighted = 0.0;
        for (std::size_t c = 0; c < q.size(); ++c) weighted += q[c] * d_soft[c];
        out.d_label_logits.resize(q.size());
        for (std::size_t j = 0; j < q.size(); ++j) {
            out.d_label_logits[j] = q[j] * (d_soft[j] - weighted);
        }
        return out;
    }

    const auto eval = [&](const Tensor& xx, std::span<const double> uu) {
        const std::vector<double> q = softmax_probs(uu);
        GradientSet g = single_sample_soft_grads(spec, params, xx, q);
        return grad_distance(g, observed.grads, kind, layer_subset,
                             observed.retained ? &*observed.retained : nullptr);
    };

    DistanceGrad out;
    out.distance = eval(dummy_x, dummy_label_logits);
    out.d_input = Tensor::zeros(dummy_x.shape);
    Tensor xp = dummy_x;
    for (std::size_t i = 0; i < dummy_x.size(); ++i) {
        const double h = fd_step(dummy_x[i]);
        xp[i] = dummy_x[i] + h;
        const double f1 = eval(xp, dummy_label_logits);
        xp[i] = dummy_x[i] - h;
        const double f2 = eval(xp, dummy_label_logits);
        xp[i] = dummy_x[i];
        out.d_input[i] = (f1 - f2) / (2.0 * h);
    }
    std::vector<double> up(dummy_label_logits.begin(), dummy_label_logits.end());
    out.d_label_logits.resize(up.size());
    for (std::size_t j = 0; j < up.size(); ++j) {
        const double h = fd_step(up[j]);
        const double orig = up[j];
        up[j] = orig + h;
        const double f1 = eval(dummy_x, up);
        up[j] = orig - h;
        const double f2 = eval(dummy_x, up);
        up[j] = orig;
        out.d_label_logits[j] = (f1 - f2) / (2.0 * h);
    }
    return out;
}

namespace {

struct CeHead {
    std::size_t y;
};
struct SqHead {
    const Tensor* target;
};

template <typename S>
void accumulate_sample_grads(const ModelSpec& spec, std::span<const LayerTensorsT<S>> params,
                             const BasicTensor<S>& x, const CeHead& head,
                             std::vector<LayerTensorsT<S>>& accum) {
    nn::detail::run_backward<S>(spec, params, x, nn::detail::HardLabel{head.y}, &accum, false);
}

template <typename S>
void accumulate_sample_grads(const ModelSpec& spec, std::span<const LayerTensorsT<S>> params,
                             const BasicTensor<S>& x, const SqHead& head,
                             std::vector<LayerTensorsT<S>>& accum) {
    std::vector<S> t(head.target->values.begin(), head.target->values.end());
    nn::detail::run_backward<S>(spec, params, x, nn::detail::SquaredError<S>{{t.data(), t.size()}},
                                &accum, false);
}

template <typename Head>
JacobianMatrix jacobian_core(const ModelSpec& spec, const Params& params, const Tensor& x,
                             const Head& head, std::span<const std::size_t> layers,
                             DerivBackend backend) {
    if (x.shape != spec.input_shape.dims()) {
        throw ShapeError("input_gradient_jacobian: input shape mismatch");
    }
    std::size_t rows = 0;
    for (std::size_t l : layers) {
        if (l >= spec.layers.size()) {
            throw std::out_of_range("input_gradient_jacobian: layer index out of range");
        }
        if (!spec.layers[l].has_params()) {
            throw std::invalid_argument("input_gradient_jacobian: " +
                                        nn::layer_name(spec.layers[l], l) +
                                        " has no parameters");
        }
    }
    std::vector<LayerTensors> probe = nn::detail::zero_like_params<double>(spec);
    for (std::size_t l : layers) rows += probe[l].flat_size();

    JacobianMatrix jac;
    jac.layer = layers.size() == 1 ? layers[0] : spec.layers.size();
    jac.rows = rows;
    jac.cols = x.size();
    jac.values.assign(rows * x.size(), 0.0);

    if (backend == DerivBackend::Analytic) {
        auto dual_params = params_with_tangent(params, nullptr);
        for (std::size_t c = 0; c < x.size(); ++c) {
            BasicTensor<Dual> dual_x = tensor_to_dual(x);
            dual_x[c].d = 1.0;
            auto accum = nn::detail::zero_like_params<Dual>(spec);
            accumulate_sample_grads<Dual>(spec, {dual_params.data(), dual_params.size()},
                                          dual_x, head, accum);
            std::size_t r = 0;
            for (std::size_t l : layers) {
                for (std::size_t i = 0; i < accum[l].flat_size(); ++i, ++r) {
                    const Dual g = i < accum[l].weight.size()
                                       ? accum[l].weight[i]
                                       : accum[l].bias[i - accum[l].weight.size()];
                    jac.values[r * jac.cols + c] = tangent(g);
                }
            }
        }
        return jac;
    }

    Tensor xp = x;
    for (std::size_t c = 0; c < x.size(); ++c) {
        const double h = fd_step(x[c]);
        xp[c] = x[c] + h;
        auto gp = nn::detail::zero_like_params<double>(spec);
        accumulate_sample_grads<double>(spec, {params.layers.data(), params.layers.size()}, xp,
                                        head, gp);
        xp[c] = x[c] - h;
        auto gm = nn::detail::zero_like_params<double>(spec);
        accumulate_sample_grads<double>(spec, {params.layers.data(), params.layers.size()}, xp,
                                        head, gm);
        xp[c] = x[c];
        std::size_t r = 0;
        for (std::size_t l : layers) {
            for (std::size_t i = 0; i < gp[l].flat_size(); ++i, ++r) {
                const double a = flat_entry(gp[l], i);
                const double b = flat_entry(gm[l], i);
                jac.values[r * jac.cols + c] = (a - b) / (2.0 * h);
            }
        }
    }
    return jac;
}

}  // namespace

JacobianMatrix input_gradient_jacobian(const ModelSpec& spec, const Params& params,
                                       const Tensor& x, std::size_t y, std::size_t layer,
                                       DerivBackend backend) {
    const std::size_t layers[1] = {layer};
    return jacobian_core(spec, params, x, CeHead{y}, layers, backend);
}

JacobianMatrix input_gradient_jacobian_squared_error(const ModelSpec& spec,
                                                     const Params& params, const Tensor& x,
                                                     const Tensor& target, std::size_t layer,
                                                     DerivBackend backend) {
    const std::size_t layers[1] = {layer};
    return jacobian_core(spec, params, x, SqHead{&target}, layers, backend);
}

JacobianMatrix input_gradient_jacobian_stacked(const ModelSpec& spec, const Params& params,
                                               const Tensor& x, std::size_t y,
                                               std::span<const std::size_t> layers,
                                               DerivBackend backend) {
    return jacobian_core(spec, params, x, CeHead{y}, layers, backend);
}

std::vector<double> flat_layer_values(const GradientSet& grads, std::size_t layer,
                                      const RetainedIndices* retained) {
    if (layer >= grads.layers.size()) {
        throw std::out_of_range("flat_layer_values: layer index out of range");
    }
    const LayerTensors& t = grads.layers[layer];
    std::vector<double> out;
    if (retained) {
        out.reserve((*retained)[layer].size());
        for (std::size_t i : (*retained)[layer]) out.push_back(flat_entry(t, i));
    } else {
        out.reserve(t.flat_size());
        for (std::size_t i = 0; i < t.flat_size(); ++i) out.push_back(flat_entry(t, i));
    }
    return out;
}

double flat_l2_norm(const GradientSet& grads) {
    double sum = 0.0;
    for (const auto& layer : grads.layers) {
        for (double v : layer.weight.values) sum += v * v;
        for (double v : layer.bias.values) sum += v * v;
    }
    return std::sqrt(sum);
}

}  // namespace gradleak::engine
