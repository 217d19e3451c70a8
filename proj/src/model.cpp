// Copyright (c) 2026, gradleak contributors
// SPDX-License-Identifier: Apache-2.0

#include "gradleak/model.hpp"

#include <stdexcept>

namespace gradleak::nn {

std::string layer_name(const LayerSpec& layer, std::size_t index) {
    const char* kind = "?";
    switch (layer.kind) {
        case LayerKind::Conv2d: kind = "conv2d"; break;
        case LayerKind::MaxPool: kind = "maxpool"; break;
        case LayerKind::FullyConnected: kind = "fc"; break;
        case LayerKind::ReLU: kind = "relu"; break;
        case LayerKind::SoftmaxOutput: kind = "output"; break;
    }
    return "layer " + std::to_string(index) + " (" + kind + ")";
}

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

std::vector<Shape3> ModelSpec::infer_shapes() const {
    if (input_shape.channels == 0 || input_shape.height == 0 || input_shape.width == 0) {
        throw ShapeError("model input shape has a zero dimension");
    }
    if (layers.empty()) throw ShapeError("model has no layers");
    if (num_classes == 0) throw ShapeError("model num_classes must be positive");

    std::vector<Shape3> out;
    out.reserve(layers.size());
    Shape3 cur = input_shape;
    std::size_t softmax_count = 0;

    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& layer = layers[i];
        switch (layer.kind) {
            case LayerKind::Conv2d: {
                if (layer.out_channels == 0 || layer.kernel_size == 0) {
                    throw ShapeError(layer_name(layer, i) + ": sizes must be positive");
                }
                if (cur.height < layer.kernel_size || cur.width < layer.kernel_size) {
                    throw ShapeError(layer_name(layer, i) + ": kernel " +
                                     std::to_string(layer.kernel_size) + " exceeds input " +
                                     std::to_string(cur.height) + "x" + std::to_string(cur.width));
                }
                cur = {layer.out_channels, cur.height - layer.kernel_size + 1,
                       cur.width - layer.kernel_size + 1};
                break;
            }
            case LayerKind::MaxPool: {
                if (layer.window == 0) {
                    throw ShapeError(layer_name(layer, i) + ": window must be positive");
                }
                cur = {cur.channels, ceil_div(cur.height, layer.window),
                       ceil_div(cur.width, layer.window)};
                break;
            }
            case LayerKind::FullyConnected: {
                if (layer.out_features == 0) {
                    throw ShapeError(layer_name(layer, i) + ": out_features must be positive");
                }
                cur = {layer.out_features, 1, 1};
                break;
            }
            case LayerKind::ReLU:
                break;
            case LayerKind::SoftmaxOutput: {
                if (layer.out_features == 0) {
                    throw ShapeError(layer_name(layer, i) + ": num_classes must be positive");
                }
                ++softmax_count;
                if (i + 1 != layers.size()) {
                    throw ShapeError(layer_name(layer, i) + ": must be the last layer");
                }
                cur = {layer.out_features, 1, 1};
                break;
            }
        }
        out.push_back(cur);
    }

    if (softmax_count != 1) {
        throw ShapeError("model must contain exactly one softmax output layer, found " +
                         std::to_string(softmax_count));
    }
    if (out.back().numel() != num_classes) {
        throw ShapeError("output layer produces " + std::to_string(out.back().numel()) +
                         " logits, expected num_classes=" + std::to_string(num_classes));
    }
    return out;
}

std::vector<std::size_t> ModelSpec::parameter_layers() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].has_params()) idx.push_back(i);
    }
    return idx;
}

std::size_t ModelSpec::output_layer_index() const {
    if (layers.empty() || layers.back().kind != LayerKind::SoftmaxOutput) {
        throw ShapeError("model has no softmax output layer");
    }
    return layers.size() - 1;
}

std::vector<std::size_t> weight_shape(const LayerSpec& layer, const Shape3& in) {
    switch (layer.kind) {
        case LayerKind::Conv2d:
            return {layer.out_channels, in.channels, layer.kernel_size, layer.kernel_size};
        case LayerKind::FullyConnected:
        case LayerKind::SoftmaxOutput:
            return {layer.out_features, in.numel()};
        default:
            return {};
    }
}

std::vector<std::size_t> bias_shape(const LayerSpec& layer) {
    switch (layer.kind) {
        case LayerKind::Conv2d:
            return {layer.out_channels};
        case LayerKind::FullyConnected:
        case LayerKind::SoftmaxOutput:
            return {layer.out_features};
        default:
            return {};
    }
}

void check_congruent(const std::vector<LayerTensors>& a, const std::vector<LayerTensors>& b,
                     const char* context) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(context) + ": layer count mismatch (" +
                         std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!same_shape(a[i].weight.shape, b[i].weight.shape) ||
            !same_shape(a[i].bias.shape, b[i].bias.shape)) {
            throw ShapeError(std::string(context) + ": shape mismatch at layer " +
                             std::to_string(i) + ", " + shape_to_string(a[i].weight.shape) +
                             " vs " + shape_to_string(b[i].weight.shape));
        }
    }
}

GradientSet add(const GradientSet& a, const GradientSet& b) {
    check_congruent(a.layers, b.layers, "GradientSet add");
    GradientSet out = a;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        for (std::size_t i = 0; i < out.layers[l].weight.size(); ++i) {
            out.layers[l].weight[i] += b.layers[l].weight[i];
        }
        for (std::size_t i = 0; i < out.layers[l].bias.size(); ++i) {
            out.layers[l].bias[i] += b.layers[l].bias[i];
        }
    }
    return out;
}

GradientSet scale(const GradientSet& g, double factor) {
    GradientSet out = g;
    for (auto& layer : out.layers) {
        for (auto& v : layer.weight.values) v *= factor;
        for (auto& v : layer.bias.values) v *= factor;
    }
    return out;
}

ModelSpec make_model(const std::string& name, Shape3 input_shape, std::size_t num_classes) {
    ModelSpec spec;
    spec.input_shape = input_shape;
    spec.num_classes = num_classes;
    if (name == "lenet-mini") {
        spec.layers = {
            LayerSpec::conv2d(4, 3), LayerSpec::relu(),    LayerSpec::maxpool(2),
            LayerSpec::conv2d(8, 3), LayerSpec::relu(),    LayerSpec::maxpool(2),
            LayerSpec::fully_connected(32), LayerSpec::relu(),
            LayerSpec::softmax_output(num_classes),
        };
    } else if (name == "fc-mini") {
        spec.layers = {
            LayerSpec::fully_connected(32), LayerSpec::relu(),
            LayerSpec::softmax_output(num_classes),
        };
    } else {
        throw ConfigError("unknown model name '" + name + "'");
    }
    spec.validate();
    return spec;
}

}  // namespace gradleak::nn
