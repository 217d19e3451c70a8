// Copyright (c) 2026, gradleak contributors
// SPDX-License-Identifier: Apache-2.0
//
// Model descriptions for the mini conv/FC classifiers: layer specs, shape
// inference, and the per-layer parameter / gradient containers.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradleak/tensor.hpp"

namespace gradleak::nn {

enum class LayerKind { Conv2d, MaxPool, FullyConnected, ReLU, SoftmaxOutput };

// Conv2d: stride 1, no padding. MaxPool: stride == window, trailing partial
// windows allowed (output extent = ceil(input / window)).
struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;
    std::size_t out_channels = 0;  // Conv2d
    std::size_t kernel_size = 0;   // Conv2d
    std::size_t window = 0;        // MaxPool
    std::size_t out_features = 0;  // FullyConnected / SoftmaxOutput

    static LayerSpec conv2d(std::size_t out_channels, std::size_t kernel_size) {
        LayerSpec s;
        s.kind = LayerKind::Conv2d;
        s.out_channels = out_channels;
        s.kernel_size = kernel_size;
        return s;
    }
    static LayerSpec maxpool(std::size_t window) {
        LayerSpec s;
        s.kind = LayerKind::MaxPool;
        s.window = window;
        return s;
    }
    static LayerSpec fully_connected(std::size_t out_features) {
        LayerSpec s;
        s.kind = LayerKind::FullyConnected;
        s.out_features = out_features;
        return s;
    }
    static LayerSpec relu() {
        LayerSpec s;
        s.kind = LayerKind::ReLU;
        return s;
    }
    static LayerSpec softmax_output(std::size_t num_classes) {
        LayerSpec s;
        s.kind = LayerKind::SoftmaxOutput;
        s.out_features = num_classes;
        return s;
    }

    bool has_params() const {
        return kind == LayerKind::Conv2d || kind == LayerKind::FullyConnected ||
               kind == LayerKind::SoftmaxOutput;
    }
};

struct Shape3 {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t numel() const { return channels * height * width; }
    std::vector<std::size_t> dims() const { return {channels, height, width}; }
    bool operator==(const Shape3&) const = default;
};

std::string layer_name(const LayerSpec& layer, std::size_t index);

struct ModelSpec {
    Shape3 input_shape;
    std::vector<LayerSpec> layers;
    std::size_t num_classes = 0;

    // Output shape of every layer; throws ShapeError naming the offending
    // layer when any shape is inconsistent.
    std::vector<Shape3> infer_shapes() const;

    void validate() const { (void)infer_shapes(); }

    // Indices of layers that carry parameters, in network order.
    std::vector<std::size_t> parameter_layers() const;

    std::size_t output_layer_index() const;
};

// Weight/bias pair for one layer; parameterless layers hold empty tensors.
template <typename S>
struct LayerTensorsT {
    BasicTensor<S> weight;
    BasicTensor<S> bias;

    bool has_params() const { return !weight.empty(); }
    std::size_t flat_size() const { return weight.size() + bias.size(); }
};

using LayerTensors = LayerTensorsT<double>;

struct Params {
    std::vector<LayerTensors> layers;
};

struct GradientSet {
    std::vector<LayerTensors> layers;
    std::size_t batch_size = 0;
    std::size_t epochs = 1;
};

// Shapes for the parameters of one layer given its input shape.
std::vector<std::size_t> weight_shape(const LayerSpec& layer, const Shape3& in);
std::vector<std::size_t> bias_shape(const LayerSpec& layer);

void check_congruent(const std::vector<LayerTensors>& a, const std::vector<LayerTensors>& b,
                     const char* context);

// Elementwise algebra over shape-congruent per-layer tensor sets.
GradientSet add(const GradientSet& a, const GradientSet& b);
GradientSet scale(const GradientSet& g, double factor);

// Named mini architectures. Known names: "lenet-mini"
// (C4(3)-P(2)-C8(3)-P(2)-F32-O) and "fc-mini" (F32-O), ReLU after every
// conv/FC layer, softmax classifier head last.
ModelSpec make_model(const std::string& name, Shape3 input_shape, std::size_t num_classes);

}  // namespace gradleak::nn
