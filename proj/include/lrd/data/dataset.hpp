#pragma once

#include <string>
#include <vector>

#include "lrd/core/tensor.hpp"

namespace lrd {

constexpr int kLabelReal = 0;
constexpr int kLabelFake = 1;

struct LabeledImage {
    Tensor<float> pixels;  // (3,S,S) in [0,1]
    int label = kLabelReal;
    std::string family;  // empty for real images
    std::string name;
};

using Dataset = std::vector<LabeledImage>;

/// Stack dataset rows into one (N,3,S,S) batch of the model scalar type.
template <typename S>
Tensor<S> stack_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ValueError("stack_batch: empty batch");
    const Shape& img = data[indices[0]].pixels.shape();
    Tensor<S> out = Tensor<S>::zeros({static_cast<std::int64_t>(indices.size()), img[0], img[1], img[2]});
    const std::int64_t chw = img[0] * img[1] * img[2];
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensor<float>& px = data[indices[i]].pixels;
        if (px.shape() != img) throw ShapeError("stack_batch: inconsistent image shapes");
        for (std::int64_t j = 0; j < chw; ++j)
            out.data()[static_cast<std::int64_t>(i) * chw + j] = static_cast<S>(px.data()[j]);
    }
    return out;
}

inline std::vector<int> batch_labels(const Dataset& data, const std::vector<std::size_t>& indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(data[i].label);
    return out;
}

}  // namespace lrd
