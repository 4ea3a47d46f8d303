#pragma once

// Dataset containers shared by the generators, editors and evaluation.

#include <string>
#include <vector>

#include "editlab/tensor.hpp"

namespace editlab {

struct LabeledDataset {
    std::vector<TensorPtr> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }
};

// One (x, x', y) editing example. x' differs from x only inside the
// generator's region mask; image_id/style_variant key the split policy.
struct EditTriple {
    TensorPtr x;
    TensorPtr x_prime;
    int y = 0;
    int style_variant = 0;
    int image_id = 0;
};

struct EditDataset {
    std::vector<EditTriple> train;
    std::vector<EditTriple> val;
    std::string provenance;  // free-form: generator seed, policy, style id

    // editing validation accuracy is measured on (x', y)
    LabeledDataset val_as_labeled() const {
        LabeledDataset d;
        d.images.reserve(val.size());
        d.labels.reserve(val.size());
        for (const auto& t : val) {
            d.images.push_back(t.x_prime);
            d.labels.push_back(t.y);
        }
        return d;
    }

    LabeledDataset train_as_labeled() const {
        LabeledDataset d;
        d.images.reserve(train.size());
        d.labels.reserve(train.size());
        for (const auto& t : train) {
            d.images.push_back(t.x_prime);
            d.labels.push_back(t.y);
        }
        return d;
    }
};

}  // namespace editlab
