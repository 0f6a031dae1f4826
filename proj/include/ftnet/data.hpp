#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ftnet/tensor.hpp"

namespace ftnet {

// Immutable labeled image set. Pixels live in [0,1]; labels in [0, num_classes).
struct Dataset {
    std::vector<Tensor> images;  // each C x H x W
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::string split_tag;  // "train" or "val"

    int num_classes() const { return static_cast<int>(class_names.size()); }
    std::size_t size() const { return images.size(); }
    void validate() const;  // pixel range, label range
};

struct Superclass {
    std::string name;
    std::vector<int> component_ids;  // base-class ids
};

struct SuperclassSplit {
    std::string name;
    std::vector<Superclass> classes;
    std::string shared_with;  // optional peer split name

    // all component ids of the split, sorted
    std::vector<int> all_components() const;
    void validate() const;  // pairwise disjoint components across superclasses
};

// IDX-style big-endian container.
// images: magic 0x803 dims (count,rows,cols), or 0x804 dims (count,channels,rows,cols)
// labels: magic 0x801 dim (count)
Dataset load_dataset(const std::string& images_path, const std::string& labels_path,
                     std::vector<std::string> class_names = {},
                     std::string split_tag = "train");
void save_dataset(const Dataset& ds, const std::string& images_path,
                  const std::string& labels_path);

// Relabels base images into superclass labels; images outside the split are
// dropped. Base image bytes are never modified.
Dataset build_superclass_dataset(const Dataset& base, const SuperclassSplit& split);

// True iff the component id sets of the two splits are disjoint. Hard gate
// before any zero-overlap transfer experiment.
bool verify_zero_overlap(const SuperclassSplit& a, const SuperclassSplit& b);

// Balanced positive/negative batch stream over one class, sampling the
// minority side with replacement. Deterministic under seed.
class BalancedBinaryBatches {
public:
    BalancedBinaryBatches(const Dataset& ds, int positive_class, int batch_size,
                          std::uint64_t seed);
    // Same stream over bare labels; index -1 marks samples excluded entirely.
    BalancedBinaryBatches(const std::vector<int>& labels, int positive_class,
                          int batch_size, std::uint64_t seed);

    struct Batch {
        std::vector<int> indices;   // into the dataset
        std::vector<float> targets; // 1.0 positive, 0.0 negative
    };
    Batch next();

private:
    std::vector<int> pos_, neg_;
    int batch_size_;
    std::uint64_t state_;
};

}  // namespace ftnet
