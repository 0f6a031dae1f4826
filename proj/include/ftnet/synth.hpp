#pragma once

#include <cstdint>

#include "ftnet/data.hpp"

namespace ftnet {

// Procedural 10-class grayscale shape dataset: 5 shape families x 2 variants.
// The paired variants (e.g. filled disk / ring) support superclass splits
// where two label spaces share class names but zero image-generating classes.
struct SynthConfig {
    int image_size = 16;
    int per_class = 500;
    float contrast = 0.18f;    // foreground amplitude above background
    float noise = 0.05f;       // additive uniform pixel noise amplitude
    float speckle = 0.05f;     // probability of a distractor pixel
    std::uint64_t seed = 1;
};

Dataset make_shapes_dataset(const SynthConfig& cfg, const std::string& split_tag);

// Fixed split pair mirroring a RINet-A/B style construction over the shape
// classes: 4 superclasses each (3 shared names + 1 unique), zero component
// overlap. And a larger C split with 5 superclasses covering all classes.
SuperclassSplit shapes_split_a();
SuperclassSplit shapes_split_b();
SuperclassSplit shapes_split_c();

}  // namespace ftnet
