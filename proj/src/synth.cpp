#include "ftnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ftnet/common.hpp"

namespace ftnet {

namespace {

// class layout: family*2 + variant
enum Family { kDisk = 0, kSquare, kPlus, kHStripe, kVStripe };

const char* kClassNames[10] = {
    "disk_fill", "disk_ring", "square_fill", "square_ring", "plus_thick",
    "plus_thin", "hstripe_wide", "hstripe_narrow", "vstripe_wide", "vstripe_narrow",
};

struct Rng {
    std::mt19937_64 gen;
    explicit Rng(std::uint64_t s) : gen(s) {}
    float uniform(float lo, float hi) {
        return std::uniform_real_distribution<float>(lo, hi)(gen);
    }
    int uniform_int(int lo, int hi) {  // inclusive
        return std::uniform_int_distribution<int>(lo, hi)(gen);
    }
};

void render(Tensor& img, int cls, Rng& rng, const SynthConfig& cfg) {
    int S = cfg.image_size;
    int family = cls / 2, variant = cls % 2;
    float bg = rng.uniform(0.05f, 0.25f);
    float fg = bg + cfg.contrast * rng.uniform(0.85f, 1.15f);
    for (auto& v : img.data) v = bg;

    auto px = [&](int y, int x) -> float& { return img.data[static_cast<std::size_t>(y * S + x)]; };

    if (family == kDisk) {
        float cx = S / 2.0f + rng.uniform(-2.5f, 2.5f);
        float cy = S / 2.0f + rng.uniform(-2.5f, 2.5f);
        float r = rng.uniform(3.0f, 5.0f);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                float d = std::hypot(x - cx, y - cy);
                bool on = variant == 0 ? d <= r : (d >= r - 1.3f && d <= r + 0.5f);
                if (on) px(y, x) = fg;
            }
    } else if (family == kSquare) {
        int half = rng.uniform_int(3, 5);
        int cx = S / 2 + rng.uniform_int(-2, 2);
        int cy = S / 2 + rng.uniform_int(-2, 2);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                int dy = std::abs(y - cy), dx = std::abs(x - cx);
                bool inside = dy <= half && dx <= half;
                bool border = inside && (dy >= half - 1 || dx >= half - 1);
                if (variant == 0 ? inside : border) px(y, x) = fg;
            }
    } else if (family == kPlus) {
        int arm = rng.uniform_int(4, 6);
        int thick = variant == 0 ? 2 : 1;
        int cx = S / 2 + rng.uniform_int(-2, 2);
        int cy = S / 2 + rng.uniform_int(-2, 2);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                int dy = std::abs(y - cy), dx = std::abs(x - cx);
                if ((dy < thick && dx <= arm) || (dx < thick && dy <= arm))
                    px(y, x) = fg;
            }
    } else {
        int thick = variant == 0 ? 3 : 1;
        int gap = variant == 0 ? 3 : 2;
        int period = thick + gap;
        int phase = rng.uniform_int(0, period - 1);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                int c = family == kHStripe ? y : x;
                if ((c + phase) % period < thick) px(y, x) = fg;
            }
    }

    for (auto& v : img.data) {
        if (cfg.speckle > 0.0f && rng.uniform(0.0f, 1.0f) < cfg.speckle)
            v = rng.uniform(0.0f, 1.0f);
        v += rng.uniform(-cfg.noise, cfg.noise);
        v = std::clamp(v, 0.0f, 1.0f);
        // snap to the u8 grid so IDX round-trips are bit-exact
        v = std::round(v * 255.0f) / 255.0f;
    }
}

}  // namespace

Dataset make_shapes_dataset(const SynthConfig& cfg, const std::string& split_tag) {
    Dataset ds;
    ds.split_tag = split_tag;
    for (const char* n : kClassNames) ds.class_names.emplace_back(n);
    std::uint64_t tag_salt = split_tag == "val" ? 0x9a1ULL : 0x7212ULL;
    for (int cls = 0; cls < 10; ++cls) {
        Rng rng(derive_seed(cfg.seed ^ tag_salt, "synth", static_cast<std::uint64_t>(cls)));
        for (int i = 0; i < cfg.per_class; ++i) {
            Tensor img({1, cfg.image_size, cfg.image_size});
            render(img, cls, rng, cfg);
            ds.images.push_back(std::move(img));
            ds.labels.push_back(cls);
        }
    }
    return ds;
}

SuperclassSplit shapes_split_a() {
    return SuperclassSplit{
        "shapes-A",
        {{"disk", {0}}, {"square", {2}}, {"plus", {4}}, {"hstripe", {6}}},
        "shapes-B"};
}

SuperclassSplit shapes_split_b() {
    return SuperclassSplit{
        "shapes-B",
        {{"disk", {1}}, {"square", {3}}, {"plus", {5}}, {"vstripe", {8}}},
        "shapes-A"};
}

SuperclassSplit shapes_split_c() {
    return SuperclassSplit{
        "shapes-C",
        {{"disk", {0, 1}}, {"square", {2, 3}}, {"plus", {4, 5}},
         {"hstripe", {6, 7}}, {"vstripe", {8, 9}}},
        ""};
}

}  // namespace ftnet
