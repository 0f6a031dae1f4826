#include "ftnet/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "ftnet/common.hpp"

namespace ftnet {

namespace {

constexpr std::uint32_t kMagicLabels = 0x00000801;
constexpr std::uint32_t kMagicGray = 0x00000803;
constexpr std::uint32_t kMagicMulti = 0x00000804;

std::uint32_t read_u32be(std::istream& in, std::size_t& offset, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError(std::string("truncated while reading ") + what, offset);
    offset += 4;
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32be(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

void Dataset::validate() const {
    if (images.size() != labels.size())
        throw Error("dataset: image/label count mismatch");
    int k = num_classes();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k)
            throw Error("dataset: label " + std::to_string(labels[i]) +
                        " out of range at index " + std::to_string(i));
        for (float v : images[i].data)
            if (v < 0.0f || v > 1.0f)
                throw Error("dataset: pixel outside [0,1] at index " + std::to_string(i));
    }
}

std::vector<int> SuperclassSplit::all_components() const {
    std::vector<int> out;
    for (const auto& c : classes)
        out.insert(out.end(), c.component_ids.begin(), c.component_ids.end());
    std::sort(out.begin(), out.end());
    return out;
}

void SuperclassSplit::validate() const {
    auto comps = all_components();
    if (std::adjacent_find(comps.begin(), comps.end()) != comps.end())
        throw Error("split " + name + ": component ids overlap across superclasses");
}

Dataset load_dataset(const std::string& images_path, const std::string& labels_path,
                     std::vector<std::string> class_names, std::string split_tag) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw Error("cannot open " + images_path);
    std::size_t off = 0;
    std::uint32_t magic = read_u32be(imgs, off, "image magic");
    int channels = 1;
    if (magic == kMagicMulti) {
        // dims: count, channels, rows, cols
    } else if (magic != kMagicGray) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "bad image magic 0x%08x", magic);
        throw ParseError(buf, 0);
    }
    std::uint32_t count = read_u32be(imgs, off, "image count");
    if (magic == kMagicMulti) channels = static_cast<int>(read_u32be(imgs, off, "channels"));
    int rows = static_cast<int>(read_u32be(imgs, off, "rows"));
    int cols = static_cast<int>(read_u32be(imgs, off, "cols"));
    if (channels <= 0 || rows <= 0 || cols <= 0)
        throw ParseError("non-positive image dimension", off - 8);

    Dataset ds;
    ds.split_tag = std::move(split_tag);
    ds.images.reserve(count);
    std::size_t pix = static_cast<std::size_t>(channels) * rows * cols;
    std::vector<unsigned char> raw(pix);
    for (std::uint32_t i = 0; i < count; ++i) {
        imgs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pix));
        if (static_cast<std::size_t>(imgs.gcount()) != pix)
            throw ParseError("truncated image payload: expected " +
                                 std::to_string(count) + " images, failed at image " +
                                 std::to_string(i),
                             off);
        off += pix;
        Tensor t({channels, rows, cols});
        for (std::size_t j = 0; j < pix; ++j)
            t.data[j] = static_cast<float>(raw[j]) / 255.0f;
        ds.images.push_back(std::move(t));
    }

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw Error("cannot open " + labels_path);
    std::size_t loff = 0;
    std::uint32_t lmagic = read_u32be(labs, loff, "label magic");
    if (lmagic != kMagicLabels) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "bad label magic 0x%08x", lmagic);
        throw ParseError(buf, 0);
    }
    std::uint32_t lcount = read_u32be(labs, loff, "label count");
    if (lcount != count)
        throw ParseError("label count " + std::to_string(lcount) +
                             " does not match image count " + std::to_string(count),
                         loff);
    ds.labels.resize(lcount);
    int max_label = 0;
    for (std::uint32_t i = 0; i < lcount; ++i) {
        char c;
        labs.read(&c, 1);
        if (!labs) throw ParseError("truncated label payload", loff + i);
        ds.labels[i] = static_cast<unsigned char>(c);
        max_label = std::max(max_label, ds.labels[i]);
    }

    if (class_names.empty()) {
        for (int i = 0; i <= max_label; ++i)
            class_names.push_back("class" + std::to_string(i));
    }
    ds.class_names = std::move(class_names);
    ds.validate();
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& images_path,
                  const std::string& labels_path) {
    if (ds.images.empty()) throw Error("save_dataset: empty dataset");
    const auto& s = ds.images[0].shape;
    int channels = s[0], rows = s[1], cols = s[2];
    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw Error("cannot write " + images_path);
    if (channels == 1) {
        write_u32be(imgs, kMagicGray);
        write_u32be(imgs, static_cast<std::uint32_t>(ds.images.size()));
    } else {
        write_u32be(imgs, kMagicMulti);
        write_u32be(imgs, static_cast<std::uint32_t>(ds.images.size()));
        write_u32be(imgs, static_cast<std::uint32_t>(channels));
    }
    write_u32be(imgs, static_cast<std::uint32_t>(rows));
    write_u32be(imgs, static_cast<std::uint32_t>(cols));
    std::vector<unsigned char> raw;
    for (const auto& img : ds.images) {
        if (img.shape != s) throw Error("save_dataset: ragged image shapes");
        raw.resize(img.size());
        for (std::size_t j = 0; j < img.size(); ++j) {
            float v = std::clamp(img.data[j], 0.0f, 1.0f);
            raw[j] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
        imgs.write(reinterpret_cast<char*>(raw.data()),
                   static_cast<std::streamsize>(raw.size()));
    }

    std::ofstream labs(labels_path, std::ios::binary);
    if (!labs) throw Error("cannot write " + labels_path);
    write_u32be(labs, kMagicLabels);
    write_u32be(labs, static_cast<std::uint32_t>(ds.labels.size()));
    for (int l : ds.labels) {
        char c = static_cast<char>(l);
        labs.write(&c, 1);
    }
}

Dataset build_superclass_dataset(const Dataset& base, const SuperclassSplit& split) {
    split.validate();
    int base_k = base.num_classes();
    std::vector<int> relabel(static_cast<std::size_t>(base_k), -1);
    for (std::size_t k = 0; k < split.classes.size(); ++k) {
        for (int comp : split.classes[k].component_ids) {
            if (comp < 0 || comp >= base_k)
                throw Error("split " + split.name + ": unknown component id " +
                            std::to_string(comp));
            relabel[static_cast<std::size_t>(comp)] = static_cast<int>(k);
        }
    }
    Dataset out;
    out.split_tag = base.split_tag;
    for (const auto& c : split.classes) out.class_names.push_back(c.name);
    for (std::size_t i = 0; i < base.images.size(); ++i) {
        int nl = relabel[static_cast<std::size_t>(base.labels[i])];
        if (nl < 0) continue;
        out.images.push_back(base.images[i]);
        out.labels.push_back(nl);
    }
    return out;
}

bool verify_zero_overlap(const SuperclassSplit& a, const SuperclassSplit& b) {
    auto ca = a.all_components();
    auto cb = b.all_components();
    std::vector<int> inter;
    std::set_intersection(ca.begin(), ca.end(), cb.begin(), cb.end(),
                          std::back_inserter(inter));
    return inter.empty();
}

BalancedBinaryBatches::BalancedBinaryBatches(const Dataset& ds, int positive_class,
                                             int batch_size, std::uint64_t seed)
    : BalancedBinaryBatches(ds.labels, positive_class, batch_size, seed) {}

BalancedBinaryBatches::BalancedBinaryBatches(const std::vector<int>& labels,
                                             int positive_class, int batch_size,
                                             std::uint64_t seed)
    : batch_size_(batch_size), state_(splitmix64(seed ^ 0x5eedULL)) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0)
            continue;
        if (labels[i] == positive_class)
            pos_.push_back(static_cast<int>(i));
        else
            neg_.push_back(static_cast<int>(i));
    }
    if (pos_.empty())
        throw Error("balanced_binary_batches: class " + std::to_string(positive_class) +
                    " has no samples");
    if (neg_.empty())
        throw Error("balanced_binary_batches: no negative samples");
}

BalancedBinaryBatches::Batch BalancedBinaryBatches::next() {
    Batch b;
    b.indices.reserve(batch_size_);
    b.targets.reserve(batch_size_);
    for (int i = 0; i < batch_size_; ++i) {
        state_ = splitmix64(state_);
        bool positive = (state_ & 1u) != 0;
        state_ = splitmix64(state_);
        const auto& pool = positive ? pos_ : neg_;
        int idx = pool[state_ % pool.size()];
        b.indices.push_back(idx);
        b.targets.push_back(positive ? 1.0f : 0.0f);
    }
    return b;
}

}  // namespace ftnet
