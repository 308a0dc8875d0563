#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace sfseg {

/// Thrown for invalid configuration values (bad dims, thresholds, schema violations).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown when tensor shapes or architectures are incompatible.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Geometry of the encoder-decoder segmentation network.
///
/// `levels` counts encoder stages; the deepest (latent) feature map is the
/// input downsampled by 2^(levels-1) along each spatial axis. `out_classes == 1`
/// selects a sigmoid head, larger values a per-class softmax head.
struct ArchSpec {
    int dims = 2;           // 2 or 3
    int levels = 5;         // >= 2
    int in_channels = 3;
    int out_classes = 1;
    int base_width = 64;    // channels at the first level, doubling per level
    int convs_per_block = 2;
    bool instance_norm = false;

    void validate() const {
        if (dims != 2 && dims != 3)
            throw ConfigError("arch.dims must be 2 or 3, got " + std::to_string(dims));
        if (levels < 2)
            throw ConfigError("arch.levels must be >= 2, got " + std::to_string(levels));
        if (in_channels < 1 || out_classes < 1 || base_width < 1 || convs_per_block < 1)
            throw ConfigError("arch channel/width fields must be positive");
    }

    int downsample_factor() const {
        int f = 1;
        for (int i = 1; i < levels; ++i) f *= 2;
        return f;
    }

    bool operator==(const ArchSpec&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ArchSpec, dims, levels, in_channels,
                                                out_classes, base_width, convs_per_block,
                                                instance_norm)

}  // namespace sfseg
