#pragma once

#include <string>
#include <vector>

#include "focta/tensor.hpp"

namespace focta {

// Labeled image set; images are HxWx1 grayscale in [0,1], stored rank-3.
struct Dataset {
    int height = 16;
    int width = 16;
    int channels = 1;
    int num_classes = 0;
    uint64_t seed = 0;
    std::vector<Tensor> images;
    std::vector<int> labels;

    size_t size() const { return images.size(); }
    // contiguous NHWC batch [first, first+count)
    Tensor batch(size_t first, size_t count) const;
};

// Procedural 16x16 grayscale shapes: disk, cross, bar, ring, square frame,
// triangle, x-cross, filled square, vertical bar, diamond. Class-balanced
// round-robin labels, randomized pose and mild pixel noise, fully
// determined by the seed. All canonical shapes are mirror symmetric, so a
// horizontal flip never changes the class.
Dataset generate_source(int n, int num_classes, uint64_t seed, int height = 16, int width = 16);

enum class CorruptionKind { none, gaussian_noise, impulse_noise, blur, contrast, brightness };

const char* corruption_name(CorruptionKind k);
CorruptionKind corruption_from_name(const std::string& s);

// Severity-parameterized corruption, clamped to [0,1], deterministic given
// the seed. Severity 0 is the identity for every kind; parameter tables
// are monotone in severity (see data.cpp).
Tensor corrupt(const Tensor& image, CorruptionKind kind, int severity, uint64_t seed);

enum class AugmentKind { jitter, pad_crop, affine, invert, hflip };

const char* augment_name(AugmentKind k);
AugmentKind augment_from_name(const std::string& s);

// Pure transforms used by augment() and by tests.
Tensor invert_image(const Tensor& image);
Tensor hflip_image(const Tensor& image);

// Label-preserving warm-up augmentation: recipe entries apply in order,
// invert/hflip with probability 1/2, the rest with random magnitude.
Tensor augment(const Tensor& image, const std::vector<AugmentKind>& recipe, uint64_t seed);

// Ordered corruption segments forming one continual stream. Labels travel
// with the samples but are consumed only by the evaluator.
struct StreamSegment {
    CorruptionKind kind = CorruptionKind::none;
    int severity = 5;
};

struct DomainStream {
    std::vector<StreamSegment> segments;
    int samples_per_segment = 256;
    uint64_t seed = 0;
};

// Materializes one segment: fresh clean samples (disjoint draw per
// segment) pushed through the segment's corruption.
Dataset realize_segment(const DomainStream& stream, int num_classes, int segment_index,
                        int height = 16, int width = 16);

// Dataset export/import: JSON header line + raw f32 image data + int32
// labels. The CLI can regenerate any dataset from the seed alone.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace focta
