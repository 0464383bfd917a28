#pragma once

#include "refbridge/image.hpp"
#include "refbridge/tensor.hpp"

namespace refbridge {

// Image <-> latent transform: a space-to-depth rearrangement by factor f.
// Deterministic, linear, and exactly invertible, so pixel-space and
// latent-space mixes of the same images are interchangeable.
//
// Latent layout is [3*f*f, H/f, W/f]; channel index c = rgb*f*f + dy*f + dx
// holds the pixel at offset (dy, dx) inside each f x f cell.
struct LatentCodec {
    int factor = 4;

    explicit LatentCodec(int f = 4) : factor(f) {
        if (f < 1) throw ShapeError("LatentCodec: factor must be >= 1");
    }

    int channels() const { return 3 * factor * factor; }

    Tensor encode(const ImageBuffer& img) const;
    ImageBuffer decode(const Tensor& z) const;
};

}  // namespace refbridge
