#pragma once

#include <string>
#include <vector>

#include "refbridge/image.hpp"
#include "refbridge/tensor.hpp"

namespace refbridge {

// Dense displacement field on a pixel grid. u is the x-displacement, v the
// y-displacement, both in pixels. A field "from A to B" carries, at each
// A-grid position p, the offset to the matching content in B, so that
// B(p + flow(p)) ~= A's counterpart at p; warp() consumes fields with exactly
// this orientation.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<float> u, v;  // row-major, height*width each

    FlowField() = default;
    FlowField(int h, int w)
        : height(h), width(w),
          u(static_cast<std::size_t>(h) * w, 0.0f),
          v(static_cast<std::size_t>(h) * w, 0.0f) {}

    float& u_at(int y, int x) { return u[static_cast<std::size_t>(y) * width + x]; }
    float& v_at(int y, int x) { return v[static_cast<std::size_t>(y) * width + x]; }
    float u_at(int y, int x) const { return u[static_cast<std::size_t>(y) * width + x]; }
    float v_at(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }
};

// Exhaustive block matching on 8-bit integer luma. For every block of src the
// displacement (dx, dy) with |dx|,|dy| <= search minimizing the sum of
// absolute differences against dst is replicated to the block's pixels; only
// fully in-bounds candidate blocks compete. Ties break toward the smallest
// |dx|+|dy|, then the smallest dy, then the smallest dx, so identical inputs
// yield an exactly zero field. Block corners step by `block` and the final
// row/column clamps inward when extents are not multiples of the block size.
FlowField estimate_flow(const ImageBuffer& src, const ImageBuffer& dst,
                        int block = 16, int search = 24);

enum class WarpKind { translation, rotation, zoom };

WarpKind parse_warp_kind(const std::string& name);
std::string warp_kind_name(WarpKind kind);

// Analytic displacement fields used as ground-truth misalignments.
//   translation: (a, b) = (tx, ty), constant field.
//   rotation:    a = angle in radians about the image center.
//   zoom:        a = scale about the image center; displacement (s-1)*(p-c).
FlowField synthetic_flow(WarpKind kind, double a, double b, int h, int w);

// Backward warping: out(p) = img(p + flow(p)) with bilinear sampling and
// edge-clamped out-of-bounds reads.
ImageBuffer warp(const ImageBuffer& img, const FlowField& flow);

// Same semantics on a [c, h, w] tensor (used for latent- and token-grid
// warps); differentiable w.r.t. the grid values (the flow is data).
Tensor warp(const Tensor& grid, const FlowField& flow);

// f x f average pooling of u and v followed by division of the displacement
// values by f: the result lives on the coarse grid and is measured in coarse
// cells. Extents must be divisible by f.
FlowField downscale_flow(const FlowField& flow, int f);

// Middlebury .flo interchange: float magic 202021.25, little-endian int32
// width then height, then row-major interleaved float (u, v) pairs.
// Round-trips are bit-exact.
FlowField read_flo(const std::string& path);
void write_flo(const FlowField& flow, const std::string& path);

}  // namespace refbridge
