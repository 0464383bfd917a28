#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "refbridge/degrade.hpp"
#include "refbridge/flow.hpp"
#include "refbridge/image.hpp"
#include "refbridge/latent.hpp"
#include "refbridge/model.hpp"

namespace refbridge {

// Regular tiling with a clamp-inward last tile: corners step by
// (patch - overlap) from 0; when the next corner would overrun, the final
// tile is placed flush with the far edge instead. Every pixel is covered and
// no tile crosses the image border.
struct TilePlan {
    int patch = 0;
    int overlap = 0;
    int height = 0;
    int width = 0;
    std::vector<std::pair<int, int>> corners;  // (x, y), row-major over tiles

    std::size_t tile_count() const { return corners.size(); }
};

TilePlan plan_tiles(int height, int width, int patch, int overlap);

// Where one input tile looks in the reference frame: the per-patch mean of
// the input->reference displacement field, rounded to the nearest integer
// corner and clamped so the retrieved patch stays in bounds.
struct PatchCorrespondence {
    int x = 0, y = 0;          // input tile corner
    double dx = 0.0, dy = 0.0; // mean displacement over the tile
    int ax = 0, ay = 0;        // aligned (retrieval) corner in the reference
    bool clamped = false;      // aligned corner was pulled back in-bounds
};

// Mean of (u, v) over the p x p window at (x0, y0); accumulated in double.
std::pair<double, double> mean_displacement(const FlowField& flow, int x0, int y0, int p);

// flow maps input-grid positions to reference-grid displacements; the
// aligned corner is clamped to [0, ref_w - p] x [0, ref_h - p].
PatchCorrespondence correspond_patch(const FlowField& flow, int x, int y, int p,
                                     int ref_h, int ref_w);

// 1-D blending ramp of length p: weights rise linearly as (i+1)/(overlap+1)
// across the first `overlap` samples, mirror on the tail, and are 1 between.
// Two tiles meeting with this overlap sum to exactly 1 in the shared band.
std::vector<float> blend_weights(int p, int overlap);

// Weighted recombination of per-tile outputs into the full frame using the
// separable ramp above; per-pixel weight totals are renormalized so borders
// and clamp-inward tiles still average to 1.
ImageBuffer blend_tiles(const TilePlan& plan, const std::vector<ImageBuffer>& tiles);

struct RestoreOptions {
    int patch = 64;
    int overlap = 16;
    int steps = 6;
    std::uint64_t seed = 0;
    bool use_pcr = true;  // patch correspondence retrieval; off = co-located crops
    AblationWiring wiring;
    int flow_block = 16;
    int flow_search = 24;
    // Overrides for the two estimated fields (e.g. ground-truth flow in
    // controlled runs). fwd: reference -> input, bwd: input -> reference.
    std::optional<FlowField> flow_fwd;
    std::optional<FlowField> flow_bwd;
    int threads = 1;
};

// Reproducibility sidecar for one restoration run.
struct RestoreRecord {
    TilePlan plan;
    std::vector<PatchCorrespondence> tiles;
    std::uint64_t seed = 0;
    int steps = 0;
    bool use_pcr = false;

    std::string to_json() const;
};

// Full pipeline on one frame: degrade the reference to match the input's
// domain, estimate both flow fields against that degraded copy, then per
// tile retrieve the corresponding reference patch, build the conditioning
// under `opt.wiring`, integrate the bridge from a per-tile noise draw
// (sub-seeded from opt.seed by tile index), decode, and blend. Output values
// are left unclamped; clamping happens at file write.
ImageBuffer restore_image(const ImageBuffer& lq, const ImageBuffer& ref,
                          const Restorer& model, const LatentCodec& codec,
                          const DegradationConfig& ref_degradation,
                          const RestoreOptions& opt, RestoreRecord* record = nullptr);

}  // namespace refbridge
