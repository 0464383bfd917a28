#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "refbridge/flow.hpp"
#include "refbridge/image.hpp"

namespace refbridge {

// Fixed-order synthetic degradation: Gaussian blur, bilinear down/up
// resampling, additive Gaussian noise, 8x8 block mean-quantization. Every
// stage is deterministic given (input, config); the noise stream comes from
// the config seed alone.
struct DegradationConfig {
    double blur_sigma = 0.0;   // blur std in pixels; 0 disables
    int down_factor = 1;       // resample factor; 1 disables
    double noise_sigma = 0.0;  // additive noise std in [0,1] intensity units
    int block_quant = 0;       // quantization level 0 (off) .. 8; value grids
                               // nest as the level rises, so error never drops
    std::uint64_t seed = 0;

    void validate() const;  // ConfigError on out-of-range levels
    bool is_identity() const;
};

// identity | mild | livephoto | severe
DegradationConfig degradation_preset(const std::string& name);

// "blur=...,down=...,noise=...,quant=...,seed=..." — round-trips exactly
std::string format_degradation(const DegradationConfig& cfg);
DegradationConfig parse_degradation(const std::string& text);

ImageBuffer degrade(const ImageBuffer& img, const DegradationConfig& cfg);

// Both images through identical settings; per-image noise streams use
// sub_seed(cfg.seed, 0) for the first output and sub_seed(cfg.seed, 1) for
// the second, so the pair equals two documented independent degrade calls.
std::pair<ImageBuffer, ImageBuffer> degrade_pair(const ImageBuffer& key_photo,
                                                 const ImageBuffer& reselected_gt,
                                                 const DegradationConfig& cfg);

// One synthetic supervision unit: a clean target frame, a misaligned clean
// reference made by warping it, their degraded counterparts, and the analytic
// warp field. The recorded flow is oriented reference-grid -> target-grid
// (warp(clean, flow) == ref), which is the orientation the attention bias
// consumes.
struct TrainingPair {
    ImageBuffer clean;   // ground-truth target frame
    ImageBuffer ref;     // clean reference, synthetically misaligned
    ImageBuffer lq;      // degraded target
    ImageBuffer ref_lq;  // degraded reference
    FlowField gt_flow;
};

// Warp parameters scale with the temporal offset k: translation components
// multiply by k, rotation angle multiplies by k, zoom scale goes to
// 1 + k*(a-1). ConfigError when the scaled warp is out of the declared range
// (|shift| <= min(h,w)/2, |angle| <= pi/4, scale in [1/4, 4]).
TrainingPair make_training_pair(const ImageBuffer& frame, int k, WarpKind kind,
                                double a, double b, const DegradationConfig& cfg);

// Seeded procedural test texture: a mixture of incommensurate sinusoids with
// a low-frequency base, normalized into [0.05, 0.95]. Locally distinctive, so
// block matching on it is unambiguous.
ImageBuffer synth_texture(int h, int w, std::uint64_t seed);

// Dataset manifest: one sample per line, whitespace-separated
//   clean_path ref_path lq_path flow_path cfg
// with paths relative to the manifest file's directory and cfg in the
// format_degradation string form. '#' starts a comment line.
struct ManifestEntry {
    std::string clean, ref, lq, flow;
    DegradationConfig cfg;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);

// directory prefix of a manifest path ("" for bare filenames); join_path
// resolves an entry's relative path against it
std::string parent_dir(const std::string& path);
std::string join_path(const std::string& dir, const std::string& rel);

}  // namespace refbridge
