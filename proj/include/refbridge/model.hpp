#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "refbridge/bridge.hpp"
#include "refbridge/flow.hpp"
#include "refbridge/image.hpp"
#include "refbridge/latent.hpp"
#include "refbridge/tensor.hpp"

namespace refbridge {

struct ModelConfig {
    int depth = 2;
    int d_model = 32;
    int heads = 2;
    int latent_channels = 48;  // 3*f*f from the codec
    int time_dim = 16;         // sinusoidal feature width, must be even
    int motion_hidden = 16;    // hidden channels of the motion encoder
    double t_horizon = 0.2;    // time window the embedding normalizes over

    void validate() const;  // ConfigError on inconsistent dims
};

// Joint attention over restoration tokens and (optionally) reference tokens:
//   Softmax(Q [K, K_ref + E]^T / sqrt(d)) [V, V_ref]
// with d the per-head width. All of Q/K/V are [n, d_model]; K_ref/V_ref are
// [m, d_model] and may be passed undefined (or with m == 0) to reduce the op
// to plain self-attention over [K, V]. E, when defined, is an [m, d_model]
// additive bias on the reference keys, applied at full width before the head
// split; E = 0 reproduces the unbiased form bit-for-bit.
Tensor cross_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const Tensor& k_ref, const Tensor& v_ref,
                       const Tensor& e, int heads);

// Per-block conditioning extracted from the reference branch.
using RefFeatures = std::vector<std::pair<Tensor, Tensor>>;  // (K_ref, V_ref)

// Dual-branch toy transformer predicting the bridge velocity field.
//
// Restoration branch: latent -> tokens (+ time embedding), then `depth`
// blocks of pre-norm residual sublayers (self-attention, joint attention with
// the reference features, feed-forward), a learned per-channel time gate
// x * (1 + g(t)) on the readout features — the target's mixing coefficients
// vary strongly across the time window, and a purely additive injection makes
// such gains needlessly slow to learn — then a zero-initialized projection
// back to latent shape so the initial prediction is exactly zero.
//
// Reference branch: mirrors the block topology (self-attention + feed-forward
// only), consumes the reference latent once per image — it is
// time-independent, so its features are computed once and reused across all
// sampler steps — and exposes per-block (K_ref, V_ref) projections.
//
// Motion encoder: conv2d(2 -> hidden) -> SiLU -> conv2d(hidden -> d_model)
// over the (u, v) planes of a token-grid flow field, with zero-initialized
// channel biases so a zero flow yields a zero embedding at initialization.
class Restorer {
public:
    Restorer(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // Trainable parameters in the fixed construction order the checkpoint
    // format serializes; names() parallels it for diagnostics.
    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<Tensor>& parameters() const { return params_; }
    const std::vector<std::string>& parameter_names() const { return names_; }
    std::size_t parameter_floats() const;

    // ref_latent [c, h, w] -> one (K_ref [n, d], V_ref [n, d]) pair per block
    RefFeatures reference_features(const Tensor& ref_latent) const;

    // flow on the latent token grid -> [n, d_model] embedding
    Tensor motion_encode(const FlowField& flow) const;

    // z_t [c, h, w], t in [0, t_horizon]; ref_feats may be empty (restoration
    // branch only) and motion undefined (no attention bias)
    Tensor predict_velocity(const Tensor& z_t, double t, const RefFeatures& ref_feats,
                            const Tensor& motion) const;

private:
    Tensor time_features(double t) const;
    Tensor time_embedding(double t) const;
    Tensor tokenize(const Tensor& latent, const Tensor& w, const Tensor& b) const;
    Tensor attention_sublayer(const Tensor& x, int base, const Tensor& k_ref,
                              const Tensor& v_ref, const Tensor& e) const;
    Tensor ffn_sublayer(const Tensor& x, int base) const;

    Tensor add_param(const std::string& name, std::vector<int> shape,
                     std::vector<float> data);

    ModelConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::string> names_;

    // indices into params_ for each role (kept explicit so the serialized
    // order is self-documenting)
    int in_w_, in_b_, time_w_, time_b_, gain_w_, gain_b_;
    std::vector<int> block_base_;      // restoration blocks, 12 tensors each
    int out_w_, out_b_;
    int ref_in_w_, ref_in_b_;
    std::vector<int> ref_block_base_;  // reference blocks, 8 tensors each
    std::vector<int> ref_proj_base_;   // per block (K_ref, V_ref) projections
    int mot_k1_, mot_b1_, mot_k2_, mot_b2_;
};

// Integrates the learned velocity field from t_horizon down to 0 starting at
// the biased mixture of z_ls and eps; conditioning is fixed across steps.
// Runs with gradient recording off.
Tensor restore_latent(const Restorer& model, const BridgeSchedule& sched,
                      const Tensor& z_ls, const Tensor& eps,
                      const RefFeatures& ref_feats, const Tensor& motion,
                      int steps = 6);

// How the reference conditioning is wired into the model. The default (all
// flags off) is the full path: reference branch + motion-biased joint
// attention. The warp_* alternatives pre-align the reference instead and
// drop the motion bias; at most one of them may be set.
struct AblationWiring {
    bool no_reference_branch = false;  // restoration branch only
    bool no_motion_bias = false;       // keep reference tokens, drop E
    bool warp_ref_image = false;       // warp reference pixels, then encode
    bool warp_ref_latent = false;      // encode, then warp the latent grid
    bool warp_ref_kv = false;          // warp each block's K/V token grids

    void validate() const;  // ConfigError if warp flags conflict
    bool any() const;
};

// Conditioning handed to predict_velocity: per-block reference features and
// the optional motion-bias embedding (undefined when dropped).
struct Conditioning {
    RefFeatures ref_feats;
    Tensor motion;
};

// Builds the conditioning for one reference image under a given wiring.
//   fwd_flow: reference-grid -> input-grid  (consumed by the motion bias)
//   bwd_flow: input-grid -> reference-grid  (consumed by the warp variants)
// Both live on the pixel grid and are downscaled to the token grid here.
// Warp variants drop the motion bias.
Conditioning apply_ablation(const Restorer& model, const LatentCodec& codec,
                            const AblationWiring& wiring, const ImageBuffer& ref,
                            const FlowField& fwd_flow, const FlowField& bwd_flow);

}  // namespace refbridge
