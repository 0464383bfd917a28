#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refbridge/bridge.hpp"
#include "refbridge/degrade.hpp"
#include "refbridge/model.hpp"

namespace refbridge {

// Adam with bias correction. Gradients live on the parameter tensors; a
// parameter that did not participate in the last backward pass is treated as
// having a zero gradient (its moments still decay).
class Adam {
public:
    Adam(std::vector<Tensor>& params, double lr, double beta1 = 0.9,
         double beta2 = 0.999, double eps = 1e-8);

    void zero_grad();
    void step();

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    std::vector<Tensor>* params_;
    std::vector<std::vector<float>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

struct TrainConfig {
    int steps = 500;
    int batch_size = 8;
    double lr = 5e-5;
    std::uint64_t seed = 0;
    AblationWiring wiring;
    ModelConfig model;
};

// One manifest sample with everything the loss needs precomputed. The
// recorded flow maps reference-grid positions to input-grid displacements;
// its negation (exact for translations, first-order otherwise) serves as the
// input->reference field consumed by the warp wirings.
struct TrainItem {
    Tensor z_hs;     // clean latent
    Tensor z_ls;     // degraded latent
    ImageBuffer ref;
    FlowField fwd;
    FlowField bwd;
};

std::vector<TrainItem> load_training_items(const std::string& manifest_path,
                                           const LatentCodec& codec);

// Mean over the batch of || v_theta(z_t, t) - v_target ||^2 with one (t, eps)
// draw per item: t uniform on [0, t_max] first, then the noise, so a fixed
// rng state reproduces the batch exactly. Conditioning is rebuilt inside the
// loss so reference-branch gradients flow and reflect the current weights.
Tensor bridge_loss(const Restorer& model, const BridgeSchedule& sched,
                   const LatentCodec& codec, const AblationWiring& wiring,
                   const std::vector<const TrainItem*>& batch, Rng& rng);

// Mean loss over `items` with draws from a fresh Rng(sub_seed(seed, 3)):
// two models evaluated with the same seed and item list see identical
// (t, eps) pairs, making their losses directly comparable.
double validation_loss(const Restorer& model, const BridgeSchedule& sched,
                       const LatentCodec& codec, const AblationWiring& wiring,
                       const std::vector<TrainItem>& items, std::uint64_t seed);

struct TrainResult {
    std::vector<double> loss_trace;  // one entry per optimizer step
    double val_loss = 0.0;           // post-training, 0 when no validation split
    int val_count = 0;
};

// Runs the optimization loop on the leading 90% of `items`; the trailing
// n/10 samples form a fixed validation split. Throws NumericError naming the
// step if the loss goes non-finite.
TrainResult train(Restorer& model, const LatentCodec& codec, const TrainConfig& cfg,
                  const std::vector<TrainItem>& items);

// Text header (dims, step, seed, float count) followed by the raw
// little-endian float32 payload in parameter construction order.
void save_checkpoint(const std::string& path, const Restorer& model,
                     std::uint64_t seed, long step);

struct Checkpoint {
    Restorer model;
    std::uint64_t seed = 0;
    long step = 0;
};

Checkpoint load_checkpoint(const std::string& path);

void write_loss_trace(const std::string& path, const std::vector<double>& trace);

}  // namespace refbridge
