#include "refbridge/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "refbridge/errors.hpp"

namespace refbridge {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

Adam::Adam(std::vector<Tensor>& params, double lr, double beta1, double beta2, double eps)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
        m_.emplace_back(p.numel(), 0.0f);
        v_.emplace_back(p.numel(), 0.0f);
    }
}

void Adam::zero_grad() {
    for (auto& p : *params_) p.zero_grad();
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_->size(); ++p) {
        Tensor& param = (*params_)[p];
        auto& val = param.mutable_data();
        auto& m = m_[p];
        auto& v = v_[p];
        const auto& g = param.node()->grad;
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double gi = i < g.size() ? static_cast<double>(g[i]) : 0.0;
            const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
            const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double update = lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
            val[i] = static_cast<float>(static_cast<double>(val[i]) - update);
        }
    }
}

std::vector<TrainItem> load_training_items(const std::string& manifest_path,
                                           const LatentCodec& codec) {
    const auto entries = read_manifest(manifest_path);
    const std::string dir = parent_dir(manifest_path);
    std::vector<TrainItem> items;
    items.reserve(entries.size());
    for (const auto& e : entries) {
        TrainItem it;
        const ImageBuffer clean = read_image(join_path(dir, e.clean));
        const ImageBuffer lq = read_image(join_path(dir, e.lq));
        it.ref = read_image(join_path(dir, e.ref));
        it.fwd = read_flo(join_path(dir, e.flow));
        if (lq.height != clean.height || lq.width != clean.width)
            throw ShapeError("training sample " + e.clean + ": degraded extent " +
                             std::to_string(lq.width) + "x" + std::to_string(lq.height) +
                             " != clean " + std::to_string(clean.width) + "x" +
                             std::to_string(clean.height));
        if (it.fwd.height != it.ref.height || it.fwd.width != it.ref.width)
            throw ShapeError("training sample " + e.clean + ": flow extent " +
                             std::to_string(it.fwd.width) + "x" +
                             std::to_string(it.fwd.height) + " != reference " +
                             std::to_string(it.ref.width) + "x" +
                             std::to_string(it.ref.height));
        it.z_hs = codec.encode(clean);
        it.z_ls = codec.encode(lq);
        it.bwd = FlowField(it.fwd.height, it.fwd.width);
        for (std::size_t i = 0; i < it.fwd.u.size(); ++i) {
            it.bwd.u[i] = -it.fwd.u[i];
            it.bwd.v[i] = -it.fwd.v[i];
        }
        items.push_back(std::move(it));
    }
    return items;
}

Tensor bridge_loss(const Restorer& model, const BridgeSchedule& sched,
                   const LatentCodec& codec, const AblationWiring& wiring,
                   const std::vector<const TrainItem*>& batch, Rng& rng) {
    if (batch.empty()) throw ConfigError("bridge_loss: empty batch");
    Tensor total;
    for (const TrainItem* it : batch) {
        const double t = rng.uniform() * sched.t_max;
        const Tensor eps = sample_noise(it->z_hs.shape(), rng);
        const BridgeSample s = forward_sample(sched, it->z_hs, it->z_ls, t, eps);
        const Conditioning cond =
            apply_ablation(model, codec, wiring, it->ref, it->fwd, it->bwd);
        const Tensor pred = model.predict_velocity(s.z_t, t, cond.ref_feats, cond.motion);
        const Tensor item_loss = mse(pred, s.target_velocity);
        total = total.defined() ? add(total, item_loss) : item_loss;
    }
    return scale(total, 1.0f / static_cast<float>(batch.size()));
}

double validation_loss(const Restorer& model, const BridgeSchedule& sched,
                       const LatentCodec& codec, const AblationWiring& wiring,
                       const std::vector<TrainItem>& items, std::uint64_t seed) {
    if (items.empty()) throw ConfigError("validation_loss: empty sample list");
    NoGradGuard guard;
    Rng rng(sub_seed(seed, 3));
    double total = 0.0;
    for (const auto& it : items) {
        const double t = rng.uniform() * sched.t_max;
        const Tensor eps = sample_noise(it.z_hs.shape(), rng);
        const BridgeSample s = forward_sample(sched, it.z_hs, it.z_ls, t, eps);
        const Conditioning cond = apply_ablation(model, codec, wiring, it.ref, it.fwd, it.bwd);
        const Tensor pred = model.predict_velocity(s.z_t, t, cond.ref_feats, cond.motion);
        total += static_cast<double>(mse(pred, s.target_velocity).item());
    }
    return total / static_cast<double>(items.size());
}

TrainResult train(Restorer& model, const LatentCodec& codec, const TrainConfig& cfg,
                  const std::vector<TrainItem>& items) {
    cfg.wiring.validate();
    if (cfg.steps < 1) throw ConfigError("train: steps must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(cfg.lr > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (items.empty()) throw ConfigError("train: empty sample list");

    const std::size_t n_val = items.size() / 10;
    const std::size_t n_train = items.size() - n_val;
    const BridgeSchedule sched{model.config().t_horizon};

    Adam opt(model.parameters(), cfg.lr);
    Rng order_rng(sub_seed(cfg.seed, 1));
    Rng noise_rng(sub_seed(cfg.seed, 2));

    TrainResult res;
    res.loss_trace.reserve(static_cast<std::size_t>(cfg.steps));
    std::vector<const TrainItem*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int s = 0; s < cfg.steps; ++s) {
        batch.clear();
        for (int b = 0; b < cfg.batch_size; ++b) {
            auto i = static_cast<std::size_t>(order_rng.uniform() * static_cast<double>(n_train));
            batch.push_back(&items[std::min(i, n_train - 1)]);
        }
        opt.zero_grad();
        Tensor loss = bridge_loss(model, sched, codec, cfg.wiring, batch, noise_rng);
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv))
            throw NumericError("train: non-finite loss at step " + std::to_string(s));
        res.loss_trace.push_back(lv);
        loss.backward();
        opt.step();
    }

    if (n_val > 0) {
        const std::vector<TrainItem> val(items.end() - static_cast<std::ptrdiff_t>(n_val),
                                         items.end());
        res.val_loss = validation_loss(model, sched, codec, cfg.wiring, val, cfg.seed);
        res.val_count = static_cast<int>(n_val);
    }
    return res;
}

void save_checkpoint(const std::string& path, const Restorer& model, std::uint64_t seed,
                     long step) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    const ModelConfig& c = model.config();
    out << "refbridge-checkpoint v1\n";
    out << "depth " << c.depth << "\n";
    out << "d_model " << c.d_model << "\n";
    out << "heads " << c.heads << "\n";
    out << "latent_channels " << c.latent_channels << "\n";
    out << "time_dim " << c.time_dim << "\n";
    out << "motion_hidden " << c.motion_hidden << "\n";
    out << "t_horizon " << fmt_double(c.t_horizon) << "\n";
    out << "step " << step << "\n";
    out << "seed " << seed << "\n";
    out << "payload_floats " << model.parameter_floats() << "\n";
    out << "end\n";
    for (const auto& p : model.parameters()) {
        const auto& d = p.data();
        out.write(reinterpret_cast<const char*>(d.data()),
                  static_cast<std::streamsize>(d.size() * sizeof(float)));
    }
    if (!out) throw FormatError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "refbridge-checkpoint v1")
        throw FormatError(path + ": not a refbridge checkpoint");

    ModelConfig cfg;
    std::uint64_t seed = 0;
    long step = 0;
    std::size_t payload = 0;
    bool have_payload = false;
    while (std::getline(in, line)) {
        if (line == "end") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "depth") ls >> cfg.depth;
        else if (key == "d_model") ls >> cfg.d_model;
        else if (key == "heads") ls >> cfg.heads;
        else if (key == "latent_channels") ls >> cfg.latent_channels;
        else if (key == "time_dim") ls >> cfg.time_dim;
        else if (key == "motion_hidden") ls >> cfg.motion_hidden;
        else if (key == "t_horizon") ls >> cfg.t_horizon;
        else if (key == "step") ls >> step;
        else if (key == "seed") ls >> seed;
        else if (key == "payload_floats") { ls >> payload; have_payload = true; }
        else throw FormatError(path + ": unknown checkpoint field '" + key + "'");
        if (ls.fail()) throw FormatError(path + ": malformed field '" + key + "'");
    }
    if (line != "end") throw FormatError(path + ": truncated header");
    if (!have_payload) throw FormatError(path + ": missing payload_floats");
    cfg.validate();

    Checkpoint ck{Restorer(cfg, 0), seed, step};
    if (payload != ck.model.parameter_floats())
        throw FormatError(path + ": payload holds " + std::to_string(payload) +
                          " floats, model needs " +
                          std::to_string(ck.model.parameter_floats()));
    for (auto& p : ck.model.parameters()) {
        auto& d = p.mutable_data();
        in.read(reinterpret_cast<char*>(d.data()),
                static_cast<std::streamsize>(d.size() * sizeof(float)));
        if (in.gcount() != static_cast<std::streamsize>(d.size() * sizeof(float)))
            throw FormatError(path + ": truncated payload");
    }
    char extra;
    if (in.read(&extra, 1))
        throw FormatError(path + ": trailing bytes after payload");
    return ck;
}

void write_loss_trace(const std::string& path, const std::vector<double>& trace) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    for (std::size_t i = 0; i < trace.size(); ++i)
        out << i << " " << fmt_double(trace[i]) << "\n";
    if (!out) throw FormatError("short write to " + path);
}

}  // namespace refbridge
