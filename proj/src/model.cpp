#include "refbridge/model.hpp"

#include <cmath>
#include <stdexcept>

#include "refbridge/errors.hpp"
#include "refbridge/rng.hpp"

namespace refbridge {

void ModelConfig::validate() const {
    if (depth < 1) throw ConfigError("model: depth must be >= 1");
    if (d_model < 1 || heads < 1 || d_model % heads != 0)
        throw ConfigError("model: d_model " + std::to_string(d_model) +
                          " must be a positive multiple of heads " + std::to_string(heads));
    if (latent_channels < 1) throw ConfigError("model: latent_channels must be >= 1");
    if (time_dim < 2 || time_dim % 2 != 0)
        throw ConfigError("model: time_dim must be even and >= 2");
    if (motion_hidden < 1) throw ConfigError("model: motion_hidden must be >= 1");
    if (!(t_horizon > 0.0)) throw ConfigError("model: t_horizon must be positive");
}

Tensor cross_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const Tensor& k_ref, const Tensor& v_ref,
                       const Tensor& e, int heads) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
        throw ShapeError("cross_attention: q/k/v must be [tokens, width]");
    const int d_model = q.dim(1);
    if (k.dim(1) != d_model || v.dim(1) != d_model)
        throw ShapeError("cross_attention: width mismatch: q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
    if (k.dim(0) != v.dim(0))
        throw ShapeError("cross_attention: k rows " + std::to_string(k.dim(0)) + " != v rows " +
                         std::to_string(v.dim(0)));
    if (heads < 1 || d_model % heads != 0)
        throw ShapeError("cross_attention: width " + std::to_string(d_model) +
                         " not divisible into " + std::to_string(heads) + " heads");

    const bool has_ref = k_ref.defined() && k_ref.numel() > 0;
    if (has_ref) {
        if (k_ref.ndim() != 2 || k_ref.dim(1) != d_model || !v_ref.defined() ||
            v_ref.ndim() != 2 || v_ref.dim(0) != k_ref.dim(0) || v_ref.dim(1) != d_model)
            throw ShapeError("cross_attention: reference features must be [m, " +
                             std::to_string(d_model) + "] pairs");
    }
    if (e.defined() && e.numel() > 0) {
        if (!has_ref)
            throw ShapeError("cross_attention: motion bias given without reference features");
        if (e.shape() != k_ref.shape())
            throw ShapeError("cross_attention: motion bias " + shape_str(e.shape()) +
                             " vs reference keys " + shape_str(k_ref.shape()));
    }

    Tensor k_all = k, v_all = v;
    if (has_ref) {
        const Tensor kr = (e.defined() && e.numel() > 0) ? add(k_ref, e) : k_ref;
        k_all = concat(k, kr, 0);
        v_all = concat(v, v_ref, 0);
    }

    const int dh = d_model / heads;
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(dh));
    Tensor out;
    for (int h = 0; h < heads; ++h) {
        const Tensor qh = slice_cols(q, h * dh, dh);
        const Tensor kh = slice_cols(k_all, h * dh, dh);
        const Tensor vh = slice_cols(v_all, h * dh, dh);
        const Tensor weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_d));
        const Tensor oh = matmul(weights, vh);
        out = (h == 0) ? oh : concat(out, oh, 1);
    }
    return out;
}

Tensor Restorer::add_param(const std::string& name, std::vector<int> shape,
                           std::vector<float> data) {
    Tensor p = Tensor::param(std::move(shape), std::move(data));
    params_.push_back(p);
    names_.push_back(name);
    return p;
}

Restorer::Restorer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    auto uniform_init = [&rng](std::size_t n) {
        std::vector<float> v(n);
        for (auto& x : v) x = static_cast<float>(rng.uniform(-0.02, 0.02));
        return v;
    };
    auto zeros_init = [](std::size_t n) { return std::vector<float>(n, 0.0f); };
    const int d = cfg_.d_model, c = cfg_.latent_channels, td = cfg_.time_dim;
    const int hid = 4 * d;

    auto idx = [this](const std::string& name, std::vector<int> shape, std::vector<float> data) {
        add_param(name, std::move(shape), std::move(data));
        return static_cast<int>(params_.size()) - 1;
    };

    in_w_ = idx("in_proj.w", {c, d}, uniform_init(static_cast<std::size_t>(c) * d));
    in_b_ = idx("in_proj.b", {d}, zeros_init(d));
    time_w_ = idx("time_proj.w", {td, d}, uniform_init(static_cast<std::size_t>(td) * d));
    time_b_ = idx("time_proj.b", {d}, zeros_init(d));
    // zero so the gate starts as identity
    gain_w_ = idx("time_gain.w", {td, d}, zeros_init(static_cast<std::size_t>(td) * d));
    gain_b_ = idx("time_gain.b", {d}, zeros_init(d));

    for (int l = 0; l < cfg_.depth; ++l) {
        const std::string p = "block" + std::to_string(l) + ".";
        block_base_.push_back(static_cast<int>(params_.size()));
        for (const char* nm : {"self.q", "self.k", "self.v", "self.o",
                               "cross.q", "cross.k", "cross.v", "cross.o"})
            idx(p + nm, {d, d}, uniform_init(static_cast<std::size_t>(d) * d));
        idx(p + "ffn.w1", {d, hid}, uniform_init(static_cast<std::size_t>(d) * hid));
        idx(p + "ffn.b1", {hid}, zeros_init(hid));
        idx(p + "ffn.w2", {hid, d}, uniform_init(static_cast<std::size_t>(hid) * d));
        idx(p + "ffn.b2", {d}, zeros_init(d));
    }

    // zero so the untrained model predicts a zero velocity field
    out_w_ = idx("out_proj.w", {d, c}, zeros_init(static_cast<std::size_t>(d) * c));
    out_b_ = idx("out_proj.b", {c}, zeros_init(c));

    ref_in_w_ = idx("ref.in_proj.w", {c, d}, uniform_init(static_cast<std::size_t>(c) * d));
    ref_in_b_ = idx("ref.in_proj.b", {d}, zeros_init(d));
    for (int l = 0; l < cfg_.depth; ++l) {
        const std::string p = "ref.block" + std::to_string(l) + ".";
        ref_block_base_.push_back(static_cast<int>(params_.size()));
        for (const char* nm : {"self.q", "self.k", "self.v", "self.o"})
            idx(p + nm, {d, d}, uniform_init(static_cast<std::size_t>(d) * d));
        idx(p + "ffn.w1", {d, hid}, uniform_init(static_cast<std::size_t>(d) * hid));
        idx(p + "ffn.b1", {hid}, zeros_init(hid));
        idx(p + "ffn.w2", {hid, d}, uniform_init(static_cast<std::size_t>(hid) * d));
        idx(p + "ffn.b2", {d}, zeros_init(d));
    }
    for (int l = 0; l < cfg_.depth; ++l) {
        const std::string p = "ref.proj" + std::to_string(l) + ".";
        ref_proj_base_.push_back(static_cast<int>(params_.size()));
        idx(p + "k", {d, d}, uniform_init(static_cast<std::size_t>(d) * d));
        idx(p + "v", {d, d}, uniform_init(static_cast<std::size_t>(d) * d));
    }

    const int mh = cfg_.motion_hidden;
    mot_k1_ = idx("motion.conv1.k", {mh, 2, 3, 3}, uniform_init(static_cast<std::size_t>(mh) * 2 * 9));
    mot_b1_ = idx("motion.conv1.b", {mh}, zeros_init(mh));
    mot_k2_ = idx("motion.conv2.k", {d, mh, 3, 3}, uniform_init(static_cast<std::size_t>(d) * mh * 9));
    mot_b2_ = idx("motion.conv2.b", {d}, zeros_init(d));
}

std::size_t Restorer::parameter_floats() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

Tensor Restorer::time_features(double t) const {
    if (t < 0.0 || t > cfg_.t_horizon * (1.0 + 1e-12))
        throw std::out_of_range("predict_velocity: t=" + std::to_string(t) + " outside [0, " +
                                std::to_string(cfg_.t_horizon) + "]");
    const double s = t / cfg_.t_horizon;
    std::vector<float> raw(static_cast<std::size_t>(cfg_.time_dim));
    double freq = 1.0;
    for (int i = 0; i < cfg_.time_dim / 2; ++i, freq *= 2.0) {
        raw[2 * i] = static_cast<float>(std::sin(freq * s));
        raw[2 * i + 1] = static_cast<float>(std::cos(freq * s));
    }
    return Tensor::from_data({1, cfg_.time_dim}, std::move(raw));
}

Tensor Restorer::time_embedding(double t) const {
    Tensor proj = reshape(matmul(time_features(t), params_[time_w_]), {cfg_.d_model});
    return add(proj, params_[time_b_]);
}

Tensor Restorer::tokenize(const Tensor& latent, const Tensor& w, const Tensor& b) const {
    const int c = latent.dim(0);
    const int n = latent.dim(1) * latent.dim(2);
    Tensor tokens = transpose(reshape(latent, {c, n}));
    return add_row_bias(matmul(tokens, w), b);
}

Tensor Restorer::attention_sublayer(const Tensor& x, int base, const Tensor& k_ref,
                                    const Tensor& v_ref, const Tensor& e) const {
    const Tensor y = layer_norm(x);
    const Tensor q = matmul(y, params_[base]);
    const Tensor k = matmul(y, params_[base + 1]);
    const Tensor v = matmul(y, params_[base + 2]);
    const Tensor att = cross_attention(q, k, v, k_ref, v_ref, e, cfg_.heads);
    return add(x, matmul(att, params_[base + 3]));
}

Tensor Restorer::ffn_sublayer(const Tensor& x, int base) const {
    const Tensor y = layer_norm(x);
    const Tensor h = silu(add_row_bias(matmul(y, params_[base]), params_[base + 1]));
    return add(x, add_row_bias(matmul(h, params_[base + 2]), params_[base + 3]));
}

RefFeatures Restorer::reference_features(const Tensor& ref_latent) const {
    if (ref_latent.ndim() != 3 || ref_latent.dim(0) != cfg_.latent_channels)
        throw ShapeError("reference_features: latent must be [" +
                         std::to_string(cfg_.latent_channels) + ", h, w], got " +
                         shape_str(ref_latent.shape()));
    Tensor x = tokenize(ref_latent, params_[ref_in_w_], params_[ref_in_b_]);
    RefFeatures feats;
    feats.reserve(static_cast<std::size_t>(cfg_.depth));
    const Tensor none;
    for (int l = 0; l < cfg_.depth; ++l) {
        const int rb = ref_block_base_[static_cast<std::size_t>(l)];
        x = attention_sublayer(x, rb, none, none, none);
        x = ffn_sublayer(x, rb + 4);
        const int pp = ref_proj_base_[static_cast<std::size_t>(l)];
        feats.emplace_back(matmul(x, params_[pp]), matmul(x, params_[pp + 1]));
    }
    return feats;
}

Tensor Restorer::motion_encode(const FlowField& flow) const {
    if (flow.height < 1 || flow.width < 1)
        throw ShapeError("motion_encode: empty flow field");
    const int h = flow.height, w = flow.width;
    std::vector<float> planes(static_cast<std::size_t>(2) * h * w);
    std::copy(flow.u.begin(), flow.u.end(), planes.begin());
    std::copy(flow.v.begin(), flow.v.end(), planes.begin() + static_cast<std::ptrdiff_t>(h) * w);
    Tensor inp = Tensor::from_data({2, h, w}, std::move(planes));
    Tensor a = silu(add_channel_bias(conv2d(inp, params_[mot_k1_]), params_[mot_b1_]));
    Tensor b = add_channel_bias(conv2d(a, params_[mot_k2_]), params_[mot_b2_]);
    return transpose(reshape(b, {cfg_.d_model, h * w}));
}

Tensor Restorer::predict_velocity(const Tensor& z_t, double t, const RefFeatures& ref_feats,
                                  const Tensor& motion) const {
    if (z_t.ndim() != 3 || z_t.dim(0) != cfg_.latent_channels)
        throw ShapeError("predict_velocity: latent must be [" +
                         std::to_string(cfg_.latent_channels) + ", h, w], got " +
                         shape_str(z_t.shape()));
    if (!ref_feats.empty() && static_cast<int>(ref_feats.size()) != cfg_.depth)
        throw ShapeError("predict_velocity: expected " + std::to_string(cfg_.depth) +
                         " reference feature pairs, got " + std::to_string(ref_feats.size()));
    if (motion.defined() && motion.numel() > 0 && ref_feats.empty())
        throw ShapeError("predict_velocity: motion bias without reference features");

    const int lh = z_t.dim(1), lw = z_t.dim(2);
    Tensor x = tokenize(z_t, params_[in_w_], params_[in_b_]);
    x = add_row_bias(x, time_embedding(t));

    const Tensor none;
    for (int l = 0; l < cfg_.depth; ++l) {
        const int b = block_base_[static_cast<std::size_t>(l)];
        x = attention_sublayer(x, b, none, none, none);
        if (ref_feats.empty())
            x = attention_sublayer(x, b + 4, none, none, none);
        else
            x = attention_sublayer(x, b + 4, ref_feats[static_cast<std::size_t>(l)].first,
                                   ref_feats[static_cast<std::size_t>(l)].second, motion);
        x = ffn_sublayer(x, b + 8);
    }

    const Tensor g = add_row_bias(matmul(time_features(t), params_[gain_w_]), params_[gain_b_]);
    const Tensor ones = Tensor::from_data({lh * lw, 1}, std::vector<float>(
                                              static_cast<std::size_t>(lh) * lw, 1.0f));
    x = add(x, mul(x, matmul(ones, g)));

    Tensor y = add_row_bias(matmul(x, params_[out_w_]), params_[out_b_]);
    return reshape(transpose(y), {cfg_.latent_channels, lh, lw});
}

Tensor restore_latent(const Restorer& model, const BridgeSchedule& sched,
                      const Tensor& z_ls, const Tensor& eps,
                      const RefFeatures& ref_feats, const Tensor& motion, int steps) {
    NoGradGuard guard;
    auto field = [&](const Tensor& z, double t) {
        return model.predict_velocity(z, t, ref_feats, motion);
    };
    return sample_bridge(sched, field, z_ls, eps, steps);
}

void AblationWiring::validate() const {
    const int warps = static_cast<int>(warp_ref_image) + static_cast<int>(warp_ref_latent) +
                      static_cast<int>(warp_ref_kv);
    if (warps > 1)
        throw ConfigError("ablation: at most one warp_ref_* flag may be set");
}

bool AblationWiring::any() const {
    return no_reference_branch || no_motion_bias || warp_ref_image || warp_ref_latent ||
           warp_ref_kv;
}

Conditioning apply_ablation(const Restorer& model, const LatentCodec& codec,
                            const AblationWiring& wiring, const ImageBuffer& ref,
                            const FlowField& fwd_flow, const FlowField& bwd_flow) {
    wiring.validate();
    Conditioning cond;
    if (wiring.no_reference_branch) return cond;

    const int f = codec.factor;
    if (wiring.warp_ref_image) {
        cond.ref_feats = model.reference_features(codec.encode(warp(ref, bwd_flow)));
    } else if (wiring.warp_ref_latent) {
        cond.ref_feats =
            model.reference_features(warp(codec.encode(ref), downscale_flow(bwd_flow, f)));
    } else if (wiring.warp_ref_kv) {
        cond.ref_feats = model.reference_features(codec.encode(ref));
        const FlowField tok = downscale_flow(bwd_flow, f);
        const int d = model.config().d_model;
        const int n = tok.height * tok.width;
        auto warp_tokens = [&](const Tensor& tk) {
            return transpose(
                reshape(warp(reshape(transpose(tk), {d, tok.height, tok.width}), tok), {d, n}));
        };
        for (auto& kv : cond.ref_feats) {
            kv.first = warp_tokens(kv.first);
            kv.second = warp_tokens(kv.second);
        }
    } else {
        cond.ref_feats = model.reference_features(codec.encode(ref));
        if (!wiring.no_motion_bias)
            cond.motion = model.motion_encode(downscale_flow(fwd_flow, f));
    }
    return cond;
}

}  // namespace refbridge
