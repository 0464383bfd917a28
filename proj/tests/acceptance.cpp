// Acceptance gates for the full pipeline. Every check encodes an externally
// verifiable contract — a closed-form identity, a brute-force oracle, a
// bit-level reduction, or a measured ordering — plus a wall-clock budget.
// One [PASS]/[FAIL] line per check; the process exits nonzero on any failure.
//
// Check 9 loads the shipped converged checkpoint from $REFBRIDGE_FIXTURES
// (default: ./fixtures).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "refbridge/bridge.hpp"
#include "refbridge/degrade.hpp"
#include "refbridge/errors.hpp"
#include "refbridge/flow.hpp"
#include "refbridge/image.hpp"
#include "refbridge/latent.hpp"
#include "refbridge/metrics.hpp"
#include "refbridge/model.hpp"
#include "refbridge/rng.hpp"
#include "refbridge/tensor.hpp"
#include "refbridge/tiling.hpp"
#include "refbridge/train.hpp"

using namespace refbridge;

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::runtime_error(msg);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

Tensor rand_tensor(const std::vector<int>& shape, Rng& rng, double span = 1.0) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<float> data(n);
    for (auto& x : data) x = static_cast<float>((rng.uniform() * 2.0 - 1.0) * span);
    return Tensor::from_data(shape, std::move(data));
}

Tensor rand_param(const std::vector<int>& shape, Rng& rng, double span = 1.0) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<float> data(n);
    for (auto& x : data) x = static_cast<float>((rng.uniform() * 2.0 - 1.0) * span);
    return Tensor::param(shape, std::move(data));
}

ImageBuffer random_image(int h, int w, std::uint64_t seed) {
    ImageBuffer img(h, w);
    Rng rng(seed);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    return img;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

// Scratch directory under /tmp, removed on scope exit.
struct TmpDir {
    std::filesystem::path path;

    explicit TmpDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TmpDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

// ---------------------------------------------------------------------------
// 1. schedule identities and boundary values

void check_schedule() {
    const BridgeSchedule sched;
    for (int i = 0; i < 1000; ++i) {
        const double t = sched.t_max * i / 999.0;
        const auto c = sched.coefficients(t);
        require(std::abs(c.alpha + c.beta + c.sigma - 1.0) <= 1e-6,
                "coefficients do not sum to 1 at t=" + fmt(t));
        const auto d = sched.coefficient_derivatives(t);
        require(std::abs(d.alpha_dot + d.beta_dot + d.sigma_dot) <= 1e-6,
                "derivatives do not sum to 0 at t=" + fmt(t));
    }
    const auto c0 = sched.coefficients(0.0);
    require(c0.alpha == 1.0 && c0.beta == 0.0 && c0.sigma == 0.0,
            "start boundary is not exactly (1, 0, 0)");
    const auto c1 = sched.coefficients(sched.t_max);
    require(c1.alpha == 0.0 && c1.beta == 0.8 && c1.sigma == 0.2,
            "end boundary is not exactly (0, 0.8, 0.2)");
}

// ---------------------------------------------------------------------------
// 2. velocity target vs central differences of the forward map, shared noise

void check_velocity_target() {
    const BridgeSchedule sched;

    // double-precision scalar path: truncation vanishes (the mixture is
    // quadratic in t), so the comparison isolates the analytic derivative
    Rng rng(77);
    const double h = 1e-4;
    for (int i = 0; i < 100; ++i) {
        const double z_hs = rng.normal(), z_ls = rng.normal(), eps = rng.normal();
        const double t =
            std::clamp(rng.uniform(0.0, sched.t_max), h, sched.t_max - h);
        const double fd = (sched.mix_value(z_hs, z_ls, eps, t + h) -
                           sched.mix_value(z_hs, z_ls, eps, t - h)) /
                          (2.0 * h);
        const double an = sched.velocity_value(z_hs, z_ls, eps, t);
        require(std::abs(an - fd) <= 1e-5,
                "scalar velocity " + fmt(an) + " vs difference " + fmt(fd) +
                    " at t=" + fmt(t));
    }

    // tensor path: difference forward_sample itself on 1-element latents with
    // the same eps on both sides; a wide symmetric step keeps float32 storage
    // noise under the tolerance while staying exact for the quadratic mixture
    Rng trng(78);
    for (int i = 0; i < 100; ++i) {
        const Tensor zh = Tensor::scalar(static_cast<float>(trng.uniform(-2.0, 2.0)));
        const Tensor zl = Tensor::scalar(static_cast<float>(trng.uniform(-2.0, 2.0)));
        const Tensor ep = Tensor::scalar(static_cast<float>(trng.uniform(-2.0, 2.0)));
        const double t = trng.uniform(0.05, 0.15);
        const double hh = std::min(t, sched.t_max - t);
        const BridgeSample mid = forward_sample(sched, zh, zl, t, ep);
        const BridgeSample hi = forward_sample(sched, zh, zl, t + hh, ep);
        const BridgeSample lo = forward_sample(sched, zh, zl, t - hh, ep);
        const double fd = (static_cast<double>(hi.z_t.item()) - lo.z_t.item()) / (2.0 * hh);
        require(std::abs(mid.target_velocity.item() - fd) <= 1e-5,
                "tensor velocity " + fmt(mid.target_velocity.item()) +
                    " vs difference " + fmt(fd) + " at t=" + fmt(t));
    }
}

// ---------------------------------------------------------------------------
// 3. sampler: constant-field exactness, first-order convergence, 6 steps

void check_sampler() {
    const BridgeSchedule sched;
    Rng rng(5);
    const std::vector<int> shape{3, 4, 4};
    const Tensor z_ls = rand_tensor(shape, rng);
    const Tensor eps = rand_tensor(shape, rng);

    const float c = 0.7f;
    auto vconst = [&](const Tensor&, double) { return Tensor::full(shape, c); };
    const Tensor out = sample_bridge(sched, vconst, z_ls, eps, 6);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double want = 0.8 * z_ls.at(i) + 0.2 * eps.at(i) - sched.t_max * c;
        require(std::abs(out.at(i) - want) <= 1e-6,
                "constant field not integrated exactly at element " + std::to_string(i));
    }

    const Tensor dflt = sample_bridge(sched, vconst, z_ls, eps);
    require(bits_equal(dflt, out), "default step count is not 6");

    // z-independent field affine in t: the end-state quadrature error of
    // explicit Euler is exactly A*t_max^2/(2n), so halving the step size
    // halves it
    const double A = 1.3, B = -0.4;
    auto vaff = [&](const Tensor&, double t) {
        return Tensor::full(shape, static_cast<float>(A * t + B));
    };
    auto max_err = [&](int steps) {
        const Tensor z = sample_bridge(sched, vaff, z_ls, eps, steps);
        double worst = 0.0;
        for (std::size_t i = 0; i < z.numel(); ++i) {
            const double want = 0.8 * z_ls.at(i) + 0.2 * eps.at(i) -
                                (A * sched.t_max * sched.t_max / 2.0 + B * sched.t_max);
            worst = std::max(worst, std::abs(z.at(i) - want));
        }
        return worst;
    };
    const double e6 = max_err(6), e12 = max_err(12);
    const double ratio = e6 / e12;
    require(ratio >= 1.7 && ratio <= 2.3,
            "error ratio " + fmt(ratio) + " outside [1.7, 2.3] (e6=" + fmt(e6) +
                ", e12=" + fmt(e12) + ")");
}

// ---------------------------------------------------------------------------
// 4. attention reductions: zero bias and empty reference, bit-for-bit

void check_attention_reductions() {
    Rng rng(31);
    const int n = 6, d = 8, m = 3, heads = 2;
    const Tensor q = rand_tensor({n, d}, rng);
    const Tensor k = rand_tensor({n, d}, rng);
    const Tensor v = rand_tensor({n, d}, rng);
    const Tensor kr = rand_tensor({m, d}, rng);
    const Tensor vr = rand_tensor({m, d}, rng);

    const Tensor biased = cross_attention(q, k, v, kr, vr, Tensor::zeros({m, d}), heads);
    const Tensor unbiased = cross_attention(q, k, v, kr, vr, Tensor(), heads);
    require(bits_equal(biased, unbiased),
            "zero bias does not reproduce the unbiased joint attention bit-for-bit");

    const Tensor joint = cross_attention(q, k, v, Tensor(), Tensor(), Tensor(), heads);
    // self-attention assembled from the same primitives, head by head
    const int dh = d / heads;
    Tensor self;
    for (int h = 0; h < heads; ++h) {
        const Tensor qh = slice_cols(q, h * dh, dh);
        const Tensor kh = slice_cols(k, h * dh, dh);
        const Tensor vh = slice_cols(v, h * dh, dh);
        const Tensor w = softmax_rows(
            scale(matmul(qh, transpose(kh)), 1.0f / std::sqrt(static_cast<float>(dh))));
        const Tensor oh = matmul(w, vh);
        self = (h == 0) ? oh : concat(self, oh, 1);
    }
    require(bits_equal(joint, self),
            "empty reference does not reduce to plain self-attention bit-for-bit");

    const Tensor empty = Tensor::zeros({0, d});
    require(bits_equal(joint, cross_attention(q, k, v, empty, empty, Tensor(), heads)),
            "zero-row reference tensors do not behave like no reference");
}

// ---------------------------------------------------------------------------
// 5. finite differences: every op and the full model, three seeds

// Max relative error between analytic gradients and central differences on
// every input element, probed through a fixed random weighting.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& op,
                  std::vector<Tensor> inputs, std::uint64_t probe_seed,
                  double h = 2e-3) {
    Tensor out = op(inputs);
    std::vector<float> w(out.numel());
    {
        Rng rng(probe_seed);
        for (auto& x : w) x = static_cast<float>(rng.uniform() * 2.0 - 1.0);
    }
    auto probe = [&](const Tensor& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i)
            s += static_cast<double>(w[i]) * static_cast<double>(y.at(i));
        return s;
    };
    {
        Tensor loss = sum(mul(out, Tensor::from_data(out.shape(), w)));
        loss.backward();
    }

    double worst = 0.0;
    for (auto& in : inputs) {
        const auto& g = in.grad();
        for (std::size_t i = 0; i < in.numel(); ++i) {
            auto& data = in.mutable_data();
            const float keep = data[i];
            double fd;
            {
                NoGradGuard guard;
                data[i] = static_cast<float>(keep + h);
                const double hi = probe(op(inputs));
                data[i] = static_cast<float>(keep - h);
                const double lo = probe(op(inputs));
                data[i] = keep;
                fd = (hi - lo) / (2.0 * h);
            }
            const double a = static_cast<double>(g[i]);
            const double err =
                std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

FlowField rand_flow(int h, int w, std::uint64_t seed) {
    FlowField f(h, w);
    Rng rng(seed);
    for (auto& u : f.u) u = static_cast<float>(rng.uniform(-1.5, 1.5));
    for (auto& v : f.v) v = static_cast<float>(rng.uniform(-1.5, 1.5));
    return f;
}

void check_gradients() {
    for (std::uint64_t seed : {101ull, 202ull, 303ull}) {
        Rng rng(seed);
        const double tol = 1e-4;
        auto ck = [&](double worst, const char* op) {
            require(worst < tol, std::string(op) + " gradient error " + fmt(worst) +
                                     " (seed " + std::to_string(seed) + ")");
        };

        ck(grad_check([](const std::vector<Tensor>& v) { return add(v[0], v[1]); },
                      {rand_param({3, 4}, rng), rand_param({3, 4}, rng)}, seed),
           "add");
        ck(grad_check([](const std::vector<Tensor>& v) { return sub(v[0], v[1]); },
                      {rand_param({3, 4}, rng), rand_param({3, 4}, rng)}, seed),
           "sub");
        ck(grad_check([](const std::vector<Tensor>& v) { return mul(v[0], v[1]); },
                      {rand_param({3, 4}, rng), rand_param({3, 4}, rng)}, seed),
           "mul");
        ck(grad_check([](const std::vector<Tensor>& v) { return scale(v[0], -1.7f); },
                      {rand_param({3, 4}, rng)}, seed),
           "scale");
        // linear / bilinear ops take a larger step: central differences are
        // exact for them and the bigger h dilutes float32 forward noise
        ck(grad_check([](const std::vector<Tensor>& v) { return matmul(v[0], v[1]); },
                      {rand_param({3, 4}, rng), rand_param({4, 2}, rng)}, seed, 1e-2),
           "matmul");
        ck(grad_check([](const std::vector<Tensor>& v) { return transpose(v[0]); },
                      {rand_param({3, 5}, rng)}, seed),
           "transpose");
        ck(grad_check([](const std::vector<Tensor>& v) { return softmax_rows(v[0]); },
                      {rand_param({3, 5}, rng, 2.0)}, seed),
           "softmax_rows");
        ck(grad_check([](const std::vector<Tensor>& v) { return conv2d(v[0], v[1]); },
                      {rand_param({2, 4, 4}, rng), rand_param({3, 2, 3, 3}, rng)}, seed,
                      1e-2),
           "conv2d");
        ck(grad_check([](const std::vector<Tensor>& v) { return silu(v[0]); },
                      {rand_param({3, 4}, rng, 2.0)}, seed),
           "silu");
        ck(grad_check([](const std::vector<Tensor>& v) { return layer_norm(v[0]); },
                      {rand_param({3, 6}, rng, 2.0)}, seed),
           "layer_norm");
        ck(grad_check([](const std::vector<Tensor>& v) { return concat(v[0], v[1], 0); },
                      {rand_param({2, 3}, rng), rand_param({4, 3}, rng)}, seed),
           "concat axis 0");
        ck(grad_check([](const std::vector<Tensor>& v) { return concat(v[0], v[1], 1); },
                      {rand_param({3, 2}, rng), rand_param({3, 4}, rng)}, seed),
           "concat axis 1");
        ck(grad_check([](const std::vector<Tensor>& v) { return mse(v[0], v[1]); },
                      {rand_param({3, 4}, rng), rand_param({3, 4}, rng)}, seed),
           "mse");
        ck(grad_check([](const std::vector<Tensor>& v) { return sum(v[0]); },
                      {rand_param({3, 4}, rng)}, seed),
           "sum");
        ck(grad_check(
               [](const std::vector<Tensor>& v) { return add_row_bias(v[0], v[1]); },
               {rand_param({3, 4}, rng), rand_param({4}, rng)}, seed),
           "add_row_bias");
        ck(grad_check(
               [](const std::vector<Tensor>& v) { return add_channel_bias(v[0], v[1]); },
               {rand_param({3, 2, 2}, rng), rand_param({3}, rng)}, seed),
           "add_channel_bias");
        ck(grad_check([](const std::vector<Tensor>& v) { return slice_cols(v[0], 1, 3); },
                      {rand_param({3, 5}, rng)}, seed),
           "slice_cols");
        ck(grad_check([](const std::vector<Tensor>& v) { return reshape(v[0], {6, 2}); },
                      {rand_param({3, 4}, rng)}, seed),
           "reshape");
    }

    // full model: randomize parameters away from the zero-initialized output
    // projection so every path contributes a nonzero gradient
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.latent_channels = 12;
    cfg.time_dim = 8;
    cfg.motion_hidden = 6;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        Restorer model(cfg, seed);
        Rng prng(seed ^ 0x5117);
        for (auto& p : model.parameters())
            for (auto& x : p.mutable_data())
                x = static_cast<float>((prng.uniform() * 2.0 - 1.0) * 0.1);

        Rng rng(seed + 10);
        const Tensor z = rand_tensor({12, 4, 4}, rng);
        const Tensor ref = rand_tensor({12, 4, 4}, rng);
        const FlowField flow = rand_flow(4, 4, seed + 20);
        std::vector<float> pw(z.numel());
        for (auto& x : pw) x = static_cast<float>(rng.uniform() * 2.0 - 1.0);

        auto forward = [&]() {
            const RefFeatures feats = model.reference_features(ref);
            const Tensor motion = model.motion_encode(flow);
            return model.predict_velocity(z, 0.07, feats, motion);
        };
        auto probe = [&](const Tensor& y) {
            double s = 0.0;
            for (std::size_t i = 0; i < y.numel(); ++i)
                s += static_cast<double>(pw[i]) * y.at(i);
            return s;
        };

        for (auto& p : model.parameters()) p.zero_grad();
        {
            const Tensor y = forward();
            Tensor loss = sum(mul(y, Tensor::from_data(y.shape(), pw)));
            loss.backward();
        }

        const double h = 5e-4;
        double worst = 0.0;
        Rng pick(seed + 30);
        for (auto& p : model.parameters()) {
            const int probes = p.numel() < 4 ? static_cast<int>(p.numel()) : 4;
            for (int r = 0; r < probes; ++r) {
                const auto i = static_cast<std::size_t>(
                    pick.uniform() * static_cast<double>(p.numel()));
                auto& data = p.mutable_data();
                const float keep = data[i];
                double hi, lo;
                {
                    NoGradGuard guard;
                    data[i] = static_cast<float>(keep + h);
                    hi = probe(forward());
                    data[i] = static_cast<float>(keep - h);
                    lo = probe(forward());
                    data[i] = keep;
                }
                const double fd = (hi - lo) / (2.0 * h);
                const double a = static_cast<double>(p.grad()[i]);
                worst = std::max(
                    worst, std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}));
            }
        }
        require(worst < 1e-3, "full-model gradient error " + fmt(worst) + " (seed " +
                                  std::to_string(seed) + ")");
    }
}

// ---------------------------------------------------------------------------
// 6. patch retrieval on seeded integer-translation pairs

void check_patch_retrieval() {
    int tiles_checked = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed * 17 + 3);
        const int dx = static_cast<int>(std::lround(rng.uniform(-6.0, 6.0)));
        const int dy = static_cast<int>(std::lround(rng.uniform(-6.0, 6.0)));

        // two crops of one larger texture: a genuinely shifted pair with
        // fully valid content on both sides
        const int margin = 8, n = 96;
        const ImageBuffer big = synth_texture(n + 2 * margin, n + 2 * margin, seed);
        const ImageBuffer input = crop(big, margin, margin, n, n);
        const ImageBuffer ref = crop(big, margin + dx, margin + dy, n, n);
        require(ref.at(margin, margin, 1) == input.at(margin + dy, margin + dx, 1),
                "pair construction is not a pure translation");

        // input -> reference displacement of a global translation
        FlowField bwd(n, n);
        for (auto& u : bwd.u) u = static_cast<float>(-dx);
        for (auto& v : bwd.v) v = static_cast<float>(-dy);

        const int p = 32;
        const TilePlan plan = plan_tiles(n, n, p, 8);
        for (const auto& [x, y] : plan.corners) {
            const PatchCorrespondence pc = correspond_patch(bwd, x, y, p, n, n);

            double su = 0.0, sv = 0.0;
            for (int yy = y; yy < y + p; ++yy)
                for (int xx = x; xx < x + p; ++xx) {
                    su += bwd.u_at(yy, xx);
                    sv += bwd.v_at(yy, xx);
                }
            require(std::abs(pc.dx - su / (p * p)) <= 1e-5 &&
                        std::abs(pc.dy - sv / (p * p)) <= 1e-5,
                    "mean displacement deviates from the direct summation");

            if (pc.clamped) continue;
            const ImageBuffer got = crop(ref, pc.ax, pc.ay, p, p);
            const ImageBuffer want = crop(input, x, y, p, p);
            require(std::memcmp(got.pixels.data(), want.pixels.data(),
                                got.pixels.size() * sizeof(float)) == 0,
                    "retrieved patch is not bit-identical to the shifted crop (seed " +
                        std::to_string(seed) + ", tile " + std::to_string(x) + "," +
                        std::to_string(y) + ")");
            ++tiles_checked;
        }
    }
    require(tiles_checked >= 100, "too few unclamped tiles exercised: " +
                                      std::to_string(tiles_checked));

    // fractional fields: mean_displacement against a double-precision sum
    for (std::uint64_t seed = 40; seed < 45; ++seed) {
        FlowField f(64, 64);
        Rng rng(seed);
        for (auto& u : f.u) u = static_cast<float>(rng.uniform(-3.0, 3.0));
        for (auto& v : f.v) v = static_cast<float>(rng.uniform(-3.0, 3.0));
        for (int trial = 0; trial < 10; ++trial) {
            const int p = 8 + 4 * (trial % 3);
            const int x0 = static_cast<int>(rng.uniform(0.0, 64.0 - p));
            const int y0 = static_cast<int>(rng.uniform(0.0, 64.0 - p));
            const auto [mu, mv] = mean_displacement(f, x0, y0, p);
            double su = 0.0, sv = 0.0;
            for (int y = y0; y < y0 + p; ++y)
                for (int x = x0; x < x0 + p; ++x) {
                    su += f.u_at(y, x);
                    sv += f.v_at(y, x);
                }
            require(std::abs(mu - su / (p * p)) <= 1e-5 &&
                        std::abs(mv - sv / (p * p)) <= 1e-5,
                    "mean displacement deviates on a fractional field");
        }
    }
}

// ---------------------------------------------------------------------------
// 7. block matching vs exhaustive search; .flo round-trip and fixture

std::vector<int> naive_gray(const ImageBuffer& img) {
    std::vector<int> g(static_cast<std::size_t>(img.height) * img.width);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = 0.299 * img.pixels[3 * i] + 0.587 * img.pixels[3 * i + 1] +
                         0.114 * img.pixels[3 * i + 2];
        long v = std::lround(255.0 * y);
        if (v < 0) v = 0;
        if (v > 255) v = 255;
        g[i] = static_cast<int>(v);
    }
    return g;
}

ImageBuffer shift_image(const ImageBuffer& img, int sx, int sy) {
    ImageBuffer out(img.height, img.width, 0.0f);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const int ox = x - sx, oy = y - sy;
            if (ox < 0 || ox >= img.width || oy < 0 || oy >= img.height) continue;
            for (int c = 0; c < 3; ++c)
                out.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] =
                    img.pixels[(static_cast<std::size_t>(oy) * img.width + ox) * 3 + c];
        }
    return out;
}

struct NaiveMatch {
    int dx, dy;
};

NaiveMatch naive_best(const std::vector<int>& src, const std::vector<int>& dst, int w,
                      int h, int bx, int by, int block, int search) {
    long best_sad = -1;
    NaiveMatch best{0, 0};
    for (int dy = -search; dy <= search; ++dy)
        for (int dx = -search; dx <= search; ++dx) {
            const int cx = bx + dx, cy = by + dy;
            if (cx < 0 || cy < 0 || cx + block > w || cy + block > h) continue;
            long sad = 0;
            for (int y = 0; y < block; ++y)
                for (int x = 0; x < block; ++x)
                    sad += std::abs(src[static_cast<std::size_t>(by + y) * w + bx + x] -
                                    dst[static_cast<std::size_t>(cy + y) * w + cx + x]);
            bool better = false;
            if (best_sad < 0 || sad < best_sad) {
                better = true;
            } else if (sad == best_sad) {
                const int man = std::abs(dx) + std::abs(dy);
                const int bman = std::abs(best.dx) + std::abs(best.dy);
                if (man < bman ||
                    (man == bman && (dy < best.dy || (dy == best.dy && dx < best.dx))))
                    better = true;
            }
            if (better) {
                best_sad = sad;
                best = {dx, dy};
            }
        }
    return best;
}

void check_flow_oracle(const TmpDir& tmp) {
    struct Case {
        std::uint64_t seed;
        int block, search;
        int sx, sy;
    };
    const Case cases[] = {
        {1, 8, 4, 0, 0},   {2, 8, 4, 3, -2},   {3, 8, 8, -5, 7}, {4, 16, 4, 2, 2},
        {5, 16, 8, -4, 0}, {6, 16, 24, 9, -9}, {7, 8, 6, 1, 1},  {8, 32, 8, -6, 5},
    };
    for (const auto& c : cases) {
        const ImageBuffer src = random_image(64, 64, c.seed);
        ImageBuffer dst = shift_image(src, c.sx, c.sy);
        Rng noise(c.seed ^ 0xbeef);
        for (auto& p : dst.pixels)
            p = std::clamp(p + static_cast<float>((noise.uniform() - 0.5) * 0.1), 0.0f,
                           1.0f);

        const FlowField flow = estimate_flow(src, dst, c.block, c.search);
        const auto gs = naive_gray(src);
        const auto gd = naive_gray(dst);
        for (int by = 0; by + c.block <= 64; by += c.block)
            for (int bx = 0; bx + c.block <= 64; bx += c.block) {
                const NaiveMatch want = naive_best(gs, gd, 64, 64, bx, by, c.block,
                                                   c.search);
                for (int y = by; y < by + c.block; ++y)
                    for (int x = bx; x < bx + c.block; ++x)
                        require(flow.u_at(y, x) == static_cast<float>(want.dx) &&
                                    flow.v_at(y, x) == static_cast<float>(want.dy),
                                "block match deviates from exhaustive search (seed " +
                                    std::to_string(c.seed) + ", block " +
                                    std::to_string(bx) + "," + std::to_string(by) + ")");
            }
    }

    // round-trip with fractional values
    FlowField f(5, 7);
    Rng rng(90);
    for (auto& u : f.u) u = static_cast<float>(rng.uniform(-12.0, 12.0));
    for (auto& v : f.v) v = static_cast<float>(rng.uniform(-12.0, 12.0));
    const std::string path = tmp.file("roundtrip.flo");
    write_flo(f, path);
    const FlowField g = read_flo(path);
    require(g.height == f.height && g.width == f.width && g.u == f.u && g.v == f.v,
            "flow file round-trip is not bit-exact");

    // hand-assembled minimal file: magic, width 2, height 1, four floats
    const std::string hand = tmp.file("hand.flo");
    {
        std::ofstream out(hand, std::ios::binary);
        const float magic = 202021.25f;
        const std::int32_t w = 2, h = 1;
        const float payload[4] = {1.5f, -2.25f, 0.0f, 3.0f};
        out.write(reinterpret_cast<const char*>(&magic), 4);
        out.write(reinterpret_cast<const char*>(&w), 4);
        out.write(reinterpret_cast<const char*>(&h), 4);
        out.write(reinterpret_cast<const char*>(payload), 16);
    }
    require(std::filesystem::file_size(hand) == 28, "hand fixture is not 28 bytes");
    const FlowField hf = read_flo(hand);
    require(hf.width == 2 && hf.height == 1 && hf.u_at(0, 0) == 1.5f &&
                hf.v_at(0, 0) == -2.25f && hf.u_at(0, 1) == 0.0f &&
                hf.v_at(0, 1) == 3.0f,
            "hand-assembled flow fixture did not parse to the expected field");
}

// ---------------------------------------------------------------------------
// 8. toy training: loss halves; reference branch lowers validation loss

FlowField negated(const FlowField& f) {
    FlowField out = f;
    for (auto& u : out.u) u = -u;
    for (auto& v : out.v) v = -v;
    return out;
}

std::vector<TrainItem> toy_items(const LatentCodec& codec) {
    std::vector<TrainItem> items;
    const double sx[] = {2.0, -1.0, 1.0, 0.5};
    const double sy[] = {-1.0, 2.0, 1.5, -0.5};
    for (int i = 0; i < 40; ++i) {
        const ImageBuffer frame = synth_texture(16, 16, 500 + i);
        // near-total degradation: the degraded frame keeps little beyond its
        // local mean, which makes the reference branch genuinely load-bearing
        DegradationConfig dc;
        dc.blur_sigma = 2.0;
        dc.down_factor = 8;
        dc.noise_sigma = 0.12;
        dc.seed = 600 + i;
        const TrainingPair pr =
            make_training_pair(frame, 1, WarpKind::translation, sx[i % 4], sy[i % 4], dc);
        TrainItem it;
        it.z_hs = codec.encode(pr.clean);
        it.z_ls = codec.encode(pr.lq);
        it.ref = pr.ref;
        it.fwd = pr.gt_flow;
        it.bwd = negated(pr.gt_flow);
        items.push_back(std::move(it));
    }
    return items;
}

void check_toy_training() {
    const LatentCodec codec(2);
    const std::vector<TrainItem> items = toy_items(codec);

    ModelConfig mc;
    mc.depth = 2;
    mc.d_model = 32;
    mc.heads = 2;
    mc.latent_channels = 12;
    mc.time_dim = 16;
    mc.motion_hidden = 8;

    TrainConfig tc;
    tc.steps = 500;
    tc.batch_size = 8;
    tc.lr = 5e-3;
    tc.seed = 21;
    tc.model = mc;

    Restorer full(mc, 77);
    const TrainResult r_full = train(full, codec, tc, items);
    require(r_full.loss_trace.size() == 500, "unexpected trace length");
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 50; ++i) {
        head += r_full.loss_trace[static_cast<std::size_t>(i)] / 50.0;
        tail += r_full.loss_trace[static_cast<std::size_t>(450 + i)] / 50.0;
    }
    require(tail <= 0.5 * head, "mean loss fell only from " + fmt(head) + " to " +
                                    fmt(tail) + " over 500 steps");

    TrainConfig tc_off = tc;
    tc_off.wiring.no_reference_branch = true;
    Restorer bare(mc, 77);
    const TrainResult r_bare = train(bare, codec, tc_off, items);

    require(r_full.val_count > 0 && r_bare.val_count > 0, "validation split is empty");
    require(r_full.val_loss < r_bare.val_loss,
            "reference branch does not lower validation loss (" + fmt(r_full.val_loss) +
                " vs " + fmt(r_bare.val_loss) + ")");
}

// ---------------------------------------------------------------------------
// 9. shipped checkpoint: wiring ablations ordered by PSNR; retrieval payoff

void check_checkpoint_orderings() {
    const char* env = std::getenv("REFBRIDGE_FIXTURES");
    const std::string dir = env ? env : "fixtures";
    const Checkpoint ck = load_checkpoint(dir + "/checkpoint.rbc");
    const ModelConfig& mc = ck.model.config();
    int factor = 1;
    while (3 * factor * factor < mc.latent_channels) ++factor;
    require(3 * factor * factor == mc.latent_channels, "checkpoint has odd channel count");
    const LatentCodec codec(factor);

    struct Wiring {
        const char* name;
        AblationWiring w;
    };
    std::vector<Wiring> wirings(5);
    wirings[0].name = "full";
    wirings[1].name = "warp-image";
    wirings[1].w.warp_ref_image = true;
    wirings[2].name = "warp-latent";
    wirings[2].w.warp_ref_latent = true;
    wirings[3].name = "warp-kv";
    wirings[3].w.warp_ref_kv = true;
    wirings[4].name = "no-reference";
    wirings[4].w.no_reference_branch = true;

    // held-out pairs from the same generator family the checkpoint was
    // trained on (disjoint seeds)
    const int pairs = 6;
    std::vector<double> mean_psnr(wirings.size(), 0.0);
    for (int i = 0; i < pairs; ++i) {
        const ImageBuffer frame = synth_texture(64, 64, 900 + static_cast<std::uint64_t>(i));
        DegradationConfig dc;
        dc.blur_sigma = 1.2;
        dc.down_factor = 2;
        dc.noise_sigma = 0.03;
        dc.seed = 950 + static_cast<std::uint64_t>(i);
        const TrainingPair pr =
            make_training_pair(frame, 1, WarpKind::translation, 3.5, -2.5, dc);
        for (std::size_t wi = 0; wi < wirings.size(); ++wi) {
            RestoreOptions opt;
            opt.patch = 64;
            opt.overlap = 16;
            opt.steps = 6;
            opt.seed = 33;
            opt.wiring = wirings[wi].w;
            const ImageBuffer out =
                restore_image(pr.lq, pr.ref, ck.model, codec, dc, opt);
            mean_psnr[wi] += psnr_y(out, pr.clean) / pairs;
        }
    }

    std::string table;
    for (std::size_t wi = 0; wi < wirings.size(); ++wi)
        table += std::string(wi ? ", " : "") + wirings[wi].name + "=" +
                 fmt(mean_psnr[wi]);
    for (std::size_t wi = 1; wi <= 3; ++wi) {
        require(mean_psnr[0] >= mean_psnr[wi] + 0.2,
                "full wiring does not lead " + std::string(wirings[wi].name) +
                    " by 0.2 dB: " + table);
        require(mean_psnr[wi] >= mean_psnr[4] + 0.2,
                std::string(wirings[wi].name) + " does not lead no-reference by 0.2 dB: " +
                    table);
    }

    // globally shifted high-resolution pair: patch retrieval on vs off
    const ImageBuffer big = synth_texture(560, 560, 4242);
    const ImageBuffer clean = crop(big, 0, 0, 512, 512);
    const ImageBuffer ref = crop(big, 17, 12, 512, 512);
    DegradationConfig dc;
    dc.blur_sigma = 1.2;
    dc.down_factor = 2;
    dc.noise_sigma = 0.03;
    dc.seed = 999;
    const ImageBuffer lq = degrade(clean, dc);

    RestoreOptions opt;
    opt.patch = 64;
    opt.overlap = 16;
    opt.steps = 6;
    opt.seed = 7;
    opt.threads = 4;
    opt.use_pcr = true;
    const ImageBuffer with_pcr = restore_image(lq, ref, ck.model, codec, dc, opt);
    opt.use_pcr = false;
    const ImageBuffer without = restore_image(lq, ref, ck.model, codec, dc, opt);
    const double p_on = psnr_y(with_pcr, clean), p_off = psnr_y(without, clean);
    require(p_on > p_off, "patch retrieval does not improve the shifted 512x512 pair (" +
                              fmt(p_on) + " vs " + fmt(p_off) + " dB)");
}

// ---------------------------------------------------------------------------
// 10. metric identities, naive oracles, report reproducibility

std::vector<double> luma_of(const ImageBuffer& img) {
    std::vector<double> y(static_cast<std::size_t>(img.height) * img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            y[static_cast<std::size_t>(r) * img.width + c] = 0.299 * img.at(r, c, 0) +
                                                             0.587 * img.at(r, c, 1) +
                                                             0.114 * img.at(r, c, 2);
    return y;
}

double naive_psnr(const ImageBuffer& ia, const ImageBuffer& ib) {
    const auto a = luma_of(ia), b = luma_of(ib);
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    const double mean_se = se / static_cast<double>(a.size());
    if (mean_se <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mean_se));
}

// direct windowed SSIM: per fully valid 11x11 window, Gaussian-weighted
// moments computed from scratch with no separable shortcuts
double naive_ssim(const ImageBuffer& ia, const ImageBuffer& ib) {
    const auto a = luma_of(ia), b = luma_of(ib);
    const int h = ia.height, w = ia.width, r = 5;
    std::vector<double> kern(11 * 11);
    double ksum = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            const double dy = i - 5, dx = j - 5;
            kern[static_cast<std::size_t>(i) * 11 + j] =
                std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
            ksum += kern[static_cast<std::size_t>(i) * 11 + j];
        }
    for (double& k : kern) k /= ksum;

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    int count = 0;
    for (int cy = r; cy < h - r; ++cy)
        for (int cx = r; cx < w - r; ++cx) {
            double ma = 0.0, mb = 0.0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double k = kern[static_cast<std::size_t>(i) * 11 + j];
                    ma += k * a[static_cast<std::size_t>(cy + i - r) * w + cx + j - r];
                    mb += k * b[static_cast<std::size_t>(cy + i - r) * w + cx + j - r];
                }
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double k = kern[static_cast<std::size_t>(i) * 11 + j];
                    const double da =
                        a[static_cast<std::size_t>(cy + i - r) * w + cx + j - r] - ma;
                    const double db =
                        b[static_cast<std::size_t>(cy + i - r) * w + cx + j - r] - mb;
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return total / count;
}

void check_metrics(const TmpDir& tmp) {
    const ImageBuffer img = synth_texture(32, 32, 3);
    const ImageBuffer other = synth_texture(32, 32, 4);

    require(relative_metric(img, img, builtin_sharpness) == 0.0,
            "identical inputs do not score exactly zero");

    // hand arithmetic: restored scores 6, reference scores 5 -> 0.2
    auto stub = [&](const ImageBuffer& im) { return im.pixels == img.pixels ? 6.0 : 5.0; };
    require(std::abs(relative_metric(img, other, stub) - 0.2) <= 1e-12,
            "6-vs-5 relative score is not 0.2");

    // rescaling the plug-in metric leaves the relative score unchanged
    const double base = relative_metric(img, other, builtin_sharpness);
    for (double c : {2.0, -3.0, 0.125}) {
        auto scaled = [&](const ImageBuffer& im) { return c * builtin_sharpness(im); };
        require(std::abs(relative_metric(img, other, scaled) - base) <= 1e-12,
                "relative score is not covariant under metric scaling by " + fmt(c));
    }

    // full-reference scores vs double-precision oracles
    for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
        const ImageBuffer a = random_image(40, 40, seed);
        ImageBuffer b = a;
        Rng rng(seed + 100);
        for (auto& p : b.pixels)
            p = std::clamp(p + static_cast<float>((rng.uniform() - 0.5) * 0.2), 0.0f,
                           1.0f);
        const double psnr_want = naive_psnr(a, b);
        require(std::abs(psnr_y(a, b) - psnr_want) <=
                    1e-6 * std::max(1.0, std::abs(psnr_want)),
                "psnr deviates from the naive oracle");
        const double ssim_want = naive_ssim(a, b);
        require(std::abs(ssim_y(a, b) - ssim_want) <=
                    1e-6 * std::max(1.0, std::abs(ssim_want)),
                "ssim deviates from the naive oracle");
    }

    // report determinism: running the same evaluation twice reproduces the
    // text, the json, and the content hash
    const std::filesystem::path root = tmp.path / "eval";
    const std::filesystem::path restored = tmp.path / "restored";
    std::filesystem::create_directories(root);
    std::filesystem::create_directories(restored);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < 3; ++i) {
        const std::string tag = "s" + std::to_string(i);
        const ImageBuffer frame = synth_texture(48, 48, 70 + static_cast<std::uint64_t>(i));
        DegradationConfig dc;
        dc.blur_sigma = 1.0;
        dc.down_factor = 2;
        dc.noise_sigma = 0.02;
        dc.seed = 80 + static_cast<std::uint64_t>(i);
        const TrainingPair pr =
            make_training_pair(frame, 1, WarpKind::translation, 2.0, -1.0, dc);
        write_image(pr.clean, (root / (tag + "_clean.png")).string());
        write_image(pr.ref, (root / (tag + "_ref.png")).string());
        write_image(pr.lq, (root / (tag + "_lq.png")).string());
        write_flo(pr.gt_flow, (root / (tag + ".flo")).string());
        ImageBuffer mid = pr.lq;
        for (std::size_t j = 0; j < mid.pixels.size(); ++j)
            mid.pixels[j] = 0.5f * (pr.lq.pixels[j] + pr.clean.pixels[j]);
        write_image(mid, (restored / (tag + "_lq.png")).string());
        ManifestEntry e;
        e.clean = tag + "_clean.png";
        e.ref = tag + "_ref.png";
        e.lq = tag + "_lq.png";
        e.flow = tag + ".flo";
        e.cfg = dc;
        entries.push_back(e);
    }
    const std::string manifest = (root / "manifest.txt").string();
    write_manifest(entries, manifest);

    const std::vector<std::string> names{"psnr_y", "ssim_y", "rel_sharpness",
                                         "embed_sim"};
    const MetricReport r1 = evaluate(manifest, restored.string(), names);
    const MetricReport r2 = evaluate(manifest, restored.string(), names);
    require(r1.rows.size() == 3, "evaluation did not cover all samples");
    for (const auto& row : r1.rows)
        require(row.failure.empty(), "unexpected per-row failure: " + row.failure);
    require(r1.content_hash() == r2.content_hash(), "report hash is not reproducible");
    require(r1.to_text() == r2.to_text(), "report text is not reproducible");
    require(r1.to_json() == r2.to_json(), "report json is not reproducible");
}

}  // namespace

int main() {
    struct Check {
        const char* name;
        double budget_s;
        std::function<void(const TmpDir&)> body;
    };
    const std::vector<Check> checks = {
        {"schedule identities and boundaries", 1.0,
         [](const TmpDir&) { check_schedule(); }},
        {"velocity target vs forward-map differences", 1.0,
         [](const TmpDir&) { check_velocity_target(); }},
        {"sampler exactness and step-size convergence", 5.0,
         [](const TmpDir&) { check_sampler(); }},
        {"attention bias and empty-reference reductions", 1.0,
         [](const TmpDir&) { check_attention_reductions(); }},
        {"finite-difference gradients, ops and full model", 60.0,
         [](const TmpDir&) { check_gradients(); }},
        {"patch retrieval on integer-translation pairs", 10.0,
         [](const TmpDir&) { check_patch_retrieval(); }},
        {"block matching vs exhaustive search, flow files", 30.0,
         [](const TmpDir& t) { check_flow_oracle(t); }},
        {"toy training halves the loss, reference helps", 900.0,
         [](const TmpDir&) { check_toy_training(); }},
        {"checkpoint ablation ordering and retrieval payoff", 300.0,
         [](const TmpDir&) { check_checkpoint_orderings(); }},
        {"metric identities, oracles, report determinism", 30.0,
         [](const TmpDir& t) { check_metrics(t); }},
    };

    // Debug filter: run only the named check (1-based). A filtered run is
    // deliberately never reported as passing.
    const char* only_env = std::getenv("REFBRIDGE_ACCEPT_ONLY");
    const int only = only_env ? std::atoi(only_env) : 0;

    const TmpDir tmp("refbridge_acceptance");
    int failed = 0;
    for (std::size_t i = 0; i < checks.size(); ++i) {
        if (only && static_cast<int>(i + 1) != only) {
            std::printf("[SKIP] %2zu/%zu %s\n", i + 1, checks.size(), checks[i].name);
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            checks[i].body(tmp);
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count();
        if (error.empty() && secs > checks[i].budget_s)
            error = "exceeded the " + fmt(checks[i].budget_s) + " s budget";
        const bool ok = error.empty();
        std::printf("[%s] %2zu/%zu %s (%.2f s)\n", ok ? "PASS" : "FAIL", i + 1,
                    checks.size(), checks[i].name, secs);
        if (!ok) {
            std::printf("       %s\n", error.c_str());
            ++failed;
        }
    }
    if (failed) std::printf("%d of %zu acceptance checks failed\n", failed, checks.size());
    if (only) {
        std::printf("filtered run (REFBRIDGE_ACCEPT_ONLY=%d): not a passing result\n",
                    only);
        return 1;
    }
    return failed ? 1 : 0;
}
