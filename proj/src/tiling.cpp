#include "refbridge/tiling.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "json.hpp"
#include "refbridge/errors.hpp"
#include "refbridge/rng.hpp"

namespace refbridge {

namespace {

std::vector<int> axis_corners(int extent, int patch, int stride) {
    std::vector<int> out;
    int x = 0;
    while (true) {
        if (x + patch >= extent) {
            out.push_back(extent - patch);
            break;
        }
        out.push_back(x);
        x += stride;
    }
    return out;
}

}  // namespace

TilePlan plan_tiles(int height, int width, int patch, int overlap) {
    if (patch < 1) throw ConfigError("tiles: patch must be >= 1");
    if (overlap < 0 || overlap >= patch)
        throw ConfigError("tiles: overlap " + std::to_string(overlap) +
                          " must lie in [0, patch)");
    if (patch > height || patch > width)
        throw ShapeError("tiles: patch " + std::to_string(patch) + " exceeds image " +
                         std::to_string(width) + "x" + std::to_string(height));
    TilePlan plan;
    plan.patch = patch;
    plan.overlap = overlap;
    plan.height = height;
    plan.width = width;
    const int stride = patch - overlap;
    const auto xs = axis_corners(width, patch, stride);
    const auto ys = axis_corners(height, patch, stride);
    plan.corners.reserve(xs.size() * ys.size());
    for (int y : ys)
        for (int x : xs) plan.corners.emplace_back(x, y);
    return plan;
}

std::pair<double, double> mean_displacement(const FlowField& flow, int x0, int y0, int p) {
    if (p < 1 || x0 < 0 || y0 < 0 || x0 + p > flow.width || y0 + p > flow.height)
        throw ShapeError("mean_displacement: window " + std::to_string(p) + " at (" +
                         std::to_string(x0) + ", " + std::to_string(y0) +
                         ") outside flow " + std::to_string(flow.width) + "x" +
                         std::to_string(flow.height));
    double su = 0.0, sv = 0.0;
    for (int y = y0; y < y0 + p; ++y)
        for (int x = x0; x < x0 + p; ++x) {
            su += flow.u_at(y, x);
            sv += flow.v_at(y, x);
        }
    const double n = static_cast<double>(p) * p;
    return {su / n, sv / n};
}

PatchCorrespondence correspond_patch(const FlowField& flow, int x, int y, int p,
                                     int ref_h, int ref_w) {
    if (p > ref_w || p > ref_h)
        throw ShapeError("correspond_patch: patch " + std::to_string(p) +
                         " exceeds reference " + std::to_string(ref_w) + "x" +
                         std::to_string(ref_h));
    PatchCorrespondence c;
    c.x = x;
    c.y = y;
    std::tie(c.dx, c.dy) = mean_displacement(flow, x, y, p);
    const long tx = std::lround(static_cast<double>(x) + c.dx);
    const long ty = std::lround(static_cast<double>(y) + c.dy);
    c.ax = static_cast<int>(std::clamp(tx, 0L, static_cast<long>(ref_w - p)));
    c.ay = static_cast<int>(std::clamp(ty, 0L, static_cast<long>(ref_h - p)));
    c.clamped = (c.ax != tx || c.ay != ty);
    return c;
}

std::vector<float> blend_weights(int p, int overlap) {
    if (p < 1) throw ConfigError("blend_weights: patch must be >= 1");
    if (overlap < 0 || overlap >= p)
        throw ConfigError("blend_weights: overlap " + std::to_string(overlap) +
                          " must lie in [0, patch)");
    std::vector<float> w(static_cast<std::size_t>(p), 1.0f);
    const float denom = static_cast<float>(overlap + 1);
    for (int i = 0; i < overlap; ++i) {
        w[static_cast<std::size_t>(i)] = static_cast<float>(i + 1) / denom;
        w[static_cast<std::size_t>(p - 1 - i)] = static_cast<float>(i + 1) / denom;
    }
    return w;
}

ImageBuffer blend_tiles(const TilePlan& plan, const std::vector<ImageBuffer>& tiles) {
    if (tiles.size() != plan.corners.size())
        throw ShapeError("blend_tiles: " + std::to_string(tiles.size()) + " tiles for " +
                         std::to_string(plan.corners.size()) + " corners");
    const int p = plan.patch;
    for (const auto& t : tiles)
        if (t.height != p || t.width != p)
            throw ShapeError("blend_tiles: tile extent " + std::to_string(t.width) + "x" +
                             std::to_string(t.height) + " != patch " + std::to_string(p));
    const auto ramp = blend_weights(p, plan.overlap);
    ImageBuffer out(plan.height, plan.width, 0.0f);
    std::vector<double> wsum(static_cast<std::size_t>(plan.height) * plan.width, 0.0);
    std::vector<double> acc(out.pixels.size(), 0.0);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const auto [x0, y0] = plan.corners[i];
        const auto& t = tiles[i];
        for (int y = 0; y < p; ++y)
            for (int x = 0; x < p; ++x) {
                const double w = static_cast<double>(ramp[static_cast<std::size_t>(y)]) *
                                 ramp[static_cast<std::size_t>(x)];
                const std::size_t src = (static_cast<std::size_t>(y) * p + x) * 3;
                const std::size_t dst =
                    (static_cast<std::size_t>(y0 + y) * plan.width + (x0 + x));
                wsum[dst] += w;
                for (int c = 0; c < 3; ++c) acc[dst * 3 + c] += w * t.pixels[src + c];
            }
    }
    for (std::size_t i = 0; i < wsum.size(); ++i) {
        const double w = wsum[i];
        if (w <= 0.0)
            throw NumericError("blend_tiles: uncovered pixel " + std::to_string(i));
        for (int c = 0; c < 3; ++c)
            out.pixels[i * 3 + c] = static_cast<float>(acc[i * 3 + c] / w);
    }
    return out;
}

std::string RestoreRecord::to_json() const {
    nlohmann::json j;
    j["patch"] = plan.patch;
    j["overlap"] = plan.overlap;
    j["height"] = plan.height;
    j["width"] = plan.width;
    j["seed"] = seed;
    j["steps"] = steps;
    j["use_pcr"] = use_pcr;
    auto arr = nlohmann::json::array();
    for (const auto& t : tiles) {
        arr.push_back({{"x", t.x},
                       {"y", t.y},
                       {"dx", t.dx},
                       {"dy", t.dy},
                       {"ax", t.ax},
                       {"ay", t.ay},
                       {"clamped", t.clamped}});
    }
    j["tiles"] = std::move(arr);
    return j.dump(2);
}

namespace {

// Residual flow crop: the full-frame field restricted to one tile, expressed
// relative to the retrieved corner so the retrieval offset is absorbed.
FlowField residual_crop(const FlowField& flow, int x0, int y0, int p, float off_u,
                        float off_v) {
    FlowField out(p, p);
    for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) {
            out.u[static_cast<std::size_t>(y) * p + x] = flow.u_at(y0 + y, x0 + x) + off_u;
            out.v[static_cast<std::size_t>(y) * p + x] = flow.v_at(y0 + y, x0 + x) + off_v;
        }
    return out;
}

[[noreturn]] void rethrow_tagged(std::size_t tile) {
    const std::string tag = "tile " + std::to_string(tile) + ": ";
    try {
        throw;
    } catch (const ShapeError& e) {
        throw ShapeError(tag + e.what());
    } catch (const NumericError& e) {
        throw NumericError(tag + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(tag + e.what());
    }
}

}  // namespace

ImageBuffer restore_image(const ImageBuffer& lq, const ImageBuffer& ref,
                          const Restorer& model, const LatentCodec& codec,
                          const DegradationConfig& ref_degradation,
                          const RestoreOptions& opt, RestoreRecord* record) {
    if (lq.height < 1 || lq.width < 1) throw ShapeError("restore: empty input");
    if (ref.height < 1 || ref.width < 1) throw ShapeError("restore: empty reference");
    opt.wiring.validate();
    const int p = opt.patch;
    if (codec.factor < 1 || p % codec.factor != 0)
        throw ConfigError("restore: patch " + std::to_string(p) +
                          " not divisible by codec factor " + std::to_string(codec.factor));
    if (opt.steps < 1) throw ConfigError("restore: steps must be >= 1");
    if (p > ref.width || p > ref.height)
        throw ShapeError("restore: patch " + std::to_string(p) + " exceeds reference " +
                         std::to_string(ref.width) + "x" + std::to_string(ref.height));

    const TilePlan plan = plan_tiles(lq.height, lq.width, p, opt.overlap);

    const bool warp_any =
        opt.wiring.warp_ref_image || opt.wiring.warp_ref_latent || opt.wiring.warp_ref_kv;
    const bool need_bwd = opt.use_pcr || warp_any;
    const bool need_fwd =
        !opt.wiring.no_reference_branch && !opt.wiring.no_motion_bias && !warp_any;

    ImageBuffer lo;
    if (need_fwd || need_bwd) {
        const bool estimate_any = (need_fwd && !opt.flow_fwd) || (need_bwd && !opt.flow_bwd);
        if (estimate_any)
            lo = ref_degradation.is_identity() ? ref : degrade(ref, ref_degradation);
    }

    FlowField fwd, bwd;
    if (need_fwd) {
        fwd = opt.flow_fwd ? *opt.flow_fwd
                           : estimate_flow(lo, lq, opt.flow_block, opt.flow_search);
        if (fwd.height != ref.height || fwd.width != ref.width)
            throw ShapeError("restore: forward flow extent " + std::to_string(fwd.width) +
                             "x" + std::to_string(fwd.height) + " != reference " +
                             std::to_string(ref.width) + "x" + std::to_string(ref.height));
    }
    if (need_bwd) {
        bwd = opt.flow_bwd ? *opt.flow_bwd
                           : estimate_flow(lq, lo, opt.flow_block, opt.flow_search);
        if (bwd.height != lq.height || bwd.width != lq.width)
            throw ShapeError("restore: backward flow extent " + std::to_string(bwd.width) +
                             "x" + std::to_string(bwd.height) + " != input " +
                             std::to_string(lq.width) + "x" + std::to_string(lq.height));
    }

    const BridgeSchedule sched{model.config().t_horizon};
    const std::size_t n_tiles = plan.tile_count();
    std::vector<ImageBuffer> tiles(n_tiles);
    std::vector<PatchCorrespondence> corrs(n_tiles);

    auto run_tile = [&](std::size_t i) {
        NoGradGuard guard;
        const auto [x, y] = plan.corners[i];
        PatchCorrespondence corr;
        if (opt.use_pcr) {
            corr = correspond_patch(bwd, x, y, p, ref.height, ref.width);
        } else {
            corr.x = x;
            corr.y = y;
            corr.ax = std::clamp(x, 0, ref.width - p);
            corr.ay = std::clamp(y, 0, ref.height - p);
            corr.clamped = (corr.ax != x || corr.ay != y);
        }
        const ImageBuffer ref_patch = crop(ref, corr.ax, corr.ay, p, p);
        const float off_x = static_cast<float>(corr.ax - x);
        const float off_y = static_cast<float>(corr.ay - y);

        FlowField fwd_patch(p, p), bwd_patch(p, p);
        if (need_fwd) fwd_patch = residual_crop(fwd, corr.ax, corr.ay, p, off_x, off_y);
        if (warp_any) bwd_patch = residual_crop(bwd, x, y, p, -off_x, -off_y);

        const Conditioning cond =
            apply_ablation(model, codec, opt.wiring, ref_patch, fwd_patch, bwd_patch);

        const Tensor z_ls = codec.encode(crop(lq, x, y, p, p));
        Rng tile_rng(sub_seed(opt.seed, static_cast<std::uint64_t>(i)));
        const Tensor eps = sample_noise(z_ls.shape(), tile_rng);
        const Tensor z =
            restore_latent(model, sched, z_ls, eps, cond.ref_feats, cond.motion, opt.steps);
        tiles[i] = codec.decode(z);
        corrs[i] = corr;
    };

    const int threads =
        std::clamp(opt.threads, 1, static_cast<int>(std::min<std::size_t>(n_tiles, 64)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n_tiles; ++i) {
            try {
                run_tile(i);
            } catch (...) {
                rethrow_tagged(i);
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
        std::vector<std::size_t> error_tile(static_cast<std::size_t>(threads), 0);
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= n_tiles) return;
                    try {
                        run_tile(i);
                    } catch (...) {
                        errors[static_cast<std::size_t>(t)] = std::current_exception();
                        error_tile[static_cast<std::size_t>(t)] = i;
                        return;
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        for (int t = 0; t < threads; ++t) {
            if (errors[static_cast<std::size_t>(t)]) {
                try {
                    std::rethrow_exception(errors[static_cast<std::size_t>(t)]);
                } catch (...) {
                    rethrow_tagged(error_tile[static_cast<std::size_t>(t)]);
                }
            }
        }
    }

    if (record) {
        record->plan = plan;
        record->tiles = corrs;
        record->seed = opt.seed;
        record->steps = opt.steps;
        record->use_pcr = opt.use_pcr;
    }
    return blend_tiles(plan, tiles);
}

}  // namespace refbridge
