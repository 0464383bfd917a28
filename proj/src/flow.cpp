#include "refbridge/flow.hpp"

#include <algorithm>
#include <array>
#include <climits>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>

#include "refbridge/errors.hpp"

namespace refbridge {

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr fp(std::fopen(path.c_str(), mode), &std::fclose);
    if (!fp) throw FormatError("cannot open " + path);
    return fp;
}

// 8-bit integer luma: keeps the SAD objective integer so the exhaustive
// matcher and its brute-force oracle agree bit-for-bit.
std::vector<int> gray8(const ImageBuffer& img) {
    std::vector<int> g(static_cast<std::size_t>(img.height) * img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const float l = luma601(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
            const long q = std::lround(255.0f * l);
            g[static_cast<std::size_t>(y) * img.width + x] =
                static_cast<int>(std::clamp(q, 0L, 255L));
        }
    return g;
}

std::vector<int> corner_grid(int extent, int block) {
    std::vector<int> corners;
    int x = 0;
    while (true) {
        if (x + block >= extent) {
            corners.push_back(extent - block);
            break;
        }
        corners.push_back(x);
        x += block;
    }
    return corners;
}

float bilinear(const ImageBuffer& img, float sx, float sy, int c) {
    const int x0 = static_cast<int>(std::floor(sx));
    const int y0 = static_cast<int>(std::floor(sy));
    const float fx = sx - static_cast<float>(x0);
    const float fy = sy - static_cast<float>(y0);
    const int xa = std::clamp(x0, 0, img.width - 1);
    const int xb = std::clamp(x0 + 1, 0, img.width - 1);
    const int ya = std::clamp(y0, 0, img.height - 1);
    const int yb = std::clamp(y0 + 1, 0, img.height - 1);
    const float top = (1.0f - fx) * img.at(ya, xa, c) + fx * img.at(ya, xb, c);
    const float bot = (1.0f - fx) * img.at(yb, xa, c) + fx * img.at(yb, xb, c);
    return (1.0f - fy) * top + fy * bot;
}

}  // namespace

FlowField estimate_flow(const ImageBuffer& src, const ImageBuffer& dst,
                        int block, int search) {
    if (!src.same_extents(dst))
        throw ShapeError("estimate_flow: src " + std::to_string(src.width) + "x" +
                         std::to_string(src.height) + " vs dst " + std::to_string(dst.width) +
                         "x" + std::to_string(dst.height));
    if (block < 1 || search < 0)
        throw ConfigError("estimate_flow: block must be >= 1 and search >= 0");
    if (block > src.width || block > src.height)
        throw ShapeError("estimate_flow: block " + std::to_string(block) + " exceeds image " +
                         std::to_string(src.width) + "x" + std::to_string(src.height));

    const int h = src.height, w = src.width;
    const std::vector<int> gs = gray8(src), gd = gray8(dst);
    FlowField flow(h, w);

    for (int by : corner_grid(h, block))
        for (int bx : corner_grid(w, block)) {
            long best_sad = LONG_MAX;
            int best_dx = 0, best_dy = 0, best_l1 = INT_MAX;
            for (int dy = -search; dy <= search; ++dy) {
                const int cy = by + dy;
                if (cy < 0 || cy + block > h) continue;
                for (int dx = -search; dx <= search; ++dx) {
                    const int cx = bx + dx;
                    if (cx < 0 || cx + block > w) continue;
                    long sad = 0;
                    for (int i = 0; i < block; ++i) {
                        const int* rs = &gs[static_cast<std::size_t>(by + i) * w + bx];
                        const int* rd = &gd[static_cast<std::size_t>(cy) * w + cx +
                                            static_cast<std::size_t>(i) * w];
                        for (int j = 0; j < block; ++j) sad += std::abs(rs[j] - rd[j]);
                    }
                    const int l1 = std::abs(dx) + std::abs(dy);
                    const bool better =
                        sad < best_sad ||
                        (sad == best_sad &&
                         (l1 < best_l1 ||
                          (l1 == best_l1 &&
                           (dy < best_dy || (dy == best_dy && dx < best_dx)))));
                    if (better) {
                        best_sad = sad;
                        best_dx = dx;
                        best_dy = dy;
                        best_l1 = l1;
                    }
                }
            }
            for (int i = 0; i < block; ++i)
                for (int j = 0; j < block; ++j) {
                    flow.u_at(by + i, bx + j) = static_cast<float>(best_dx);
                    flow.v_at(by + i, bx + j) = static_cast<float>(best_dy);
                }
        }
    return flow;
}

WarpKind parse_warp_kind(const std::string& name) {
    if (name == "translation") return WarpKind::translation;
    if (name == "rotation") return WarpKind::rotation;
    if (name == "zoom") return WarpKind::zoom;
    throw ConfigError("unknown warp kind '" + name + "' (translation|rotation|zoom)");
}

std::string warp_kind_name(WarpKind kind) {
    switch (kind) {
        case WarpKind::translation: return "translation";
        case WarpKind::rotation: return "rotation";
        case WarpKind::zoom: return "zoom";
    }
    return "?";
}

FlowField synthetic_flow(WarpKind kind, double a, double b, int h, int w) {
    if (h < 1 || w < 1)
        throw ShapeError("synthetic_flow: extents " + std::to_string(w) + "x" + std::to_string(h));
    FlowField f(h, w);
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    switch (kind) {
        case WarpKind::translation:
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    f.u_at(y, x) = static_cast<float>(a);
                    f.v_at(y, x) = static_cast<float>(b);
                }
            break;
        case WarpKind::rotation: {
            const double c = std::cos(a), s = std::sin(a);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double dx = x - cx, dy = y - cy;
                    f.u_at(y, x) = static_cast<float>(c * dx - s * dy + cx - x);
                    f.v_at(y, x) = static_cast<float>(s * dx + c * dy + cy - y);
                }
            break;
        }
        case WarpKind::zoom:
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    f.u_at(y, x) = static_cast<float>((a - 1.0) * (x - cx));
                    f.v_at(y, x) = static_cast<float>((a - 1.0) * (y - cy));
                }
            break;
    }
    return f;
}

ImageBuffer warp(const ImageBuffer& img, const FlowField& flow) {
    if (img.height != flow.height || img.width != flow.width)
        throw ShapeError("warp: image " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + " vs flow " + std::to_string(flow.width) +
                         "x" + std::to_string(flow.height));
    ImageBuffer out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const float sx = static_cast<float>(x) + flow.u_at(y, x);
            const float sy = static_cast<float>(y) + flow.v_at(y, x);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = bilinear(img, sx, sy, c);
        }
    return out;
}

Tensor warp(const Tensor& grid, const FlowField& flow) {
    if (grid.ndim() != 3)
        throw ShapeError("warp: grid must be [c,h,w], got " + shape_str(grid.shape()));
    const int ch = grid.dim(0), h = grid.dim(1), w = grid.dim(2);
    if (h != flow.height || w != flow.width)
        throw ShapeError("warp: grid " + shape_str(grid.shape()) + " vs flow " +
                         std::to_string(flow.width) + "x" + std::to_string(flow.height));
    const auto& src = grid.data();
    const auto plane = static_cast<std::size_t>(h) * w;

    // Per-pixel bilinear taps (spatial indices shared across channels).
    std::vector<std::array<std::size_t, 4>> taps(plane);
    std::vector<std::array<float, 4>> wts(plane);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float sx = static_cast<float>(x) + flow.u_at(y, x);
            const float sy = static_cast<float>(y) + flow.v_at(y, x);
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const float fx = sx - static_cast<float>(x0);
            const float fy = sy - static_cast<float>(y0);
            const auto xa = static_cast<std::size_t>(std::clamp(x0, 0, w - 1));
            const auto xb = static_cast<std::size_t>(std::clamp(x0 + 1, 0, w - 1));
            const auto ya = static_cast<std::size_t>(std::clamp(y0, 0, h - 1));
            const auto yb = static_cast<std::size_t>(std::clamp(y0 + 1, 0, h - 1));
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            taps[i] = {ya * w + xa, ya * w + xb, yb * w + xa, yb * w + xb};
            wts[i] = {(1.0f - fy) * (1.0f - fx), (1.0f - fy) * fx,
                      fy * (1.0f - fx), fy * fx};
        }

    auto node = std::make_shared<detail::Node>();
    node->shape = grid.shape();
    node->value.resize(src.size());
    for (int c = 0; c < ch; ++c) {
        const float* p = &src[c * plane];
        float* o = &node->value[c * plane];
        for (std::size_t i = 0; i < plane; ++i) {
            const auto& t = taps[i];
            const auto& wv = wts[i];
            o[i] = wv[0] * p[t[0]] + wv[1] * p[t[1]] + wv[2] * p[t[2]] + wv[3] * p[t[3]];
        }
    }

    auto gn = grid.node();
    if (detail::grad_enabled() && (gn->requires_grad || !gn->parents.empty())) {
        node->parents = {gn};
        node->backward = [gn, taps = std::move(taps), wts = std::move(wts), ch,
                          plane](detail::Node& n) {
            for (int c = 0; c < ch; ++c) {
                const float* go = &n.grad[c * plane];
                float* gi = &gn->grad[c * plane];
                for (std::size_t i = 0; i < plane; ++i) {
                    const auto& t = taps[i];
                    const auto& wv = wts[i];
                    gi[t[0]] += wv[0] * go[i];
                    gi[t[1]] += wv[1] * go[i];
                    gi[t[2]] += wv[2] * go[i];
                    gi[t[3]] += wv[3] * go[i];
                }
            }
        };
    }
    return Tensor(std::move(node));
}

FlowField downscale_flow(const FlowField& flow, int f) {
    if (f < 1) throw ConfigError("downscale_flow: factor must be >= 1");
    if (flow.height % f != 0 || flow.width % f != 0)
        throw ShapeError("downscale_flow: extents " + std::to_string(flow.width) + "x" +
                         std::to_string(flow.height) + " not divisible by " + std::to_string(f));
    FlowField out(flow.height / f, flow.width / f);
    const double norm = 1.0 / (static_cast<double>(f) * f);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            double su = 0.0, sv = 0.0;
            for (int i = 0; i < f; ++i)
                for (int j = 0; j < f; ++j) {
                    su += flow.u_at(y * f + i, x * f + j);
                    sv += flow.v_at(y * f + i, x * f + j);
                }
            // pooled displacement is still in pixels; divide once more so the
            // result is measured in coarse-grid cells
            out.u_at(y, x) = static_cast<float>(su * norm / f);
            out.v_at(y, x) = static_cast<float>(sv * norm / f);
        }
    return out;
}

static constexpr float kFloMagic = 202021.25f;

FlowField read_flo(const std::string& path) {
    FilePtr fp = open_file(path, "rb");
    float magic = 0.0f;
    if (std::fread(&magic, sizeof magic, 1, fp.get()) != 1)
        throw FormatError("read_flo: " + path + ": truncated header");
    if (magic != kFloMagic)
        throw FormatError("read_flo: " + path + ": bad magic " + std::to_string(magic));
    std::int32_t w = 0, h = 0;
    if (std::fread(&w, sizeof w, 1, fp.get()) != 1 || std::fread(&h, sizeof h, 1, fp.get()) != 1)
        throw FormatError("read_flo: " + path + ": truncated header");
    if (w <= 0 || h <= 0)
        throw FormatError("read_flo: " + path + ": nonpositive dimensions " + std::to_string(w) +
                          "x" + std::to_string(h));
    FlowField flow(h, w);
    std::vector<float> inter(static_cast<std::size_t>(h) * w * 2);
    if (std::fread(inter.data(), sizeof(float), inter.size(), fp.get()) != inter.size())
        throw FormatError("read_flo: " + path + ": truncated payload");
    for (std::size_t i = 0; i < flow.u.size(); ++i) {
        flow.u[i] = inter[2 * i];
        flow.v[i] = inter[2 * i + 1];
    }
    return flow;
}

void write_flo(const FlowField& flow, const std::string& path) {
    if (flow.height < 1 || flow.width < 1)
        throw ShapeError("write_flo: empty field");
    FilePtr fp = open_file(path, "wb");
    const std::int32_t w = flow.width, h = flow.height;
    std::vector<float> inter(static_cast<std::size_t>(h) * w * 2);
    for (std::size_t i = 0; i < flow.u.size(); ++i) {
        inter[2 * i] = flow.u[i];
        inter[2 * i + 1] = flow.v[i];
    }
    if (std::fwrite(&kFloMagic, sizeof kFloMagic, 1, fp.get()) != 1 ||
        std::fwrite(&w, sizeof w, 1, fp.get()) != 1 ||
        std::fwrite(&h, sizeof h, 1, fp.get()) != 1 ||
        std::fwrite(inter.data(), sizeof(float), inter.size(), fp.get()) != inter.size())
        throw FormatError("write_flo: " + path + ": write failed");
}

}  // namespace refbridge
