#include "refbridge/degrade.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "refbridge/errors.hpp"
#include "refbridge/rng.hpp"

namespace refbridge {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
    return std::string(buf, res.ptr);
}

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kern(static_cast<std::size_t>(2 * r + 1));
    double norm = 0.0;
    for (int i = -r; i <= r; ++i) {
        kern[static_cast<std::size_t>(i + r)] = std::exp(-(static_cast<double>(i) * i) /
                                                         (2.0 * sigma * sigma));
        norm += kern[static_cast<std::size_t>(i + r)];
    }
    for (auto& k : kern) k /= norm;

    const int h = img.height, w = img.width;
    ImageBuffer tmp(h, w), out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += kern[static_cast<std::size_t>(i + r)] *
                           img.at(y, std::clamp(x + i, 0, w - 1), c);
                tmp.at(y, x, c) = static_cast<float>(acc);
            }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += kern[static_cast<std::size_t>(i + r)] *
                           tmp.at(std::clamp(y + i, 0, h - 1), x, c);
                out.at(y, x, c) = static_cast<float>(acc);
            }
    return out;
}

ImageBuffer bilinear_resize(const ImageBuffer& img, int h2, int w2) {
    ImageBuffer out(h2, w2);
    const double sy_scale = static_cast<double>(img.height) / h2;
    const double sx_scale = static_cast<double>(img.width) / w2;
    for (int y = 0; y < h2; ++y)
        for (int x = 0; x < w2; ++x) {
            const double sy = (y + 0.5) * sy_scale - 0.5;
            const double sx = (x + 0.5) * sx_scale - 0.5;
            const int y0 = static_cast<int>(std::floor(sy));
            const int x0 = static_cast<int>(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            const int ya = std::clamp(y0, 0, img.height - 1);
            const int yb = std::clamp(y0 + 1, 0, img.height - 1);
            const int xa = std::clamp(x0, 0, img.width - 1);
            const int xb = std::clamp(x0 + 1, 0, img.width - 1);
            for (int c = 0; c < 3; ++c) {
                const double top = (1.0 - fx) * img.at(ya, xa, c) + fx * img.at(ya, xb, c);
                const double bot = (1.0 - fx) * img.at(yb, xa, c) + fx * img.at(yb, xb, c);
                out.at(y, x, c) = static_cast<float>((1.0 - fy) * top + fy * bot);
            }
        }
    return out;
}

ImageBuffer block_quantize(const ImageBuffer& img, int level) {
    // value grid step doubles with each level: the grids nest, so per-pixel
    // quantization error can only grow as the level rises
    const double step = static_cast<double>(1 << level) / 256.0;
    ImageBuffer out(img.height, img.width);
    for (int by = 0; by < img.height; by += 8)
        for (int bx = 0; bx < img.width; bx += 8) {
            const int bh = std::min(8, img.height - by);
            const int bw = std::min(8, img.width - bx);
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = 0; i < bh; ++i)
                    for (int j = 0; j < bw; ++j) acc += img.at(by + i, bx + j, c);
                const double mean = acc / (static_cast<double>(bh) * bw);
                const float q = static_cast<float>(std::lround(mean / step) * step);
                for (int i = 0; i < bh; ++i)
                    for (int j = 0; j < bw; ++j) out.at(by + i, bx + j, c) = q;
            }
        }
    return out;
}

}  // namespace

void DegradationConfig::validate() const {
    if (blur_sigma < 0.0) throw ConfigError("degradation: blur_sigma must be >= 0");
    if (down_factor < 1) throw ConfigError("degradation: down_factor must be >= 1");
    if (noise_sigma < 0.0) throw ConfigError("degradation: noise_sigma must be >= 0");
    if (block_quant < 0 || block_quant > 8)
        throw ConfigError("degradation: block_quant must be in 0..8");
}

bool DegradationConfig::is_identity() const {
    return blur_sigma == 0.0 && down_factor == 1 && noise_sigma == 0.0 && block_quant == 0;
}

DegradationConfig degradation_preset(const std::string& name) {
    DegradationConfig cfg;
    if (name == "identity") return cfg;
    if (name == "mild") {
        cfg.blur_sigma = 0.6;
        cfg.noise_sigma = 0.01;
        return cfg;
    }
    if (name == "livephoto") {
        cfg.blur_sigma = 1.2;
        cfg.down_factor = 2;
        cfg.noise_sigma = 0.02;
        cfg.block_quant = 2;
        return cfg;
    }
    if (name == "severe") {
        cfg.blur_sigma = 2.0;
        cfg.down_factor = 4;
        cfg.noise_sigma = 0.05;
        cfg.block_quant = 4;
        return cfg;
    }
    throw ConfigError("unknown degradation preset '" + name +
                      "' (identity|mild|livephoto|severe)");
}

std::string format_degradation(const DegradationConfig& cfg) {
    return "blur=" + fmt_double(cfg.blur_sigma) + ",down=" + std::to_string(cfg.down_factor) +
           ",noise=" + fmt_double(cfg.noise_sigma) + ",quant=" + std::to_string(cfg.block_quant) +
           ",seed=" + std::to_string(cfg.seed);
}

DegradationConfig parse_degradation(const std::string& text) {
    if (text.empty()) throw ConfigError("empty degradation config");
    DegradationConfig cfg;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw ConfigError("degradation config: expected key=value, got '" + tok + "'");
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        try {
            if (key == "blur")
                cfg.blur_sigma = std::stod(val);
            else if (key == "down")
                cfg.down_factor = std::stoi(val);
            else if (key == "noise")
                cfg.noise_sigma = std::stod(val);
            else if (key == "quant")
                cfg.block_quant = std::stoi(val);
            else if (key == "seed")
                cfg.seed = std::stoull(val);
            else
                throw ConfigError("degradation config: unknown key '" + key + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("degradation config: bad value '" + val + "' for '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

ImageBuffer degrade(const ImageBuffer& img, const DegradationConfig& cfg) {
    cfg.validate();
    ImageBuffer out = img;
    if (cfg.blur_sigma > 0.0) out = gaussian_blur(out, cfg.blur_sigma);
    if (cfg.down_factor > 1) {
        const int h2 = std::max(1, static_cast<int>(std::lround(
                                       static_cast<double>(img.height) / cfg.down_factor)));
        const int w2 = std::max(1, static_cast<int>(std::lround(
                                       static_cast<double>(img.width) / cfg.down_factor)));
        out = bilinear_resize(bilinear_resize(out, h2, w2), img.height, img.width);
    }
    if (cfg.noise_sigma > 0.0) {
        Rng rng(cfg.seed);
        // interleaved raster order: y, then x, then channel
        for (auto& v : out.pixels) v += static_cast<float>(cfg.noise_sigma * rng.normal());
    }
    if (cfg.block_quant > 0) out = block_quantize(out, cfg.block_quant);
    return out;
}

std::pair<ImageBuffer, ImageBuffer> degrade_pair(const ImageBuffer& key_photo,
                                                 const ImageBuffer& reselected_gt,
                                                 const DegradationConfig& cfg) {
    if (!key_photo.same_extents(reselected_gt))
        throw ShapeError("degrade_pair: extents differ: " + std::to_string(key_photo.width) +
                         "x" + std::to_string(key_photo.height) + " vs " +
                         std::to_string(reselected_gt.width) + "x" +
                         std::to_string(reselected_gt.height));
    DegradationConfig c0 = cfg, c1 = cfg;
    c0.seed = sub_seed(cfg.seed, 0);
    c1.seed = sub_seed(cfg.seed, 1);
    return {degrade(key_photo, c0), degrade(reselected_gt, c1)};
}

TrainingPair make_training_pair(const ImageBuffer& frame, int k, WarpKind kind,
                                double a, double b, const DegradationConfig& cfg) {
    if (k < 0) throw ConfigError("make_training_pair: temporal offset k must be >= 0");
    double sa = a, sb = b;
    switch (kind) {
        case WarpKind::translation:
            sa = a * k;
            sb = b * k;
            if (std::abs(sa) > std::min(frame.height, frame.width) / 2.0 ||
                std::abs(sb) > std::min(frame.height, frame.width) / 2.0)
                throw ConfigError("make_training_pair: scaled shift (" + std::to_string(sa) +
                                  ", " + std::to_string(sb) + ") exceeds half the image");
            break;
        case WarpKind::rotation:
            sa = a * k;
            sb = 0.0;
            if (std::abs(sa) > 0.7853981633974483)  // pi/4
                throw ConfigError("make_training_pair: scaled angle " + std::to_string(sa) +
                                  " outside [-pi/4, pi/4]");
            break;
        case WarpKind::zoom:
            sa = 1.0 + k * (a - 1.0);
            sb = 0.0;
            if (sa < 0.25 || sa > 4.0)
                throw ConfigError("make_training_pair: scaled zoom " + std::to_string(sa) +
                                  " outside [1/4, 4]");
            break;
    }
    TrainingPair out;
    out.clean = frame;
    out.gt_flow = synthetic_flow(kind, sa, sb, frame.height, frame.width);
    out.ref = warp(frame, out.gt_flow);
    auto pair = degrade_pair(out.ref, out.clean, cfg);
    out.ref_lq = std::move(pair.first);
    out.lq = std::move(pair.second);
    return out;
}

ImageBuffer synth_texture(int h, int w, std::uint64_t seed) {
    if (h < 1 || w < 1)
        throw ShapeError("synth_texture: extents " + std::to_string(w) + "x" + std::to_string(h));
    Rng rng(seed);
    constexpr int kWaves = 12;
    struct Wave {
        double wx, wy, phase, amp[3];
    };
    std::vector<Wave> waves(kWaves);
    constexpr double kTau = 6.283185307179586;
    for (int i = 0; i < kWaves; ++i) {
        // first waves low-frequency (large structure), the rest mid/high so
        // block matching has unambiguous detail
        const double lo = (i < 3) ? 0.008 : 0.05;
        const double hi = (i < 3) ? 0.04 : 0.35;
        const double fx = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        const double fy = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        waves[static_cast<std::size_t>(i)] = {kTau * fx, kTau * fy, rng.uniform(0.0, kTau),
                                              {rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0),
                                               rng.uniform(0.3, 1.0)}};
    }
    ImageBuffer img(h, w);
    double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
    std::vector<double> raw(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v[3] = {0.0, 0.0, 0.0};
            for (const auto& wv : waves) {
                const double s = std::sin(wv.wx * x + wv.wy * y + wv.phase);
                for (int c = 0; c < 3; ++c) v[c] += wv.amp[c] * s;
            }
            for (int c = 0; c < 3; ++c) {
                raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] = v[c];
                lo[c] = std::min(lo[c], v[c]);
                hi[c] = std::max(hi[c], v[c]);
            }
        }
    for (int c = 0; c < 3; ++c) {
        const double span = (hi[c] > lo[c]) ? hi[c] - lo[c] : 1.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c];
                img.at(y, x, c) = static_cast<float>(0.05 + 0.9 * (v - lo[c]) / span);
            }
    }
    return img;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("read_manifest: cannot open " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.erase(hash_pos);
        std::istringstream ls(line);
        ManifestEntry e;
        std::string cfg_text;
        if (!(ls >> e.clean)) continue;  // blank line
        if (!(ls >> e.ref >> e.lq >> e.flow >> cfg_text))
            throw FormatError("read_manifest: " + path + ":" + std::to_string(line_no) +
                              ": expected 'clean ref lq flow cfg'");
        try {
            e.cfg = parse_degradation(cfg_text);
        } catch (const ConfigError& ex) {
            throw FormatError("read_manifest: " + path + ":" + std::to_string(line_no) +
                              ": " + ex.what());
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("write_manifest: cannot open " + path);
    for (const auto& e : entries)
        out << e.clean << ' ' << e.ref << ' ' << e.lq << ' ' << e.flow << ' '
            << format_degradation(e.cfg) << '\n';
    if (!out) throw FormatError("write_manifest: write failed for " + path);
}

std::string parent_dir(const std::string& path) {
    const auto pos = path.find_last_of('/');
    return pos == std::string::npos ? std::string() : path.substr(0, pos);
}

std::string join_path(const std::string& dir, const std::string& rel) {
    if (dir.empty() || (!rel.empty() && rel.front() == '/')) return rel;
    return dir + "/" + rel;
}

}  // namespace refbridge
