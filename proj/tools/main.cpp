// Command-line frontend: degrade / synth / flow / train / restore / eval.
// Exit codes: 0 ok, 2 for configuration and usage errors, 1 for runtime
// failures (IO, numerics).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "refbridge/degrade.hpp"
#include "refbridge/errors.hpp"
#include "refbridge/metrics.hpp"
#include "refbridge/tiling.hpp"
#include "refbridge/train.hpp"

namespace {

using namespace refbridge;

std::string basename_of(const std::string& path) {
    const auto pos = path.find_last_of('/');
    return pos == std::string::npos ? path : path.substr(pos + 1);
}

std::string stem_of(const std::string& path) {
    std::string base = basename_of(path);
    const auto dot = base.find_last_of('.');
    return dot == std::string::npos || dot == 0 ? base : base.substr(0, dot);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw FormatError("short write to " + path);
}

// Resolved option values (defaults included) next to the primary output, so
// a run can be reproduced from its artifacts alone.
void emit_config(CLI::App* sub, const std::string& primary_output) {
    write_text_file(primary_output + ".config", sub->config_to_str(true, true));
}

struct DegradationFlags {
    std::string preset = "identity";
    double blur = 0.0;
    int down = 1;
    double noise = 0.0;
    int quant = 0;
    CLI::Option *blur_opt = nullptr, *down_opt = nullptr, *noise_opt = nullptr,
                *quant_opt = nullptr;

    void attach(CLI::App* sub) {
        sub->add_option("--preset", preset,
                        "degradation preset: identity | mild | livephoto | severe")
            ->capture_default_str();
        blur_opt = sub->add_option("--blur", blur, "Gaussian blur sigma (overrides preset)");
        down_opt = sub->add_option("--down", down, "down/up resample factor (overrides preset)");
        noise_opt = sub->add_option("--noise", noise, "additive noise sigma (overrides preset)");
        quant_opt = sub->add_option("--quant", quant, "block quantization level (overrides preset)");
    }

    DegradationConfig build(std::uint64_t seed) const {
        DegradationConfig cfg = degradation_preset(preset);
        if (blur_opt->count()) cfg.blur_sigma = blur;
        if (down_opt->count()) cfg.down_factor = down;
        if (noise_opt->count()) cfg.noise_sigma = noise;
        if (quant_opt->count()) cfg.block_quant = quant;
        cfg.seed = seed;
        cfg.validate();
        return cfg;
    }
};

struct WiringFlags {
    bool no_reference = false;
    bool no_motion_bias = false;
    bool warp_image = false;
    bool warp_latent = false;
    bool warp_kv = false;

    void attach(CLI::App* sub) {
        sub->add_flag("--no-reference", no_reference, "drop the reference branch entirely");
        sub->add_flag("--no-motion-bias", no_motion_bias, "keep reference tokens, drop the motion bias");
        sub->add_flag("--warp-ref-image", warp_image, "pre-align by warping reference pixels");
        sub->add_flag("--warp-ref-latent", warp_latent, "pre-align by warping the reference latent");
        sub->add_flag("--warp-ref-kv", warp_kv, "pre-align by warping attention K/V grids");
    }

    AblationWiring build() const {
        AblationWiring w;
        w.no_reference_branch = no_reference;
        w.no_motion_bias = no_motion_bias;
        w.warp_ref_image = warp_image;
        w.warp_ref_latent = warp_latent;
        w.warp_ref_kv = warp_kv;
        w.validate();
        return w;
    }
};

int codec_factor_for(const ModelConfig& cfg) {
    for (int f = 1; f * f * 3 <= cfg.latent_channels; ++f)
        if (3 * f * f == cfg.latent_channels) return f;
    throw ConfigError("checkpoint latent width " + std::to_string(cfg.latent_channels) +
                      " is not 3*f^2 for any integer f");
}

void setup_degrade(CLI::App& app) {
    auto sub = app.add_subcommand("degrade", "degrade images and emit a training manifest");
    sub->set_config("--config");
    struct Opts {
        std::vector<std::string> inputs;
        std::string out_dir;
        std::uint64_t seed = 0;
        DegradationFlags deg;
    };
    auto opt = std::make_shared<Opts>();
    sub->add_option("input", opt->inputs, "input image(s) (.png/.ppm)")->required();
    sub->add_option("-o,--out-dir", opt->out_dir, "output directory")->required();
    sub->add_option("--seed", opt->seed, "base seed; per-image noise streams derive from it")
        ->capture_default_str();
    opt->deg.attach(sub);
    sub->callback([opt, sub] {
        std::filesystem::create_directories(opt->out_dir);
        std::vector<ManifestEntry> entries;
        for (std::size_t i = 0; i < opt->inputs.size(); ++i) {
            const ImageBuffer clean = read_image(opt->inputs[i]);
            const DegradationConfig cfg =
                opt->deg.build(sub_seed(opt->seed, static_cast<std::uint64_t>(i)));
            const ImageBuffer lq = degrade(clean, cfg);
            const std::string stem = stem_of(opt->inputs[i]);
            ManifestEntry e;
            e.clean = stem + "_clean.png";
            e.ref = e.clean;  // no separate keyframe: the clean image stands in
            e.lq = stem + "_lq.png";
            e.flow = stem + ".flo";
            e.cfg = cfg;
            write_image(clean, join_path(opt->out_dir, e.clean));
            write_image(lq, join_path(opt->out_dir, e.lq));
            write_flo(FlowField(clean.height, clean.width), join_path(opt->out_dir, e.flow));
            entries.push_back(std::move(e));
            std::printf("wrote %s\n", join_path(opt->out_dir, entries.back().lq).c_str());
        }
        const std::string manifest = join_path(opt->out_dir, "manifest.txt");
        write_manifest(entries, manifest);
        emit_config(sub, manifest);
        std::printf("manifest %s (%zu samples)\n", manifest.c_str(), entries.size());
    });
}

void setup_synth(CLI::App& app) {
    auto sub = app.add_subcommand("synth", "generate a procedural misaligned-pair dataset");
    sub->set_config("--config");
    struct Opts {
        std::string out_dir;
        int count = 16;
        int height = 64;
        int width = 64;
        std::string warp = "translation";
        double amount = 3.5;
        double amount2 = -2.5;
        int max_offset = 1;
        std::uint64_t seed = 0;
        DegradationFlags deg;
    };
    auto opt = std::make_shared<Opts>();
    sub->add_option("-o,--out-dir", opt->out_dir, "output directory")->required();
    sub->add_option("--count", opt->count, "number of samples")->capture_default_str();
    sub->add_option("--height", opt->height, "frame height")->capture_default_str();
    sub->add_option("--width", opt->width, "frame width")->capture_default_str();
    sub->add_option("--warp", opt->warp, "misalignment: translation | rotation | zoom")
        ->capture_default_str();
    sub->add_option("--amount", opt->amount,
                    "warp amount (dx | angle rad | scale) at offset 1")
        ->capture_default_str();
    sub->add_option("--amount2", opt->amount2, "second warp component (dy)")
        ->capture_default_str();
    sub->add_option("--max-offset", opt->max_offset,
                    "cycle temporal offsets 1..K to vary misalignment strength")
        ->capture_default_str();
    sub->add_option("--seed", opt->seed, "base seed")->capture_default_str();
    opt->deg.attach(sub);
    sub->callback([opt, sub] {
        if (opt->count < 1) throw ConfigError("synth: count must be >= 1");
        if (opt->max_offset < 1) throw ConfigError("synth: max-offset must be >= 1");
        std::filesystem::create_directories(opt->out_dir);
        const WarpKind kind = parse_warp_kind(opt->warp);
        std::vector<ManifestEntry> entries;
        for (int i = 0; i < opt->count; ++i) {
            const auto si = static_cast<std::uint64_t>(i);
            const ImageBuffer frame =
                synth_texture(opt->height, opt->width, sub_seed(opt->seed, 2 * si));
            const DegradationConfig cfg = opt->deg.build(sub_seed(opt->seed, 2 * si + 1));
            const int k = 1 + i % opt->max_offset;
            const TrainingPair pair =
                make_training_pair(frame, k, kind, opt->amount, opt->amount2, cfg);
            char stem[32];
            std::snprintf(stem, sizeof(stem), "sample_%03d", i);
            ManifestEntry e;
            e.clean = std::string(stem) + "_clean.png";
            e.ref = std::string(stem) + "_ref.png";
            e.lq = std::string(stem) + "_lq.png";
            e.flow = std::string(stem) + ".flo";
            e.cfg = cfg;
            write_image(pair.clean, join_path(opt->out_dir, e.clean));
            write_image(pair.ref, join_path(opt->out_dir, e.ref));
            write_image(pair.lq, join_path(opt->out_dir, e.lq));
            write_image(pair.ref_lq,
                        join_path(opt->out_dir, std::string(stem) + "_reflq.png"));
            write_flo(pair.gt_flow, join_path(opt->out_dir, e.flow));
            entries.push_back(std::move(e));
        }
        const std::string manifest = join_path(opt->out_dir, "manifest.txt");
        write_manifest(entries, manifest);
        emit_config(sub, manifest);
        std::printf("manifest %s (%zu samples)\n", manifest.c_str(), entries.size());
    });
}

void setup_flow(CLI::App& app) {
    auto sub = app.add_subcommand("flow", "estimate block-matching flow between two images");
    sub->set_config("--config");
    struct Opts {
        std::string src, dst, out;
        int block = 16;
        int search = 24;
    };
    auto opt = std::make_shared<Opts>();
    sub->add_option("--src", opt->src, "source image (flow lives on its grid)")->required();
    sub->add_option("--dst", opt->dst, "destination image")->required();
    sub->add_option("-o,--out", opt->out, "output .flo path")->required();
    sub->add_option("--block", opt->block, "matching block size")->capture_default_str();
    sub->add_option("--search", opt->search, "search radius in pixels")->capture_default_str();
    sub->callback([opt, sub] {
        const ImageBuffer src = read_image(opt->src);
        const ImageBuffer dst = read_image(opt->dst);
        const FlowField f = estimate_flow(src, dst, opt->block, opt->search);
        write_flo(f, opt->out);
        emit_config(sub, opt->out);
        std::printf("wrote %s (%dx%d)\n", opt->out.c_str(), f.width, f.height);
    });
}

void setup_train(CLI::App& app) {
    auto sub = app.add_subcommand("train", "fit the restoration model on a manifest");
    sub->set_config("--config");
    struct Opts {
        std::string manifest;
        std::string out = "checkpoint.rbc";
        std::string trace;
        TrainConfig cfg;
        int factor = 4;
        WiringFlags wiring;
    };
    auto opt = std::make_shared<Opts>();
    sub->add_option("--manifest", opt->manifest, "dataset manifest")->required();
    sub->add_option("-o,--out", opt->out, "checkpoint output path")->capture_default_str();
    sub->add_option("--trace", opt->trace, "per-step loss trace output path");
    sub->add_option("--steps", opt->cfg.steps, "optimizer steps")->capture_default_str();
    sub->add_option("--batch", opt->cfg.batch_size, "batch size")->capture_default_str();
    sub->add_option("--lr", opt->cfg.lr, "Adam learning rate")->capture_default_str();
    sub->add_option("--seed", opt->cfg.seed, "training seed")->capture_default_str();
    sub->add_option("--depth", opt->cfg.model.depth, "transformer blocks")->capture_default_str();
    sub->add_option("--d-model", opt->cfg.model.d_model, "token width")->capture_default_str();
    sub->add_option("--heads", opt->cfg.model.heads, "attention heads")->capture_default_str();
    sub->add_option("--time-dim", opt->cfg.model.time_dim, "time embedding width")
        ->capture_default_str();
    sub->add_option("--motion-hidden", opt->cfg.model.motion_hidden,
                    "motion encoder hidden channels")
        ->capture_default_str();
    sub->add_option("--latent-factor", opt->factor, "space-to-depth factor")
        ->capture_default_str();
    sub->add_option("--t-horizon", opt->cfg.model.t_horizon, "bridge time horizon")
        ->capture_default_str();
    opt->wiring.attach(sub);
    sub->callback([opt, sub] {
        opt->cfg.wiring = opt->wiring.build();
        const LatentCodec codec(opt->factor);
        opt->cfg.model.latent_channels = codec.channels();
        opt->cfg.model.validate();
        const auto items = load_training_items(opt->manifest, codec);
        const std::size_t n_val = items.size() / 10;
        std::printf("samples %zu (train %zu, val %zu)\n", items.size(),
                    items.size() - n_val, n_val);
        Restorer model(opt->cfg.model, opt->cfg.seed);
        const TrainResult res = train(model, codec, opt->cfg, items);
        for (std::size_t s = 49; s < res.loss_trace.size(); s += 50)
            std::printf("step %zu loss %.6f\n", s + 1, res.loss_trace[s]);
        if (!res.loss_trace.empty())
            std::printf("final loss %.6f\n", res.loss_trace.back());
        if (res.val_count > 0)
            std::printf("val loss %.6f (%d samples)\n", res.val_loss, res.val_count);
        save_checkpoint(opt->out, model, opt->cfg.seed, opt->cfg.steps);
        if (!opt->trace.empty()) write_loss_trace(opt->trace, res.loss_trace);
        emit_config(sub, opt->out);
        std::printf("checkpoint %s\n", opt->out.c_str());
    });
}

void setup_restore(CLI::App& app) {
    auto sub = app.add_subcommand("restore", "restore one frame with a reference keyframe");
    sub->set_config("--config");
    struct Opts {
        std::string input, ref, checkpoint, out;
        std::string record;
        std::string flow_fwd, flow_bwd;
        RestoreOptions ro;
        bool no_pcr = false;
        WiringFlags wiring;
        DegradationFlags deg;
        std::uint64_t deg_seed = 0;
    };
    auto opt = std::make_shared<Opts>();
    sub->add_option("--in", opt->input, "degraded input image")->required();
    sub->add_option("--ref", opt->ref, "high-quality reference image")->required();
    sub->add_option("--checkpoint", opt->checkpoint, "trained model checkpoint")->required();
    sub->add_option("-o,--out", opt->out, "restored output image")->required();
    sub->add_option("--record", opt->record, "correspondence sidecar path (default <out>.record.json)");
    sub->add_option("--patch", opt->ro.patch, "tile size")->capture_default_str();
    sub->add_option("--overlap", opt->ro.overlap, "tile overlap")->capture_default_str();
    sub->add_option("--steps", opt->ro.steps, "sampler steps per tile")->capture_default_str();
    sub->add_option("--seed", opt->ro.seed, "noise seed")->capture_default_str();
    sub->add_option("--threads", opt->ro.threads, "worker threads over tiles")
        ->capture_default_str();
    sub->add_flag("--no-pcr", opt->no_pcr, "disable patch correspondence; use co-located crops");
    sub->add_option("--flow-block", opt->ro.flow_block, "flow matching block size")
        ->capture_default_str();
    sub->add_option("--flow-search", opt->ro.flow_search, "flow search radius")
        ->capture_default_str();
    sub->add_option("--flow-fwd", opt->flow_fwd, "override reference->input flow (.flo)");
    sub->add_option("--flow-bwd", opt->flow_bwd, "override input->reference flow (.flo)");
    sub->add_option("--deg-seed", opt->deg_seed,
                    "seed for the reference degradation used in flow estimation")
        ->capture_default_str();
    opt->wiring.attach(sub);
    opt->deg.attach(sub);
    sub->callback([opt, sub] {
        opt->ro.use_pcr = !opt->no_pcr;
        opt->ro.wiring = opt->wiring.build();
        if (!opt->flow_fwd.empty()) opt->ro.flow_fwd = read_flo(opt->flow_fwd);
        if (!opt->flow_bwd.empty()) opt->ro.flow_bwd = read_flo(opt->flow_bwd);
        const DegradationConfig ref_deg = opt->deg.build(opt->deg_seed);
        const Checkpoint ck = load_checkpoint(opt->checkpoint);
        const LatentCodec codec(codec_factor_for(ck.model.config()));
        const ImageBuffer lq = read_image(opt->input);
        const ImageBuffer ref = read_image(opt->ref);
        RestoreRecord record;
        const ImageBuffer out =
            restore_image(lq, ref, ck.model, codec, ref_deg, opt->ro, &record);
        write_image(out, opt->out);
        const std::string record_path =
            opt->record.empty() ? opt->out + ".record.json" : opt->record;
        write_text_file(record_path, record.to_json());
        emit_config(sub, opt->out);
        std::printf("restored %s (%dx%d, %zu tiles)\n", opt->out.c_str(), out.width,
                    out.height, record.plan.tile_count());
    });
}

void setup_eval(CLI::App& app) {
    auto sub = app.add_subcommand("eval", "score restored outputs against a manifest");
    sub->set_config("--config");
    struct Opts {
        std::string manifest, restored_dir, out, import_scores;
        std::string metrics = "psnr_y,ssim_y,rel_sharpness,embed_sim";
    };
    auto opt = std::make_shared<Opts>();
    sub->add_option("--manifest", opt->manifest, "dataset manifest")->required();
    sub->add_option("--restored-dir", opt->restored_dir,
                    "directory of restored images, named after each lq file")
        ->required();
    sub->add_option("--metrics", opt->metrics, "comma-separated metric names")
        ->capture_default_str();
    sub->add_option("--import-scores", opt->import_scores,
                    "merge external `id metric value` lines into the report");
    sub->add_option("-o,--out", opt->out, "report path (.json for JSON, else text)");
    sub->callback([opt, sub] {
        std::vector<std::string> names;
        std::string cur;
        for (char c : opt->metrics + ",") {
            if (c == ',') {
                if (!cur.empty()) names.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        const MetricReport report =
            evaluate(opt->manifest, opt->restored_dir, names, opt->import_scores);
        if (opt->out.empty()) {
            std::fputs(report.to_text().c_str(), stdout);
        } else {
            const bool json = opt->out.size() > 5 &&
                              opt->out.compare(opt->out.size() - 5, 5, ".json") == 0;
            write_text_file(opt->out, json ? report.to_json() : report.to_text());
            emit_config(sub, opt->out);
            for (const auto& [k, v] : report.aggregates)
                std::printf("agg %s=%.6f\n", k.c_str(), v);
            std::printf("report %s\n", opt->out.c_str());
        }
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reference-guided image restoration toolkit"};
    app.set_version_flag("--version", "refbridge 0.1.0");
    app.require_subcommand(1);
    setup_degrade(app);
    setup_synth(app);
    setup_flow(app);
    setup_train(app);
    setup_restore(app);
    setup_eval(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const refbridge::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
