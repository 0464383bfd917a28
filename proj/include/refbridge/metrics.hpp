#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "refbridge/image.hpp"

namespace refbridge {

// Pluggable scorer interfaces. External pretrained scorers attach through
// these (or through the scores-file import in evaluate); the built-ins below
// keep the core dependency-free.
using BaseMetric = std::function<double(const ImageBuffer&)>;
using EmbeddingProvider = std::function<std::vector<double>(const ImageBuffer&)>;

// |m(restored) - m(ref)| / |m(ref)|; the absolute value in the denominator
// extends the formula to signed plug-in metrics. NumericError when
// |m(ref)| < 1e-12.
double relative_metric(const ImageBuffer& restored, const ImageBuffer& ref,
                       const BaseMetric& m);

// 1 + variance of the 3x3 Laplacian response on luma over interior pixels;
// strictly >= 1, exactly 1 on constant images. Deterministic stand-in for
// learned no-reference sharpness scorers.
double builtin_sharpness(const ImageBuffer& img);

// Deterministic toy whole-image embedding: centered channel means, channel
// standard deviations, and centered 4x4 luma cell means (22 values).
std::vector<double> builtin_embedding(const ImageBuffer& img);

// cosine similarity in [-1, 1]; NumericError on zero-norm embeddings
double embedding_similarity(const ImageBuffer& restored, const ImageBuffer& ref,
                            const EmbeddingProvider& provider);

// Full-reference scores on BT.601 luma (Y = 0.299R + 0.587G + 0.114B),
// peak 1.0. psnr_y caps at 100 dB; ssim_y uses an 11x11 Gaussian window
// (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, averaged over fully valid windows.
double psnr_y(const ImageBuffer& a, const ImageBuffer& b);
double ssim_y(const ImageBuffer& a, const ImageBuffer& b);

struct MetricReport {
    struct Row {
        std::string id;
        std::vector<std::pair<std::string, double>> values;
        std::string failure;  // nonempty marks a failed row
    };
    std::vector<Row> rows;
    std::vector<std::pair<std::string, double>> aggregates;  // means over ok rows
    std::vector<std::pair<std::string, std::string>> metadata;

    std::string to_text() const;
    std::string to_json() const;
    std::uint64_t content_hash() const;  // hash of the canonical text form
};

// Runs the named metrics over a dataset manifest. Per entry, the restored
// image is looked up in restored_dir under the basename of the entry's lq
// path; full-reference scores compare against the clean image, relative and
// embedding scores against the reference. A missing or broken sample becomes
// a per-row failure note and the run continues. metric_names: psnr_y,
// ssim_y, rel_sharpness, embed_sim. import_scores_path (optional): lines of
// `id metric-name value` merged verbatim into matching rows; '#' starts a
// comment and a malformed line raises FormatError naming the line.
MetricReport evaluate(const std::string& manifest_path, const std::string& restored_dir,
                      const std::vector<std::string>& metric_names,
                      const std::string& import_scores_path = "");

}  // namespace refbridge
