#include "refbridge/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "refbridge/degrade.hpp"
#include "refbridge/errors.hpp"
#include "refbridge/hash.hpp"

namespace refbridge {

namespace {

std::vector<double> luma_d(const ImageBuffer& img) {
    std::vector<double> y(static_cast<std::size_t>(img.height) * img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            y[static_cast<std::size_t>(r) * img.width + c] =
                0.299 * img.at(r, c, 0) + 0.587 * img.at(r, c, 1) + 0.114 * img.at(r, c, 2);
    return y;
}

std::string fmt_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string basename_of(const std::string& path) {
    const auto pos = path.find_last_of('/');
    return pos == std::string::npos ? path : path.substr(pos + 1);
}

}  // namespace

double relative_metric(const ImageBuffer& restored, const ImageBuffer& ref,
                       const BaseMetric& m) {
    const double vr = m(ref);
    if (std::abs(vr) < 1e-12)
        throw NumericError("relative_metric: reference metric value " + fmt_double(vr) +
                           " is degenerate");
    return std::abs(m(restored) - vr) / std::abs(vr);
}

double builtin_sharpness(const ImageBuffer& img) {
    if (img.height < 1 || img.width < 1) throw ShapeError("builtin_sharpness: empty image");
    if (img.height < 3 || img.width < 3) return 1.0;  // no interior
    const auto y = luma_d(img);
    const int h = img.height, w = img.width;
    auto lap = [&](int r, int c) {
        return y[static_cast<std::size_t>(r - 1) * w + c] +
               y[static_cast<std::size_t>(r + 1) * w + c] +
               y[static_cast<std::size_t>(r) * w + c - 1] +
               y[static_cast<std::size_t>(r) * w + c + 1] -
               4.0 * y[static_cast<std::size_t>(r) * w + c];
    };
    const double count = static_cast<double>(h - 2) * (w - 2);
    double mean = 0.0;
    for (int r = 1; r < h - 1; ++r)
        for (int c = 1; c < w - 1; ++c) mean += lap(r, c);
    mean /= count;
    double var = 0.0;
    for (int r = 1; r < h - 1; ++r)
        for (int c = 1; c < w - 1; ++c) {
            const double d = lap(r, c) - mean;
            var += d * d;
        }
    return 1.0 + var / count;
}

std::vector<double> builtin_embedding(const ImageBuffer& img) {
    if (img.height < 1 || img.width < 1) throw ShapeError("builtin_embedding: empty image");
    std::vector<double> e;
    e.reserve(22);
    const double n = static_cast<double>(img.height) * img.width;
    for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int r = 0; r < img.height; ++r)
            for (int x = 0; x < img.width; ++x) s += img.at(r, x, c);
        e.push_back(s / n - 0.5);
    }
    for (int c = 0; c < 3; ++c) {
        const double mean = e[static_cast<std::size_t>(c)] + 0.5;
        double s = 0.0;
        for (int r = 0; r < img.height; ++r)
            for (int x = 0; x < img.width; ++x) {
                const double d = img.at(r, x, c) - mean;
                s += d * d;
            }
        e.push_back(std::sqrt(s / n));
    }
    const auto y = luma_d(img);
    for (int by = 0; by < 4; ++by)
        for (int bx = 0; bx < 4; ++bx) {
            const int r0 = by * img.height / 4, r1 = (by + 1) * img.height / 4;
            const int c0 = bx * img.width / 4, c1 = (bx + 1) * img.width / 4;
            double s = 0.0;
            long cnt = 0;
            for (int r = r0; r < std::max(r1, r0 + 1) && r < img.height; ++r)
                for (int c = c0; c < std::max(c1, c0 + 1) && c < img.width; ++c) {
                    s += y[static_cast<std::size_t>(r) * img.width + c];
                    ++cnt;
                }
            e.push_back(cnt > 0 ? s / cnt - 0.5 : 0.0);
        }
    return e;
}

double embedding_similarity(const ImageBuffer& restored, const ImageBuffer& ref,
                            const EmbeddingProvider& provider) {
    const auto a = provider(restored), b = provider(ref);
    if (a.size() != b.size() || a.empty())
        throw ShapeError("embedding_similarity: embedding widths " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na < 1e-24 || nb < 1e-24)
        throw NumericError("embedding_similarity: zero-norm embedding");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double psnr_y(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_extents(b))
        throw ShapeError("psnr_y: extents differ: " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height));
    const auto ya = luma_d(a), yb = luma_d(b);
    double mse = 0.0;
    for (std::size_t i = 0; i < ya.size(); ++i) {
        const double d = ya[i] - yb[i];
        mse += d * d;
    }
    mse /= static_cast<double>(ya.size());
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double ssim_y(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_extents(b))
        throw ShapeError("ssim_y: extents differ: " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height));
    constexpr int kRad = 5;  // 11x11 window
    const int h = a.height, w = a.width;
    if (h < 2 * kRad + 1 || w < 2 * kRad + 1)
        throw ShapeError("ssim_y: image smaller than the 11x11 window");

    double g[2 * kRad + 1];
    double norm = 0.0;
    for (int i = -kRad; i <= kRad; ++i) {
        g[i + kRad] = std::exp(-(static_cast<double>(i) * i) / (2.0 * 1.5 * 1.5));
        norm += g[i + kRad];
    }
    for (double& v : g) v /= norm;

    const auto ya = luma_d(a), yb = luma_d(b);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    // separable weighted means of {a, b, a*a, b*b, a*b}
    std::vector<double> maps[5];
    const std::vector<double>* srcs[5] = {&ya, &yb, nullptr, nullptr, nullptr};
    std::vector<double> aa(plane), bb(plane), ab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
        aa[i] = ya[i] * ya[i];
        bb[i] = yb[i] * yb[i];
        ab[i] = ya[i] * yb[i];
    }
    srcs[2] = &aa;
    srcs[3] = &bb;
    srcs[4] = &ab;
    std::vector<double> hpass(plane);
    for (int m = 0; m < 5; ++m) {
        const auto& src = *srcs[m];
        std::fill(hpass.begin(), hpass.end(), 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = kRad; x < w - kRad; ++x) {
                double s = 0.0;
                for (int i = -kRad; i <= kRad; ++i)
                    s += g[i + kRad] * src[static_cast<std::size_t>(y) * w + x + i];
                hpass[static_cast<std::size_t>(y) * w + x] = s;
            }
        maps[m].assign(plane, 0.0);
        for (int y = kRad; y < h - kRad; ++y)
            for (int x = kRad; x < w - kRad; ++x) {
                double s = 0.0;
                for (int i = -kRad; i <= kRad; ++i)
                    s += g[i + kRad] * hpass[static_cast<std::size_t>(y + i) * w + x];
                maps[m][static_cast<std::size_t>(y) * w + x] = s;
            }
    }

    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    long count = 0;
    for (int y = kRad; y < h - kRad; ++y)
        for (int x = kRad; x < w - kRad; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const double mu_a = maps[0][i], mu_b = maps[1][i];
            const double va = maps[2][i] - mu_a * mu_a;
            const double vb = maps[3][i] - mu_b * mu_b;
            const double cov = maps[4][i] - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
            ++count;
        }
    return total / static_cast<double>(count);
}

std::string MetricReport::to_text() const {
    std::ostringstream out;
    out << "refbridge-report v1\n";
    for (const auto& [k, v] : metadata) out << "meta " << k << ' ' << v << '\n';
    for (const auto& row : rows) {
        if (!row.failure.empty()) {
            out << "img " << row.id << " FAILED " << row.failure << '\n';
            continue;
        }
        out << "img " << row.id;
        for (const auto& [name, value] : row.values) out << ' ' << name << '=' << fmt_double(value);
        out << '\n';
    }
    for (const auto& [name, value] : aggregates) out << "agg " << name << '=' << fmt_double(value) << '\n';
    return out.str();
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["format"] = "refbridge-report";
    j["version"] = 1;
    for (const auto& [k, v] : metadata) j["metadata"][k] = v;
    j["images"] = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json r;
        r["id"] = row.id;
        if (!row.failure.empty()) {
            r["failure"] = row.failure;
        } else {
            for (const auto& [name, value] : row.values) r["metrics"][name] = value;
        }
        j["images"].push_back(std::move(r));
    }
    for (const auto& [name, value] : aggregates) j["aggregates"][name] = value;
    j["hash"] = hex64(content_hash());
    return j.dump(2);
}

std::uint64_t MetricReport::content_hash() const { return fnv1a64(to_text()); }

MetricReport evaluate(const std::string& manifest_path, const std::string& restored_dir,
                      const std::vector<std::string>& metric_names,
                      const std::string& import_scores_path) {
    static const std::set<std::string> known = {"psnr_y", "ssim_y", "rel_sharpness", "embed_sim"};
    for (const auto& name : metric_names)
        if (!known.count(name))
            throw ConfigError("evaluate: unknown metric '" + name +
                              "' (psnr_y|ssim_y|rel_sharpness|embed_sim)");

    const auto entries = read_manifest(manifest_path);
    const std::string base = parent_dir(manifest_path);

    MetricReport report;
    {
        std::string names;
        for (const auto& n : metric_names) names += (names.empty() ? "" : ",") + n;
        report.metadata.emplace_back("manifest", manifest_path);
        report.metadata.emplace_back("metrics", names);
        report.metadata.emplace_back("samples", std::to_string(entries.size()));
        if (entries.empty()) report.metadata.emplace_back("note", "no samples");
    }

    for (const auto& e : entries) {
        MetricReport::Row row;
        row.id = basename_of(e.lq);
        try {
            const ImageBuffer restored = read_image(join_path(restored_dir, row.id));
            const ImageBuffer ref = read_image(join_path(base, e.ref));
            const ImageBuffer clean = read_image(join_path(base, e.clean));
            for (const auto& name : metric_names) {
                if (name == "psnr_y")
                    row.values.emplace_back(name, psnr_y(restored, clean));
                else if (name == "ssim_y")
                    row.values.emplace_back(name, ssim_y(restored, clean));
                else if (name == "rel_sharpness")
                    row.values.emplace_back(name, relative_metric(restored, ref, builtin_sharpness));
                else if (name == "embed_sim")
                    row.values.emplace_back(name, embedding_similarity(restored, ref, builtin_embedding));
            }
        } catch (const std::exception& ex) {
            row.values.clear();
            row.failure = ex.what();
        }
        report.rows.push_back(std::move(row));
    }

    if (!import_scores_path.empty()) {
        std::ifstream in(import_scores_path);
        if (!in) throw FormatError("evaluate: cannot open scores file " + import_scores_path);
        std::string line;
        int line_no = 0, merged = 0, unmatched = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash_pos = line.find('#');
            if (hash_pos != std::string::npos) line.erase(hash_pos);
            std::istringstream ls(line);
            std::string id, name, extra;
            double value;
            if (!(ls >> id)) continue;  // blank line
            if (!(ls >> name >> value) || (ls >> extra))
                throw FormatError("evaluate: " + import_scores_path + ":" +
                                  std::to_string(line_no) +
                                  ": expected 'id metric-name value'");
            bool found = false;
            for (auto& row : report.rows)
                if (row.id == id && row.failure.empty()) {
                    row.values.emplace_back(name, value);
                    found = true;
                    ++merged;
                }
            if (!found) ++unmatched;
        }
        report.metadata.emplace_back("imported", std::to_string(merged));
        if (unmatched > 0) report.metadata.emplace_back("imported_unmatched", std::to_string(unmatched));
    }

    // aggregate means over rows carrying each metric
    std::vector<std::string> agg_names;
    for (const auto& row : report.rows)
        for (const auto& [name, value] : row.values)
            if (std::find(agg_names.begin(), agg_names.end(), name) == agg_names.end())
                agg_names.push_back(name);
    for (const auto& name : agg_names) {
        double s = 0.0;
        long cnt = 0;
        for (const auto& row : report.rows)
            for (const auto& [n, v] : row.values)
                if (n == name) {
                    s += v;
                    ++cnt;
                }
        if (cnt > 0) report.aggregates.emplace_back(name, s / static_cast<double>(cnt));
    }
    return report;
}

}  // namespace refbridge
