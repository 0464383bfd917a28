#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "refbridge/degrade.hpp"
#include "refbridge/metrics.hpp"
#include "refbridge/tiling.hpp"
#include "refbridge/train.hpp"

namespace py = pybind11;
using namespace refbridge;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

ImageBuffer image_in(const FloatArray& a) {
    if (a.ndim() != 3 || a.shape(2) != 3)
        throw py::value_error("image must be [h, w, 3] float32");
    ImageBuffer img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(img.pixels.data(), a.data(), img.pixels.size() * sizeof(float));
    return img;
}

py::array image_out(const ImageBuffer& img) {
    py::array_t<float> out({img.height, img.width, 3});
    std::memcpy(out.mutable_data(), img.pixels.data(), img.pixels.size() * sizeof(float));
    return out;
}

FlowField flow_in(const FloatArray& a) {
    if (a.ndim() != 3 || a.shape(2) != 2)
        throw py::value_error("flow must be [h, w, 2] float32");
    FlowField f(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    const float* p = a.data();
    for (std::size_t i = 0; i < f.u.size(); ++i) {
        f.u[i] = p[2 * i];
        f.v[i] = p[2 * i + 1];
    }
    return f;
}

py::array flow_out(const FlowField& f) {
    py::array_t<float> out({f.height, f.width, 2});
    float* p = out.mutable_data();
    for (std::size_t i = 0; i < f.u.size(); ++i) {
        p[2 * i] = f.u[i];
        p[2 * i + 1] = f.v[i];
    }
    return out;
}

Tensor tensor_in(const FloatArray& a) {
    std::vector<int> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] =
        static_cast<int>(a.shape(i));
    std::vector<float> data(static_cast<std::size_t>(a.size()));
    std::memcpy(data.data(), a.data(), data.size() * sizeof(float));
    return Tensor::from_data(std::move(shape), std::move(data));
}

py::array tensor_out(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> out(shape);
    std::memcpy(out.mutable_data(), t.data().data(), t.numel() * sizeof(float));
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "reference-guided restoration core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def(
        "encode",
        [](const FloatArray& img, int factor) {
            return tensor_out(LatentCodec(factor).encode(image_in(img)));
        },
        py::arg("image"), py::arg("factor") = 4,
        "space-to-depth latent [3*f*f, h/f, w/f] of an [h, w, 3] image");
    m.def(
        "decode",
        [](const FloatArray& z, int factor) {
            return image_out(LatentCodec(factor).decode(tensor_in(z)));
        },
        py::arg("latent"), py::arg("factor") = 4);

    m.def(
        "degradation_preset", [](const std::string& name) {
            return format_degradation(degradation_preset(name));
        },
        py::arg("name"), "preset name -> config string");
    m.def(
        "degrade",
        [](const FloatArray& img, const std::string& cfg) {
            return image_out(degrade(image_in(img), parse_degradation(cfg)));
        },
        py::arg("image"), py::arg("config"),
        "apply a 'blur=..,down=..,noise=..,quant=..,seed=..' degradation");

    m.def(
        "synth_texture",
        [](int h, int w, std::uint64_t seed) { return image_out(synth_texture(h, w, seed)); },
        py::arg("height"), py::arg("width"), py::arg("seed") = 0);

    m.def(
        "estimate_flow",
        [](const FloatArray& src, const FloatArray& dst, int block, int search) {
            return flow_out(estimate_flow(image_in(src), image_in(dst), block, search));
        },
        py::arg("src"), py::arg("dst"), py::arg("block") = 16, py::arg("search") = 24,
        "per-block displacement field src-grid -> dst, [h, w, 2]");
    m.def(
        "warp",
        [](const FloatArray& img, const FloatArray& flow) {
            return image_out(warp(image_in(img), flow_in(flow)));
        },
        py::arg("image"), py::arg("flow"), "backward-bilinear warp by a flow field");

    m.def("psnr_y", [](const FloatArray& a, const FloatArray& b) {
        return psnr_y(image_in(a), image_in(b));
    });
    m.def("ssim_y", [](const FloatArray& a, const FloatArray& b) {
        return ssim_y(image_in(a), image_in(b));
    });
    m.def("sharpness",
          [](const FloatArray& img) { return builtin_sharpness(image_in(img)); });
    m.def("embedding_similarity", [](const FloatArray& a, const FloatArray& b) {
        return embedding_similarity(image_in(a), image_in(b), builtin_embedding);
    });
    m.def(
        "relative_sharpness",
        [](const FloatArray& restored, const FloatArray& ref) {
            return relative_metric(image_in(restored), image_in(ref), builtin_sharpness);
        },
        py::arg("restored"), py::arg("reference"));

    m.def(
        "restore",
        [](const FloatArray& lq, const FloatArray& ref, const std::string& checkpoint,
           int patch, int overlap, int steps, std::uint64_t seed, bool use_pcr,
           int threads, const std::string& ref_degradation) {
            const Checkpoint ck = load_checkpoint(checkpoint);
            int factor = 0;
            for (int f = 1; 3 * f * f <= ck.model.config().latent_channels; ++f)
                if (3 * f * f == ck.model.config().latent_channels) factor = f;
            if (factor == 0)
                throw ConfigError("checkpoint latent width is not 3*f^2");
            RestoreOptions opt;
            opt.patch = patch;
            opt.overlap = overlap;
            opt.steps = steps;
            opt.seed = seed;
            opt.use_pcr = use_pcr;
            opt.threads = threads;
            const DegradationConfig deg = ref_degradation.empty()
                                              ? DegradationConfig{}
                                              : parse_degradation(ref_degradation);
            return image_out(restore_image(image_in(lq), image_in(ref), ck.model,
                                           LatentCodec(factor), deg, opt));
        },
        py::arg("lq"), py::arg("reference"), py::arg("checkpoint"), py::arg("patch") = 64,
        py::arg("overlap") = 16, py::arg("steps") = 6, py::arg("seed") = 0,
        py::arg("use_pcr") = true, py::arg("threads") = 1,
        py::arg("ref_degradation") = "",
        "full tiled restoration of one frame using a trained checkpoint");

    m.def("read_image", [](const std::string& path) { return image_out(read_image(path)); });
    m.def("write_image", [](const FloatArray& img, const std::string& path) {
        write_image(image_in(img), path);
    });
    m.def("read_flo", [](const std::string& path) { return flow_out(read_flo(path)); });
    m.def("write_flo", [](const FloatArray& flow, const std::string& path) {
        write_flo(flow_in(flow), path);
    });
}
