#include "refbridge/latent.hpp"

namespace refbridge {

Tensor LatentCodec::encode(const ImageBuffer& img) const {
    const int f = factor;
    if (img.height % f != 0 || img.width % f != 0)
        throw ShapeError("encode: extents " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + " not divisible by factor " +
                         std::to_string(f));
    const int lh = img.height / f, lw = img.width / f;
    const int c = channels();
    std::vector<float> z(static_cast<std::size_t>(c) * lh * lw);
    for (int rgb = 0; rgb < 3; ++rgb)
        for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx) {
                const int ch = (rgb * f + dy) * f + dx;
                float* plane = &z[static_cast<std::size_t>(ch) * lh * lw];
                for (int y = 0; y < lh; ++y)
                    for (int x = 0; x < lw; ++x)
                        plane[static_cast<std::size_t>(y) * lw + x] =
                            img.at(y * f + dy, x * f + dx, rgb);
            }
    return Tensor::from_data({c, lh, lw}, std::move(z));
}

ImageBuffer LatentCodec::decode(const Tensor& z) const {
    const int f = factor;
    if (z.ndim() != 3)
        throw ShapeError("decode: latent must be [c,h,w], got " + shape_str(z.shape()));
    if (z.dim(0) != channels())
        throw ShapeError("decode: channel count " + std::to_string(z.dim(0)) + " != 3*f*f = " +
                         std::to_string(channels()));
    const int lh = z.dim(1), lw = z.dim(2);
    ImageBuffer img(lh * f, lw * f);
    const auto& zv = z.data();
    for (int rgb = 0; rgb < 3; ++rgb)
        for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx) {
                const int ch = (rgb * f + dy) * f + dx;
                const float* plane = &zv[static_cast<std::size_t>(ch) * lh * lw];
                for (int y = 0; y < lh; ++y)
                    for (int x = 0; x < lw; ++x)
                        img.at(y * f + dy, x * f + dx, rgb) =
                            plane[static_cast<std::size_t>(y) * lw + x];
            }
    return img;
}

}  // namespace refbridge
