"""Reference-guided image restoration: latent bridge sampling with
patch-correspondence reference retrieval.

Thin re-export of the compiled core; all arrays are float32 numpy
(images [h, w, 3], flows [h, w, 2], latents [c, h, w]).
"""

from ._core import (
    ConfigError,
    FormatError,
    NumericError,
    decode,
    degradation_preset,
    degrade,
    embedding_similarity,
    encode,
    estimate_flow,
    psnr_y,
    read_flo,
    read_image,
    relative_sharpness,
    restore,
    sharpness,
    ssim_y,
    synth_texture,
    warp,
    write_flo,
    write_image,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "NumericError",
    "decode",
    "degradation_preset",
    "degrade",
    "embedding_similarity",
    "encode",
    "estimate_flow",
    "psnr_y",
    "read_flo",
    "read_image",
    "relative_sharpness",
    "restore",
    "sharpness",
    "ssim_y",
    "synth_texture",
    "warp",
    "write_flo",
    "write_image",
]

__version__ = "0.1.0"
