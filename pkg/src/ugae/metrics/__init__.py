"""Quality metrics, region diagnostics and Bjontegaard deltas."""

from .bd import (PiecewiseCubic, RDCurve, akima_fit, akima_interpolate, bd_br,
                 bd_psnr)
from .quality import (LOSSLESS, ColorPsnr, color_mse, color_psnr, d1_mse,
                      d1_psnr, d2_mse, d2_psnr, y_psnr, yuv_psnr)
from .regions import (classify_frequency, classify_loss, frequency_scores,
                      loss_scores, overlap_ratio, top_fraction)

__all__ = [
    "LOSSLESS", "ColorPsnr", "PiecewiseCubic", "RDCurve", "akima_fit",
    "akima_interpolate", "bd_br", "bd_psnr", "classify_frequency", "classify_loss",
    "color_mse", "color_psnr", "d1_mse", "d1_psnr", "d2_mse", "d2_psnr",
    "frequency_scores", "loss_scores", "overlap_ratio", "top_fraction", "y_psnr",
    "yuv_psnr",
]
