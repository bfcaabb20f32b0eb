"""Fixed color ramp for absolute-error heat maps."""
import numpy as np
from PIL import Image

# black -> red -> yellow -> white over [0, ERROR_RAMP_MAX] normalized depth error
ERROR_RAMP_MAX = 0.1
_STOPS = np.array([0.0, 1 / 3, 2 / 3, 1.0])
_COLORS = np.array([[0, 0, 0], [255, 0, 0], [255, 255, 0], [255, 255, 255]], dtype=np.float64)


def error_heatmap(abs_err, vmax=ERROR_RAMP_MAX):
    t = np.clip(np.asarray(abs_err, dtype=np.float64) / vmax, 0.0, 1.0)
    rgb = np.stack([np.interp(t, _STOPS, _COLORS[:, c]) for c in range(3)], axis=-1)
    return np.round(rgb).astype(np.uint8)


def save_error_heatmap(abs_err, path, vmax=ERROR_RAMP_MAX):
    Image.fromarray(error_heatmap(abs_err, vmax), mode="RGB").save(path)
