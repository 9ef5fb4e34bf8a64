"""Input codings: direct (static replay), time-to-first-spike, and simulated DVS.

All encoders take images with values in [0, 1] and arbitrary leading batch
dimensions (``[..., C, H, W]``) and return a sequence with time as the new
leading axis.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DVS_LOG_EPS = 1.0 / 255.0


def _check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def encode_direct(img, T: int) -> np.ndarray:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    img = _check_image(img)
    return np.broadcast_to(img, (T,) + img.shape).copy()


def ttfs_spike_time(x, T: int) -> np.ndarray:
    """Latency index ``round((1 - x)(T - 1))``, halves rounded away from zero.

    Only meaningful for ``x > 0``; zero pixels do not fire at all.
    """
    return np.floor((1.0 - np.asarray(x, dtype=np.float64)) * (T - 1) + 0.5).astype(np.int64)


def encode_ttfs(img, T: int) -> np.ndarray:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    img = _check_image(img)
    t_star = ttfs_spike_time(img, T)
    steps = np.arange(T).reshape((T,) + (1,) * img.ndim)
    return ((steps == t_star) & (img > 0.0)).astype(np.float64)


def decode_ttfs(train: np.ndarray) -> np.ndarray:
    """Invert the latency map: ``1 - t/(T-1)`` for pixels that fired, else 0."""
    T = train.shape[0]
    fired = train.any(axis=0)
    t = train.argmax(axis=0)
    scale = 1.0 / (T - 1) if T > 1 else 0.0
    return np.where(fired, 1.0 - t * scale, 0.0)


def ttfs_alphabet_size(T: int) -> int:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return T + 1


def triangle_path(T: int, amplitude: float = 2.0) -> np.ndarray:
    """``T + 1`` (dx, dy) offsets walking a closed triangle; first == last."""
    vertices = np.array([[0.0, 0.0], [amplitude, 0.0], [amplitude / 2.0, amplitude], [0.0, 0.0]])
    legs = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(legs)])
    s = np.linspace(0.0, cum[-1], T + 1)
    return np.stack([np.interp(s, cum, vertices[:, 0]), np.interp(s, cum, vertices[:, 1])], axis=1)


def translate(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Shift the last two axes by (dx, dy) pixels with bilinear, edge-clamped sampling."""
    H, W = img.shape[-2:]
    ys = np.clip(np.arange(H) - dy, 0, H - 1)
    xs = np.clip(np.arange(W) - dx, 0, W - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[..., y0[:, None], x0[None, :]] * (1 - wx) + img[..., y0[:, None], x1[None, :]] * wx
    bot = img[..., y1[:, None], x0[None, :]] * (1 - wx) + img[..., y1[:, None], x1[None, :]] * wx
    return top * (1 - wy) + bot * wy


def encode_dvs_sim(
    img,
    T: int,
    motion: str | Sequence[Sequence[float]] = "triangle",
    threshold: float = 0.15,
    amplitude: float = 2.0,
    merge_polarity: bool = False,
) -> np.ndarray:
    """Events from log-intensity changes while the image moves along ``motion``.

    Images ``[..., C, H, W]`` are reduced to luminance (channel mean). The
    result is ``[T, ..., 2, H, W]`` with ON in channel 0 and OFF in channel 1,
    or ``[T, ..., 1, H, W]`` with either polarity when ``merge_polarity``.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    img = _check_image(img)
    if isinstance(motion, str):
        if motion == "triangle":
            path = triangle_path(T, amplitude)
        elif motion == "static":
            path = np.zeros((T + 1, 2))
        else:
            raise ValueError(f"unknown motion path {motion!r}")
    else:
        path = np.asarray(motion, dtype=np.float64)
    if path.shape != (T + 1, 2):
        raise ValueError(f"motion path must hold T + 1 = {T + 1} (dx, dy) offsets, got shape {path.shape}")
    lum = img.mean(axis=-3)
    log_frames = [np.log(translate(lum, dx, dy) + DVS_LOG_EPS) for dx, dy in path]
    out = []
    for t in range(1, T + 1):
        delta = log_frames[t] - log_frames[t - 1]
        on = delta > threshold
        off = delta < -threshold
        if merge_polarity:
            out.append((on | off)[..., None, :, :])
        else:
            out.append(np.stack([on, off], axis=-3))
    return np.stack(out).astype(np.float64)


Encoder = Callable[[np.ndarray, int], np.ndarray]


def get_encoder(name: str, **params) -> Encoder:
    """Encoder by CLI name: ``direct``, ``ttfs`` or ``dvs``."""
    if name == "direct":
        return encode_direct
    if name == "ttfs":
        return encode_ttfs
    if name == "dvs":
        params.setdefault("merge_polarity", True)
        return lambda img, T: encode_dvs_sim(img, T, **params)
    raise ValueError(f"unknown encoder {name!r}; expected direct, ttfs or dvs")

