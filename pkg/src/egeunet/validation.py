"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np


class NotFittedError(ValueError, AttributeError):
    pass


def check_images(X, channels: int = 3, multiple: int = 32) -> np.ndarray:
    """Return ``X`` as float32 (N, C, H, W) in [0, 1].

    Accepts (N, C, H, W), channels-last (N, H, W, C) and a single (C, H, W)
    image. uint8 input is scaled by 1/255.
    """
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"expected a 4-d image batch, got shape {X.shape}")
    if X.shape[1] != channels and X.shape[-1] == channels:
        X = X.transpose(0, 3, 1, 2)
    if X.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty image batch")
    if X.shape[2] % multiple or X.shape[3] % multiple:
        raise ValueError(f"spatial size must be divisible by {multiple}, got {X.shape[2:]}")
    if X.dtype == np.uint8:
        X = X.astype(np.float32) / 255.0
    X = np.ascontiguousarray(X, dtype=np.float32)
    if not np.isfinite(X).all():
        raise ValueError("images contain NaN or inf")
    return X


def check_masks(y, images: np.ndarray) -> np.ndarray:
    """Return ``y`` as float32 (N, 1, H, W) in {0, 1}, matching ``images``."""
    y = np.asarray(y)
    if y.ndim == 3:
        y = y[:, None]
    n, _, h, w = images.shape
    if y.shape != (n, 1, h, w):
        raise ValueError(f"masks of shape {y.shape} do not match images {images.shape}")
    if y.dtype == np.uint8 and y.max(initial=0) > 1:
        y = y > 127
    if not np.isin(y, (0, 1)).all():
        raise ValueError("masks must be binary (0/1 or 0/255)")
    return np.ascontiguousarray(y, dtype=np.float32)


def check_is_fitted(estimator, attribute: str = "model_") -> None:
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")
