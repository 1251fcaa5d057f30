"""scikit-learn style wrapper around the segmentation network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import SegSample
from .losses import confusion
from .model import DEFAULT_CHANNELS, build
from .ops import stable_sigmoid
from .training import predict_logits, train
from .validation import check_images, check_is_fitted, check_masks

# estimator parameter -> run-config key
_PARAM_KEYS = {
    "channels": "model.channels",
    "dw_style": "model.dw_style",
    "multi_axis": "ghpa.multi_axis",
    "dw_on_p": "ghpa.dw_on_p",
    "use_mask": "gab.use_mask",
    "use_dilation": "gab.use_dilation",
    "group_conv": "gab.group_conv",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "lr": "optim.lr",
    "weight_decay": "optim.weight_decay",
    "t_max": "sched.t_max",
    "eta_min": "sched.eta_min",
    "lambdas": "loss.lambdas",
    "augment": "data.augment",
    "rotation": "data.rotation",
    "threshold": "eval.threshold",
    "seed": "seed",
}


class EGEUNetSegmenter(BaseEstimator):
    """Binary lesion segmenter.

    ``fit(X, y)`` takes images (N, 3, H, W) in [0, 1] (uint8 and channels-last
    are accepted) and binary masks (N, 1, H, W) or (N, H, W). H and W must be
    multiples of 32; all images in one call share a size.
    """

    def __init__(self, channels=DEFAULT_CHANNELS, dw_style="separable", multi_axis=True, dw_on_p=True,
                 use_mask=True, use_dilation=True, group_conv="separable", epochs=300, batch_size=8,
                 lr=1e-3, weight_decay=1e-2, t_max=50, eta_min=1e-5,
                 lambdas=(1.0, 0.5, 0.4, 0.3, 0.2, 0.1), augment=True, rotation="right_angle",
                 threshold=0.5, seed=0, verbose=False):
        self.channels = channels
        self.dw_style = dw_style
        self.multi_axis = multi_axis
        self.dw_on_p = dw_on_p
        self.use_mask = use_mask
        self.use_dilation = use_dilation
        self.group_conv = group_conv
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.t_max = t_max
        self.eta_min = eta_min
        self.lambdas = lambdas
        self.augment = augment
        self.rotation = rotation
        self.threshold = threshold
        self.seed = seed
        self.verbose = verbose

    def run_config(self, image_size: int = 256) -> RunConfig:
        values = {key: getattr(self, name) for name, key in _PARAM_KEYS.items()}
        values["image.size"] = image_size
        return RunConfig(values)

    def fit(self, X, y, X_val=None, y_val=None) -> "EGEUNetSegmenter":
        X = check_images(X)
        y = check_masks(y, X)
        if X.shape[2] != X.shape[3]:
            raise ValueError(f"training images must be square, got {X.shape[2:]}")
        cfg = self.run_config(X.shape[2])
        samples = [SegSample(f"{i:06d}", X[i], y[i]) for i in range(len(X))]
        if X_val is not None:
            Xv = check_images(X_val)
            yv = check_masks(y_val, Xv)
            val = [SegSample(f"v{i:06d}", Xv[i], yv[i]) for i in range(len(Xv))]
        else:
            val = samples
        log = (lambda row: print(f"epoch {row.epoch} loss {row.train_loss:.4f} miou {row.val_miou:.4f}")) \
            if self.verbose else None
        result = train(cfg, samples, val, log=log)
        self.model_ = result.model
        self.history_ = result.rows
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        """Raw logits, shape (N, 1, H, W)."""
        check_is_fitted(self)
        return predict_logits(self.model_, check_images(X), self.batch_size)

    def predict_proba(self, X) -> np.ndarray:
        return stable_sigmoid(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        """Binary masks (N, 1, H, W) as uint8 0/1."""
        return (self.predict_proba(X) >= self.threshold).astype(np.uint8)

    def score(self, X, y) -> float:
        """Dataset-level mIoU (mean of foreground and background IoU)."""
        X = check_images(X)
        y = check_masks(y, X)
        return confusion(self.decision_function(X), y, self.threshold).miou

    def save(self, path) -> None:
        check_is_fitted(self)
        save_checkpoint(self.model_, path)

    def load(self, path, image_size: int = 256) -> "EGEUNetSegmenter":
        self.model_ = load_checkpoint(path, self.run_config(image_size).model_config())
        self.n_features_in_ = 3
        return self

    def init_model(self, image_size: int = 256) -> "EGEUNetSegmenter":
        """Attach a freshly initialised (untrained) network."""
        self.model_ = build(self.run_config(image_size).model_config())
        self.n_features_in_ = 3
        return self
