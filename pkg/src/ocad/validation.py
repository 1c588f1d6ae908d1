"""Small input-validation helpers used by the estimators and kernels."""

import numpy as np

from .exceptions import ShapeError, ValidationError

PATCH_SIZE = 64


def as_float_array(x, dtype=None, name="array"):
    """Coerce to a float ndarray (contiguous); reject object/complex input."""
    arr = np.asarray(x)
    if arr.dtype == object or np.iscomplexobj(arr):
        raise ValidationError(f"{name}: expected real numeric data, got dtype {arr.dtype}")
    if dtype is not None:
        arr = np.ascontiguousarray(arr, dtype=dtype)
    elif arr.dtype not in (np.float32, np.float64):
        arr = np.ascontiguousarray(arr, dtype=np.float64)
    else:
        arr = np.ascontiguousarray(arr)
    return arr


def check_tensor3(x, name="input"):
    """Validate an (H, W, C) tensor and return it as a float array."""
    arr = as_float_array(x, name=name)
    if arr.ndim != 3:
        raise ShapeError(f"{name}: expected (height, width, channels), got shape {arr.shape}")
    return arr


def check_patch_batch(X, name="X"):
    """Accept (N, 64, 64) or a sequence of 64x64 patches; return (N, 64, 64)."""
    arr = as_float_array(X, name=name)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != (PATCH_SIZE, PATCH_SIZE):
        raise ShapeError(
            f"{name}: expected (n, {PATCH_SIZE}, {PATCH_SIZE}) patches, got shape {arr.shape}"
        )
    return arr


def check_feature_matrix(X, n_features=None, name="X"):
    """Validate a 2-D feature matrix, optionally pinning the feature count."""
    arr = as_float_array(X, name=name)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-d feature matrix, got shape {arr.shape}")
    if n_features is not None and arr.shape[1] != n_features:
        raise ShapeError(
            f"{name}: expected {n_features} features, got {arr.shape[1]}"
        )
    return arr


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains NaN or Inf")
    return arr


def require(condition, message):
    if not condition:
        raise ValidationError(message)
