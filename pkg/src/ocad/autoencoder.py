"""The 64x64 convolutional auto-encoder: architecture, training, features.

Architecture (fixed):
    encoder   conv 1->32 + ReLU, pool | conv 32->32 + ReLU, pool |
              conv 32->16 + ReLU, pool          -> latent 8x8x16
    decoder   up2x, conv 16->16 + ReLU | up2x, conv 16->32 + ReLU |
              up2x, conv 32->32 + ReLU | conv 32->1 (no activation)

All convolutions are 3x3, same-padded. The latent code flattens to 1024
values; the appearance latent plus the two motion latents concatenate to
a 3072-dim feature vector.
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
import threadpoolctl
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .exceptions import (
    CorruptModelError,
    IncompatibleModelError,
    ShapeError,
    ValidationError,
)
from .ops import (
    AdamState,
    ConvKernel,
    adam_update,
    conv2d_backward_batch,
    conv2d_forward_batch,
    maxpool2x2_batch,
    upsample_nearest2x_batch,
)
from .validation import check_patch_batch

log = logging.getLogger(__name__)

PATCH_SIZE = 64
LATENT_SHAPE = (8, 8, 16)
LATENT_DIM = 1024
FEATURE_DIM = 3 * LATENT_DIM

LAYER_ORDER = (
    "enc_conv1",
    "enc_conv2",
    "enc_conv3",
    "dec_conv1",
    "dec_conv2",
    "dec_conv3",
    "dec_conv4",
)
LAYER_CHANNELS = {
    "enc_conv1": (1, 32),
    "enc_conv2": (32, 32),
    "enc_conv3": (32, 16),
    "dec_conv1": (16, 16),
    "dec_conv2": (16, 32),
    "dec_conv3": (32, 32),
    "dec_conv4": (32, 1),
}

_ARCH_DESCRIPTION = "cae64x64:" + ",".join(
    f"{name}:3x3x{cin}x{cout}" for name, (cin, cout) in LAYER_CHANNELS.items()
)
ARCH_FINGERPRINT = hashlib.sha256(_ARCH_DESCRIPTION.encode("ascii")).digest()

_MAGIC = b"OCADCAE1"
_FORMAT_VERSION = 1


@dataclass
class CaeParams:
    """All weights/biases of one auto-encoder plus its Adam state."""

    kernels: dict  # layer name -> ConvKernel
    adam: dict  # "<layer>.weights" / "<layer>.bias" -> AdamState
    rng_seed: int = 0

    def __post_init__(self):
        if tuple(self.kernels) != LAYER_ORDER:
            raise ValidationError(
                f"kernels must be exactly {LAYER_ORDER}, got {tuple(self.kernels)}"
            )
        for name, kernel in self.kernels.items():
            cin, cout = LAYER_CHANNELS[name]
            if (kernel.cin, kernel.cout) != (cin, cout):
                raise ValidationError(
                    f"{name}: expected {cin}->{cout} channels, got "
                    f"{kernel.cin}->{kernel.cout}"
                )


def init_params(seed, dtype=np.float64):
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    kernels = {}
    adam = {}
    for name in LAYER_ORDER:
        cin, cout = LAYER_CHANNELS[name]
        fan_in, fan_out = 9 * cin, 9 * cout
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-bound, bound, size=(3, 3, cin, cout)).astype(dtype)
        bias = np.zeros(cout, dtype=dtype)
        kernels[name] = ConvKernel(weights, bias)
        adam[f"{name}.weights"] = AdamState.zeros_like(weights)
        adam[f"{name}.bias"] = AdamState.zeros_like(bias)
    return CaeParams(kernels=kernels, adam=adam, rng_seed=int(seed))


def _relu_inplace(pre, cache, name):
    """ReLU applied in place; the positivity mask is kept for backward."""
    if cache is not None:
        cache[f"{name}.mask"] = pre > 0
    return np.maximum(pre, 0, out=pre)


def _forward_batch(params, x, keep_cache):
    """Run the network on (N, 64, 64, 1); optionally keep a backward cache.

    The cache holds each conv layer's input, the ReLU masks and the
    pool/upsample backward closures -- exactly what _backward_batch needs.
    """
    k = params.kernels
    cache = {"enc_conv1.in": x} if keep_cache else None
    acts = x
    pool_backwards = []
    for nxt, name in enumerate(("enc_conv1", "enc_conv2", "enc_conv3"), start=1):
        pre = conv2d_forward_batch(acts, k[name])
        acts, pool_bwd = maxpool2x2_batch(_relu_inplace(pre, cache, name))
        if keep_cache:
            pool_backwards.append(pool_bwd)
            if nxt < 3:
                cache[f"enc_conv{nxt + 1}.in"] = acts
    latent = acts
    for name in ("dec_conv1", "dec_conv2", "dec_conv3"):
        up, up_bwd = upsample_nearest2x_batch(acts)
        pre = conv2d_forward_batch(up, k[name])
        acts = _relu_inplace(pre, cache, name)
        if keep_cache:
            cache[f"{name}.in"] = up
            cache[f"{name}.up_bwd"] = up_bwd
    recon = conv2d_forward_batch(acts, k["dec_conv4"])
    if keep_cache:
        cache["dec_conv4.in"] = acts
        cache["pool_backwards"] = pool_backwards
    return recon, latent, cache


def _backward_batch(params, cache, grad_recon):
    """Gradients of a scalar loss wrt every kernel, given d loss / d recon."""
    k = params.kernels
    grads = {}
    g, gk = conv2d_backward_batch(cache["dec_conv4.in"], k["dec_conv4"], grad_recon)
    grads["dec_conv4"] = gk
    for name in ("dec_conv3", "dec_conv2", "dec_conv1"):
        g *= cache[f"{name}.mask"]
        g, gk = conv2d_backward_batch(cache[f"{name}.in"], k[name], g)
        grads[name] = gk
        g = cache[f"{name}.up_bwd"](g)
    pool_backwards = cache["pool_backwards"]
    for i, name in enumerate(("enc_conv3", "enc_conv2", "enc_conv1")):
        g = pool_backwards[2 - i](g)
        g *= cache[f"{name}.mask"]
        g, gk = conv2d_backward_batch(
            cache[f"{name}.in"],
            k[name],
            g,
            need_input_grad=name != "enc_conv1",  # network input grad is unused
        )
        grads[name] = gk
    return grads


def cae_forward(params, patch):
    """Forward one 64x64 patch; returns (reconstruction (64,64,1), latent (8,8,16))."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape == (PATCH_SIZE, PATCH_SIZE):
        patch = patch[:, :, None]
    if patch.shape != (PATCH_SIZE, PATCH_SIZE, 1):
        raise ShapeError(f"expected a {PATCH_SIZE}x{PATCH_SIZE} patch, got {patch.shape}")
    recon, latent, _ = _forward_batch(params, patch[None], keep_cache=False)
    return recon[0], latent[0]


def _batch_loss_and_grads(params, batch):
    """Mean pixel-MSE over a batch and its parameter gradients."""
    recon, _, cache = _forward_batch(params, batch, keep_cache=True)
    n, h, w, _ = batch.shape
    diff = recon - batch
    loss = float(np.dot(diff.ravel(), diff.ravel()) / (n * h * w))
    grad_recon = (2.0 / (n * h * w)) * diff
    return loss, _backward_batch(params, cache, grad_recon)


@dataclass
class TrainingSchedule:
    """Two-phase Adam schedule (defaults: 100 epochs @ 1e-3, 100 @ 1e-4)."""

    epochs_phase1: int = 100
    lr_phase1: float = 1e-3
    epochs_phase2: int = 100
    lr_phase2: float = 1e-4
    batch_size: int = 64
    shuffle_seed: int = 0

    def phases(self):
        return ((self.epochs_phase1, self.lr_phase1), (self.epochs_phase2, self.lr_phase2))


def cae_train(samples, schedule=None, init_seed=0, dtype=np.float64):
    """Train one auto-encoder on 64x64 patches.

    Returns (CaeParams, metadata dict). metadata["epoch_losses"] holds the
    mean of the batch losses seen in each epoch, in order. Fully
    deterministic for fixed seeds.
    """
    X = check_patch_batch(samples, name="samples")
    if X.shape[0] == 0:
        raise ValidationError("cannot train on an empty sample list")
    X = np.ascontiguousarray(X[..., None], dtype=dtype)
    schedule = schedule or TrainingSchedule()
    params = init_params(init_seed, dtype=dtype)
    shuffle_rng = np.random.default_rng(schedule.shuffle_seed)
    n = X.shape[0]
    epoch_losses = []
    # single-threaded BLAS measures faster here: the per-band GEMMs are too
    # small to amortize thread synchronization
    with threadpoolctl.threadpool_limits(limits=1, user_api="blas"):
        for epochs, lr in schedule.phases():
            for _ in range(epochs):
                order = shuffle_rng.permutation(n)
                batch_losses = []
                for start in range(0, n, schedule.batch_size):
                    batch = X[order[start:start + schedule.batch_size]]
                    loss, grads = _batch_loss_and_grads(params, batch)
                    batch_losses.append(loss)
                    for name in LAYER_ORDER:
                        kernel = params.kernels[name]
                        gk = grads[name]
                        new_w, params.adam[f"{name}.weights"] = adam_update(
                            kernel.weights, gk.weights, params.adam[f"{name}.weights"], lr
                        )
                        new_b, params.adam[f"{name}.bias"] = adam_update(
                            kernel.bias, gk.bias, params.adam[f"{name}.bias"], lr
                        )
                        params.kernels[name] = ConvKernel(new_w, new_b)
                epoch_losses.append(float(np.mean(batch_losses)))
            if epochs and not np.isfinite(epoch_losses[-1]):
                raise ValidationError("training diverged (non-finite loss)")
    metadata = {
        "n_samples": int(n),
        "epoch_losses": epoch_losses,
        "schedule": {
            "epochs_phase1": schedule.epochs_phase1,
            "lr_phase1": schedule.lr_phase1,
            "epochs_phase2": schedule.epochs_phase2,
            "lr_phase2": schedule.lr_phase2,
            "batch_size": schedule.batch_size,
            "shuffle_seed": schedule.shuffle_seed,
        },
        "init_seed": int(init_seed),
    }
    return params, metadata


def dataset_loss(params, samples):
    """Mean pixel-MSE of the current params over a set of patches."""
    X = check_patch_batch(samples, name="samples")[..., None]
    total = 0.0
    for start in range(0, X.shape[0], 256):
        batch = X[start:start + 256]
        recon, _, _ = _forward_batch(params, batch, keep_cache=False)
        diff = recon - batch
        total += float(np.dot(diff.ravel(), diff.ravel())) / (PATCH_SIZE * PATCH_SIZE)
    return total / X.shape[0]


class ConvAutoencoder(BaseEstimator, TransformerMixin):
    """sklearn-style wrapper around the auto-encoder.

    fit(X) trains on (n, 64, 64) patches; transform(X) returns the flat
    (n, 1024) latent codes; predict(X) returns reconstructions.
    """

    def __init__(
        self,
        epochs_phase1=100,
        lr_phase1=1e-3,
        epochs_phase2=100,
        lr_phase2=1e-4,
        batch_size=64,
        init_seed=0,
        shuffle_seed=0,
        dtype="float64",
    ):
        self.epochs_phase1 = epochs_phase1
        self.lr_phase1 = lr_phase1
        self.epochs_phase2 = epochs_phase2
        self.lr_phase2 = lr_phase2
        self.batch_size = batch_size
        self.init_seed = init_seed
        self.shuffle_seed = shuffle_seed
        self.dtype = dtype

    def _schedule(self):
        return TrainingSchedule(
            epochs_phase1=self.epochs_phase1,
            lr_phase1=self.lr_phase1,
            epochs_phase2=self.epochs_phase2,
            lr_phase2=self.lr_phase2,
            batch_size=self.batch_size,
            shuffle_seed=self.shuffle_seed,
        )

    def fit(self, X, y=None):
        self.params_, self.training_meta_ = cae_train(
            X, self._schedule(), init_seed=self.init_seed, dtype=np.dtype(self.dtype)
        )
        self.epoch_losses_ = self.training_meta_["epoch_losses"]
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("ConvAutoencoder is not fitted; call fit or load first")

    def transform(self, X):
        """Latent codes, flattened row-major to (n, 1024)."""
        self._check_fitted()
        X = check_patch_batch(X)
        out = np.empty((X.shape[0], LATENT_DIM), dtype=np.float64)
        for start in range(0, X.shape[0], 256):
            batch = X[start:start + 256, :, :, None]
            _, latent, _ = _forward_batch(self.params_, batch, keep_cache=False)
            out[start:start + 256] = latent.reshape(latent.shape[0], -1)
        return out

    def predict(self, X):
        """Reconstructions as (n, 64, 64) float arrays (unclamped)."""
        self._check_fitted()
        X = check_patch_batch(X)
        out = np.empty_like(X, dtype=np.float64)
        for start in range(0, X.shape[0], 256):
            batch = X[start:start + 256, :, :, None]
            recon, _, _ = _forward_batch(self.params_, batch, keep_cache=False)
            out[start:start + 256] = recon[..., 0]
        return out

    def reconstruction_error(self, X):
        """Per-patch pixel-MSE, shape (n,)."""
        X = check_patch_batch(X)
        recon = self.predict(X)
        diff = (recon - X).reshape(X.shape[0], -1)
        return np.einsum("ij,ij->i", diff, diff) / (PATCH_SIZE * PATCH_SIZE)

    def save(self, path):
        self._check_fitted()
        save_model(path, self.params_)
        return self

    @classmethod
    def load(cls, path):
        est = cls()
        est.params_ = load_model(path)
        return est


def extract_feature(app_model, before_model, after_model, sample):
    """3072-dim feature: appearance latent, then both motion latents."""
    parts = []
    for params, patch in (
        (app_model, sample.appearance),
        (before_model, sample.grad_before),
        (after_model, sample.grad_after),
    ):
        _, latent = cae_forward(params, patch)
        parts.append(latent.ravel())
    feature = np.concatenate(parts)
    assert feature.shape == (FEATURE_DIM,)
    return feature


def extract_features_batch(models, samples, mode="combined", batch=256):
    """Feature matrix for many ObjectSamples.

    models: (appearance, before, after) CaeParams. mode selects which
    latents make up the feature: "combined" (3072), "appearance" (1024)
    or "motion" (2048).
    """
    app, before, after = models
    streams = {
        "combined": ((app, "appearance"), (before, "grad_before"), (after, "grad_after")),
        "appearance": ((app, "appearance"),),
        "motion": ((before, "grad_before"), (after, "grad_after")),
    }
    if mode not in streams:
        raise ValidationError(f"unknown feature mode {mode!r}")
    chosen = streams[mode]
    n = len(samples)
    out = np.empty((n, LATENT_DIM * len(chosen)), dtype=np.float64)
    with threadpoolctl.threadpool_limits(limits=1, user_api="blas"):
        for start in range(0, n, batch):
            chunk = samples[start:start + batch]
            cols = []
            for params, attr in chosen:
                patches = np.stack([getattr(s, attr) for s in chunk])[..., None]
                _, latent, _ = _forward_batch(params, patches, keep_cache=False)
                cols.append(latent.reshape(len(chunk), -1))
            out[start:start + batch] = np.concatenate(cols, axis=1)
    return out


def feature_dim(mode):
    return {"combined": 3 * LATENT_DIM, "appearance": LATENT_DIM, "motion": 2 * LATENT_DIM}[mode]


# ---------------------------------------------------------------------------
# model file format (.cae): fixed-size little-endian binary
#   magic(8) | version u32 | fingerprint(32) | rng_seed i64
#   per layer, in LAYER_ORDER:
#     weights f64[3*3*cin*cout] | bias f64[cout]
#     adam(weights): step i64, beta1 f64, beta2 f64, eps f64, m, v
#     adam(bias):    same layout
# ---------------------------------------------------------------------------


def _adam_bytes(state):
    head = struct.pack("<qddd", state.step_count, state.beta1, state.beta2, state.epsilon)
    return head + state.m.astype("<f8").tobytes() + state.v.astype("<f8").tobytes()


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptModelError(f"{self.path}: truncated model file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, shape):
        count = int(np.prod(shape))
        return np.frombuffer(self.take(count * 8), dtype="<f8").reshape(shape).astype(np.float64)

    def adam(self, shape):
        step, b1, b2, eps = struct.unpack("<qddd", self.take(32))
        m = self.array(shape)
        v = self.array(shape)
        return AdamState(m=m, v=v, step_count=step, beta1=b1, beta2=b2, epsilon=eps)


def save_model(path, params):
    """Serialize CaeParams; the round-trip is bit-exact."""
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _FORMAT_VERSION)
    blob += ARCH_FINGERPRINT
    blob += struct.pack("<q", params.rng_seed)
    for name in LAYER_ORDER:
        kernel = params.kernels[name]
        blob += kernel.weights.astype("<f8").tobytes()
        blob += kernel.bias.astype("<f8").tobytes()
        blob += _adam_bytes(params.adam[f"{name}.weights"])
        blob += _adam_bytes(params.adam[f"{name}.bias"])
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_model(path):
    """Read a .cae file back into CaeParams.

    Raises CorruptModelError on truncation and IncompatibleModelError when
    the header does not match this architecture.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    if r.take(len(_MAGIC)) != _MAGIC:
        raise IncompatibleModelError(f"{path}: not an auto-encoder model file")
    (version,) = struct.unpack("<I", r.take(4))
    if version != _FORMAT_VERSION:
        raise IncompatibleModelError(f"{path}: unsupported format version {version}")
    if r.take(32) != ARCH_FINGERPRINT:
        raise IncompatibleModelError(f"{path}: architecture fingerprint mismatch")
    (rng_seed,) = struct.unpack("<q", r.take(8))
    kernels = {}
    adam = {}
    for name in LAYER_ORDER:
        cin, cout = LAYER_CHANNELS[name]
        weights = r.array((3, 3, cin, cout))
        bias = r.array((cout,))
        kernels[name] = ConvKernel(weights, bias)
        adam[f"{name}.weights"] = r.adam((3, 3, cin, cout))
        adam[f"{name}.bias"] = r.adam((cout,))
    if r.pos != len(data):
        raise CorruptModelError(f"{path}: {len(data) - r.pos} trailing bytes")
    return CaeParams(kernels=kernels, adam=adam, rng_seed=rng_seed)


def describe_model(path):
    """Header summary for `ocad inspect-model`."""
    params = load_model(path)
    n_weights = sum(k.weights.size + k.bias.size for k in params.kernels.values())
    return {
        "kind": "cae",
        "format_version": _FORMAT_VERSION,
        "architecture": _ARCH_DESCRIPTION,
        "fingerprint": ARCH_FINGERPRINT.hex(),
        "rng_seed": params.rng_seed,
        "n_parameters": int(n_weights),
        "adam_steps": params.adam["enc_conv1.weights"].step_count,
    }
