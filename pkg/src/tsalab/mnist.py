"""MNIST ingest: IDX parsing, the 1-vs-7 binary task, PCA features and a fitted teacher.

Label map for the binary task: digit ``class_a`` (1) -> +1, digit ``class_b`` (7) -> -1.

Features are standardized twice: per pixel before the covariance is formed, then
per projected component on the training split.

Projected-dataset cache layout (little-endian):

    8 bytes   magic  b"TSAPROJ\\0"
    uint32    format version (1)
    uint32    n samples
    uint32    D features
    float64   features, n*D row-major
    int8      targets (+1/-1), n
    uint8     split flags (0 train, 1 evaluation), n
"""
from __future__ import annotations

import gzip
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import Architecture
from .models import ModelParams, forward, pullback

log = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
CACHE_MAGIC = b"TSAPROJ\0"
CACHE_VERSION = 1
MAX_PAYLOAD = 1 << 40

# IDX type byte -> big-endian numpy dtype
IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class IdxError(ValueError):
    pass


@dataclass
class IdxTensor:
    dims: list[int]
    data: np.ndarray
    type_code: int = 0x08

    def __post_init__(self):
        if self.type_code not in IDX_DTYPES:
            raise IdxError(f"unknown IDX element type 0x{self.type_code:02x}")
        if not 1 <= len(self.dims) <= 255:
            raise IdxError(f"rank {len(self.dims)} outside 1..255")
        self.data = np.asarray(self.data).reshape(-1)
        if math.prod(self.dims) != self.data.size:
            raise IdxError(f"dims {self.dims} hold {math.prod(self.dims)} elements, data has {self.data.size}")

    @property
    def magic(self) -> int:
        return (self.type_code << 8) | len(self.dims)

    def array(self) -> np.ndarray:
        return self.data.reshape(self.dims)


def parse_idx(blob: bytes) -> IdxTensor:
    if len(blob) < 4:
        raise IdxError(f"expected at least 4 header bytes, got {len(blob)}")
    zero, type_code, rank = struct.unpack(">HBB", blob[:4])
    if zero != 0 or type_code not in IDX_DTYPES or rank == 0:
        raise IdxError(f"bad magic 0x{int.from_bytes(blob[:4], 'big'):08x}")
    header = 4 + 4 * rank
    if len(blob) < header:
        raise IdxError(f"expected {header} header bytes, got {len(blob)}")
    dims = list(struct.unpack(f">{rank}I", blob[4:header]))
    dtype = IDX_DTYPES[type_code]
    n_bytes = math.prod(dims) * dtype.itemsize
    if n_bytes > MAX_PAYLOAD:
        raise IdxError(f"dims {dims} overflow the payload limit")
    got = len(blob) - header
    if got != n_bytes:
        raise IdxError(f"expected {n_bytes} bytes, got {got}")
    data = np.frombuffer(blob, dtype=dtype, offset=header)
    return IdxTensor(dims, data, type_code)


def serialize_idx(tensor: IdxTensor) -> bytes:
    head = struct.pack(">HBB", 0, tensor.type_code, len(tensor.dims))
    head += struct.pack(f">{len(tensor.dims)}I", *tensor.dims)
    return head + tensor.data.astype(IDX_DTYPES[tensor.type_code], copy=False).tobytes()


def read_idx(path: str | Path) -> IdxTensor:
    """Parse a raw or gzip-compressed IDX file."""
    blob = Path(path).read_bytes()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return parse_idx(blob)


def load_mnist(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.magic != IMAGES_MAGIC:
        raise IdxError(f"image file magic 0x{images.magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    if labels.magic != LABELS_MAGIC:
        raise IdxError(f"label file magic 0x{labels.magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    if images.dims[0] != labels.dims[0]:
        raise IdxError(f"{images.dims[0]} images but {labels.dims[0]} labels")
    return images.array(), labels.array()


@dataclass
class BinaryTask:
    images: np.ndarray  # (n, H, W) floats in [0, 1]
    targets: np.ndarray  # +1 / -1


def build_binary_task(images, labels, class_a: int = 1, class_b: int = 7) -> BinaryTask:
    images = np.asarray(images)
    labels = np.asarray(labels)
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    for c in (class_a, class_b):
        if not np.any(labels == c):
            raise ValueError(f"class {c} absent from the labels")
    keep = (labels == class_a) | (labels == class_b)
    targets = np.where(labels[keep] == class_a, 1, -1).astype(np.int8)
    imgs = images[keep].astype(float)
    if images.dtype == np.uint8:
        imgs /= 255.0
    return BinaryTask(imgs, targets)


def split_indices(n: int, rng: np.random.Generator, train_frac: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_train = int(round(train_frac * n))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


@dataclass(frozen=True)
class PcaProjector:
    mean: np.ndarray  # per-pixel mean
    scale: np.ndarray  # per-pixel std (1 where constant)
    components: np.ndarray  # (D, pixels), orthonormal rows
    eigenvalues: np.ndarray
    feature_mean: np.ndarray
    feature_std: np.ndarray

    @property
    def D(self) -> int:
        return self.components.shape[0]


def top_eigenpairs(cov: np.ndarray, k: int, rng: np.random.Generator, tol: float = 1e-10,
                   max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Leading k eigenpairs of a symmetric PSD matrix by power iteration with deflation."""
    n = cov.shape[0]
    vals = np.zeros(k)
    vecs = np.zeros((k, n))
    A = np.array(cov, dtype=float)
    for j in range(k):
        v = rng.standard_normal(n)
        v -= vecs[:j].T @ (vecs[:j] @ v)
        v /= np.linalg.norm(v)
        lam = 0.0
        for it in range(max_iter):
            y = A @ v
            y -= vecs[:j].T @ (vecs[:j] @ y)  # keep exact orthogonality
            lam = float(v @ y)
            norm = np.linalg.norm(y)
            if norm == 0:
                break
            y /= norm
            if np.linalg.norm(y - v) < tol or np.linalg.norm(y + v) < tol:
                v = y
                break
            v = y
        else:
            log.warning("power iteration for component %d hit max_iter=%d", j, max_iter)
        vals[j] = lam
        vecs[j] = v
        A -= lam * np.outer(v, v)
    return vals, vecs


def fit_pca(train_images, D: int = 10, rng: np.random.Generator | None = None, tol: float = 1e-10) -> PcaProjector:
    X = np.asarray(train_images, dtype=float).reshape(len(train_images), -1)
    n = X.shape[0]
    if n < D:
        raise ValueError(f"need at least D={D} samples, got {n}")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    Z = (X - mean) / scale
    cov = Z.T @ Z / n
    vals, vecs = top_eigenpairs(cov, D, rng if rng is not None else np.random.default_rng(0), tol)
    if vals[-1] <= 1e-12 * max(np.trace(cov), 1e-300):
        raise ValueError(f"covariance rank is below D={D}")
    # deterministic sign: largest-magnitude loading positive
    signs = np.sign(vecs[np.arange(D), np.argmax(np.abs(vecs), axis=1)])
    vecs *= signs[:, None]
    F = Z @ vecs.T
    return PcaProjector(mean, scale, vecs, vals, F.mean(axis=0), F.std(axis=0))


def project(projector: PcaProjector, image) -> np.ndarray:
    """One image -> D-vector; a stack of images -> (n, D)."""
    x = np.asarray(image, dtype=float)
    single = x.ndim in (1, 2) and x.size == projector.mean.size
    X = x.reshape(1 if single else len(x), -1)
    F = ((X - projector.mean) / projector.scale) @ projector.components.T
    F = (F - projector.feature_mean) / projector.feature_std
    return F[0] if single else F


def rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    """Bilinear rotation about the image centre, same output size."""
    return ndimage.rotate(image, degrees, reshape=False, order=1, mode="constant", cval=0.0)


def fit_teacher(features, targets, arch: Architecture | None = None, eta: float = 0.2, batch: int = 10,
                max_epochs: int = 200, rtol: float = 1e-4, rng: np.random.Generator | None = None,
                normalize: bool = True) -> ModelParams:
    """SGD on MSE to the +-1 targets until the epoch loss stops improving by rtol.

    With ``normalize`` the fitted weights are rescaled to |w|^2 = D, the norm used
    for synthetic teachers: on whitened features the preactivation then has unit
    variance and the erf head stays out of saturation.  Signs, hence accuracy,
    are unchanged.
    """
    arch = arch or Architecture("erf")
    if arch.kind not in ("linear", "erf"):
        raise ValueError("teacher head must be linear or erf")
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if len(X) == 0:
        raise ValueError("empty dataset")
    rng = rng if rng is not None else np.random.default_rng(0)
    params = ModelParams(np.zeros(X.shape[1]))
    prev = np.inf
    for epoch in range(max_epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), batch):
            idx = order[start:start + batch]
            r = (forward(arch, params, X[idx]) - y[idx]) / len(idx)
            params = params + pullback(arch, params, X[idx], r).scale(-eta)
        loss = float(np.mean((forward(arch, params, X) - y) ** 2)) / 2
        if not np.isfinite(loss):
            raise FloatingPointError(f"teacher fit diverged at epoch {epoch}")
        if prev - loss < rtol * prev:
            break
        prev = loss
    if normalize:
        params = params.scale(math.sqrt(X.shape[1]) / np.linalg.norm(params.w))
    return params


@dataclass
class ProjectedDataset:
    features: np.ndarray
    targets: np.ndarray
    is_eval: np.ndarray

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[~self.is_eval], self.targets[~self.is_eval]

    @property
    def eval(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.is_eval], self.targets[self.is_eval]


@dataclass
class Pipeline:
    """Everything derived from the raw images; kept for augmentation runs."""

    task: BinaryTask
    projector: PcaProjector
    dataset: ProjectedDataset


def prepare(images, labels, D: int = 10, seed: int = 0, class_a: int = 1, class_b: int = 7) -> Pipeline:
    """Binary task, fixed 80/20 split, PCA fitted on the training split."""
    task = build_binary_task(images, labels, class_a, class_b)
    rng = np.random.default_rng(seed)
    train, evl = split_indices(len(task.targets), rng)
    projector = fit_pca(task.images[train], D, rng)
    feats = project(projector, task.images)
    is_eval = np.zeros(len(task.targets), dtype=bool)
    is_eval[evl] = True
    return Pipeline(task, projector, ProjectedDataset(feats, task.targets.copy(), is_eval))


def write_cache(path: str | Path, data: ProjectedDataset) -> None:
    n, D = data.features.shape
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<III", CACHE_VERSION, n, D))
        fh.write(np.ascontiguousarray(data.features, dtype="<f8").tobytes())
        fh.write(np.asarray(data.targets, dtype=np.int8).tobytes())
        fh.write(np.asarray(data.is_eval, dtype=np.uint8).tobytes())


def read_cache(path: str | Path) -> ProjectedDataset:
    blob = Path(path).read_bytes()
    if blob[:8] != CACHE_MAGIC:
        raise ValueError("not a projected-dataset cache (bad magic)")
    version, n, D = struct.unpack("<III", blob[8:20])
    if version != CACHE_VERSION:
        raise ValueError(f"cache version {version}, expected {CACHE_VERSION}")
    need = 20 + 8 * n * D + 2 * n
    if len(blob) != need:
        raise ValueError(f"expected {need} bytes, got {len(blob)}")
    off = 20
    feats = np.frombuffer(blob, dtype="<f8", count=n * D, offset=off).reshape(n, D).astype(float)
    off += 8 * n * D
    targets = np.frombuffer(blob, dtype=np.int8, count=n, offset=off).copy()
    is_eval = np.frombuffer(blob, dtype=np.uint8, count=n, offset=off + n).astype(bool)
    return ProjectedDataset(feats, targets, is_eval)
