"""Integrate-and-fire truncation detection.

A linear layer plus sigmoid maps each encoder frame to a scalar signal
``alpha``; an accumulator integrates it and fires (subtracting the threshold)
whenever the running sum reaches the threshold ``f``. Trained so that the
number of fires matches the number of spoken words, the detector flags a
chunk as truncated when no fire lands on the last retained frame: the chunk
ended mid-word.

The final content frame is always discarded before scanning, because the
content-to-padding transition sits there and would fire unconditionally.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    ConfigError,
    DegenerateInputError,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
)
from .types import EncoderFeatureSeq

DEFAULT_FIRE_THRESHOLD = 0.999

_WEIGHTS_MAGIC = b"TDMW"
_WEIGHTS_VERSION = 1


@dataclass
class TdmWeights:
    """Parameters of the frame-signal layer: alpha_n = sigmoid(w . x_n + b)."""

    w: np.ndarray
    b: float = 0.0

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1:
            raise ValidationError("w must be a vector")
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.b)):
            raise ValidationError("weights must be finite")

    @classmethod
    def zeros(cls, d_model: int) -> TdmWeights:
        return cls(w=np.zeros(d_model), b=0.0)


@dataclass
class IFScanResult:
    fire_positions: list[int]
    last_fire_p: int | None
    residual: float

    @property
    def fire_count(self) -> int:
        return len(self.fire_positions)


def sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=np.float64)))


def signal(features: EncoderFeatureSeq, weights: TdmWeights) -> np.ndarray:
    """Per-frame firing signal over the content frames, last frame discarded."""
    if features.content_len < 2:
        raise DegenerateInputError(
            f"need at least 2 content frames, got {features.content_len}"
        )
    if weights.w.shape[0] != features.d_model:
        raise ValidationError(
            f"weight dim {weights.w.shape[0]} != feature dim {features.d_model}"
        )
    content = features.frames[: features.content_len - 1].astype(np.float64)
    return sigmoid(content @ weights.w + weights.b)


def if_scan(alpha: np.ndarray, f: float) -> IFScanResult:
    """Run the integrate-and-fire accumulator over a signal sequence.

    Fires where the accumulated signal reaches ``f`` (inclusive); each fire
    subtracts ``f`` and records its position. The last fire position only
    advances on a fire.
    """
    if f <= 0:
        raise ConfigError(f"fire threshold must be positive, got {f}")
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha < 0):
        raise ValidationError("alpha must be nonnegative")
    fires: list[int] = []
    acc = 0.0
    last: int | None = None
    for n, a in enumerate(alpha.tolist()):
        acc += a
        if acc >= f:
            acc -= f
            fires.append(n)
            last = n
    return IFScanResult(fire_positions=fires, last_fire_p=last, residual=acc)


def detect_truncation(alpha: np.ndarray, f: float = DEFAULT_FIRE_THRESHOLD) -> bool:
    """True when no fire lands on the final retained frame (chunk ends mid-word)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[0] == 0:
        return True
    scan = if_scan(alpha, f)
    return scan.last_fire_p is None or scan.last_fire_p < alpha.shape[0] - 1


def quantity_loss(alpha: np.ndarray, word_count: int) -> float:
    """Per-utterance counting loss: |sum(alpha) - word_count|."""
    if word_count < 0:
        raise ValidationError("word_count must be nonnegative")
    return float(abs(np.asarray(alpha, dtype=np.float64).sum() - word_count))


def batch_quantity_loss(alphas: list[np.ndarray], word_counts: list[int]) -> float:
    """Batch objective: RMSE over per-utterance signed counting errors."""
    if len(alphas) != len(word_counts) or not alphas:
        raise ValidationError("need one word count per utterance and at least one utterance")
    errs = np.array(
        [np.asarray(a, dtype=np.float64).sum() - wc for a, wc in zip(alphas, word_counts)]
    )
    return float(np.sqrt(np.mean(errs**2)))


def loss_grad(
    features: EncoderFeatureSeq, weights: TdmWeights, word_count: int
) -> tuple[np.ndarray, float]:
    """Analytic gradient of the per-utterance counting loss.

    d|sum(alpha) - W| / dw = sign(err) * sum_n alpha_n (1 - alpha_n) x_n,
    with the subgradient at zero error taken as 0.
    """
    alpha = signal(features, weights)
    err = float(alpha.sum() - word_count)
    sign = 0.0 if err == 0.0 else (1.0 if err > 0 else -1.0)
    sprime = alpha * (1.0 - alpha)
    content = features.frames[: features.content_len - 1].astype(np.float64)
    grad_w = sign * (sprime @ content)
    grad_b = sign * float(sprime.sum())
    return grad_w, grad_b


@dataclass(frozen=True)
class TdmTrainConfig:
    epochs: int = 10
    warmup_epochs: int = 3
    peak_learning_rate: float = 1e-6
    batch_frames: int = 4500
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.warmup_epochs < 0 or self.warmup_epochs > self.epochs:
            raise ConfigError("need 0 <= warmup_epochs <= epochs")
        if self.peak_learning_rate <= 0 or self.batch_frames < 1 or self.adam_eps <= 0:
            raise ConfigError("rates and batch_frames must be positive")
        if not (0 <= self.adam_betas[0] < 1 and 0 <= self.adam_betas[1] < 1):
            raise ConfigError("adam betas must lie in [0, 1)")


@dataclass
class TdmTrainResult:
    weights: TdmWeights
    epoch_losses: list[float] = field(default_factory=list)


def _dataset_rmse(dataset: list[tuple[EncoderFeatureSeq, int]], weights: TdmWeights) -> float:
    alphas = [signal(feats, weights) for feats, _ in dataset]
    return batch_quantity_loss(alphas, [wc for _, wc in dataset])


def _batch_grad(
    batch: list[tuple[EncoderFeatureSeq, int]], weights: TdmWeights
) -> tuple[np.ndarray, float, float]:
    """Gradient of the batch RMSE through sigmoid(linear). Returns (gw, gb, loss)."""
    errs = []
    dws = []
    dbs = []
    for feats, wc in batch:
        alpha = signal(feats, weights)
        errs.append(float(alpha.sum() - wc))
        sprime = alpha * (1.0 - alpha)
        content = feats.frames[: feats.content_len - 1].astype(np.float64)
        dws.append(sprime @ content)
        dbs.append(float(sprime.sum()))
    errs_arr = np.array(errs)
    loss = float(np.sqrt(np.mean(errs_arr**2)))
    if loss == 0.0:
        return np.zeros_like(weights.w), 0.0, 0.0
    scale = 1.0 / (loss * len(batch))
    gw = scale * sum(e * dw for e, dw in zip(errs, dws))
    gb = scale * sum(e * db for e, db in zip(errs, dbs))
    return gw, gb, loss


def _pack_batches(
    order: list[int], dataset: list[tuple[EncoderFeatureSeq, int]], batch_frames: int
) -> list[list[int]]:
    """Greedily group utterances so each batch holds at most batch_frames content frames."""
    batches: list[list[int]] = []
    cur: list[int] = []
    cur_frames = 0
    for i in order:
        n = dataset[i][0].content_len
        if cur and cur_frames + n > batch_frames:
            batches.append(cur)
            cur, cur_frames = [], 0
        cur.append(i)
        cur_frames += n
    if cur:
        batches.append(cur)
    return batches


def train_tdm(
    dataset: list[tuple[EncoderFeatureSeq, int]],
    config: TdmTrainConfig = TdmTrainConfig(),
    init: TdmWeights | None = None,
) -> TdmTrainResult:
    """Fit the signal layer with Adam and per-step linear warmup.

    Batches are assembled by content-frame count; the learning rate rises
    linearly from 0 to the peak across the warmup epochs' steps and stays at
    the peak afterwards. Deterministic for a fixed rng_seed.
    """
    if not dataset:
        raise ValidationError("training dataset is empty")
    d_model = dataset[0][0].d_model
    for feats, _ in dataset:
        if feats.d_model != d_model:
            raise ValidationError("all utterances must share the feature dimension")
    weights = TdmWeights(
        w=(init.w.copy() if init is not None else np.zeros(d_model)),
        b=(init.b if init is not None else 0.0),
    )
    rng = np.random.default_rng(config.rng_seed)
    beta1, beta2 = config.adam_betas
    m_w = np.zeros(d_model)
    v_w = np.zeros(d_model)
    m_b = 0.0
    v_b = 0.0
    step = 0
    steps_per_epoch = len(_pack_batches(list(range(len(dataset))), dataset, config.batch_frames))
    warmup_steps = config.warmup_epochs * steps_per_epoch
    losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(dataset)).tolist()
        for batch_idx in _pack_batches(order, dataset, config.batch_frames):
            gw, gb, _ = _batch_grad([dataset[i] for i in batch_idx], weights)
            step += 1
            if warmup_steps > 0 and step <= warmup_steps:
                lr = config.peak_learning_rate * step / warmup_steps
            else:
                lr = config.peak_learning_rate
            m_w = beta1 * m_w + (1 - beta1) * gw
            v_w = beta2 * v_w + (1 - beta2) * gw**2
            m_b = beta1 * m_b + (1 - beta1) * gb
            v_b = beta2 * v_b + (1 - beta2) * gb**2
            mhat_w = m_w / (1 - beta1**step)
            vhat_w = v_w / (1 - beta2**step)
            mhat_b = m_b / (1 - beta1**step)
            vhat_b = v_b / (1 - beta2**step)
            weights.w = weights.w - lr * mhat_w / (np.sqrt(vhat_w) + config.adam_eps)
            weights.b = weights.b - lr * mhat_b / (np.sqrt(vhat_b) + config.adam_eps)
        losses.append(_dataset_rmse(dataset, weights))
    return TdmTrainResult(weights=weights, epoch_losses=losses)


def save_tdm_weights(weights: TdmWeights, path) -> None:
    payload = struct.pack("<I", weights.w.shape[0])
    payload += weights.w.astype("<f8").tobytes()
    payload += struct.pack("<d", weights.b)
    blob = _WEIGHTS_MAGIC + struct.pack("<H", _WEIGHTS_VERSION) + payload
    blob += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_tdm_weights(path) -> TdmWeights:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 6:
        raise TruncatedFileError(f"{path}: too short for a weights file")
    if blob[:4] != _WEIGHTS_MAGIC:
        raise BadMagicError(f"{path}: not a TDM weights file")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != _WEIGHTS_VERSION:
        raise UnsupportedVersionError(f"{path}: weights format version {version}")
    if len(blob) < 14:
        raise TruncatedFileError(f"{path}: header ends mid-record")
    (dim,) = struct.unpack_from("<I", blob, 6)
    need = 6 + 4 + 8 * dim + 8 + 4
    if len(blob) < need:
        raise TruncatedFileError(f"{path}: expected {need} bytes, file has {len(blob)}")
    payload = blob[6 : need - 4]
    (crc,) = struct.unpack_from("<I", blob, need - 4)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: weights payload checksum mismatch")
    w = np.frombuffer(payload[4 : 4 + 8 * dim], dtype="<f8").copy()
    (b,) = struct.unpack_from("<d", payload, 4 + 8 * dim)
    return TdmWeights(w=w, b=b)
