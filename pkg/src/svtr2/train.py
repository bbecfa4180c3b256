"""Two-phase training, evaluation, and the per-length inference benchmark."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, checkpoint_from_model, model_from_checkpoint, save_checkpoint
from .ctc import ctc_loss_batch, greedy_decode, normalize_text
from .errors import ConfigError, InputError, ModeError, NonFiniteError, ParseError
from .model import ModelConfig, TextRecognizer
from .msr import (MAX_TRAIN_LABEL, RESIZE_MODES, Charset, RawSample, build_batches, compute_bucket,
                  msr_resize)
from .optim import AdamW, clip_grad_norm, one_cycle_lr
from .synth import AugmentConfig, augment, sample_seed
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    variant: str = "Nano"
    lr: float = 6.5e-4
    # peak LR = lr * batch_size / lr_ref_batch
    lr_ref_batch: int = 1024
    weight_decay: float = 0.05
    warmup_epochs: float = 1.5
    total_epochs: float = 10.0
    batch_size: int = 16
    lambda1: float = 0.1
    lambda2: float = 1.0
    phases: str = "AB"
    seed: int = 0
    resize: str = "msr"
    frm_mode: str = "frm"
    sgm_window: int = 5
    scale_attention: bool = True
    clip_norm: float = 5.0
    augment_prob: float = 0.0
    val_fraction: float = 0.1
    max_label: int = MAX_TRAIN_LABEL
    eval_every: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError("warmup_epochs must lie in [0, total_epochs)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.resize not in RESIZE_MODES:
            raise ConfigError(f"resize must be one of {RESIZE_MODES}")
        if not self.phases or any(p not in "AB" for p in self.phases):
            raise ConfigError("phases must be a non-empty string over 'A' and 'B'")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def peak_lr(self) -> float:
        return self.lr * self.batch_size / self.lr_ref_batch

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def model_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(self.variant, num_classes, self.frm_mode, "B" in self.phases, self.sgm_window,
                           self.scale_attention, self.seed)

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected 'key = value'", n)
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ParseError(f"unknown setting {key!r}", n)
            values[key] = _coerce(value.strip("\"'"), types[key], n)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _coerce(value: str, kind, line: int):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ParseError(f"cannot read {value!r} as {kind}", line) from None
    return value


# loss ----------------------------------------------------------------------

@dataclass
class LossParts:
    ctc: float
    sgm: Optional[float]
    skipped: int


def total_loss(images: Tensor, labels: Sequence[Sequence[int]], model: TextRecognizer, phase: str,
               lambda1: float = 0.1, lambda2: float = 1.0):
    """``lambda1 * L_ctc`` in phase A, plus ``lambda2 * L_sgm`` in phase B.

    Returns ``(loss, LossParts)``; ``loss`` is None when every sample's label
    was infeasible for the CTC frame count.
    """
    if phase not in ("A", "B"):
        raise ConfigError(f"unknown phase {phase!r}")
    if phase == "B" and model.sgm is None:
        raise ModeError("phase B needs the SGM branch")
    fmap = model.features(images)
    ctc, skipped = ctc_loss_batch(model.ctc_logits_from_features(fmap), labels)
    if ctc is None:
        return None, LossParts(math.nan, None, skipped)
    loss = ctc * lambda1
    sgm_value = None
    if phase == "B":
        sgm = model.sgm_loss(fmap, labels)
        sgm_value = float(sgm.data)
        loss = loss + sgm * lambda2
    return loss, LossParts(float(ctc.data), sgm_value, skipped)


# data ----------------------------------------------------------------------

def in_validation(source_id: str, fraction: float) -> bool:
    """Stable split by a hash of the sample id."""
    digest = hashlib.sha256(source_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") / 2**64 < fraction


def split_samples(samples: Sequence[RawSample], fraction: float):
    train, val = [], []
    for s in samples:
        (val if in_validation(s.source_id, fraction) else train).append(s)
    return train, val


class BatchSource:
    """Resizes (and optionally augments) samples into channel-first batches."""

    def __init__(self, samples: Sequence[RawSample], resize: str, dtype=np.float32,
                 augment_prob: float = 0.0):
        self.samples = list(samples)
        self.resize = resize
        self.dtype = dtype
        self.augment = AugmentConfig(prob=augment_prob) if augment_prob > 0 else None
        self._cache: dict = {}

    def image(self, i: int, seed: int) -> np.ndarray:
        if self.augment is not None:
            sample = augment(self.samples[i], sample_seed(seed, i), self.augment)
            return msr_resize(sample, self.resize)[0].astype(self.dtype)
        if i not in self._cache:
            self._cache[i] = msr_resize(self.samples[i], self.resize)[0].astype(self.dtype)
        return self._cache[i]

    def batch(self, indices: Sequence[int], seed: int = 0):
        images = np.stack([self.image(i, seed) for i in indices])
        return images, [self.samples[i].label for i in indices]


# training ------------------------------------------------------------------

@dataclass
class TrainResult:
    model: TextRecognizer
    checkpoints: dict
    history: list = field(default_factory=list)
    steps: int = 0
    seconds: float = 0.0
    dropped: int = 0


def _phase_params(model: TextRecognizer, phase: str) -> list:
    if phase == "A":
        return [p for name, p in model.named_parameters() if not name.startswith("sgm.")]
    return model.parameters()


def _dump_batch(path: Path, images: np.ndarray, labels, step: int, phase: str) -> Path:
    lengths = np.array([len(l) for l in labels])
    flat = np.array([c for l in labels for c in l], dtype=np.int64)
    np.savez(path, images=images, label_lengths=lengths, label_values=flat, step=step, phase=phase)
    return path


def steps_per_phase(n_train: int, config: TrainConfig) -> int:
    """Optimizer steps in one phase (buckets keep their partial batches, so this is an upper estimate)."""
    return int(math.ceil(config.total_epochs * math.ceil(n_train / config.batch_size)))


def train(config: TrainConfig, samples: Sequence[RawSample], charset: Charset, out_dir=None,
          model: Optional[TextRecognizer] = None, on_step: Optional[Callable] = None) -> TrainResult:
    """Run phase A then phase B (as listed in ``config.phases``) and write checkpoints to ``out_dir``."""
    start = time.perf_counter()
    kept = [s for s in samples if len(s.label) <= config.max_label]
    dropped = len(samples) - len(kept)
    if dropped:
        log.info("dropped %d samples with labels longer than %d", dropped, config.max_label)
    if not kept:
        raise InputError("no trainable samples")
    train_set, val_set = split_samples(kept, config.val_fraction)
    if not train_set:
        raise InputError("validation split left no training samples")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    dtype = config.np_dtype
    model = model or TextRecognizer(config.model_config(len(charset)), dtype)
    source = BatchSource(train_set, config.resize, dtype, config.augment_prob)
    val_source = BatchSource(val_set, config.resize, dtype) if val_set else None
    history: list = []
    checkpoints: dict = {}
    global_step = 0
    epochs = config.total_epochs
    for p_index, phase in enumerate(config.phases):
        if phase == "B":
            model.reset_sgm(config.seed + 7919 * (p_index + 1))
        params = _phase_params(model, phase)
        opt = AdamW(params, config.peak_lr, weight_decay=config.weight_decay)
        per_epoch = len(build_batches(train_set, config.batch_size, config.seed, config.resize))
        total = int(math.ceil(epochs * per_epoch))
        warmup = config.warmup_epochs * per_epoch
        step = 0
        epoch = 0
        while step < total:
            manifest = build_batches(train_set, config.batch_size,
                                     config.seed * 1_000_003 + 101 * p_index + epoch, config.resize)
            for indices, _target in manifest:
                if step >= total:
                    break
                images, labels = source.batch(indices, seed=config.seed * 7_000_003 + 100_003 * p_index + global_step)
                opt.lr = one_cycle_lr(step, total, warmup, config.peak_lr)
                loss, parts = total_loss(Tensor(images), labels, model, phase, config.lambda1, config.lambda2)
                step += 1
                global_step += 1
                if loss is None:
                    continue
                value = float(loss.data)
                if not math.isfinite(value):
                    where = out or Path(".")
                    dump = _dump_batch(where / f"nonfinite_{phase}_{step}.npz", images, labels, step, phase)
                    raise NonFiniteError(f"phase {phase} step {step}: loss is {value}; batch saved to {dump}")
                opt.zero_grad()
                backward(loss)
                norm = clip_grad_norm(params, config.clip_norm)
                if norm > config.clip_norm:
                    log.debug("step %d: clipped gradient norm %.3f", step, norm)
                opt.step()
                entry = {"phase": phase, "step": step, "lr": opt.lr, "loss": value, "ctc": parts.ctc,
                         "sgm": parts.sgm, "grad_norm": norm, "skipped": parts.skipped}
                history.append(entry)
                if on_step is not None:
                    on_step(entry)
            epoch += 1
            if val_source is not None and config.eval_every and epoch % config.eval_every == 0:
                acc = evaluate_samples(model, val_source, charset).overall
                history.append({"phase": phase, "epoch": epoch, "val_accuracy": acc})
                log.info("phase %s epoch %d: validation word accuracy %.4f", phase, epoch, acc)
        ckpt = checkpoint_from_model(model, charset.chars, phase, global_step)
        checkpoints[phase] = ckpt
        if out is not None:
            save_checkpoint(ckpt, out / f"phase_{phase}.ckpt")
    stripped = model.strip_for_inference() if model.sgm is not None else model
    inference = checkpoint_from_model(stripped, charset.chars, "inference", global_step)
    checkpoints["inference"] = inference
    if out is not None:
        save_checkpoint(inference, out / "inference.ckpt")
    return TrainResult(model, checkpoints, history, global_step, time.perf_counter() - start, dropped)


# evaluation ----------------------------------------------------------------

@dataclass
class EvalReport:
    overall: float
    count: int
    per_bucket: dict
    per_profile: dict
    rows: list

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source_id", "bucket", "profile", "label", "prediction", "correct", "confidence"])
            writer.writerows(self.rows)
        return path


def _profile(source_id: str) -> str:
    name = Path(source_id).stem
    return name.rsplit("_", 1)[0] if "_" in name else "unknown"


def predict(model: TextRecognizer, images: np.ndarray) -> list:
    with no_grad():
        logits = model.ctc_logits(images).data
    return [greedy_decode(row) for row in logits]


def evaluate_samples(model: TextRecognizer, source: BatchSource, charset: Charset,
                     batch_size: int = 64) -> EvalReport:
    samples = source.samples
    if not samples:
        raise InputError("nothing to evaluate")
    manifest = build_batches(samples, batch_size, 0, source.resize)
    rows = [None] * len(samples)
    for indices, _ in manifest:
        images, _labels = source.batch(indices)
        for i, dec in zip(indices, predict(model, images)):
            s = samples[i]
            truth = charset.decode(s.label)
            pred = dec.text(charset.chars)
            ok = normalize_text(pred) == normalize_text(truth)
            bucket = compute_bucket(s.height, s.width, "msr").id
            rows[i] = [s.source_id, bucket, _profile(s.source_id), truth, pred, int(ok), f"{dec.confidence:.6f}"]
    per_bucket: dict = {}
    per_profile: dict = {}
    for r in rows:
        for table, key in ((per_bucket, r[1]), (per_profile, r[2])):
            c, n = table.get(key, (0, 0))
            table[key] = (c + r[5], n + 1)
    correct = sum(r[5] for r in rows)
    return EvalReport(correct / len(rows), len(rows),
                      {k: c / n for k, (c, n) in sorted(per_bucket.items())},
                      {k: c / n for k, (c, n) in sorted(per_profile.items())}, rows)


def evaluate(model_or_ckpt, samples: Sequence[RawSample], charset: Charset, resize: str = "msr",
             report_path=None, batch_size: int = 64) -> EvalReport:
    """Greedy-decoded word accuracy overall, per MSR bucket and per dataset profile."""
    if not samples:
        raise InputError("empty evaluation set")
    if isinstance(model_or_ckpt, Checkpoint):
        model = model_from_checkpoint(model_or_ckpt, charset.hash)
    else:
        model = model_or_ckpt
    report = evaluate_samples(model, BatchSource(samples, resize, model.dtype), charset, batch_size)
    if report_path is not None:
        report.write_csv(report_path)
    return report


# inference benchmark --------------------------------------------------------

@dataclass
class BenchReport:
    per_length: dict  # length -> average seconds
    counts: dict
    mean_seconds: float
    fps: float


def summarize_timings(lengths: Sequence[int], seconds: Sequence[float], max_length: Optional[int] = None) -> BenchReport:
    """Average per text length, then the plain mean over lengths that occurred."""
    top = max_length if max_length is not None else (max(lengths) if lengths else 0)
    totals = [0.0] * (top + 1)
    counts = [0] * (top + 1)
    for n, t in zip(lengths, seconds):
        totals[n] += t
        counts[n] += 1
    per_length = {n: totals[n] / counts[n] for n in range(top + 1) if counts[n] > 0}
    if not per_length:
        raise InputError("no timings to summarise")
    mean = sum(per_length.values()) / len(per_length)
    return BenchReport(per_length, {n: counts[n] for n in per_length}, mean, 1.0 / mean if mean > 0 else math.inf)


def bench_inference(model: TextRecognizer, samples: Sequence[RawSample], resize: str = "msr",
                    timer: Callable[[], float] = time.perf_counter) -> BenchReport:
    """Time batch-size-1 recognition (forward + greedy decode) per sample."""
    if not samples:
        raise InputError("empty benchmark set")
    lengths, seconds = [], []
    for s in samples:
        image = msr_resize(s, resize)[0].astype(model.dtype)[None]
        t0 = timer()
        predict(model, image)
        seconds.append(timer() - t0)
        lengths.append(len(s.label))
    return summarize_timings(lengths, seconds)
