# ccvec/train.py
"""Training loop, gradient verification and checkpoint persistence."""
import copy
import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from torch.overrides import TorchFunctionMode
from tqdm import tqdm

from ccvec.compare import ComparisonMask
from ccvec.corpus import PatchChange, Vocabulary, build_vocabularies, message_labels
from ccvec.errors import CheckpointError, ConfigurationError, TrainingError
from ccvec.head import loss_from_logits
from ccvec.model import CC2Vec
from ccvec.tensorize import ShapeConfig, encode_corpus

logger = logging.getLogger(__name__)

MAGIC = b"CC2V"
FORMAT_VERSION = 1


class TrainConfig(BaseModel):
    """Hyperparameters of one training run; recorded in every checkpoint."""
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(1e-4, gt=0, lt=1)
    adam_beta1: float = Field(0.9, gt=0, lt=1)
    adam_beta2: float = Field(0.999, gt=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    l2_lambda: float = Field(1e-5, ge=0)
    dropout_rate: float = Field(0.5, ge=0, lt=1)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(25, ge=1)
    seed: int = 0
    shape: ShapeConfig = Field(default_factory=ShapeConfig)
    embed_dim: int = Field(64, ge=1)
    gru_dim: int = Field(32, ge=1)
    ntn_slices: Optional[int] = Field(None, ge=1)
    hidden_dim: int = Field(256, ge=1)
    mask: ComparisonMask = Field(default_factory=ComparisonMask)
    share_encoder: bool = True
    mask_padding: bool = False
    grad_clip: Optional[float] = Field(5.0, gt=0)
    code_min_count: int = Field(1, ge=1)
    msg_min_count: int = Field(1, ge=1)
    msg_max_size: Optional[int] = Field(None, ge=1)
    progress: bool = False


def load_train_config(data: Dict[str, Any]) -> TrainConfig:
    try:
        config = TrainConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid training configuration: {e}") from e
    config.mask.validate_enabled()
    return config


@dataclass
class TrainResult:
    model: CC2Vec
    config: TrainConfig
    code_vocab: Vocabulary
    msg_vocab: Vocabulary
    history: List[float] = field(default_factory=list)


def build_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.Adam:
    # the L2 term lives in the objective, so Adam runs without weight decay
    return torch.optim.Adam(
        model.parameters(), lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_eps,
    )


def train_model(corpus: Sequence[PatchChange], config: TrainConfig,
                code_vocab: Optional[Vocabulary] = None,
                msg_vocab: Optional[Vocabulary] = None,
                workers: int = 1) -> TrainResult:
    """Minimise the word-prediction objective with Adam over shuffled mini-batches."""
    if not corpus:
        raise TrainingError("cannot train on an empty corpus")
    config.mask.validate_enabled()
    if code_vocab is None or msg_vocab is None:
        built_code, built_msg = build_vocabularies(
            corpus, config.code_min_count, config.msg_min_count, config.msg_max_size)
        code_vocab = code_vocab or built_code
        msg_vocab = msg_vocab or built_msg

    labels = np.stack([message_labels(patch, msg_vocab) for patch in corpus])
    trainable = labels.sum(axis=1) > 0
    if not trainable.any():
        raise TrainingError("no patch has an in-vocabulary message word; nothing to train on")
    if not trainable.all():
        logger.warning("Excluding %d patches without in-vocabulary message words from the loss",
                       int((~trainable).sum()))
    patches = [patch for patch, keep in zip(corpus, trainable) if keep]
    inputs = encode_corpus(patches, config.shape, code_vocab, workers=workers)
    targets = torch.from_numpy(labels[trainable])

    torch.manual_seed(config.seed)
    model = CC2Vec.from_config(config, len(code_vocab), len(msg_vocab))
    optimizer = build_optimizer(model, config)
    generator = torch.Generator().manual_seed(config.seed)
    logger.info("Training on %d patches, %d parameters, e_p width %d",
                len(patches), sum(p.numel() for p in model.parameters()), model.patch_dim)

    history: List[float] = []
    for epoch in tqdm(range(config.epochs), desc="epochs", disable=not config.progress):
        model.train()
        order = torch.randperm(len(patches), generator=generator)
        total = 0.0
        for batch_number, start in enumerate(range(0, len(patches), config.batch_size)):
            index = order[start:start + config.batch_size]
            logits = model(inputs[index])
            objective = loss_from_logits(logits, targets[index], model.parameters(), config.l2_lambda)
            if not torch.isfinite(objective):
                raise TrainingError(
                    f"loss diverged at epoch {epoch + 1}, batch {batch_number + 1}: {objective.item()} "
                    f"(learning_rate={config.learning_rate}, grad_clip={config.grad_clip})"
                )
            optimizer.zero_grad()
            objective.backward()
            if config.grad_clip is not None:
                nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            total += objective.item() * len(index)
        history.append(total / len(patches))
        logger.info("Epoch %d/%d: mean loss %.6f", epoch + 1, config.epochs, history[-1])

    model.eval()
    return TrainResult(model=model, config=config, code_vocab=code_vocab,
                       msg_vocab=msg_vocab, history=history)


# Gradient verification

@dataclass
class GroupCheck:
    name: str
    relative_error: float
    max_abs_error: float
    passed: bool
    skipped: int = 0


@dataclass
class GradientReport:
    tolerance: float
    groups: List[GroupCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(group.passed for group in self.groups)

    def failures(self) -> List[GroupCheck]:
        return [group for group in self.groups if not group.passed]


LossFn = Callable[[nn.Module, Any], torch.Tensor]
GradientFn = Callable[[nn.Module, Any], Dict[str, torch.Tensor]]

# gradients below this norm are compared in absolute terms
_GRADIENT_FLOOR = 1e-6

_RELU_FUNCTIONS = {F.relu, torch.relu}


class ActivationPatterns(TorchFunctionMode):
    """Records which ReLU inputs are positive while a loss is evaluated."""

    def __init__(self):
        super().__init__()
        self.patterns: List[torch.Tensor] = []

    def __torch_function__(self, func, types, args=(), kwargs=None):
        if func in _RELU_FUNCTIONS:
            self.patterns.append(args[0] > 0)
        return func(*args, **(kwargs or {}))

    def matches(self, other: "ActivationPatterns") -> bool:
        return len(self.patterns) == len(other.patterns) and all(
            torch.equal(a, b) for a, b in zip(self.patterns, other.patterns))


def model_loss(lam: float = 0.0) -> LossFn:
    def evaluate(model: nn.Module, batch: Tuple[torch.Tensor, torch.Tensor]) -> torch.Tensor:
        ids, labels = batch
        return loss_from_logits(model(ids), labels.to(torch.float64), model.parameters(), lam)
    return evaluate


def autograd_gradients(model: nn.Module, batch: Any, loss_fn: LossFn) -> Dict[str, torch.Tensor]:
    named = list(model.named_parameters())
    grads = torch.autograd.grad(loss_fn(model, batch), [p for _, p in named], allow_unused=True)
    return {name: torch.zeros_like(p) if g is None else g.detach()
            for (name, p), g in zip(named, grads)}


def redraw_biases_(model: nn.Module, bias_range: float, seed: int = 0) -> None:
    """Draw every bias from U(-r, r) so ReLU inputs sit away from zero."""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name.endswith("bias"):
                values = torch.rand(param.shape, generator=generator, dtype=torch.float64)
                param.copy_((values * 2 - 1) * bias_range)


def _evaluate(model: nn.Module, batch: Any, loss_fn: LossFn) -> Tuple[float, ActivationPatterns]:
    with ActivationPatterns() as patterns:
        value = loss_fn(model, batch).item()
    return value, patterns


def gradient_check(model: nn.Module, batch: Any, loss_fn: Optional[LossFn] = None,
                   tolerance: float = 1e-3, step: float = 1e-4,
                   gradient_fn: Optional[GradientFn] = None,
                   bias_range: Optional[float] = None, seed: int = 0) -> GradientReport:
    """Compare analytic gradients with central finite differences, per parameter tensor.

    Runs on a float64 copy with dropout disabled. With `bias_range` set, the
    copy's biases are redrawn first; at the zero-bias initialisation every ReLU
    input is close enough to zero for a finite step to cross it. Coordinates
    whose +/- step switches any ReLU on or off are counted as skipped and left
    out of the comparison. Failures are reported, never raised.
    """
    loss_fn = loss_fn or model_loss()
    model = copy.deepcopy(model).double()
    model.eval()
    if bias_range:
        redraw_biases_(model, bias_range, seed)
    if gradient_fn is None:
        analytic = autograd_gradients(model, batch, loss_fn)
    else:
        analytic = gradient_fn(model, batch)

    report = GradientReport(tolerance=tolerance)
    with torch.no_grad():
        _, base = _evaluate(model, batch, loss_fn)
        for name, param in model.named_parameters():
            flat = param.data.view(-1)
            numeric = torch.zeros_like(flat)
            kept = torch.ones(flat.numel(), dtype=torch.bool)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                plus, plus_patterns = _evaluate(model, batch, loss_fn)
                flat[i] = original - step
                minus, minus_patterns = _evaluate(model, batch, loss_fn)
                flat[i] = original
                numeric[i] = (plus - minus) / (2 * step)
                kept[i] = base.matches(plus_patterns) and base.matches(minus_patterns)

            exact = analytic[name].reshape(-1).to(numeric.dtype)[kept]
            numeric = numeric[kept]
            skipped = int((~kept).sum())
            difference = (exact - numeric).norm().item()
            scale = max(exact.norm().item(), numeric.norm().item(), _GRADIENT_FLOOR)
            relative = difference / scale
            max_abs = (exact - numeric).abs().max().item() if numeric.numel() else 0.0
            passed = relative <= tolerance
            report.groups.append(GroupCheck(name, relative, max_abs, passed, skipped))
            if skipped:
                logger.debug("Gradient check skipped %d/%d coordinates of %s at ReLU kinks",
                             skipped, flat.numel(), name)
            if not passed:
                logger.warning("Gradient check failed for %s: relative error %.3e", name, relative)
    return report


# Checkpoints: "CC2V" | u32 version | u64 header length | canonical JSON header | f32 payload

@dataclass
class Checkpoint:
    version: int
    config: TrainConfig
    code_vocab: Vocabulary
    msg_vocab: Vocabulary
    tensors: Dict[str, torch.Tensor]

    def build_model(self) -> CC2Vec:
        model = CC2Vec.from_config(self.config, len(self.code_vocab), len(self.msg_vocab))
        try:
            model.load_state_dict(self.tensors)
        except RuntimeError as e:
            raise CheckpointError(f"checkpoint tensors do not match its configuration: {e}") from e
        model.eval()
        return model


def _canonical_json(data: Dict) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def save_checkpoint(model: nn.Module, config: TrainConfig, path: Union[str, Path],
                    code_vocab: Vocabulary, msg_vocab: Vocabulary) -> None:
    """Write a checkpoint atomically (temporary file in the same directory, then rename)."""
    directory = []
    payload = bytearray()
    for name, tensor in model.state_dict().items():
        data = tensor.detach().cpu().numpy().astype("<f4").tobytes()
        directory.append({"name": name, "shape": list(tensor.shape), "offset": len(payload),
                          "length": len(data)})
        payload.extend(data)
    header = _canonical_json({
        "format_version": FORMAT_VERSION,
        "config": config.model_dump(mode="json"),
        "vocabularies": {"code": code_vocab.to_dict(), "message": msg_vocab.to_dict()},
        "tensors": directory,
    })
    blob = MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<Q", len(header)) + header + bytes(payload)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise
    logger.info("Saved checkpoint to %s (%d bytes)", path, len(blob))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    blob = Path(path).read_bytes()
    found = blob[:4]
    if found != MAGIC:
        raise CheckpointError(f"bad magic in {path}: found {found!r}, expected {MAGIC!r}")
    if len(blob) < 16:
        raise CheckpointError(f"checkpoint {path} is truncated")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version in {path}: found {version}, expected {FORMAT_VERSION}"
        )
    (header_length,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + header_length:
        raise CheckpointError(f"checkpoint {path} is truncated (header)")
    try:
        header = json.loads(blob[16:16 + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {e}") from e
    payload = memoryview(blob)[16 + header_length:]

    tensors: Dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        offset, length = entry["offset"], entry["length"]
        if offset + length > len(payload):
            raise CheckpointError(f"checkpoint {path} is truncated (tensor {entry['name']})")
        count = length // 4
        expected = math.prod(entry["shape"]) if entry["shape"] else 1
        if count != expected:
            raise CheckpointError(f"tensor {entry['name']} has {count} values, expected {expected}")
        array = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[entry["name"]] = torch.from_numpy(array.astype(np.float32).reshape(entry["shape"]))

    return Checkpoint(
        version=version,
        config=load_train_config(header["config"]),
        code_vocab=Vocabulary.from_dict(header["vocabularies"]["code"]),
        msg_vocab=Vocabulary.from_dict(header["vocabularies"]["message"]),
        tensors=tensors,
    )
