"""The full recognizer: backbone -> rearrangement -> CTC classifier, plus the optional
semantic-guidance branch used only during training."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np

from .backbone import Backbone, FeatureMap, make_config
from .errors import ModeError
from .frm import CtcClassifier, FeatureRearrangement
from .nn import Module
from .sgm import SemanticGuidance, SgmConfig
from .tensor import Tensor


@dataclass
class ModelConfig:
    variant: str = "Nano"
    num_classes: int = 12
    frm_mode: str = "frm"
    use_sgm: bool = True
    sgm_window: int = 5
    scale_attention: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class TextRecognizer(Module):
    def __init__(self, config: ModelConfig, dtype=np.float64):
        self.config = config
        rng = np.random.default_rng(config.seed)
        bcfg = make_config(config.variant)
        dim = bcfg.dims[-1]
        self.backbone = Backbone(bcfg, rng, config.scale_attention)
        self.rearrange = FeatureRearrangement(dim, rng, config.frm_mode, config.scale_attention)
        self.head = CtcClassifier(dim, config.num_classes, rng)
        self.sgm = self._new_sgm(rng) if config.use_sgm else None
        self.inference_only = False
        self.astype(dtype)

    @property
    def dtype(self):
        return self.head.weight.dtype

    def _new_sgm(self, rng) -> SemanticGuidance:
        dim = self.backbone.config.dims[-1]
        return SemanticGuidance(dim, SgmConfig(self.config.num_classes, self.config.sgm_window), rng,
                                self.config.scale_attention)

    def reset_sgm(self, seed: int) -> None:
        """Replace the guidance branch with freshly initialised parameters."""
        if self.inference_only:
            raise ModeError("inference model has no SGM branch")
        self.sgm = self._new_sgm(np.random.default_rng(seed)).astype(self.dtype)

    def prepare(self, images) -> Tensor:
        """(B, 3, H, W) or (3, H, W) arrays in [0, 1] -> channel-last tensor in [-1, 1]."""
        arr = np.asarray(images.data if isinstance(images, Tensor) else images)
        if arr.ndim == 3:
            arr = arr[None]
        return Tensor(((arr.transpose(0, 2, 3, 1) - 0.5) / 0.5).astype(self.dtype))

    def features(self, images) -> FeatureMap:
        x = images if isinstance(images, Tensor) and images.shape[-1] == 3 else self.prepare(images)
        return self.backbone(x)

    def ctc_logits_from_features(self, fmap: FeatureMap, return_weights: bool = False):
        if return_weights:
            seq, weights = self.rearrange(fmap, return_weights=True)
            return self.head(seq), weights
        return self.head(self.rearrange(fmap))

    def ctc_logits(self, images) -> Tensor:
        """(B, W/4, N_c + 1) logits; blank is the last class."""
        return self.ctc_logits_from_features(self.features(images))

    def forward(self, images) -> Tensor:
        return self.ctc_logits(images)

    def sgm_loss(self, fmap: FeatureMap, labels, return_attention: bool = False):
        if self.sgm is None:
            raise ModeError("this model has no SGM branch (inference checkpoint or SGM disabled)")
        return self.sgm(fmap.tokens(), labels, return_attention)

    def strip_for_inference(self) -> "TextRecognizer":
        """Copy without the guidance branch; CTC outputs are unchanged."""
        clone = copy.copy(self)
        clone.sgm = None
        clone.inference_only = True
        clone.config = ModelConfig(**{**self.config.to_dict(), "use_sgm": False})
        return copy.deepcopy(clone)
