"""Model and training configuration shared across modules."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .attnreg import RegWeights


@dataclass(frozen=True)
class Ablations:
    """Switches matching the model's ablation variants.

    ``vanilla`` drops attention, the gates, and the context-chain encoder
    entirely; the word LSTM sees only the previous word and the global
    image vector.
    """

    no_notes: bool = False
    no_sal: bool = False
    no_tdvar: bool = False
    no_xu: bool = False
    no_reg: bool = False
    vanilla: bool = False


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 0.001
    reg: RegWeights = field(default_factory=RegWeights)
    clip_norm: float = 5.0
    seed: int = 0
    ablations: Ablations = field(default_factory=Ablations)
    # model dimensions; vocab_size is normally filled in from the data
    n_images: int = 8
    spatial: int = 196
    channels: int = 512
    embed: int = 512
    hidden: int = 512
    attn: int | None = None
    vocab_size: int | None = None
    reg_kappa: bool = False
    min_count: int = 2

    def __post_init__(self):
        for name in ("epochs", "lr", "clip_norm", "n_images", "spatial",
                     "channels", "embed", "hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def attn_dim(self) -> int:
        return self.attn if self.attn is not None else self.hidden

    def effective_reg(self) -> RegWeights:
        """Regularizer weights with the ablation switches applied."""
        w = self.reg
        ab = self.ablations
        if ab.no_reg or ab.vanilla:
            return replace(w, lambda1=0.0, lambda2=0.0, lambda3=0.0)
        return replace(
            w,
            lambda1=0.0 if ab.no_xu else w.lambda1,
            lambda2=0.0 if ab.no_sal else w.lambda2,
            lambda3=0.0 if ab.no_tdvar else w.lambda3,
        )
