"""Dataclass configuration for the whole stack, with JSON round-tripping.

A FullConfig nests one sub-config per subsystem under the keys
{world, encoders, aligner, fuser, thinker, train, audit}. Named presets:

  toy         - desk-scale trainable defaults (16x16 images, d=32)
  micro       - 2-view miniature used for finite-difference gradient checks
  paper-dims  - dimension preset for token/FLOPs auditing only; never
                instantiated as a network
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .tensor import ConfigError


@dataclass
class WorldConfig:
    image_size: int = 16
    patch_size: int = 4
    n_colors: int = 4
    n_distractors_min: int = 1
    n_distractors_max: int = 3
    object_half: float = 0.14
    gripper_half: float = 0.12
    p_gain: float = 2.0
    dt: float = 0.07
    capture_radius: float = 0.15
    explore_noise: float = 0.4   # action noise during data collection
    horizon: int = 32
    chunk: int = 8           # action chunk length K
    action_dim: int = 2      # planar velocity

    @property
    def patches_per_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.patches_per_side ** 2


@dataclass
class EncoderConfig:
    d_v: int = 32            # token width of all visual streams
    d_t: int = 16            # instruction embedding width
    n_heads: int = 4
    n_layers_sem: int = 2
    n_layers_geo: int = 2    # L': geometric / spatial3d depth
    d_ff: int = 64
    n_instructions: int = 4


@dataclass
class AlignerConfig:
    k: int = 2               # tokens retained per view (1/8 of 16)
    n_layers: int = 1
    n_heads: int = 4
    d_ff: int = 64


@dataclass
class FuserConfig:
    n_agg: int = 8
    psi: float = 0.2
    delta: float = 0.05
    schedule: str = "cosine"     # cosine | linear
    layout: str = "two-block"    # two-block | per-view
    n_heads: int = 4
    d_ff: int = 64


@dataclass
class ThinkerConfig:
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 64
    n_dyn_per_view: int = 4
    n_dep: int = 4
    n_instr_tokens: int = 1
    decoder_layers: int = 2
    decoder_heads: int = 4
    decoder_d_ff: int = 64


@dataclass
class TrainConfig:
    lr: float = 3e-3
    steps: int = 10000
    batch_size: int = 16
    seed: int = 0
    enable_dyn_loss: bool = True
    enable_dep_loss: bool = True
    # regression targets for the auxiliary decoders are scaled by this
    # factor so their summed squared errors stay comparable to the action
    # loss instead of dominating the shared trunk's gradient
    aux_target_scale: float = 0.01
    dtype: str = "float64"   # float64 | float32
    log_every: int = 1
    smooth_window: int = 100


@dataclass
class AuditConfig:
    preset: str = "toy"          # toy | paper-dims
    # token budgets (per the dimension preset)
    patches_per_view: int = 16
    n_views: int = 3
    k_obj: int = 2
    n_agg: int = 8
    n_instr: int = 1
    n_dyn: int = 12
    n_dep: int = 4
    n_action: int = 8
    # analytical FLOPs dimensions
    d_model: int = 32
    d_ff: int = 64
    n_layers: int = 2


@dataclass
class FullConfig:
    n_views: int = 3
    world: WorldConfig = field(default_factory=WorldConfig)
    encoders: EncoderConfig = field(default_factory=EncoderConfig)
    aligner: AlignerConfig = field(default_factory=AlignerConfig)
    fuser: FuserConfig = field(default_factory=FuserConfig)
    thinker: ThinkerConfig = field(default_factory=ThinkerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def arch_hash(self) -> str:
        """Hash of the sections that determine parameter shapes and wiring.

        Train/audit settings are excluded so a checkpoint stays loadable
        when only optimization settings (steps, lr) differ.
        """
        d = self.to_dict()
        arch = {k: d[k] for k in ("n_views", "world", "encoders", "aligner",
                                  "fuser", "thinker")}
        blob = json.dumps(arch, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = {
    "world": WorldConfig,
    "encoders": EncoderConfig,
    "aligner": AlignerConfig,
    "fuser": FuserConfig,
    "thinker": ThinkerConfig,
    "train": TrainConfig,
    "audit": AuditConfig,
}


def config_from_dict(d: dict) -> FullConfig:
    cfg = FullConfig()
    known = set(_SECTIONS) | {"n_views"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if "n_views" in d:
        cfg.n_views = int(d["n_views"])
    for key, cls in _SECTIONS.items():
        if key not in d:
            continue
        sect = d[key]
        names = {f.name for f in dataclasses.fields(cls)}
        bad = set(sect) - names
        if bad:
            raise ConfigError(f"unknown keys in [{key}]: {sorted(bad)}")
        setattr(cfg, key, cls(**sect))
    validate(cfg)
    return cfg


def load_config(path: str) -> FullConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def validate(cfg: FullConfig) -> None:
    if not 1 <= cfg.n_views <= 3:
        raise ConfigError(f"n_views must be 1..3, got {cfg.n_views}")
    if cfg.world.image_size % cfg.world.patch_size:
        raise ConfigError("image_size must be divisible by patch_size")
    if cfg.aligner.k > cfg.world.n_patches:
        raise ConfigError(f"k={cfg.aligner.k} exceeds patch count {cfg.world.n_patches}")
    if cfg.fuser.schedule not in ("cosine", "linear"):
        raise ConfigError(f"unknown alpha schedule {cfg.fuser.schedule!r}")
    if cfg.fuser.layout not in ("two-block", "per-view"):
        raise ConfigError(f"unknown fuser layout {cfg.fuser.layout!r}")
    if cfg.train.steps < 0 or cfg.train.batch_size < 1:
        raise ConfigError("train.steps must be >= 0 and batch_size >= 1")
    if cfg.train.dtype not in ("float64", "float32"):
        raise ConfigError(f"unsupported dtype {cfg.train.dtype!r}")


def toy_config() -> FullConfig:
    cfg = FullConfig()
    validate(cfg)
    return cfg


def micro_config() -> FullConfig:
    """2-view miniature for finite-difference gradient checks (64-bit)."""
    cfg = FullConfig(
        n_views=2,
        encoders=EncoderConfig(d_v=8, d_t=4, n_heads=2, n_layers_sem=1,
                               n_layers_geo=1, d_ff=12),
        aligner=AlignerConfig(k=2, n_layers=1, n_heads=2, d_ff=12),
        fuser=FuserConfig(n_agg=2, n_heads=2, d_ff=12),
        thinker=ThinkerConfig(d_model=8, n_layers=1, n_heads=2, d_ff=12,
                              n_dyn_per_view=2, n_dep=2, decoder_layers=1,
                              decoder_heads=2, decoder_d_ff=12),
        train=TrainConfig(batch_size=1, steps=1),
    )
    validate(cfg)
    return cfg


def paper_dims_audit() -> AuditConfig:
    """Full-scale dimension preset for budget/FLOPs auditing.

    Only used analytically; the network is never instantiated at these
    sizes. d_model/d_ff/n_layers approximate a 7B decoder backbone.
    """
    return AuditConfig(
        preset="paper-dims",
        patches_per_view=256, n_views=3, k_obj=32, n_agg=64,
        n_instr=16, n_dyn=12, n_dep=4, n_action=8,
        d_model=4096, d_ff=11008, n_layers=32,
    )


# Sparsification-sweep budgets: (k_obj==n_agg, query-token total). The
# sweep uses an 18-token query budget; the per-segment breakdown used as
# the default elsewhere is 12 dyn + 4 dep = 16.
BUDGET_PRESETS = {
    "sweep-high": {"k_obj": 128, "n_agg": 128, "n_query": 30},
    "sweep-mid": {"k_obj": 64, "n_agg": 64, "n_query": 18},
    "sweep-low": {"k_obj": 32, "n_agg": 32, "n_query": 12},
}
