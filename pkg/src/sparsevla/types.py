"""Shared domain types: tagged token sets and selection results."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

ROLES = ("sem", "geo", "spatial3d", "obj3d", "geo3d", "agg3d",
         "dyn", "dep", "action", "instruction")


@dataclass
class TokenSet:
    """A token matrix [..., N, d] tagged with view identity and role."""
    tokens: Tensor
    role: str
    view: str | None = None
    patch_index: np.ndarray | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown token role {self.role!r}")

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[-2]

    @property
    def width(self) -> int:
        return self.tokens.shape[-1]


@dataclass
class SelectionResult:
    """Top-K retention outcome for one view."""
    indices: np.ndarray   # [..., K], descending score, ties by ascending index
    scores: np.ndarray    # [..., N], cosine scores for every token
    selected: TokenSet    # role=obj, K tokens
