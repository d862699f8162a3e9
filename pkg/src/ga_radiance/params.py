"""Flat parameter store with a named-segment index.

Every trainable module declares its tensors into a :class:`ParamLayout`; the
whole model is then one contiguous float64 vector. Forward code receives a
``dict`` of reshaped views into that vector, so autograd flows back to the
flat vector and checkpoints are a single little-endian block.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import torch


@dataclass(frozen=True)
class Segment:
    name: str
    shape: tuple[int, ...]
    offset: int
    init: tuple

    @property
    def size(self) -> int:
        return int(math.prod(self.shape))


class ParamLayout:
    """Ordered, non-overlapping segments covering ``[0, size)``."""

    def __init__(self):
        self._segments: dict[str, Segment] = {}
        self.size = 0

    def add(self, name: str, shape, init=("normal", None)) -> None:
        """Append a segment.

        ``init`` is one of ``("normal", std)`` (``std=None`` means 1/sqrt(fan_in)
        over the last axis), ``("zeros",)``, ``("const", value)`` or
        ``("identity",)`` for square trailing matrices.
        """
        if name in self._segments:
            raise ValueError(f"duplicate parameter segment {name!r}")
        shape = tuple(int(s) for s in shape)
        seg = Segment(name, shape, self.size, tuple(init))
        self._segments[name] = seg
        self.size += seg.size

    def extend(self, prefix: str, other: "ParamLayout") -> None:
        for seg in other:
            self.add(f"{prefix}{seg.name}", seg.shape, seg.init)

    def __iter__(self) -> Iterator[Segment]:
        return iter(self._segments.values())

    def __getitem__(self, name: str) -> Segment:
        return self._segments[name]

    def __contains__(self, name: str) -> bool:
        return name in self._segments

    def __len__(self) -> int:
        return len(self._segments)

    def names(self) -> list[str]:
        return list(self._segments)

    def segment_of(self, index: int) -> str:
        for seg in self._segments.values():
            if seg.offset <= index < seg.offset + seg.size:
                return seg.name
        raise IndexError(index)

    def initial_vector(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        out = np.empty(self.size)
        for seg in self:
            kind = seg.init[0]
            if kind == "normal":
                std = seg.init[1] if len(seg.init) > 1 and seg.init[1] is not None else 1.0 / math.sqrt(seg.shape[-1])
                block = rng.normal(0.0, std, size=seg.shape)
            elif kind == "zeros":
                block = np.zeros(seg.shape)
            elif kind == "const":
                block = np.full(seg.shape, float(seg.init[1]))
            elif kind == "identity":
                block = np.zeros(seg.shape)
                block[..., :, :] = np.eye(seg.shape[-2], seg.shape[-1])
            else:
                raise ValueError(f"unknown initializer {seg.init!r} for {seg.name}")
            out[seg.offset : seg.offset + seg.size] = block.ravel()
        return out

    def views(self, flat) -> dict[str, torch.Tensor]:
        if flat.shape != (self.size,):
            raise ValueError(f"parameter vector has shape {tuple(flat.shape)}, layout needs ({self.size},)")
        return {s.name: flat[s.offset : s.offset + s.size].reshape(s.shape) for s in self}

    def to_json(self) -> list[dict]:
        return [{"name": s.name, "shape": list(s.shape), "offset": s.offset} for s in self]

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json()).encode()).hexdigest()


def sub(params: dict[str, torch.Tensor], prefix: str) -> dict[str, torch.Tensor]:
    """Views whose names start with ``prefix``, with the prefix stripped."""
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


@dataclass
class ModelParams:
    layout: ParamLayout
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (self.layout.size,):
            raise ValueError("parameter vector does not match its layout")

    @classmethod
    def initialize(cls, layout: ParamLayout, seed: int) -> "ModelParams":
        return cls(layout, layout.initial_vector(seed))

    def tensor(self, requires_grad: bool = False) -> torch.Tensor:
        return torch.tensor(self.vector, dtype=torch.float64, requires_grad=requires_grad)

    def views(self) -> dict[str, torch.Tensor]:
        return self.layout.views(self.tensor())

    def segment(self, name: str) -> np.ndarray:
        s = self.layout[name]
        return self.vector[s.offset : s.offset + s.size].reshape(s.shape)
