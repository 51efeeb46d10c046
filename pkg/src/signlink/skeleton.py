"""Skeleton front end: 69 keypoints -> four part streams -> [L, 4D] features.

Keypoint layout (index ranges, half-open):
    left hand  [0, 21)   wrist first, then 4 joints per finger, thumb to pinky
    right hand [21, 42)
    body       [42, 51)  neck first, then 8 limb/shoulder points
    face       [51, 69)  8 contour points, 3 + 3 eye points, 4 mouth points
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .nn import LayerNorm, Linear, Module, param, xavier
from .numerics import Tensor

NUM_KEYPOINTS = 69
PARTS = ("lh", "rh", "b", "f")
PART_SLICES = {
    "lh": slice(0, 21),
    "rh": slice(21, 42),
    "b": slice(42, 51),
    "f": slice(51, 69),
}
PART_SIZES = {p: s.stop - s.start for p, s in PART_SLICES.items()}


@dataclass
class SkeletonSequence:
    frames: np.ndarray  # [L, 69, 2]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (NUM_KEYPOINTS, 2):
            raise ValueError(f"expected [L, {NUM_KEYPOINTS}, 2] keypoints, got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("sequence must contain at least one frame")
        if not np.isfinite(self.frames).all():
            raise ValueError("keypoint coordinates must be finite")

    @property
    def length(self) -> int:
        return self.frames.shape[0]


def split_parts(seq: SkeletonSequence | np.ndarray) -> dict[str, np.ndarray]:
    frames = seq.frames if isinstance(seq, SkeletonSequence) else np.asarray(seq)
    if frames.shape[-2] != NUM_KEYPOINTS:
        raise ValueError(f"expected {NUM_KEYPOINTS} keypoints, got {frames.shape[-2]}")
    return {p: frames[..., PART_SLICES[p], :] for p in PARTS}


def part_edges(part: str) -> list[tuple[int, int]]:
    if part in ("lh", "rh"):
        edges = []
        for finger in range(5):
            chain = [0] + [1 + 4 * finger + j for j in range(4)]
            edges += list(zip(chain[:-1], chain[1:]))
        return edges
    if part == "b":
        return [(0, i) for i in range(1, 9)]
    if part == "f":

        def ring(nodes):
            return [(nodes[i], nodes[(i + 1) % len(nodes)]) for i in range(len(nodes))]

        edges = ring(range(0, 8)) + ring(range(8, 11)) + ring(range(11, 14)) + ring(range(14, 18))
        # bridges from eyes and mouth onto the contour keep the graph connected
        return edges + [(1, 8), (3, 11), (6, 14)]
    raise ValueError(f"unknown part id {part!r}")


def build_adjacency(part: str) -> np.ndarray:
    """Symmetric, row-stochastic adjacency with self-loops.

    Off-diagonal weights are Metropolis weights 1 / (1 + max(deg_i, deg_j));
    the diagonal takes the remaining mass, so rows sum to one while the
    matrix stays exactly symmetric.
    """
    n = PART_SIZES[part]
    edges = part_edges(part)
    deg = np.zeros(n, dtype=int)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    a = np.zeros((n, n))
    for i, j in edges:
        w = 1.0 / (1.0 + max(deg[i], deg[j]))
        a[i, j] = a[j, i] = w
    a[np.diag_indices(n)] = 1.0 - a.sum(axis=1)
    return a


class STGCNBlock(Module):
    """Spatial graph conv -> temporal conv (kernel 3, zero same-padding) -> GELU."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, joints: int | None = None):
        self.spatial = Linear(rng, d_in, d_out)
        # Per-joint channel gain. With weights shared across joints, the joint
        # mean-pool would cancel the linear response to centred coordinates.
        self.joint_gain = None if joints is None else param(rng.normal(size=(joints, d_out)))
        w = xavier(rng, d_out, 3 * d_out).reshape(d_out, 3, d_out).transpose(1, 0, 2).copy()
        w[2] = w[0]  # symmetric kernel at init
        self.temporal_w = param(w)
        self.temporal_b = param(np.zeros(d_out))

    def forward(self, x: Tensor, adj: Tensor, frame_mask: Tensor | None) -> Tensor:
        h = self.spatial(adj @ x)
        if self.joint_gain is not None:
            h = h * self.joint_gain
        if frame_mask is not None:
            h = h * frame_mask
        length = h.shape[-3]
        hp = nx.pad_axis(h, 1, 1, axis=-3)
        sl = [slice(None)] * hp.ndim
        taps = []
        for k in range(3):
            sl[-3] = slice(k, k + length)
            taps.append(hp[tuple(sl)] @ self.temporal_w[k])
        out = nx.gelu(taps[0] + taps[1] + taps[2] + self.temporal_b)
        if frame_mask is not None:
            out = out * frame_mask
        return out


class PartSTGCN(Module):
    def __init__(self, rng: np.random.Generator, part: str, d: int, blocks: int = 2, center: bool = True, motion: bool = True):
        self.part = part
        self._adj = Tensor(build_adjacency(part))
        n = PART_SIZES[part]
        c_in = 4 if motion else 2
        self.blocks = [STGCNBlock(rng, c_in if i == 0 else d, d, n) for i in range(blocks)]
        self.out = Linear(rng, d, d)
        self.norm = LayerNorm(d)  # pooling shrinks activations; restore unit scale
        self.center = center
        self.motion = motion

    def features(self, x: Tensor, frame_mask=None) -> Tensor:
        """Per-joint features before pooling, [..., L, N, D]."""
        if self.center:
            x = x - x.mean(axis=-2, keepdims=True)
            # unit RMS spread per frame so coordinates enter at O(1) scale
            x = x / nx.sqrt((x * x).mean(axis=(-2, -1), keepdims=True) + 1e-6)
        fm = None if frame_mask is None else Tensor(np.asarray(frame_mask, dtype=float)[..., None, None])
        if self.motion:
            # extra channels: offset from the sequence's mean pose over valid frames
            if fm is None:
                rest = x.mean(axis=-3, keepdims=True)
            else:
                rest = (x * fm).sum(axis=-3, keepdims=True) / fm.data.sum(axis=-3, keepdims=True)
            x = nx.concat([x, x - rest], axis=-1)
        for blk in self.blocks:
            x = blk(x, self._adj, fm)
        return x

    def forward(self, x: Tensor, frame_mask=None) -> Tensor:
        h = self.norm(self.out(self.features(x, frame_mask).mean(axis=-2)))
        if frame_mask is not None:
            h = h * np.asarray(frame_mask, dtype=float)[..., None]
        return h


def stgcn_forward(part_feats: Tensor, model: PartSTGCN, frame_mask=None) -> Tensor:
    return model(part_feats, frame_mask)


def fuse_parts(features: dict[str, Tensor] | list[Tensor]) -> Tensor:
    """Concatenate part features channel-wise in the fixed order lh, rh, b, f."""
    feats = [features[p] for p in PARTS] if isinstance(features, dict) else list(features)
    if len(feats) != 4:
        raise ValueError(f"expected 4 part features, got {len(feats)}")
    lengths = {f.shape[:-1] for f in feats}
    if len(lengths) != 1:
        raise ValueError(f"part feature lengths differ: {sorted(lengths)}")
    return nx.concat(feats, axis=-1)


class SkeletonFrontend(Module):
    def __init__(self, rng: np.random.Generator, d: int = 64, blocks: int = 2, center: bool = True, motion: bool = True):
        self.parts = {p: PartSTGCN(rng, p, d, blocks, center, motion) for p in PARTS}
        self.d = d

    def forward(self, frames, frame_mask=None) -> Tensor:
        """``frames``: [L, 69, 2] or [B, L, 69, 2]; returns [..., L, 4D]."""
        x = frames if isinstance(frames, Tensor) else Tensor(frames)
        feats = {}
        for p in PARTS:
            sl = [slice(None)] * x.ndim
            sl[-2] = PART_SLICES[p]
            feats[p] = self.parts[p](x[tuple(sl)], frame_mask)
        return fuse_parts(feats)
