"""Random bit-transition shuffling.

A packet is cut into symbol-period blocks. Block ``j`` runs from the centre of
symbol ``j`` to the centre of symbol ``j + 1`` and is labelled with the ordered
bit pair ``(b_j, b_{j+1})``. Shuffling permutes blocks only among blocks with
the same label, so every position keeps its label while the order of the
logical content is destroyed. The final symbol period (after the centre of
the last symbol) has no successor and stays in place as the tail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import SPS
from .errors import ParameterError, SignalLengthError
from .signal import IqBuffer

N_CLASSES = 4


@dataclass(frozen=True)
class TransitionSegment:
    class_label: tuple[int, int]
    samples: np.ndarray

    @property
    def class_index(self) -> int:
        return 2 * self.class_label[0] + self.class_label[1]


@dataclass(frozen=True)
class SegmentedBuffer:
    segments: tuple[TransitionSegment, ...]
    tail: np.ndarray
    sample_rate: float

    def concatenate(self) -> IqBuffer:
        parts = [s.samples for s in self.segments] + [self.tail]
        return IqBuffer(np.concatenate(parts), self.sample_rate)

    @property
    def classes(self) -> np.ndarray:
        return np.array([s.class_index for s in self.segments], dtype=np.int64)


def transition_classes(bits: np.ndarray) -> np.ndarray:
    """Class ``2 * b_j + b_{j+1}`` for every consecutive pair along the last axis."""
    bits = np.asarray(bits, dtype=np.int64)
    return 2 * bits[..., :-1] + bits[..., 1:]


def segment_transitions(buf: IqBuffer, bits, sps: int = SPS, interp_factor: int = 1) -> SegmentedBuffer:
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if bits.size < 2:
        raise ParameterError("need at least two bits to form a transition")
    seg_len = sps * interp_factor
    if len(buf) != bits.size * seg_len:
        raise SignalLengthError(
            f"buffer has {len(buf)} samples, expected {bits.size} bits x {seg_len} = {bits.size * seg_len}"
        )
    x = buf.samples
    segments = tuple(
        TransitionSegment((int(bits[j]), int(bits[j + 1])), x[j * seg_len : (j + 1) * seg_len].copy())
        for j in range(bits.size - 1)
    )
    return SegmentedBuffer(segments, x[(bits.size - 1) * seg_len :].copy(), buf.sample_rate)


def block_permutation(classes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Source block for every destination block, uniform within each class.

    ``classes`` is ``(B, m)``; the result has the same shape and satisfies
    ``classes[b, out[b, j]] == classes[b, j]``.
    """
    classes = np.atleast_2d(classes)
    keys = classes + rng.random(classes.shape)
    src = np.argsort(keys, axis=1, kind="stable")  # grouped by class, random within
    dest = np.argsort(classes, axis=1, kind="stable")  # grouped by class, in position order
    out = np.empty_like(src)
    np.put_along_axis(out, dest, src, axis=1)
    return out


def shuffle_indices(bits: np.ndarray, seg_len: int, rng: np.random.Generator) -> np.ndarray:
    """Sample gather indices ``(B, n * seg_len)`` that shuffle a batch of packets."""
    bits = np.atleast_2d(bits)
    n = bits.shape[1]
    perm = block_permutation(transition_classes(bits), rng)
    offsets = np.arange(seg_len)
    body = (perm[:, :, None] * seg_len + offsets).reshape(bits.shape[0], -1)
    tail = np.broadcast_to((n - 1) * seg_len + offsets, (bits.shape[0], seg_len))
    return np.concatenate([body, tail], axis=1)


def shuffle_transitions(segmented: SegmentedBuffer, rng_seed=None, training: bool = True) -> IqBuffer:
    """Stitch the segments back together after shuffling within each class.

    With ``training=False`` this is the identity (plain concatenation).
    """
    if not training:
        return segmented.concatenate()
    rng = np.random.default_rng(rng_seed)
    perm = block_permutation(segmented.classes[None, :], rng)[0]
    parts = [segmented.segments[k].samples for k in perm] + [segmented.tail]
    return IqBuffer(np.concatenate(parts), segmented.sample_rate)
