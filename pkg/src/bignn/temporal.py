"""Frame pooling, temporal enrichment, sliding windows and causal TCNs.

Per-frame node features are max-pooled together with spatial- and
action-edge rows into a single frame vector, enriched with inverse-distance
weighted relative-motion deltas, cut into fixed overlapping windows and fed
through stacked dilated causal depthwise convolutions, one TCN per attention
level.  Outputs of overlapping windows are averaged back into one vector per
frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .numerics import init
from .scene import FrameObservation

TCN_PROFILES = {"kitchen": 4, "daily": 6, "sim": 2}
TCN_DILATIONS = (1, 2, 4)


def fit_width(vec: ad.Tensor, width: int) -> ad.Tensor:
    """Zero-pad or truncate a 1-D tensor to a target width."""
    have = vec.shape[0]
    if have == width:
        return vec
    if have > width:
        return ad.narrow(vec, 0, width)
    return ad.concat([vec, ad.Tensor(np.zeros(width - have))])


def _fit_rows(rows: ad.Tensor, width: int) -> ad.Tensor:
    have = rows.shape[1]
    if have == width:
        return rows
    if have > width:
        data = rows
        # column slice via transpose + narrow keeps the op set small
        return ad.transpose(ad.narrow(ad.transpose(data), 0, width))
    pad = ad.Tensor(np.zeros((rows.shape[0], width - have)))
    return ad.concat([rows, pad], axis=1)


def aggregate_frame(h_final: ad.Tensor, e_rows: ad.Tensor | None,
                    a_rows: ad.Tensor | None) -> ad.Tensor:
    """Elementwise max over node rows and all edge rows of the frame.

    The per-node max over its own feature and its incident edge maxima,
    followed by the max across nodes, collapses to one max over every row.
    Edge rows are fitted (zero-pad/truncate) to the node feature width so
    the output width is stable across frames.
    """
    if h_final.shape[0] == 0:
        raise ValueError("no nodes: cannot aggregate an empty frame")
    width = h_final.shape[1]
    stacks = [h_final]
    for rows in (e_rows, a_rows):
        if rows is not None and rows.shape[0] > 0:
            stacks.append(_fit_rows(rows, width))
    stacked = stacks[0] if len(stacks) == 1 else ad.concat(stacks, axis=0)
    return ad.tmax(stacked, axis=0)


def motion_enrichment(prev: FrameObservation | None, cur: FrameObservation) -> np.ndarray:
    """Inverse-distance weighted sum of relative-motion deltas (3-vector).

    Sums over all unordered object pairs tracked in both frames with weight
    1 / (1 + distance).  Static scenes and first frames contribute zero.
    """
    total = np.zeros(3)
    if prev is None:
        return total
    prev_ids = {o.id for o in prev.objects}
    objs = [o for o in cur.objects if o.id in prev_ids]
    for a in range(len(objs)):
        for b in range(a + 1, len(objs)):
            oi, oj = objs[a], objs[b]
            delta = ((oj.position - oi.position)
                     - (prev.get(oj.id).position - prev.get(oi.id).position))
            dist = float(np.linalg.norm(oj.position - oi.position))
            total += delta / (1.0 + dist)
    return total


def enrich_frame(x_star: ad.Tensor, enrichment: np.ndarray) -> ad.Tensor:
    """Add the zero-padded motion term to the pooled frame vector."""
    width = x_star.shape[0]
    padded = np.zeros(width)
    padded[:min(3, width)] = enrichment[:min(3, width)]
    return x_star + ad.Tensor(padded)


# ---------------------------------------------------------------------------
# Windowing.
# ---------------------------------------------------------------------------


@dataclass
class WindowBatch:
    """Fixed-length window starts over a frame range, last window padded."""

    n_frames: int
    size: int
    overlap: int
    starts: list[int]

    @property
    def stride(self) -> int:
        return self.size - self.overlap

    def mask(self, start: int) -> np.ndarray:
        """True for real frames, False for zero-padded slots."""
        idx = np.arange(start, start + self.size)
        return idx < self.n_frames

    def frames_of(self, start: int) -> np.ndarray:
        return np.arange(start, min(start + self.size, self.n_frames))

    def windows_covering(self, t: int) -> list[int]:
        return [s for s in self.starts if s <= t < s + self.size]


def make_windows(n_frames: int, size: int = 30, overlap: int = 10) -> WindowBatch:
    """Window starts at multiples of the stride; every frame is covered.

    A sequence no longer than one window yields a single (possibly padded)
    window; otherwise windows start at 0, stride, 2*stride, ... while the
    start lies inside the sequence, and the final window is zero padded.
    """
    if overlap < 0 or size <= overlap:
        raise ValueError(f"need size > overlap >= 0, got {size}/{overlap}")
    if n_frames <= 0:
        raise ValueError("empty sequence")
    stride = size - overlap
    if n_frames <= size:
        return WindowBatch(n_frames, size, overlap, [0])
    n = int(np.ceil(n_frames / stride))
    return WindowBatch(n_frames, size, overlap, [k * stride for k in range(n)])


# ---------------------------------------------------------------------------
# TCN.
# ---------------------------------------------------------------------------


@dataclass
class TcnParams:
    """Per-layer depthwise kernels (K taps x D channels), biases, dilations."""

    kernels: list[ad.Tensor]
    biases: list[ad.Tensor]
    dilations: tuple[int, ...]

    def named(self, prefix: str) -> dict[str, ad.Tensor]:
        out = {}
        for i, (k, b) in enumerate(zip(self.kernels, self.biases)):
            out[f"{prefix}.layer{i}.kernel"] = k
            out[f"{prefix}.layer{i}.bias"] = b
        return out


def build_tcn_params(width: int, kernel_size: int, rng: np.random.Generator,
                     prefix: str = "tcn",
                     dilations: tuple[int, ...] = TCN_DILATIONS) -> TcnParams:
    """Xavier kernels, zero biases, dilations doubling per layer."""
    for a, b in zip(dilations, dilations[1:]):
        if b != 2 * a:
            raise ValueError("dilation rates must double per layer")
    kernels = [ad.parameter(init("xavier_uniform", [kernel_size, width], rng),
                            name=f"{prefix}.layer{i}.kernel")
               for i in range(len(dilations))]
    biases = [ad.parameter(np.zeros(width), name=f"{prefix}.layer{i}.bias")
              for i in range(len(dilations))]
    return TcnParams(kernels=kernels, biases=biases, dilations=tuple(dilations))


def causal_conv(x: ad.Tensor, kernel: ad.Tensor, bias: ad.Tensor,
                dilation: int) -> ad.Tensor:
    """Depthwise causal convolution with left zero padding.

    y[t, c] = sum_tau kernel[tau, c] * x[t - tau*dilation, c] + bias[c];
    the output at t never reads inputs after t.
    """
    n_t = x.shape[0]
    taps = kernel.shape[0]
    pad = (taps - 1) * dilation
    padded = ad.concat([ad.Tensor(np.zeros((pad, x.shape[1]))), x], axis=0)
    out = None
    for tau in range(taps):
        shifted = ad.narrow(padded, pad - tau * dilation, n_t)
        term = ad.mul_rowvec(shifted, _kernel_row(kernel, tau))
        out = term if out is None else out + term
    return ad.add_rowvec(out, bias)


def _kernel_row(kernel: ad.Tensor, tau: int) -> ad.Tensor:
    return ad.reshape(ad.narrow(kernel, tau, 1), (kernel.shape[1],))


def tcn_stack(x: ad.Tensor, params: TcnParams, slope: float = 0.2,
              dropout_masks: list[np.ndarray] | None = None) -> ad.Tensor:
    """Compose conv + bias + LeakyReLU layers over a window."""
    h = x
    for i, (kernel, bias, dilation) in enumerate(
            zip(params.kernels, params.biases, params.dilations)):
        if kernel.shape[0] > x.shape[0]:
            raise ValueError(f"kernel size {kernel.shape[0]} exceeds window "
                             f"length {x.shape[0]}")
        h = ad.leaky_relu(causal_conv(h, kernel, bias, dilation), slope)
        if dropout_masks is not None:
            h = h * ad.Tensor(dropout_masks[i])
    return h


def tcn_forward(x_seq: ad.Tensor, params: TcnParams, size: int = 30,
                overlap: int = 10, slope: float = 0.2,
                dropout_masks: dict[int, list[np.ndarray]] | None = None) -> ad.Tensor:
    """Windowed TCN over a frame-feature sequence, fused back per frame.

    Overlapping windows are averaged per frame.  Output at frame t depends
    only on inputs at frames <= t (window starts never exceed t and the
    convolutions are causal).
    """
    n_frames, width = x_seq.shape
    batch = make_windows(n_frames, size=size, overlap=overlap)
    counts = np.zeros(n_frames)
    pieces = []
    segments = []
    for w, start in enumerate(batch.starts):
        real = batch.frames_of(start)
        window = ad.narrow(x_seq, start, len(real))
        if len(real) < batch.size:
            window = ad.concat([window, ad.Tensor(
                np.zeros((batch.size - len(real), width)))], axis=0)
        masks = dropout_masks.get(w) if dropout_masks else None
        y = tcn_stack(window, params, slope=slope, dropout_masks=masks)
        pieces.append(ad.narrow(y, 0, len(real)))
        segments.append(real)
        counts[real] += 1.0
    stacked = pieces[0] if len(pieces) == 1 else ad.concat(pieces, axis=0)
    seg_ids = np.concatenate(segments)
    total = ad.segment_sum(stacked, seg_ids, n_frames)
    return ad.scale_rows(total, ad.Tensor(1.0 / counts))
