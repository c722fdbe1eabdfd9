"""The three encoders, the decoder and the discriminator.

Motion, structure and view are extracted from a 2D skeleton sequence by
separate 3-layer temporal convolutional encoders; the decoder consumes
motion concatenated with the (pooled, broadcast) structure code and emits
a hip-centred 3D sequence in canonical view. Rotating that sequence by
the encoded per-frame view and projecting orthographically reconstructs
the input.

Channel layout for network inputs is joint-major: ``(x0, y0, x1, y1, ...)``
along the channel axis, time along the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffengine as de
from . import geometry as geo
from .errors import ShapeMismatch
from .validation import check_clip_batch, check_frame_count


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    padding: int
    stride: int = 1
    pool: int = 1  # temporal max-pool window applied after the conv
    pad_mode: str = "zero"

    def out_len(self, t: int) -> int:
        t = (t + 2 * self.padding - self.kernel) // self.stride + 1
        if self.pool > 1:
            if t % self.pool:
                raise ShapeMismatch(f"layer length {t} not divisible by pool {self.pool}")
            t //= self.pool
        return t


@dataclass(frozen=True)
class NetworkSpec:
    """Layer layout of all five networks.

    The default instance downsamples time by 8 on the motion path, pools
    the structure path down by 8 before the global max, and keeps the view
    path at full temporal resolution with 6 output channels.
    """

    n_joints: int = 15
    leaky_slope: float = 0.2
    motion: tuple[ConvSpec, ...] = (
        ConvSpec(64, 8, 3, stride=2),
        ConvSpec(128, 8, 3, stride=2),
        ConvSpec(128, 8, 3, stride=2),
    )
    # circular padding keeps the windowed structure estimates independent
    # of where the clip starts, so s_bar is stable under time duplication
    structure: tuple[ConvSpec, ...] = (
        ConvSpec(64, 7, 3, pool=2, pad_mode="circular"),
        ConvSpec(128, 7, 3, pool=2, pad_mode="circular"),
        ConvSpec(256, 7, 3, pool=2, pad_mode="circular"),
    )
    view: tuple[ConvSpec, ...] = (
        ConvSpec(64, 7, 3),
        ConvSpec(32, 7, 3),
        ConvSpec(6, 7, 3),
    )
    decoder: tuple[ConvSpec, ...] = (
        ConvSpec(256, 7, 3),
        ConvSpec(128, 7, 3),
        ConvSpec(45, 7, 3),
    )
    decoder_upsample: int = 2  # nearest-neighbour factor before each decoder conv
    discriminator: tuple[ConvSpec, ...] = (
        ConvSpec(64, 8, 3, stride=2),
        ConvSpec(128, 8, 3, stride=2),
        ConvSpec(256, 8, 3, stride=2),
    )

    def __post_init__(self):
        t0 = 16
        if self._path_len(self.motion, t0) != t0 // self.temporal_factor:
            raise ShapeMismatch("motion path must downsample time by the temporal factor")
        if self._path_len(self.structure, t0) != t0 // self.temporal_factor:
            raise ShapeMismatch("structure path must pool time down by the temporal factor")
        if self._path_len(self.view, t0) != t0 or self.view[-1].out_channels != 6:
            raise ShapeMismatch("view path must preserve time and emit 6 channels")
        if self.decoder[-1].out_channels != 3 * self.n_joints:
            raise ShapeMismatch("decoder must emit 3 channels per joint")
        up = self.decoder_upsample ** len(self.decoder)
        if up != self.temporal_factor:
            raise ShapeMismatch("decoder upsampling must undo the temporal factor")

    @staticmethod
    def _path_len(layers, t: int) -> int:
        for layer in layers:
            t = layer.out_len(t)
        return t

    @property
    def temporal_factor(self) -> int:
        return 8

    @property
    def in_channels(self) -> int:
        return 2 * self.n_joints

    @property
    def motion_channels(self) -> int:
        return self.motion[-1].out_channels

    @property
    def structure_channels(self) -> int:
        return self.structure[-1].out_channels


def mini_spec(divisor: int = 8) -> NetworkSpec:
    """A channel-scaled spec for gradient-oracle tests (structural widths kept)."""

    def shrink(layers, keep_last=None):
        out = []
        for i, layer in enumerate(layers):
            c = layer.out_channels
            if keep_last is not None and i == len(layers) - 1:
                c = keep_last
            else:
                c = max(2, c // divisor)
            out.append(ConvSpec(c, layer.kernel, layer.padding, layer.stride, layer.pool))
        return tuple(out)

    return NetworkSpec(
        motion=shrink(NetworkSpec().motion),
        structure=shrink(NetworkSpec().structure),
        view=shrink(NetworkSpec().view, keep_last=6),
        decoder=shrink(NetworkSpec().decoder, keep_last=45),
        discriminator=shrink(NetworkSpec().discriminator),
    )


@dataclass
class LatentCodes:
    """Factorised representation of one clip (or a batch of clips)."""

    m: np.ndarray       # (M, C_m) motion
    s: np.ndarray       # (M, C_s) windowed structure estimates
    s_bar: np.ndarray   # (C_s,) pooled structure
    v: np.ndarray       # (T, 6) per-frame view rotations


@dataclass
class ModelParams:
    """Learnable weights of the encoders, decoder and discriminator."""

    spec: NetworkSpec
    em: de.ParamStore
    es: de.ParamStore
    ev: de.ParamStore
    dec: de.ParamStore
    disc: de.ParamStore

    @property
    def dtype(self):
        return self.em["l0.w"].data.dtype

    def stores(self) -> dict[str, de.ParamStore]:
        return {"em": self.em, "es": self.es, "ev": self.ev,
                "dec": self.dec, "disc": self.disc}

    def generator_stores(self) -> list[de.ParamStore]:
        return [self.em, self.es, self.ev, self.dec]

    def n_values(self) -> int:
        return sum(s.n_values() for s in self.stores().values())


def init_model_params(spec: NetworkSpec | None = None, seed: int = 123,
                      dtype=np.float32) -> ModelParams:
    """Initialise all weights: leaky-gain uniform kernels, zero biases."""
    spec = spec or NetworkSpec()
    rng = np.random.default_rng(seed)
    gain = np.sqrt(2.0 / (1.0 + spec.leaky_slope ** 2))

    def fill(store, layers, c_in):
        for i, layer in enumerate(layers):
            fan_in = c_in * layer.kernel
            bound = gain * np.sqrt(3.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(layer.out_channels, c_in, layer.kernel))
            store.add(f"l{i}.w", w.astype(dtype))
            store.add(f"l{i}.b", np.zeros(layer.out_channels, dtype=dtype))
            c_in = layer.out_channels
        return c_in

    em, es, ev = de.ParamStore("em"), de.ParamStore("es"), de.ParamStore("ev")
    dec, disc = de.ParamStore("dec"), de.ParamStore("disc")
    fill(em, spec.motion, spec.in_channels)
    fill(es, spec.structure, spec.in_channels)
    fill(ev, spec.view, spec.in_channels)
    fill(dec, spec.decoder, spec.motion_channels + spec.structure_channels)
    c_last = fill(disc, spec.discriminator, spec.in_channels)
    bound = gain * np.sqrt(3.0 / c_last)
    disc.add("head.w", rng.uniform(-bound, bound, size=(c_last, 1)).astype(dtype))
    disc.add("head.b", np.zeros(1, dtype=dtype))
    return ModelParams(spec=spec, em=em, es=es, ev=ev, dec=dec, disc=disc)


# ---------------------------------------------------------------------------
# tensor-level forward passes (shared by training and inference)


def _conv_stack(x: de.Tensor, store: de.ParamStore, layers, slope: float) -> de.Tensor:
    last = len(layers) - 1
    for i, layer in enumerate(layers):
        x = de.conv1d(x, store[f"l{i}.w"], store[f"l{i}.b"],
                      stride=layer.stride, padding=layer.padding)
        if i != last:
            x = de.leaky_relu(x, slope)
        if layer.pool > 1:
            x = de.temporal_max_pool(x, layer.pool)
    return x


def encode_motion_t(x: de.Tensor, params: ModelParams) -> de.Tensor:
    """(B, 2N, T) -> (B, C_m, M)."""
    return _conv_stack(x, params.em, params.spec.motion, params.spec.leaky_slope)


def encode_structure_t(x: de.Tensor, params: ModelParams) -> tuple[de.Tensor, de.Tensor]:
    """(B, 2N, T) -> windowed estimates (B, C_s, M) and pooled code (B, C_s)."""
    s = _conv_stack(x, params.es, params.spec.structure, params.spec.leaky_slope)
    return s, de.global_max_pool(s)


def encode_view_t(x: de.Tensor, params: ModelParams) -> de.Tensor:
    """(B, 2N, T) -> (B, T, 6)."""
    v = _conv_stack(x, params.ev, params.spec.view, params.spec.leaky_slope)
    return de.moveaxis(v, 1, 2)


def decode_t(m: de.Tensor, s_bar: de.Tensor, params: ModelParams) -> de.Tensor:
    """Motion (B, C_m, M) plus structure (B, C_s) -> hip-centred (B, N, T, 3)."""
    spec = params.spec
    n_b, _, n_m = m.shape
    s_tiled = de.broadcast_to(de.reshape(s_bar, (n_b, spec.structure_channels, 1)),
                              (n_b, spec.structure_channels, n_m))
    x = de.concat([m, s_tiled], axis=1)
    last = len(spec.decoder) - 1
    for i, layer in enumerate(spec.decoder):
        x = de.upsample_nearest(x, spec.decoder_upsample)
        x = de.conv1d(x, params.dec[f"l{i}.w"], params.dec[f"l{i}.b"],
                      stride=layer.stride, padding=layer.padding)
        if i != last:
            x = de.leaky_relu(x, spec.leaky_slope)
    t = x.shape[-1]
    pts = de.moveaxis(de.reshape(x, (n_b, spec.n_joints, 3, t)), 2, 3)
    return de.sub(pts, pts[:, 0:1])  # hip-centre by subtracting the hip triple


def rot6d_t(v: de.Tensor) -> de.Tensor:
    """Differentiable Gram-Schmidt: (B, T, 6) -> (B, T, 3, 3).

    Norms are clamped at 1e-8 so degenerate activations cannot divide by
    zero mid-training; the standalone geometry routine enforces the strict
    contract instead.
    """
    a1, a2 = v[..., 0:3], v[..., 3:6]
    n1 = de.clip_min(de.sqrt(de.sum_(de.mul(a1, a1), axis=-1, keepdims=True)), 1e-8)
    b1 = de.div(a1, n1)
    dot = de.sum_(de.mul(b1, a2), axis=-1, keepdims=True)
    u2 = de.sub(a2, de.mul(dot, b1))
    n2 = de.clip_min(de.sqrt(de.sum_(de.mul(u2, u2), axis=-1, keepdims=True)), 1e-8)
    b2 = de.div(u2, n2)
    b3 = de.stack([
        de.sub(de.mul(b1[..., 1], b2[..., 2]), de.mul(b1[..., 2], b2[..., 1])),
        de.sub(de.mul(b1[..., 2], b2[..., 0]), de.mul(b1[..., 0], b2[..., 2])),
        de.sub(de.mul(b1[..., 0], b2[..., 1]), de.mul(b1[..., 1], b2[..., 0])),
    ], axis=-1)
    return de.stack([b1, b2, b3], axis=-1)  # columns (b1, b2, b3)


def discriminate_t(x: de.Tensor, params: ModelParams) -> de.Tensor:
    """(B, 2N, T) -> per-clip realness score in (0, 1), shape (B,)."""
    spec = params.spec
    h = x
    for i, layer in enumerate(spec.discriminator):
        h = de.conv1d(h, params.disc[f"l{i}.w"], params.disc[f"l{i}.b"],
                      stride=layer.stride, padding=layer.padding)
        h = de.leaky_relu(h, spec.leaky_slope)
    h = de.mean(h, axis=-1)  # global average pool over time
    score = de.sigmoid(de.add(de.matmul(h, params.disc["head.w"]),
                              params.disc["head.b"]))
    return de.reshape(score, (x.shape[0],))


def to_channels_t(x: de.Tensor) -> de.Tensor:
    """(B, N, T, 2) -> (B, 2N, T), joint-major channel order."""
    n_b, n, t, _ = x.shape
    return de.reshape(de.moveaxis(x, 3, 2), (n_b, 2 * n, t))


def project_t(x3d: de.Tensor) -> de.Tensor:
    """Orthographic projection inside the graph: (B, N, T, 3) -> (B, N, T, 2)."""
    return x3d[..., 0:2]


def _retarget_core_t(x_mv: de.Tensor, x_struct: de.Tensor, params: ModelParams):
    """Decode motion+view of one input with the structure of another.

    Returns (m, s, s_bar, v, x_vc, x_out); reconstruction is the special
    case where both inputs are the same tensor, which keeps
    ``retarget(x, x)`` bit-identical to reconstruction.
    """
    m = encode_motion_t(x_mv, params)
    s, s_bar = encode_structure_t(x_struct, params)
    v = encode_view_t(x_mv, params)
    x_vc = decode_t(m, s_bar, params)
    x_out = de.rotate_points(x_vc, rot6d_t(v))
    return m, s, s_bar, v, x_vc, x_out


# ---------------------------------------------------------------------------
# public numpy-level operations


def _channels_np(x: np.ndarray, dtype) -> np.ndarray:
    b, n, t, _ = x.shape
    return np.ascontiguousarray(x.transpose(0, 1, 3, 2).reshape(b, 2 * n, t), dtype=dtype)


def _prep(x, params: ModelParams, multiple_of_8: bool = True):
    batch = check_clip_batch(x, dim=2, n_joints=params.spec.n_joints)
    if multiple_of_8:
        check_frame_count(batch.shape[2], params.spec.temporal_factor)
    was_single = np.asarray(x).ndim == 3
    return de.tensor(_channels_np(batch, params.dtype)), was_single


def _maybe_squeeze(arr: np.ndarray, single: bool) -> np.ndarray:
    return arr[0] if single else arr


def encode_motion(x, params: ModelParams) -> np.ndarray:
    """Motion code of a clip: (M, C_m), or (B, M, C_m) for batches."""
    xt, single = _prep(x, params)
    with de.no_grad():
        m = encode_motion_t(xt, params)
    return _maybe_squeeze(m.data.transpose(0, 2, 1), single)


def encode_structure(x, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Windowed structure estimates (M, C_s) and pooled code (C_s,)."""
    xt, single = _prep(x, params)
    with de.no_grad():
        s, s_bar = encode_structure_t(xt, params)
    return (_maybe_squeeze(s.data.transpose(0, 2, 1), single),
            _maybe_squeeze(s_bar.data, single))


def encode_view(x, params: ModelParams) -> np.ndarray:
    """Per-frame 6D view rotations, (T, 6)."""
    xt, single = _prep(x, params, multiple_of_8=False)
    with de.no_grad():
        v = encode_view_t(xt, params)
    return _maybe_squeeze(v.data, single)


def encode_all(x, params: ModelParams) -> LatentCodes:
    xt, single = _prep(x, params)
    with de.no_grad():
        m = encode_motion_t(xt, params)
        s, s_bar = encode_structure_t(xt, params)
        v = encode_view_t(xt, params)
    return LatentCodes(
        m=_maybe_squeeze(m.data.transpose(0, 2, 1), single),
        s=_maybe_squeeze(s.data.transpose(0, 2, 1), single),
        s_bar=_maybe_squeeze(s_bar.data, single),
        v=_maybe_squeeze(v.data, single),
    )


def _codes_to_tensors(m, s_bar, params):
    m = np.asarray(m, dtype=params.dtype)
    s_bar = np.asarray(s_bar, dtype=params.dtype)
    single = m.ndim == 2
    if single:
        m, s_bar = m[None], s_bar[None]
    if m.shape[2] != params.spec.motion_channels:
        raise ShapeMismatch(f"motion code must have {params.spec.motion_channels} channels")
    if s_bar.shape[1] != params.spec.structure_channels:
        raise ShapeMismatch(f"structure code must have {params.spec.structure_channels} channels")
    return de.tensor(np.ascontiguousarray(m.transpose(0, 2, 1))), de.tensor(s_bar), single


def decode(m, s_bar, params: ModelParams) -> np.ndarray:
    """Decode codes to a hip-centred canonical-view 3D sequence (N, T, 3)."""
    mt, st, single = _codes_to_tensors(m, s_bar, params)
    with de.no_grad():
        out = decode_t(mt, st, params)
    return _maybe_squeeze(out.data, single)


@dataclass
class Reconstruction:
    """All intermediates of the analysis-synthesis round trip."""

    x_vc: np.ndarray    # canonical-view 3D sequence
    x_rec3d: np.ndarray  # 3D sequence rotated back to the input view
    x_rec: np.ndarray   # 2D reprojection of x_rec3d
    codes: LatentCodes


def reconstruct(x, params: ModelParams) -> Reconstruction:
    xt, single = _prep(x, params)
    with de.no_grad():
        m, s, s_bar, v, x_vc, x_out = _retarget_core_t(xt, xt, params)
        x_rec = project_t(x_out)
    codes = LatentCodes(
        m=_maybe_squeeze(m.data.transpose(0, 2, 1), single),
        s=_maybe_squeeze(s.data.transpose(0, 2, 1), single),
        s_bar=_maybe_squeeze(s_bar.data, single),
        v=_maybe_squeeze(v.data, single),
    )
    return Reconstruction(
        x_vc=_maybe_squeeze(x_vc.data, single),
        x_rec3d=_maybe_squeeze(x_out.data, single),
        x_rec=_maybe_squeeze(x_rec.data, single),
        codes=codes,
    )


def retarget(x_src, x_tgt, params: ModelParams) -> np.ndarray:
    """Source motion and view, target structure: 3D output in the source view."""
    xs, single_s = _prep(x_src, params)
    xt, single_t = _prep(x_tgt, params)
    if xs.shape[0] != xt.shape[0]:
        raise ShapeMismatch("source and target batches must have the same size")
    with de.no_grad():
        out = _retarget_core_t(xs, xt, params)[5]
    return _maybe_squeeze(out.data, single_s and single_t)


def canonicalize_view(x, params: ModelParams) -> np.ndarray:
    """Restore the canonical (identity-rotation) view: decode without rotating."""
    xt, single = _prep(x, params)
    with de.no_grad():
        m = encode_motion_t(xt, params)
        _, s_bar = encode_structure_t(xt, params)
        out = decode_t(m, s_bar, params)
    return _maybe_squeeze(out.data, single)


def canonicalize_structure(x, s_cano, params: ModelParams) -> np.ndarray:
    """Re-render with the canonical structure at the input's own view."""
    xt, single = _prep(x, params)
    s_cano = np.asarray(s_cano, dtype=params.dtype)
    if s_cano.ndim == 1:
        s_cano = np.broadcast_to(s_cano, (xt.shape[0], s_cano.shape[0]))
    with de.no_grad():
        m = encode_motion_t(xt, params)
        v = encode_view_t(xt, params)
        out = de.rotate_points(decode_t(m, de.tensor(s_cano), params), rot6d_t(v))
    return _maybe_squeeze(out.data, single)


def dual_canonicalize(x, s_cano, params: ModelParams) -> np.ndarray:
    """Canonical structure at canonical view: the distilled motion representation."""
    xt, single = _prep(x, params)
    s_cano = np.asarray(s_cano, dtype=params.dtype)
    if s_cano.ndim == 1:
        s_cano = np.broadcast_to(s_cano, (xt.shape[0], s_cano.shape[0]))
    with de.no_grad():
        m = encode_motion_t(xt, params)
        out = decode_t(m, de.tensor(s_cano), params)
    return _maybe_squeeze(out.data, single)


def discriminate(x, params: ModelParams) -> np.ndarray | float:
    """Realness score(s) in (0, 1)."""
    xt, single = _prep(x, params, multiple_of_8=False)
    with de.no_grad():
        score = discriminate_t(xt, params)
    return float(score.data[0]) if single else score.data
