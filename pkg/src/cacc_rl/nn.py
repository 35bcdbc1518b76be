"""Small dense networks in float64 with explicit tapes for reverse-mode gradients.

Every network owns a :class:`ParamSet`: named parameter arrays that are
views into one flat buffer, with a parallel flat gradient buffer. The flat
layout lets the optimizer and target blending work on whole vectors.
"""
from __future__ import annotations

import json
import math
import os
import struct
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import CheckpointError, UsageError

HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("linear", "tanh")


class ParamSet:
    """Named float64 arrays backed by a single flat buffer, plus gradient slots."""

    def __init__(self, shapes: Mapping[str, Sequence[int]]):
        self._shapes = {name: tuple(int(d) for d in shape) for name, shape in shapes.items()}
        total = sum(math.prod(s) for s in self._shapes.values())
        self.data = np.zeros(total)
        self.grad = np.zeros(total)
        self._values = {}
        self._grads = {}
        offset = 0
        for name, shape in self._shapes.items():
            size = math.prod(shape)
            self._values[name] = self.data[offset:offset + size].reshape(shape)
            self._grads[name] = self.grad[offset:offset + size].reshape(shape)
            offset += size
        self.version = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def shapes(self) -> dict[str, tuple]:
        return dict(self._shapes)

    def grad_of(self, name: str) -> np.ndarray:
        return self._grads[name]

    def items(self):
        return self._values.items()

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def mark_changed(self) -> None:
        """Invalidate tapes recorded against the previous parameter values."""
        self.version += 1

    def copy(self) -> "ParamSet":
        out = ParamSet(self._shapes)
        out.data[:] = self.data
        return out

    def assign(self, other: "ParamSet") -> None:
        _check_compatible(self, other)
        self.data[:] = other.data
        self.mark_changed()


def _check_compatible(a: ParamSet, b: ParamSet) -> None:
    if a.shapes() != b.shapes():
        raise UsageError(f"parameter sets differ: {a.shapes()} vs {b.shapes()}")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple = (64, 64)
    output_dim: int = 1
    hidden_activation: str = "relu"
    output_activation: str = "linear"
    output_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        # zero-width message inputs are allowed; layer widths are not
        if self.input_dim < 0 or any(d < 1 for d in dims[1:]):
            raise UsageError(f"invalid layer dimensions {dims}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise UsageError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise UsageError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class Tape:
    """Intermediates of one forward pass, consumed by :meth:`Mlp.backward`."""

    net: "Mlp"
    inputs: list
    masks: list
    squashed: Optional[np.ndarray]
    version: int
    single: bool

    def signature(self) -> bytes:
        """Relu on/off pattern; differs between two evaluations only if a kink was crossed."""
        return b"".join(np.packbits(m > 0).tobytes() for m in self.masks)


class Mlp:
    """Fully connected network: affine layers, relu between them, optional tanh head.

    Layer ``k`` holds ``W{k}`` shaped ``(fan_in, fan_out)`` and ``b{k}``; a
    batch ``x`` of shape ``(B, fan_in)`` maps to ``x @ W + b``.
    """

    def __init__(self, spec: MlpSpec, params: Optional[ParamSet] = None,
                 rng: Optional[np.random.Generator] = None, final_scale: Optional[float] = None):
        self.spec = spec
        shapes = {}
        for li, (fan_in, fan_out) in enumerate(spec.layer_dims):
            shapes[f"W{li}"] = (fan_in, fan_out)
            shapes[f"b{li}"] = (fan_out,)
        if params is None:
            params = ParamSet(shapes)
        elif params.shapes() != shapes:
            raise UsageError(f"parameter shapes {params.shapes()} do not fit {spec}")
        self.params = params
        n = len(spec.layer_dims)
        self._layers = [(params[f"W{li}"], params[f"b{li}"], params.grad_of(f"W{li}"), params.grad_of(f"b{li}"))
                        for li in range(n)]
        if rng is not None or final_scale is not None:
            self.init(rng if rng is not None else np.random.default_rng(0), final_scale)

    @property
    def n_layers(self) -> int:
        return len(self._layers)

    def init(self, rng: np.random.Generator, final_scale: Optional[float] = None) -> None:
        """Uniform fan-in init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``; optional small last layer."""
        last = self.n_layers - 1
        for li, (fan_in, _) in enumerate(self.spec.layer_dims):
            bound = 1.0 / math.sqrt(max(fan_in, 1))
            if li == last and final_scale is not None:
                bound = final_scale
            W, b = self._layers[li][:2]
            W[...] = rng.uniform(-bound, bound, W.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)
        self.params.mark_changed()

    def forward(self, x) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.ndim != 2 or h.shape[1] != self.spec.input_dim:
            raise UsageError(f"input shape {x.shape} does not match input_dim {self.spec.input_dim}")
        inputs, masks = [], []
        last = self.n_layers - 1
        for li, (W, b, _, _) in enumerate(self._layers):
            inputs.append(h)
            z = h @ W
            z += b
            if li < last:
                mask = (z > 0).astype(float)
                masks.append(mask)
                z *= mask
            h = z
        squashed = None
        if self.spec.output_activation == "tanh":
            squashed = np.tanh(h)
            h = self.spec.output_scale * squashed
        elif self.spec.output_scale != 1.0:
            h = self.spec.output_scale * h
        tape = Tape(self, inputs, masks, squashed, self.params.version, single)
        return (h[0] if single else h), tape

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, tape: Tape, output_grad) -> np.ndarray:
        """Accumulate parameter gradients (``+=``) and return the input gradient."""
        if tape.net is not self:
            raise UsageError("tape was recorded by a different network")
        if tape.version != self.params.version:
            raise UsageError("stale tape: parameters changed since the forward pass")
        g = np.asarray(output_grad, dtype=float)
        g = g[None, :] if tape.single else g
        if self.spec.output_activation == "tanh":
            g = g * (self.spec.output_scale * (1.0 - tape.squashed ** 2))
        elif self.spec.output_scale != 1.0:
            g = g * self.spec.output_scale
        last = self.n_layers - 1
        for li in range(last, -1, -1):
            W, _, gW, gb = self._layers[li]
            if li < last:
                g = g * tape.masks[li]
            gW += tape.inputs[li].T @ g
            gb += g.sum(axis=0)
            g = g @ W.T
        return g[0] if tape.single else g


# -- optimisation ----------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Optional[np.ndarray] = field(default=None, repr=False)
    v: Optional[np.ndarray] = field(default=None, repr=False)


def adam_step(params: ParamSet, state: AdamState) -> None:
    """One bias-corrected adaptive-moment update; gradients are zeroed afterwards."""
    if state.m is None:
        state.m = np.zeros(params.size)
        state.v = np.zeros(params.size)
    if state.m.shape != (params.size,):
        raise UsageError("optimizer state does not match parameter set")
    g = params.grad
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    params.zero_grad()
    params.mark_changed()


def soft_update(target: ParamSet, online: ParamSet, tau: float) -> None:
    """``target <- (1 - tau) * target + tau * online``."""
    _check_compatible(target, online)
    if not 0.0 <= tau <= 1.0:
        raise UsageError("tau must lie in [0, 1]")
    target.data[:] = (1.0 - tau) * target.data + tau * online.data
    target.mark_changed()


# -- checkpoints -------------------------------------------------------------------

MAGIC = b"CACCRLCK"
FORMAT_VERSION = 1


def save_checkpoint(paramsets: Mapping[str, ParamSet], path, metadata: Optional[dict] = None) -> None:
    """Write a self-describing little-endian checkpoint (layout in docs/checkpoint-format.md)."""
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    chunks += [struct.pack("<I", len(meta)), meta]
    arrays = [(f"{set_name}/{name}", arr) for set_name, ps in paramsets.items() for name, arr in ps.items()]
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        raw = name.encode()
        chunks += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
        chunks += [struct.pack("<I", d) for d in arr.shape]
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(chunks)
    tmp = f"{path}.partial"
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def load_checkpoint(path) -> tuple[dict[str, ParamSet], dict]:
    """Read a checkpoint; any corruption raises :class:`CheckpointError` and returns nothing."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes {blob[:len(MAGIC)]!r}")
    r = _Reader(blob[:-4], path)
    r.take(len(MAGIC))
    version = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    meta = json.loads(r.take(r.unpack("<I")).decode())
    arrays: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(r.unpack("<I")):
        name = r.take(r.unpack("<H")).decode()
        ndim = r.unpack("<B")
        shape = tuple(r.unpack("<I") for _ in range(ndim))
        data = np.frombuffer(r.take(8 * math.prod(shape)), dtype="<f8").reshape(shape)
        set_name, _, entry = name.rpartition("/")
        arrays.setdefault(set_name, {})[entry] = data
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes; shape table corrupt")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != zlib.crc32(blob[:-4]):
        raise CheckpointError(f"{path}: checksum mismatch")
    out = {}
    for set_name, entries in arrays.items():
        ps = ParamSet({k: v.shape for k, v in entries.items()})
        for k, v in entries.items():
            ps[k][...] = v
        out[set_name] = ps
    return out, meta


# -- gradient checking ---------------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(max|a|, max|n|)``; zero when both vanish."""
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradient_check(fn: Callable[[], tuple[float, bytes]], targets: Iterable[tuple[np.ndarray, np.ndarray]],
                   eps: float = 1e-5, max_coords: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None) -> float:
    """Compare analytic gradients against central differences.

    ``fn`` evaluates the scalar loss and returns it with an activation
    signature; coordinates whose two perturbed evaluations land on different
    relu patterns sit on a kink and are skipped. ``targets`` pairs each
    array that is perturbed in place with its analytic gradient.
    """
    rng = rng or np.random.default_rng(0)
    analytic, numeric = [], []
    for arr, grad in targets:
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, max_coords, replace=False)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            f_plus, sig_plus = fn()
            flat[j] = orig - eps
            f_minus, sig_minus = fn()
            flat[j] = orig
            if sig_plus != sig_minus:
                continue
            analytic.append(gflat[j])
            numeric.append((f_plus - f_minus) / (2.0 * eps))
    if not analytic:
        return 0.0
    return relative_error(np.array(analytic), np.array(numeric))
