"""Quantum-interleaved deep Boltzmann machine and its contrastive
divergence trainer.

Three layers (visible, interleaved hidden with transverse biases,
top hidden); only the middle layer carries transverse terms, which
keeps every Gibbs conditional closed-form: clamping the neighbors of
the middle layer leaves independent two-level systems whose Z and X
expectations are elementary. Training therefore runs with the same
memory footprint as a classical three-layer machine -- no object here
ever scales beyond (layer x layer) arrays.

Two encodings are supported. ``plus-minus`` is theory-exact: the
closed forms are literally the Gibbs conditionals of the joint
transverse-field model, and setting the transverse biases to zero
reproduces a classical machine's dynamics bit for bit. ``zero-one``
(default) follows the common implementation practice of feeding the
encoded values into the effective fields as-is; its classical limit is
a factor of two hotter than a textbook 0/1 machine, which is accepted
and documented rather than silently corrected.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
import tracemalloc
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import NumericError, ValidationError

ZERO_ONE = "zero-one"
PLUS_MINUS = "plus-minus"
_ENCODINGS = (ZERO_ONE, PLUS_MINUS)

CHECKPOINT_MAGIC = b"QDBM"
CHECKPOINT_VERSION = 1


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(eq=False)
class QidbmParams:
    """Weights, classical biases and transverse (quantum) biases of the
    three-layer machine. ``gamma`` all zero is exactly a classical DBM
    parameterization."""

    l: int
    m: int
    n: int
    b: np.ndarray  # length l + m + n
    W1: np.ndarray  # (l, m)
    W2: np.ndarray  # (m, n)
    gamma: np.ndarray  # length m

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64).reshape(self.l + self.m + self.n)
        self.W1 = np.asarray(self.W1, dtype=np.float64).reshape(self.l, self.m)
        self.W2 = np.asarray(self.W2, dtype=np.float64).reshape(self.m, self.n)
        self.gamma = np.asarray(self.gamma, dtype=np.float64).reshape(self.m)
        self.require_finite()

    def require_finite(self, where: str = ""):
        for name, arr in (("b", self.b), ("W1", self.W1), ("W2", self.W2), ("gamma", self.gamma)):
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite parameter {name}{' ' + where if where else ''}")

    @property
    def b_v(self) -> np.ndarray:
        return self.b[: self.l]

    @property
    def b_h1(self) -> np.ndarray:
        return self.b[self.l : self.l + self.m]

    @property
    def b_h2(self) -> np.ndarray:
        return self.b[self.l + self.m :]

    def n_params(self) -> int:
        return self.b.size + self.W1.size + self.W2.size + self.gamma.size

    def copy(self) -> "QidbmParams":
        return QidbmParams(
            self.l, self.m, self.n, self.b.copy(), self.W1.copy(), self.W2.copy(), self.gamma.copy()
        )


def init_params(
    l: int, m: int, n: int, seed: int, gamma: float | np.ndarray = 0.0
) -> QidbmParams:
    """Zero biases; weights uniform on +-1/sqrt(fan-in); transverse
    biases broadcast from a scalar or given per-unit."""
    stream = rngmod.init_stream(seed)
    w1 = stream.uniform(-1.0, 1.0, (l, m)) / np.sqrt(l)
    w2 = stream.uniform(-1.0, 1.0, (m, n)) / np.sqrt(m)
    g = np.broadcast_to(np.asarray(gamma, dtype=np.float64), (m,)).copy()
    return QidbmParams(l, m, n, np.zeros(l + m + n), w1, w2, g)


@dataclass
class CdConfig:
    k: int = 1
    learning_rate: float = 0.001
    batch_size: int = 600
    epochs: int = 1
    seed: int = 0
    encoding: str = ZERO_ONE
    train_gamma: bool = False
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be at least 1")
        if self.encoding not in _ENCODINGS:
            raise ValidationError(f"encoding must be one of {_ENCODINGS}, got {self.encoding!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("learning_rate, batch_size and epochs must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValidationError("holdout_fraction must be in [0, 1)")

    def config_hash(self) -> str:
        doc = json.dumps(self.__dict__, sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


@dataclass
class GibbsState:
    v: np.ndarray
    h1: np.ndarray
    h1_z_expect: np.ndarray
    h2: np.ndarray


def encode_rows(bits: np.ndarray, encoding: str) -> np.ndarray:
    """Dataset bits (0/1) to encoded values."""
    bits = np.asarray(bits, dtype=np.float64)
    if encoding == PLUS_MINUS:
        return 2.0 * bits - 1.0
    return bits


def decode_values(values: np.ndarray, encoding: str) -> np.ndarray:
    """Encoded values back to 0/1 bits."""
    if encoding == PLUS_MINUS:
        return ((np.asarray(values) + 1.0) / 2.0).astype(np.uint8)
    return np.asarray(values).astype(np.uint8)


# ---------------------------------------------------------------------------
# Closed-form conditionals
# ---------------------------------------------------------------------------


def _effective_field(v: np.ndarray, h2: np.ndarray, params: QidbmParams) -> np.ndarray:
    return params.b_h1 + v @ params.W1 + h2 @ params.W2.T


def _quantum_expect_from_field(b_eff: np.ndarray, gamma: np.ndarray):
    """Z and X expectations of independent two-level units in the field
    (gamma, 0, b_eff): z = (b_eff/D) tanh D, x = (gamma/D) tanh D with
    D = sqrt(b_eff^2 + gamma^2); the D -> 0 limit is 0.

    Units with gamma exactly zero take the classical tanh branch so the
    zero-transverse-bias machine is bit-identical to a classical one.
    """
    d = np.sqrt(b_eff * b_eff + gamma * gamma)
    safe = np.where(d > 0.0, d, 1.0)
    ratio = np.tanh(safe) / safe
    z = np.where(d > 0.0, b_eff * ratio, 0.0)
    x = np.where(d > 0.0, gamma * ratio, 0.0)
    classical = gamma == 0.0
    if np.any(classical):
        z = np.where(classical, np.tanh(b_eff), z)
        x = np.where(classical, 0.0, x)
    return z, x


def quantum_layer_expectations(v, h2, params: QidbmParams):
    """Per-unit Z and X expectations of the interleaved layer given its
    clamped neighbors (single state vectors, encoded values)."""
    v = np.asarray(v, dtype=np.float64).reshape(1, params.l)
    h2 = np.asarray(h2, dtype=np.float64).reshape(1, params.n)
    z, x = _quantum_expect_from_field(_effective_field(v, h2, params), params.gamma)
    return z[0], x[0]


def _values_from_outcome(plus_outcome: np.ndarray, encoding: str) -> np.ndarray:
    if encoding == PLUS_MINUS:
        return np.where(plus_outcome, 1.0, -1.0)
    return plus_outcome.astype(np.float64)


def sample_quantum_layer(v, h2, params: QidbmParams, rng: np.random.Generator, encoding: str = ZERO_ONE):
    """Sample the interleaved layer in the Z basis: each unit takes the
    '1' outcome with probability (1 + <Z>)/2. Returns the sampled values
    together with the (Z, X) expectations used."""
    z, x = quantum_layer_expectations(v, h2, params)
    u = rng.random(params.m)
    values = _values_from_outcome(u < (1.0 + z) / 2.0, encoding)
    return values, z, x


def sample_classical_layer(
    adjacent_states: Sequence[np.ndarray],
    weights: Sequence[np.ndarray],
    biases: np.ndarray,
    rng: np.random.Generator,
    encoding: str = ZERO_ONE,
) -> np.ndarray:
    """Sample a classical layer given its neighbors.

    ``weights[k]`` maps adjacent layer k to this layer (shape
    (adj_units, self_units)). The '1' outcome has probability
    sigmoid(activation) in the 0/1 encoding and (1 + tanh(a))/2 --
    identically sigmoid(2a) -- in the +-1 encoding.
    """
    act = np.asarray(biases, dtype=np.float64).copy()
    for state, w in zip(adjacent_states, weights):
        act = act + np.asarray(state, dtype=np.float64) @ w
    p = sigmoid(act) if encoding == ZERO_ONE else (1.0 + np.tanh(act)) / 2.0
    return _values_from_outcome(rng.random(act.shape) < p, encoding)


def _classical_prob_plus(act: np.ndarray, encoding: str) -> np.ndarray:
    return sigmoid(act) if encoding == ZERO_ONE else (1.0 + np.tanh(act)) / 2.0


def _classical_mean(act: np.ndarray, encoding: str) -> np.ndarray:
    return sigmoid(act) if encoding == ZERO_ONE else np.tanh(act)


# ---------------------------------------------------------------------------
# Contrastive divergence
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CdUpdate:
    dW1: np.ndarray
    dW2: np.ndarray
    db: np.ndarray
    dgamma: np.ndarray


def apply_update(params: QidbmParams, update: CdUpdate) -> None:
    params.W1 += update.dW1
    params.W2 += update.dW2
    params.b += update.db
    params.gamma += update.dgamma


def _draw(streams: Sequence[np.random.Generator], width: int) -> np.ndarray:
    return np.stack([s.random(width) for s in streams])


def _sample_h1(V, H2, params, streams, encoding, quantum: bool):
    """One blocked Gibbs update of the middle layer; returns sampled
    values and the conditional (Z) means actually used."""
    b_eff = _effective_field(V, H2, params)
    if quantum:
        z, x = _quantum_expect_from_field(b_eff, params.gamma)
        p_plus = (1.0 + z) / 2.0
    else:
        z = _classical_mean(b_eff, encoding)
        x = np.zeros_like(z)
        p_plus = _classical_prob_plus(b_eff, encoding)
    u = _draw(streams, params.m)
    return _values_from_outcome(u < p_plus, encoding), z, x


def _sample_v(H1, params, streams, encoding):
    act = params.b_v + H1 @ params.W1.T
    u = _draw(streams, params.l)
    return _values_from_outcome(u < _classical_prob_plus(act, encoding), encoding)


def _sample_h2(H1, params, streams, encoding):
    act = params.b_h2 + H1 @ params.W2
    u = _draw(streams, params.n)
    return _values_from_outcome(u < _classical_prob_plus(act, encoding), encoding)


def cd_step(
    batch: np.ndarray,
    params: QidbmParams,
    config: CdConfig,
    streams: Sequence[np.random.Generator],
    quantum: bool = True,
):
    """One contrastive-divergence step on an encoded batch.

    Layer schedule per sweep: middle layer given clamped (v, h2), then v
    and h2 given the middle layer (odd/even blocking). The positive
    phase clamps the data and uses conditional means for the middle
    layer; the negative phase runs k sweeps and contributes sampled
    Z-basis values. Returns the parameter update (not applied) and
    diagnostics.

    With ``quantum=False`` the middle layer is treated as a classical
    layer throughout; this is the dedicated classical-machine path.
    """
    V0 = np.asarray(batch, dtype=np.float64)
    if V0.ndim != 2 or V0.shape[1] != params.l:
        raise ValidationError(f"batch shape {V0.shape} does not match {params.l} visible units")
    if len(streams) != V0.shape[0]:
        raise ValidationError("need exactly one random stream per batch row")
    nb = V0.shape[0]
    enc = config.encoding

    # Bottom-up initialization: middle layer from the data alone, then
    # the top layer from it.
    zeros_h2 = np.zeros((nb, params.n))
    h1_init, _, _ = _sample_h1(V0, zeros_h2, params, streams, enc, quantum)
    h2_0 = _sample_h2(h1_init, params, streams, enc)

    # Positive phase: data-clamped; middle layer enters through its
    # conditional means, classical layers through samples.
    b_eff_pos = _effective_field(V0, h2_0, params)
    if quantum:
        h1_pos, x_pos = _quantum_expect_from_field(b_eff_pos, params.gamma)
    else:
        h1_pos = _classical_mean(b_eff_pos, enc)
        x_pos = np.zeros_like(h1_pos)

    # Negative phase: k alternating sweeps from the data-initialized
    # state.
    v_cur, h2_cur = V0, h2_0
    h1_cur = h1_init
    z_cur = np.zeros_like(h1_init)
    x_cur = np.zeros_like(h1_init)
    for _ in range(config.k):
        h1_cur, z_cur, x_cur = _sample_h1(v_cur, h2_cur, params, streams, enc, quantum)
        v_cur = _sample_v(h1_cur, params, streams, enc)
        h2_cur = _sample_h2(h1_cur, params, streams, enc)

    lr = config.learning_rate
    dW1 = lr * (V0.T @ h1_pos - v_cur.T @ h1_cur) / nb
    dW2 = lr * (h1_pos.T @ h2_0 - h1_cur.T @ h2_cur) / nb
    db = lr * np.concatenate(
        [
            (V0 - v_cur).mean(axis=0),
            (h1_pos - h1_cur).mean(axis=0),
            (h2_0 - h2_cur).mean(axis=0),
        ]
    )
    if quantum and config.train_gamma:
        dgamma = lr * (x_pos - x_cur).mean(axis=0)
    else:
        dgamma = np.zeros(params.m)

    recon_error = float(((V0 - v_cur) ** 2).mean())
    end_state = GibbsState(v=v_cur, h1=h1_cur, h1_z_expect=z_cur, h2=h2_cur)
    return CdUpdate(dW1, dW2, db, dgamma), {"recon_error": recon_error, "end_state": end_state}


@dataclass
class EpochStats:
    epoch: int
    recon_error: float
    holdout_free_energy: float
    seconds: float


def _free_energy_proxy(rows: np.ndarray, params: QidbmParams, encoding: str) -> float:
    """Deterministic mean-field energy of held-out rows: one bottom-up
    pass fixes the hidden means, then the (negated) energy terms are
    averaged. A proxy -- the exact free energy of a three-layer machine
    has no closed form."""
    if rows.shape[0] == 0:
        return float("nan")
    v = rows
    h1_0, _ = _quantum_expect_from_field(
        _effective_field(v, np.zeros((rows.shape[0], params.n)), params), params.gamma
    )
    h2 = _classical_mean(params.b_h2 + h1_0 @ params.W2, encoding)
    h1, _ = _quantum_expect_from_field(_effective_field(v, h2, params), params.gamma)
    energy = (
        v @ params.b_v
        + h1 @ params.b_h1
        + h2 @ params.b_h2
        + np.einsum("bi,ij,bj->b", v, params.W1, h1)
        + np.einsum("bi,ij,bj->b", h1, params.W2, h2)
    )
    return float(-energy.mean())


def train(
    dataset_bits: np.ndarray,
    params: QidbmParams,
    config: CdConfig,
    quantum: bool = True,
    progress=None,
):
    """Epoch loop of shuffled minibatches over a 0/1 dataset.

    Mutates ``params`` in place and returns per-epoch diagnostics.
    Aborts with the epoch/batch coordinates if parameters go non-finite.
    """
    bits = np.asarray(dataset_bits)
    if bits.ndim != 2 or bits.shape[1] != params.l:
        raise ValidationError(f"dataset shape {bits.shape} does not match {params.l} visible units")
    values = encode_rows(bits, config.encoding)
    n_hold = int(round(config.holdout_fraction * values.shape[0]))
    holdout = values[values.shape[0] - n_hold :]
    train_vals = values[: values.shape[0] - n_hold]
    if train_vals.shape[0] == 0:
        raise ValidationError("holdout fraction leaves no training rows")

    stats: list[EpochStats] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rngmod.shuffle_stream(config.seed, epoch).permutation(train_vals.shape[0])
        shuffled = train_vals[order]
        errs = []
        for bi, start in enumerate(range(0, shuffled.shape[0], config.batch_size)):
            batch = shuffled[start : start + config.batch_size]
            streams = rngmod.row_streams(config.seed, epoch, bi, batch.shape[0])
            update, diag = cd_step(batch, params, config, streams, quantum=quantum)
            apply_update(params, update)
            try:
                params.require_finite()
            except NumericError as exc:
                raise NumericError(f"{exc} at epoch {epoch}, batch {bi}") from exc
            errs.append(diag["recon_error"])
        stat = EpochStats(
            epoch=epoch,
            recon_error=float(np.mean(errs)),
            holdout_free_energy=_free_energy_proxy(holdout, params, config.encoding),
            seconds=time.perf_counter() - t0,
        )
        stats.append(stat)
        if progress is not None:
            progress(stat)
    return stats


def generate(
    params: QidbmParams,
    n_samples: int,
    burn_in: int,
    seed: int,
    encoding: str = ZERO_ONE,
    quantum: bool = True,
) -> np.ndarray:
    """Draw visible samples: independent chains from uniform random
    states, ``burn_in`` sweeps each, one sample per chain. Rows are
    returned as 0/1 bits regardless of encoding."""
    if n_samples < 1:
        raise ValidationError("n_samples must be positive")
    streams = [rngmod.chain_stream(seed, c) for c in range(n_samples)]
    v = _values_from_outcome(_draw(streams, params.l) < 0.5, encoding)
    h2 = _values_from_outcome(_draw(streams, params.n) < 0.5, encoding)
    h1 = np.zeros((n_samples, params.m))
    for _ in range(max(0, burn_in)):
        h1, _, _ = _sample_h1(v, h2, params, streams, encoding, quantum)
        v = _sample_v(h1, params, streams, encoding)
        h2 = _sample_h2(h1, params, streams, encoding)
    return decode_values(v, encoding)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_ENC_TAG = {ZERO_ONE: 0, PLUS_MINUS: 1}
_TAG_ENC = {v: k for k, v in _ENC_TAG.items()}


def save_checkpoint(path, params: QidbmParams, encoding: str, manifest: dict) -> None:
    """Versioned binary container (shape header + little-endian float64
    arrays) plus a JSON text manifest sidecar."""
    path = Path(path)
    header = CHECKPOINT_MAGIC + struct.pack(
        "<IIIIB", CHECKPOINT_VERSION, params.l, params.m, params.n, _ENC_TAG[encoding]
    )
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (params.b, params.W1, params.W2, params.gamma)
    )
    path.write_bytes(header + payload)
    doc = {"dims": [params.l, params.m, params.n], "encoding": encoding}
    doc.update(manifest)
    path.with_suffix(path.suffix + ".manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_checkpoint(path) -> tuple[QidbmParams, str, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 21 or raw[:4] != CHECKPOINT_MAGIC:
        raise ValidationError(f"not a checkpoint file (bad magic) at {path}")
    version, l, m, n, enc_tag = struct.unpack("<IIIIB", raw[4:21])
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    if enc_tag not in _TAG_ENC:
        raise ValidationError(f"unknown encoding tag {enc_tag} in checkpoint")
    sizes = [l + m + n, l * m, m * n, m]
    expected = 21 + 8 * sum(sizes)
    if len(raw) != expected:
        raise ValidationError(
            f"checkpoint payload truncated: field 'arrays' expects {expected} bytes, got {len(raw)}"
        )
    offset = 21
    arrays = []
    for size in sizes:
        arrays.append(np.frombuffer(raw, dtype="<f8", count=size, offset=offset).copy())
        offset += 8 * size
    b, w1, w2, gamma = arrays
    params = QidbmParams(l, m, n, b, w1.reshape(l, m), w2.reshape(m, n), gamma)
    manifest_path = path.with_suffix(path.suffix + ".manifest.json")
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    return params, _TAG_ENC[enc_tag], manifest


# ---------------------------------------------------------------------------
# Allocation audit
# ---------------------------------------------------------------------------


@dataclass
class AllocationReport:
    budget_bytes: int = 0
    peak_bytes: int = 0

    @property
    def within_budget(self) -> bool:
        return self.peak_bytes <= self.budget_bytes


@contextmanager
def allocation_audit(budget_bytes: int):
    """Track peak incremental memory under tracemalloc and record it in
    the yielded report. Any array exponential in unit counts would blow
    an O(max-layer^2) budget by thousands of orders of magnitude, so a
    peak bound enforces the memory contract."""
    report = AllocationReport(budget_bytes=int(budget_bytes))
    started_here = not tracemalloc.is_tracing()
    if started_here:
        tracemalloc.start()
    tracemalloc.reset_peak()
    base, _ = tracemalloc.get_traced_memory()
    try:
        yield report
    finally:
        _, peak = tracemalloc.get_traced_memory()
        report.peak_bytes = max(0, peak - base)
        if started_here:
            tracemalloc.stop()
