"""Behavioral model of the compute-in-memory array (CIMA).

Stored matrices are decomposed into pm1 bit-planes mapped to parallel
columns; input bits arrive serially per plane. A column cycle counts
XNOR matches over the active (unmasked) rows, converts the resulting
capacitor voltage through a behavioral 8-bit ADC, and the near-memory
datapath turns codes back into signed row sums using the active-row
offset. Matrix-vector multiplies stream all plane combinations, weight
the recovered sums by both operands' plane weights, and accumulate in
the exact digital domain across row tiles and column passes.

All conversion arithmetic happens in count units (one count = one active
row at XNOR output 1): column voltage is count * v_dd / rows, and every
reference voltage is mapped through the same linear rule, which keeps
the one-code-per-count regime exactly representable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .formats import (
    RADIX4_BIAS,
    RADIX4_EXPONENTS,
    QuantizedTensor,
    pm1_encode_array,
    pm1_plane_weights,
    pm1_range,
    round_half_away,
)
from .vref import VrefPolicy, select_capacity

# Tolerance used inside floor() so exact-integer code boundaries survive
# the float round trip through reference-voltage units. True quotients sit
# at least 255/rows ~ 0.11 away from the next integer unless exactly on it.
_FLOOR_TOL = 1e-9

_INPUT_STREAM_BITS_RADIX4 = RADIX4_EXPONENTS + 1  # sign + mask bits
_WORD_BITS = 32


class CapacityError(ValueError):
    """Matrix does not fit the array's columns in a single pass."""


class DimensionError(ValueError):
    """Operand shapes disagree."""


@dataclass(frozen=True)
class CimaConfig:
    rows: int = 2304
    cols: int = 256
    adc_bits: int = 8
    v_dd: float = 0.8
    adc_noise_sigma: float = 0.0

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0 or self.adc_bits <= 0:
            raise ValueError("rows, cols and adc_bits must be positive")
        if self.v_dd <= 0:
            raise ValueError("v_dd must be positive")

    @property
    def max_code(self) -> int:
        return 2 ** self.adc_bits - 1

    @property
    def volts_per_count(self) -> float:
        return self.v_dd / self.rows


@dataclass(frozen=True)
class AdcReading:
    code: int
    vref_p: float
    vref_n: float
    clipped: bool


@dataclass(frozen=True)
class InputPlane:
    """One serial input cycle: signs for active rows, mask bits, and the
    binary/radix weight this plane carries in reconstruction."""

    signs: np.ndarray   # int8, +1/-1 per row
    active: np.ndarray  # bool per row; masked rows contribute zero charge
    weight: float

    def __post_init__(self):
        if self.signs.shape != self.active.shape:
            raise ValueError("signs and active mask must have the same shape")

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))


@dataclass
class StoredMatrix:
    """A source integer matrix resident in the array as pm1 bit-planes.

    Element (d, n) occupies columns n*k .. n*k+k-1 (its k bit-planes side
    by side) within each of ceil(D/rows) row tiles. Rows past the source
    depth in the last tile are padding and permanently masked.
    """

    source: np.ndarray          # (D, N) int64
    k: int
    cfg: CimaConfig
    tiles: list = field(repr=False)          # [(row_lo, row_hi), ...]
    tile_planes: list = field(repr=False)    # float32 (rows_t, N*k) per tile

    @property
    def inner_dim(self) -> int:
        return self.source.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.source.shape[1]

    @property
    def columns_used(self) -> int:
        return self.n_outputs * self.k

    @property
    def n_tiles(self) -> int:
        return len(self.tiles)

    def column_of(self, output: int, bit_plane: int) -> int:
        """Physical column of an (output, bit-plane) pair within each tile."""
        if not (0 <= output < self.n_outputs and 0 <= bit_plane < self.k):
            raise IndexError("output or bit-plane index out of range")
        return output * self.k + bit_plane

    def plane_weights(self) -> np.ndarray:
        return pm1_plane_weights(self.k)

    def tile_rows(self, tile: int) -> int:
        lo, hi = self.tiles[tile]
        return hi - lo


def load_matrix(m: np.ndarray, k: int, cfg: CimaConfig) -> StoredMatrix:
    """Map an integer matrix (inner dim D x outputs N) onto the array.

    Raises CapacityError when N*k exceeds the physical columns; wide
    matrices go through load_operand instead, which splits them into
    sequential column passes.
    """
    m = np.asarray(m)
    if m.ndim != 2:
        raise DimensionError(f"expected 2-D matrix, got shape {m.shape}")
    d, n = m.shape
    if n * k > cfg.cols:
        raise CapacityError(
            f"{n} outputs x {k} bit-planes need {n * k} columns; "
            f"array has {cfg.cols}"
        )
    limit = pm1_range(k)
    if m.size and (np.abs(m) > limit).any():
        raise ValueError(f"matrix values exceed the {k}-bit pm1 range +-{limit}")
    bits = pm1_encode_array(m.astype(np.int64), k)  # (D, N, k) int8
    tiles = [(lo, min(lo + cfg.rows, d)) for lo in range(0, max(d, 1), cfg.rows)]
    tile_planes = [
        np.ascontiguousarray(
            bits[lo:hi].reshape(hi - lo, n * k).astype(np.float32)
        )
        for lo, hi in tiles
    ]
    return StoredMatrix(
        source=m.astype(np.int64), k=k, cfg=cfg, tiles=tiles, tile_planes=tile_planes
    )


@dataclass
class StoredOperand:
    """A matrix too wide for one pass, held as sequential column passes."""

    passes: list  # [StoredMatrix]

    @property
    def inner_dim(self) -> int:
        return self.passes[0].inner_dim

    @property
    def n_outputs(self) -> int:
        return sum(p.n_outputs for p in self.passes)

    @property
    def k(self) -> int:
        return self.passes[0].k


def load_operand(m: np.ndarray, k: int, cfg: CimaConfig) -> StoredOperand:
    """Split an arbitrarily wide matrix into legal column passes."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise DimensionError(f"expected 2-D matrix, got shape {m.shape}")
    per_pass = cfg.cols // k
    if per_pass < 1:
        raise CapacityError(f"{k} bit-planes exceed {cfg.cols} columns")
    passes = [
        load_matrix(m[:, lo : lo + per_pass], k, cfg)
        for lo in range(0, m.shape[1], per_pass)
    ]
    return StoredOperand(passes=passes)


def _as_passes(stored) -> list:
    if isinstance(stored, StoredMatrix):
        return [stored]
    if isinstance(stored, StoredOperand):
        return stored.passes
    raise TypeError(f"expected StoredMatrix or StoredOperand, got {type(stored)}")


@dataclass
class EnergyCounts:
    """Raw operation counts from one or more array executions."""

    macs: int = 0
    bitcell_ops: int = 0
    adc_samples: int = 0
    nmc_outputs: int = 0
    reshape_words: int = 0
    load_words: int = 0

    def __add__(self, other: "EnergyCounts") -> "EnergyCounts":
        return EnergyCounts(
            macs=self.macs + other.macs,
            bitcell_ops=self.bitcell_ops + other.bitcell_ops,
            adc_samples=self.adc_samples + other.adc_samples,
            nmc_outputs=self.nmc_outputs + other.nmc_outputs,
            reshape_words=self.reshape_words + other.reshape_words,
            load_words=self.load_words + other.load_words,
        )

    def __iadd__(self, other: "EnergyCounts") -> "EnergyCounts":
        return self + other


@dataclass
class MvmStats:
    """Execution statistics returned alongside every simulated MVM."""

    energy: EnergyCounts
    high_ref_vectors: int = 0
    low_ref_vectors: int = 0


def _words(bits: int) -> int:
    return -(-bits // _WORD_BITS)


def adc_convert_counts(counts, capacity, vn_counts=0.0, noise=None, max_code=255):
    """Behavioral ADC in count units: floor, then clip to the code range.

    capacity is the count equivalent of vref_p - vref_n; vn_counts of
    vref_n. Returns (codes, clipped) as int16/bool arrays.
    """
    c = np.asarray(counts, dtype=np.float32)
    if noise is not None:
        c = c + noise
    span = np.asarray(capacity, dtype=np.float32)
    rel = (c - vn_counts) * np.float32(max_code) / span
    codes = np.floor(rel + _FLOOR_TOL)
    clipped = (codes < 0) | (codes > max_code)
    codes = np.clip(codes, 0, max_code)
    return codes.astype(np.int16), clipped


def reconstruct_counts(codes, capacity, n_active, vn_counts=0.0, max_code=255):
    """Estimate counts from codes: midpoint of the integer count interval
    behind each code, clamped to the feasible [0, n_active] range.

    At capacity == max_code the step is one count per code and the
    estimate is exact (no offset, no rounding).
    """
    codes = np.asarray(codes, dtype=np.float32)
    span = np.asarray(capacity, dtype=np.float32)
    delta = span / np.float32(max_code)
    est = codes * delta + (delta - 1.0) * 0.5 + vn_counts
    est = np.floor(est + 0.5)  # ties away not needed: est >= -0.5 always
    return np.clip(est, 0.0, np.asarray(n_active, dtype=np.float32))


def column_cycle(
    sm: StoredMatrix,
    plane: InputPlane,
    vref: tuple,
    cfg: CimaConfig,
    tile: int = 0,
    rng: np.random.Generator | None = None,
) -> list:
    """Run one serial input plane against one tile; one AdcReading per
    used column.

    The plane may cover exactly the tile's data rows or the full array
    height (extra rows must be masked, they are padding).
    """
    vp, vn = vref
    if vp <= vn:
        raise ValueError(f"degenerate ADC reference range: vp={vp} vn={vn}")
    rows_t = sm.tile_rows(tile)
    signs = np.asarray(plane.signs)
    active = np.asarray(plane.active, dtype=bool)
    if signs.shape[0] == cfg.rows and rows_t < cfg.rows:
        if active[rows_t:].any():
            raise ValueError("rows beyond the tile's data are padding and must be masked")
        signs, active = signs[:rows_t], active[:rows_t]
    if signs.shape[0] != rows_t:
        raise DimensionError(
            f"plane has {signs.shape[0]} rows, tile has {rows_t} (array {cfg.rows})"
        )
    drive = (signs * active).astype(np.float32)
    s = drive @ sm.tile_planes[tile]                 # signed sums per column
    n_act = int(np.count_nonzero(active))
    counts = (n_act + s) / 2.0
    noise = None
    if cfg.adc_noise_sigma > 0 and rng is not None:
        noise = rng.normal(0.0, cfg.adc_noise_sigma * cfg.rows / cfg.v_dd, counts.shape)
        noise = noise.astype(np.float32)
    capacity = (vp - vn) * cfg.rows / cfg.v_dd
    vn_counts = vn * cfg.rows / cfg.v_dd
    codes, clipped = adc_convert_counts(
        counts, capacity, vn_counts, noise, cfg.max_code
    )
    return [
        AdcReading(code=int(c), vref_p=vp, vref_n=vn, clipped=bool(fl))
        for c, fl in zip(codes, clipped)
    ]


def reconstruct_signed(reading: AdcReading, n_active: int, cfg: CimaConfig) -> int:
    """Signed +-1 row sum recovered from one ADC reading and the digital
    active-row offset."""
    if n_active == 0:
        return 0
    capacity = (reading.vref_p - reading.vref_n) * cfg.rows / cfg.v_dd
    vn_counts = reading.vref_n * cfg.rows / cfg.v_dd
    est = reconstruct_counts(
        np.float32(reading.code), capacity, n_active, vn_counts, cfg.max_code
    )
    return int(2 * int(est) - n_active)


def exact_mvm(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Exact integer matrix-vector (or matrix-matrix) product; the test
    oracle for every simulated path."""
    a = np.asarray(a)
    m = np.asarray(m)
    if a.shape[-1] != m.shape[0]:
        raise DimensionError(f"inner dims disagree: {a.shape} x {m.shape}")
    a64 = a.astype(np.int64)
    m64 = m.astype(np.int64)
    bound = (
        max(1, int(np.max(np.abs(a64))) if a64.size else 0)
        * max(1, int(np.max(np.abs(m64))) if m64.size else 0)
        * max(1, m.shape[0])
    )
    if bound >= 2 ** 62:
        raise OverflowError("operands too large for int64-exact accumulation")
    return a64 @ m64


def _radix4_grad_arrays(grads):
    """Normalize gradient input to (signs int8 (V,D), exps int8 (V,D))."""
    if isinstance(grads, tuple):
        signs, exps = grads
        signs = np.asarray(signs, dtype=np.int8)
        exps = np.asarray(exps, dtype=np.int8)
    else:
        codes = list(grads)
        signs = np.array([c.sign for c in codes], dtype=np.int8)
        exps = np.array([c.exponent_index for c in codes], dtype=np.int8)
    squeeze = signs.ndim == 1
    if squeeze:
        signs = signs[None, :]
        exps = exps[None, :]
    return signs, exps, squeeze


def _plane_noise(seed, tile, pass_idx, n_planes, shape, cfg):
    """Deterministic per-(tile, pass, plane) count-noise substreams, one
    draw per conversion; None when the noise hook is off."""
    if cfg.adc_noise_sigma <= 0:
        return None
    sigma_counts = cfg.adc_noise_sigma * cfg.rows / cfg.v_dd
    out = np.empty((n_planes,) + shape, dtype=np.float32)
    for p in range(n_planes):
        ss = np.random.SeedSequence(entropy=0 if seed is None else seed,
                                    spawn_key=(tile, pass_idx, p))
        out[p] = np.random.default_rng(ss).normal(0.0, sigma_counts, shape)
    return out


def _run_planes(
    plane_signs: np.ndarray,    # (P, V, D) float32, zeros on masked rows
    in_weights: np.ndarray,     # (P,) float64
    passes: list,
    policy: VrefPolicy,
    cfg: CimaConfig,
    seed,
    stream_bits_per_row: int,
):
    """Shared MVM executor: serial planes x stored passes x row tiles.

    Returns (result (V, N_total) float64, MvmStats). Planes with no
    active rows in a tile are gated: they contribute zero and issue no
    conversions.
    """
    n_planes, n_vec, d = plane_signs.shape
    first = passes[0]
    if d != first.inner_dim:
        raise DimensionError(
            f"input dim {d} does not match stored inner dim {first.inner_dim}"
        )
    n_total = sum(p.n_outputs for p in passes)
    result = np.zeros((n_vec, n_total), dtype=np.float64)
    counts_acc = EnergyCounts()
    # One reference selection per (vector, plane, tile); a vector is a
    # "high" user if any of its selections exceeded the one-count-per-code
    # capacity.
    vec_high = np.zeros(n_vec, dtype=bool)
    vec_any = np.zeros(n_vec, dtype=bool)

    for tile_idx, (lo, hi) in enumerate(first.tiles):
        tile_signs = plane_signs[:, :, lo:hi]
        n_act = np.count_nonzero(tile_signs, axis=2).astype(np.int64)  # (P, V)
        capacity = select_capacity(policy, n_act, cfg)                  # (P, V)
        live = n_act > 0
        vec_any |= live.any(axis=0)
        vec_high |= (live & (capacity > cfg.max_code)).any(axis=0)

        flat = np.ascontiguousarray(
            tile_signs.reshape(n_planes * n_vec, hi - lo)
        )
        col_lo = 0
        for pass_idx, sm in enumerate(passes):
            cols = sm.columns_used
            s = flat @ sm.tile_planes[tile_idx]
            s = s.reshape(n_planes, n_vec, cols)
            c = (n_act[:, :, None] + s) / 2.0
            noise = _plane_noise(
                seed, tile_idx, pass_idx, n_planes, (n_vec, cols), cfg
            )
            if noise is not None:
                c = c + np.where(live[:, :, None], noise, 0.0)
            codes, _ = adc_convert_counts(
                c, capacity[:, :, None], 0.0, None, cfg.max_code
            )
            est = reconstruct_counts(
                codes, capacity[:, :, None], n_act[:, :, None], 0.0, cfg.max_code
            )
            s_hat = 2.0 * est - n_act[:, :, None]
            s_hat = np.where(live[:, :, None], s_hat, 0.0)
            # Weight by stored bit-plane, then by the serial input plane.
            per_out = s_hat.reshape(n_planes, n_vec, sm.n_outputs, sm.k)
            w_stored = sm.plane_weights()
            partial = np.tensordot(per_out.astype(np.float64), w_stored, axes=([3], [0]))
            result[:, col_lo : col_lo + sm.n_outputs] += np.tensordot(
                in_weights, partial, axes=([0], [0])
            )
            col_lo += sm.n_outputs
            live_cycles = int(np.count_nonzero(live))
            counts_acc.adc_samples += live_cycles * cols
            counts_acc.nmc_outputs += live_cycles * cols
            counts_acc.bitcell_ops += int(n_act.sum()) * cols
            counts_acc.reshape_words += n_vec * _words((hi - lo) * stream_bits_per_row)
            counts_acc.load_words += _words((hi - lo) * cols)

    stats = MvmStats(
        energy=counts_acc,
        high_ref_vectors=int(np.count_nonzero(vec_any & vec_high)),
        low_ref_vectors=int(np.count_nonzero(vec_any & ~vec_high)),
    )
    return result, stats


def mvm_forward(
    act,
    stored,
    policy: VrefPolicy,
    cfg: CimaConfig,
    seed=None,
):
    """Bit-parallel/bit-serial MVM of pm1-encoded activations against a
    stored matrix. Accepts a QuantizedTensor or a raw integer array; a
    single vector or a (vectors, D) batch.

    Rows with activation exactly 0 are masked on every serial plane and
    folded into the digital offset, so the input's sparsity sets the
    reference-voltage requirement. Returns (integer results, MvmStats).
    """
    if isinstance(act, QuantizedTensor):
        values = act.values
    else:
        values = np.asarray(act)
    values = values.astype(np.int64)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[None, :]
    passes = _as_passes(stored)
    k_in = _act_bits_for(values)
    bits = pm1_encode_array(values, k_in)           # (V, D, k_in)
    active = (values != 0)[:, :, None]
    planes = np.where(active, bits, 0).astype(np.float32)
    planes = np.moveaxis(planes, 2, 0)              # (P, V, D)
    in_weights = pm1_plane_weights(k_in)
    result, stats = _run_planes(
        planes, in_weights, passes, policy, cfg, seed, k_in
    )
    stats.energy.macs += values.shape[0] * values.shape[1] * sum(
        p.n_outputs for p in passes
    )
    out = round_half_away(result).astype(np.int64)
    return (out[0], stats) if squeeze else (out, stats)


def _act_bits_for(values: np.ndarray) -> int:
    """Smallest supported pm1 width covering the integer inputs (6 for
    the [0,16] activation range, wider only if the caller exceeds it)."""
    peak = int(np.max(np.abs(values))) if values.size else 0
    k = 6
    while pm1_range(k) < peak:
        k += 1
    return k


def mvm_radix4(
    grads,
    stored,
    policy: VrefPolicy,
    cfg: CimaConfig,
    grad_scale: float = 1.0,
    seed=None,
):
    """Radix-4 gradient MVM: exponent mask bits gate rows, the sign bit
    drives the XNOR, and each serial plane carries weight 4^(e-3).

    grads is a sequence of Radix4Code, or a (signs, exponent_indices)
    tuple of arrays (vector or batch). Results are real-valued, already
    divided by grad_scale. Returns (results, MvmStats).
    """
    signs, exps, squeeze = _radix4_grad_arrays(grads)
    passes = _as_passes(stored)
    n_vec, d = signs.shape
    planes = np.empty((RADIX4_EXPONENTS, n_vec, d), dtype=np.float32)
    for e in range(RADIX4_EXPONENTS):
        planes[e] = np.where(exps == e, signs, 0).astype(np.float32)
    in_weights = 4.0 ** (np.arange(RADIX4_EXPONENTS, dtype=np.float64) - RADIX4_BIAS)
    result, stats = _run_planes(
        planes,
        in_weights,
        passes,
        policy,
        cfg,
        seed,
        _INPUT_STREAM_BITS_RADIX4,
    )
    stats.energy.macs += n_vec * d * sum(p.n_outputs for p in passes)
    result = result / grad_scale
    return (result[0], stats) if squeeze else (result, stats)
