"""ADC reference-voltage selection policies and usage instrumentation.

Three modes bound the conversion range [vref_n, vref_p] (vref_n is always
0 V):

* fixed: one vref_p for everything, ignoring input sparsity.
* variable: per input vector (per exponent plane, per tile), vref_p tracks
  the active-row count, floored at the precision reference v_prec where one
  ADC code equals one row count (no quantization for <= 255 active rows).
* dual: the practical two-level scheme; v_prec when the plane fits 255
  active rows, a single high reference otherwise.

Internally selection happens in count units (capacity = vref_p * rows /
v_dd) so the one-count-per-code regime is exact; see select_capacity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .formats import RADIX4_EXPONENTS


@dataclass(frozen=True)
class VrefPolicy:
    mode: str                  # "fixed" | "variable" | "dual"
    vp: float | None = None    # fixed mode reference
    vp_max: float = 0.8        # full-range reference; defines v_prec
    vp_high: float | None = None  # dual mode high reference

    def __post_init__(self):
        if self.mode not in ("fixed", "variable", "dual"):
            raise ValueError(f"unknown vref mode {self.mode!r}")
        if self.mode == "fixed" and not (self.vp and self.vp > 0):
            raise ValueError("fixed mode needs a positive vp")
        if self.mode == "dual" and not (self.vp_high and self.vp_high > 0):
            raise ValueError("dual mode needs a positive vp_high")
        if self.vp_max <= 0:
            raise ValueError("vp_max must be positive")

    @staticmethod
    def fixed(vp: float) -> "VrefPolicy":
        return VrefPolicy(mode="fixed", vp=vp)

    @staticmethod
    def variable(vp_max: float = 0.8) -> "VrefPolicy":
        return VrefPolicy(mode="variable", vp_max=vp_max)

    @staticmethod
    def dual(vp_high: float = 0.8, vp_max: float = 0.8) -> "VrefPolicy":
        return VrefPolicy(mode="dual", vp_high=vp_high, vp_max=vp_max)

    def v_prec(self, cfg) -> float:
        """Reference at which one code spans exactly one row count."""
        return self.vp_max * cfg.max_code / cfg.rows


def _prec_capacity(policy: VrefPolicy, cfg) -> float:
    """v_prec in count units; exactly max_code when vp_max equals v_dd
    (the silicon operating point), avoiding a lossy volt round trip."""
    if abs(policy.vp_max - cfg.v_dd) < 1e-12:
        return float(cfg.max_code)
    return policy.vp_max * cfg.max_code / cfg.v_dd


def select_capacity(policy: VrefPolicy, n_active, cfg):
    """Conversion-range capacity in counts for each active-row count.

    Broadcasts over arrays of n_active. capacity == max_code means one
    code per count (the no-quantization regime).
    """
    n_active = np.asarray(n_active, dtype=np.float64)
    if policy.mode == "fixed":
        cap = policy.vp * cfg.rows / cfg.v_dd
        return np.full(n_active.shape, cap) if n_active.ndim else float(cap)
    prec = _prec_capacity(policy, cfg)
    if policy.mode == "variable":
        return np.maximum(n_active, prec)
    high = policy.vp_high * cfg.rows / cfg.v_dd
    return np.where(n_active <= cfg.max_code, prec, high)


def select_vref(policy: VrefPolicy, n_active: int, cfg) -> tuple:
    """(vref_p, vref_n) volts for one plane cycle with n_active rows."""
    if n_active < 0 or n_active > cfg.rows:
        raise ValueError(f"n_active {n_active} outside [0, {cfg.rows}]")
    cap = select_capacity(policy, int(n_active), cfg)
    return float(cap) * cfg.v_dd / cfg.rows, 0.0


@dataclass
class VrefUsageLog:
    """Per-epoch, per-MVM-kind tallies of high vs. low reference use.

    One event per input vector processed, so counts sum to the vector
    total; a vector is a high-reference user if any of its plane/tile
    selections exceeded the precision capacity.
    """

    counters: dict = field(default_factory=dict)

    def record(self, epoch: int, mvm: str, high: int, low: int):
        cell = self.counters.setdefault((epoch, mvm), [0, 0])
        cell[0] += high
        cell[1] += low

    def merge(self, other: "VrefUsageLog"):
        for (epoch, mvm), (high, low) in other.counters.items():
            self.record(epoch, mvm, high, low)

    def total_vectors(self) -> int:
        return sum(h + l for h, l in self.counters.values())


def usage_report(log: VrefUsageLog) -> list:
    """Rows (epoch, mvm, high_count, low_count, high_fraction), ordered
    by epoch then MVM kind. Empty log gives an empty report."""
    rows = []
    for (epoch, mvm) in sorted(log.counters):
        high, low = log.counters[(epoch, mvm)]
        total = high + low
        frac = high / total if total else 0.0
        rows.append((epoch, mvm, high, low, frac))
    return rows


def _exponent_indices(grads) -> np.ndarray:
    if isinstance(grads, tuple):
        exps = np.asarray(grads[1])
    elif isinstance(grads, np.ndarray):
        exps = grads
    else:
        exps = np.array([c.exponent_index for c in grads])
    if exps.ndim == 1:
        exps = exps[None, :]
    return exps


def sparsity_histogram(grads, layer_id=None) -> np.ndarray:
    """Mean active rows per exponent bit, averaged over input vectors.

    grads: (signs, exponent_indices) arrays, a bare exponent-index array
    (vectors x dim, -1 for zero codes), or a sequence of Radix4Code. The
    sign bit never masks, so only the 7 exponent bits are tallied.
    """
    exps = _exponent_indices(grads)
    if exps.size == 0:
        raise ValueError("gradient tensor is empty")
    hist = np.empty(RADIX4_EXPONENTS, dtype=np.float64)
    for e in range(RADIX4_EXPONENTS):
        hist[e] = np.count_nonzero(exps == e, axis=1).mean()
    return hist
