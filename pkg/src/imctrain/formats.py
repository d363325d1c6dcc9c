"""Number formats and input quantizers for the in-memory-computing datapath.

Three formats feed the bit-serial array:

* plus/minus-1 binary ("pm1"): a K-bit encoding where every bit is +1 or -1
  so a bit-cell multiply reduces to XNOR. Two half-weight bits plus K-2
  binary-weighted bits cover the symmetric integer range [-2^(K-2), 2^(K-2)].
* radix-4 one-hot: a sign bit plus at most one set bit in a 7-wide exponent
  mask, covering magnitudes 4^-3 .. 4^3 (and exact zero as the empty mask).
  Used for gradients; the mask bits drive row masking in the array.
* integer tensors with a real scale, produced by the PACT activation clip
  ([0,16]) and SAWB weight clip ([-8,8]) quantizers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Radix-4 gradient format: 1 sign bit + (RADIX4_BITS-1) one-hot exponent bits.
RADIX4_BITS = 8
RADIX4_EXPONENTS = RADIX4_BITS - 1
RADIX4_BIAS = (RADIX4_BITS - 2) // 2          # mask bit i encodes 4**(i - bias)
RADIX4_MAX = 4.0 ** RADIX4_BIAS               # 64
RADIX4_MIN = 4.0 ** (-RADIX4_BIAS)            # 1/64
RADIX4_UNDERFLOW = 4.0 ** (-RADIX4_BIAS - 0.5)

# Integer ranges after input quantization, and the pm1 widths that hold them.
ACT_MAX = 16
WEIGHT_MAX = 8
ACT_PM1_BITS = 6
WEIGHT_PM1_BITS = 5

# SAWB clip for the 4-bit symmetric range: clip = C1*sqrt(E[w^2]) - C2*E[|w|].
SAWB_C1 = 12.68
SAWB_C2 = 12.80

GRADSCALE_DECAY = 0.9


def round_half_away(x):
    """Round to nearest integer, ties away from zero (the default everywhere
    except the ADC's floor)."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def pm1_range(k: int) -> int:
    """Largest magnitude representable by a k-bit pm1 code."""
    return 2 ** (k - 2)


def pm1_plane_weights(k: int) -> np.ndarray:
    """Binary weights of the k serial bit positions, in storage order
    (half-weight pair first, then ascending powers of two)."""
    return np.array([0.5, 0.5] + [2.0 ** (i - 1) for i in range(1, k - 1)])


@dataclass(frozen=True)
class PM1Code:
    """A k-bit pm1 codeword: bits[0:2] are the half-weight pair, bits[2:]
    the binary-weighted positions, each element +1 or -1."""

    k: int
    bits: tuple

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"pm1 width must be >= 2, got {self.k}")
        if len(self.bits) != self.k:
            raise ValueError(f"expected {self.k} bits, got {len(self.bits)}")
        if any(b not in (-1, 1) for b in self.bits):
            raise ValueError(f"pm1 bits must be +1/-1, got {self.bits}")


def decode_pm1(code: PM1Code) -> int:
    """Integer value of a pm1 codeword."""
    half = (code.bits[0] + code.bits[1]) // 2
    value = half
    for i in range(1, code.k - 1):
        value += code.bits[i + 1] * 2 ** (i - 1)
    return value


def _pm1_tables(k: int):
    """(encode LUT, decode helper) for width k.

    Encode is value -> bit row, choosing the lexicographically smallest
    pattern (-1 before +1, storage order) among the non-unique encodings.
    Enumerating patterns in natural binary order visits them in exactly
    that lexicographic order, so first-seen wins.
    """
    n = pm1_range(k)
    lut = np.zeros((2 * n + 1, k), dtype=np.int8)
    seen = np.zeros(2 * n + 1, dtype=bool)
    weights = pm1_plane_weights(k)
    for pattern in range(2 ** k):
        bits = np.array(
            [1 if (pattern >> (k - 1 - p)) & 1 else -1 for p in range(k)],
            dtype=np.int8,
        )
        value = int(round(float(np.dot(bits, weights))))
        idx = value + n
        if not seen[idx]:
            seen[idx] = True
            lut[idx] = bits
    assert seen.all(), f"pm1 width {k} did not cover its range"
    return lut


_PM1_LUTS: dict = {}


def _pm1_lut(k: int) -> np.ndarray:
    if k not in _PM1_LUTS:
        _PM1_LUTS[k] = _pm1_tables(k)
    return _PM1_LUTS[k]


def encode_pm1(x: int, k: int) -> PM1Code:
    """Encode integer x into the k-bit pm1 format.

    Raises ValueError if |x| exceeds the representable range 2^(k-2).
    """
    if k < 2:
        raise ValueError(f"pm1 width must be >= 2, got {k}")
    n = pm1_range(k)
    if abs(x) > n:
        raise ValueError(f"value {x} out of range [-{n}, {n}] for {k}-bit pm1")
    bits = _pm1_lut(k)[int(x) + n]
    return PM1Code(k=k, bits=tuple(int(b) for b in bits))


def pm1_encode_array(values: np.ndarray, k: int) -> np.ndarray:
    """Vectorized encode: integer array (...,) -> int8 bit array (..., k)."""
    values = np.asarray(values)
    n = pm1_range(k)
    if values.size and (np.abs(values) > n).any():
        bad = values.flat[int(np.argmax(np.abs(values) > n))]
        raise ValueError(f"value {bad} out of range [-{n}, {n}] for {k}-bit pm1")
    return _pm1_lut(k)[values.astype(np.int64) + n]


@dataclass(frozen=True)
class Radix4Code:
    """Sign plus one-hot base-4 exponent mask; the all-zero mask encodes 0."""

    sign: int
    mask: tuple

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be +1/-1, got {self.sign}")
        if len(self.mask) != RADIX4_EXPONENTS:
            raise ValueError(f"mask must have {RADIX4_EXPONENTS} bits")
        if any(m not in (0, 1) for m in self.mask):
            raise ValueError("mask bits must be 0/1")
        if sum(self.mask) > 1:
            raise ValueError("exponent mask must be one-hot or empty")

    @property
    def exponent_index(self) -> int:
        """Set mask position, or -1 for the zero code."""
        for i, m in enumerate(self.mask):
            if m:
                return i
        return -1


def radix4_code_from_exponent(sign: int, exp_index: int) -> Radix4Code:
    """Build a code from a mask position (-1 for zero)."""
    mask = [0] * RADIX4_EXPONENTS
    if exp_index >= 0:
        mask[exp_index] = 1
    return Radix4Code(sign=sign, mask=tuple(mask))


@dataclass(frozen=True)
class GradScaleState:
    """Per-layer learned gradient scaling keeping g*scale inside [1/64, 64].

    Tracks an exponential moving average of the per-batch max |g| and sets
    scale so the tracked max lands on the top representable magnitude.
    """

    scale: float = 1.0
    ema_max: float | None = None
    decay: float = GRADSCALE_DECAY
    target: float = RADIX4_MAX

    def __post_init__(self):
        if not (self.scale > 0):
            raise ValueError(f"gradscale must be positive, got {self.scale}")


def gradscale_update(state: GradScaleState, g: np.ndarray) -> GradScaleState:
    """Fold a gradient batch into the running max and refresh the scale.

    All-zero (or empty) batches leave the state unchanged.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.size == 0:
        return state
    if not np.isfinite(g).all():
        raise ValueError("gradient tensor contains non-finite values")
    batch_max = float(np.max(np.abs(g)))
    if batch_max == 0.0:
        return state
    if state.ema_max is None:
        ema = batch_max
    else:
        ema = state.decay * state.ema_max + (1.0 - state.decay) * batch_max
    return GradScaleState(
        scale=state.target / ema, ema_max=ema, decay=state.decay, target=state.target
    )


def quantize_radix4(g: float, state: GradScaleState) -> Radix4Code:
    """Quantize one real gradient to the radix-4 one-hot format.

    Nearest-power rounding happens in the log4 domain; magnitudes below
    4^-3.5 (the geometric midpoint under the smallest code) flush to the
    zero code, magnitudes above 4^3 clip to the top code.
    """
    if not math.isfinite(g):
        raise ValueError(f"gradient must be finite, got {g}")
    scaled = g * state.scale
    sign = -1 if scaled < 0 else 1
    mag = abs(scaled)
    if mag < RADIX4_UNDERFLOW:
        return radix4_code_from_exponent(sign, -1)
    e = float(round_half_away(math.log2(mag) / 2.0))
    e = min(max(e, -RADIX4_BIAS), RADIX4_BIAS)
    return radix4_code_from_exponent(sign, int(e) + RADIX4_BIAS)


def dequantize_radix4(code: Radix4Code, state: GradScaleState) -> float:
    """Real value of a radix-4 code under the given gradient scale."""
    i = code.exponent_index
    if i < 0:
        return 0.0
    return code.sign * 4.0 ** (i - RADIX4_BIAS) / state.scale


def quantize_radix4_array(g: np.ndarray, state: GradScaleState):
    """Vectorized quantize: returns (signs int8, exponent indices int8).

    Exponent index is the mask position in [0, 6], or -1 for the zero code.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.size and not np.isfinite(g).all():
        raise ValueError("gradient tensor contains non-finite values")
    scaled = g * state.scale
    signs = np.where(scaled < 0, -1, 1).astype(np.int8)
    mag = np.abs(scaled)
    exps = np.full(g.shape, -1, dtype=np.int8)
    nz = mag >= RADIX4_UNDERFLOW
    if nz.any():
        e = round_half_away(np.log2(mag[nz]) / 2.0)
        e = np.clip(e, -RADIX4_BIAS, RADIX4_BIAS)
        exps[nz] = (e + RADIX4_BIAS).astype(np.int8)
    return signs, exps


def dequantize_radix4_array(signs, exps, state: GradScaleState) -> np.ndarray:
    """Inverse of quantize_radix4_array (zero codes decode to 0.0)."""
    signs = np.asarray(signs, dtype=np.float64)
    exps = np.asarray(exps, dtype=np.int64)
    vals = np.where(exps >= 0, 4.0 ** (exps - RADIX4_BIAS), 0.0)
    return signs * vals / state.scale


@dataclass
class QuantizedTensor:
    """Integer tensor plus the real scale mapping it back to model units."""

    values: np.ndarray
    scale: float
    kind: str  # "activation", "weight", or "radix4"

    def dequantize(self) -> np.ndarray:
        return self.values * self.scale


def pact_quantize(a: np.ndarray, alpha: float) -> QuantizedTensor:
    """Clip activations to [0, alpha] and quantize to integers in [0, 16].

    scale = alpha/16, so dequantized values tile [0, alpha] uniformly.
    """
    if not (alpha > 0):
        raise ValueError(f"PACT alpha must be positive, got {alpha}")
    a = np.asarray(a, dtype=np.float64)
    clipped = np.clip(a, 0.0, alpha)
    q = round_half_away(clipped / alpha * ACT_MAX).astype(np.int64)
    return QuantizedTensor(values=q, scale=alpha / ACT_MAX, kind="activation")


def sawb_clip(w: np.ndarray) -> float:
    """Statistics-aware clip level for symmetric weight quantization.

    Falls back to max|w| when the closed-form clip is non-positive (e.g.
    constant tensors), and to 1.0 for all-zero tensors.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("weight tensor is empty")
    mu = float(np.mean(np.abs(w)))
    if mu == 0.0:
        return 1.0
    rms = float(np.sqrt(np.mean(w * w)))
    clip = SAWB_C1 * rms - SAWB_C2 * mu
    if clip <= 0.0:
        clip = float(np.max(np.abs(w)))
    return clip


def sawb_quantize(w: np.ndarray) -> QuantizedTensor:
    """Quantize weights symmetrically to integers in [-8, 8] with the SAWB
    clip; scale = clip/8."""
    w = np.asarray(w, dtype=np.float64)
    clip = sawb_clip(w)
    q = round_half_away(np.clip(w, -clip, clip) / clip * WEIGHT_MAX)
    return QuantizedTensor(
        values=q.astype(np.int64), scale=clip / WEIGHT_MAX, kind="weight"
    )
