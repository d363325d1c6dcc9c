"""Analytical energy and op-count model for GPU-baseline and array execution.

The factors are the measured silicon numbers for the 16nm prototype (femto-
joules per primitive) plus the GPU baseline's TOPS/W. IMC energy follows the
counting rules used by the live simulator: bit-cell multiplies only on active
rows, one ADC sample per used column per live serial plane per row tile, NMC
work per conversion, input words re-streamed per column pass, and array loads
once per operand per batch. A static mirror of those rules lets whole-model
scenarios be costed without running anything, and is cross-checked against
live execution counts in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .cima import CimaConfig, EnergyCounts
from .formats import ACT_PM1_BITS, RADIX4_EXPONENTS, WEIGHT_PM1_BITS
from .models import trainable_mvm_dims

_WORD_BITS = 32

SCENARIOS = {
    "gpu-all": (),
    "imc-forward-only": ("forward",),
    "imc-fwd+bwd-dual": ("forward", "backward"),
    "imc-all-variable": ("forward", "backward", "weight_update"),
}

MVM_KINDS = ("forward", "backward", "weight_update")


@dataclass(frozen=True)
class EnergyFactors:
    """Joules per primitive (Table values are quoted in fJ)."""

    bitcell_mult: float = 0.734e-15
    adc_sample: float = 346e-15
    nmc_per_output: float = 243e-15
    reshape_per_word32: float = 14.9e-15
    cima_load_per_word32: float = 7360e-15
    gpu_tops_per_w: float = 0.116

    def __post_init__(self):
        for name in (
            "bitcell_mult",
            "adc_sample",
            "nmc_per_output",
            "reshape_per_word32",
            "cima_load_per_word32",
            "gpu_tops_per_w",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"energy factor {name} must be positive")

    def with_overrides(self, overrides: dict) -> "EnergyFactors":
        return replace(self, **overrides)


def gpu_energy(macs: float, factors: EnergyFactors) -> float:
    """GPU joules for a MAC count: two ops per MAC over the rated Ops/W."""
    if macs < 0:
        raise ValueError("MAC count must be non-negative")
    return 2.0 * macs / (factors.gpu_tops_per_w * 1e12)


def imc_energy(counts: EnergyCounts, factors: EnergyFactors) -> dict:
    """Joules breakdown for simulated-execution counts."""
    parts = {
        "bitcell": counts.bitcell_ops * factors.bitcell_mult,
        "adc": counts.adc_samples * factors.adc_sample,
        "nmc": counts.nmc_outputs * factors.nmc_per_output,
        "reshape": counts.reshape_words * factors.reshape_per_word32,
        "cima_load": counts.load_words * factors.cima_load_per_word32,
    }
    parts["total"] = sum(parts.values())
    return parts


@dataclass
class LedgerEntry:
    layer: str
    mvm: str
    device: str  # "imc" | "gpu"
    counts: EnergyCounts = field(default_factory=EnergyCounts)

    def joules(self, factors: EnergyFactors) -> float:
        if self.device == "gpu":
            return gpu_energy(self.counts.macs, factors)
        return imc_energy(self.counts, factors)["total"]


class EnergyLedger:
    """Per-(layer, MVM-kind) accumulation of counts from a run."""

    def __init__(self):
        self.entries: dict = {}

    def _entry(self, layer: str, mvm: str, device: str) -> LedgerEntry:
        key = (layer, mvm)
        if key not in self.entries:
            self.entries[key] = LedgerEntry(layer=layer, mvm=mvm, device=device)
        entry = self.entries[key]
        if entry.device != device:
            raise ValueError(
                f"{layer}/{mvm} already logged on {entry.device}, got {device}"
            )
        return entry

    def add_imc(self, layer: str, mvm: str, counts: EnergyCounts):
        entry = self._entry(layer, mvm, "imc")
        entry.counts += counts

    def add_gpu(self, layer: str, mvm: str, macs: int):
        entry = self._entry(layer, mvm, "gpu")
        entry.counts += EnergyCounts(macs=macs)

    def total_joules(self, factors: EnergyFactors) -> float:
        return sum(e.joules(factors) for e in self.entries.values())

    def rows(self, factors: EnergyFactors) -> list:
        """CSV rows: layer,mvm,device,macs,bitcell_ops,adc_samples,
        nmc_outputs,reshape_words,load_words,joules."""
        out = []
        for (layer, mvm) in sorted(self.entries):
            e = self.entries[(layer, mvm)]
            c = e.counts
            out.append(
                (
                    layer,
                    mvm,
                    e.device,
                    c.macs,
                    c.bitcell_ops,
                    c.adc_samples,
                    c.nmc_outputs,
                    c.reshape_words,
                    c.load_words,
                    repr(e.joules(factors)),
                )
            )
        return out


def count_macs(dims) -> dict:
    """MACs per MVM kind for one trainable layer's dimensions; the three
    kinds are equal by construction (B*M*N with the conv patch count
    folded into the batch dimension)."""
    macs = dims.fwd_vectors * dims.fwd_inner * dims.fwd_outputs
    return {kind: macs for kind in MVM_KINDS}


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def static_mvm_counts(
    vectors: int,
    inner_dim: int,
    n_outputs: int,
    k_stored: int,
    cfg: CimaConfig,
    input_format: str = "pm1",
    k_input: int = ACT_PM1_BITS,
    live_plane_cycles: int | None = None,
    active_row_cycles: int | None = None,
    nmc_mode: str = "per_conversion",
) -> EnergyCounts:
    """Analytical counts for one MVM mapping, mirroring the simulator.

    live_plane_cycles: total (plane, vector, tile) triples that issued a
    conversion; defaults to every serial plane live (dense inputs).
    active_row_cycles: total active rows summed over those triples;
    defaults to fully dense (pm1: every row on every plane; radix-4:
    every gradient nonzero, so rows sum to the inner dim once).
    """
    if input_format == "pm1":
        n_planes = k_input
        stream_bits = k_input
        dense_rows = k_input * vectors * inner_dim
    elif input_format == "radix4":
        n_planes = RADIX4_EXPONENTS
        stream_bits = RADIX4_EXPONENTS + 1
        dense_rows = vectors * inner_dim  # one-hot: each element on one plane
    else:
        raise ValueError(f"unknown input format {input_format!r}")

    tiles = [(min(lo + cfg.rows, inner_dim) - lo) for lo in range(0, max(inner_dim, 1), cfg.rows)]
    per_pass = cfg.cols // k_stored
    pass_outputs = [
        min(per_pass, n_outputs - lo) for lo in range(0, n_outputs, per_pass)
    ]
    cols_total = n_outputs * k_stored

    if live_plane_cycles is None:
        live_plane_cycles = n_planes * vectors * len(tiles)
    if active_row_cycles is None:
        active_row_cycles = dense_rows

    counts = EnergyCounts()
    counts.macs = vectors * inner_dim * n_outputs
    counts.adc_samples = live_plane_cycles * cols_total
    counts.bitcell_ops = active_row_cycles * cols_total
    if nmc_mode == "per_conversion":
        counts.nmc_outputs = counts.adc_samples
    elif nmc_mode == "per_element":
        counts.nmc_outputs = vectors * n_outputs
    else:
        raise ValueError(f"unknown nmc mode {nmc_mode!r}")
    words_per_vector = sum(_ceil_div(rows * stream_bits, _WORD_BITS) for rows in tiles)
    counts.reshape_words = vectors * len(pass_outputs) * words_per_vector
    counts.load_words = sum(
        _ceil_div(rows * outs * k_stored, _WORD_BITS)
        for rows in tiles
        for outs in pass_outputs
    )
    return counts


def _layer_mvm_counts(dims, mvm: str, cfg: CimaConfig, nmc_mode: str) -> EnergyCounts:
    """Static counts for one (layer, MVM kind) under dense assumptions."""
    if mvm == "forward":
        return static_mvm_counts(
            dims.fwd_vectors, dims.fwd_inner, dims.fwd_outputs,
            WEIGHT_PM1_BITS, cfg, "pm1", ACT_PM1_BITS, nmc_mode=nmc_mode,
        )
    if mvm == "backward":
        return static_mvm_counts(
            dims.bwd_vectors, dims.bwd_inner, dims.bwd_outputs,
            WEIGHT_PM1_BITS, cfg, "radix4", nmc_mode=nmc_mode,
        )
    if mvm == "weight_update":
        return static_mvm_counts(
            dims.wu_vectors, dims.wu_inner, dims.wu_outputs,
            ACT_PM1_BITS, cfg, "radix4", nmc_mode=nmc_mode,
        )
    raise ValueError(f"unknown MVM kind {mvm!r}")


def parse_layer_filter(spec: str, n_trainable: int) -> list:
    """Layer filter: "all", or an inclusive 1-based range like "2-8"."""
    if spec == "all":
        return list(range(1, n_trainable + 1))
    try:
        lo, hi = (int(p) for p in spec.split("-"))
    except ValueError:
        raise ValueError(f"bad layer filter {spec!r}: use 'all' or 'lo-hi'") from None
    if not (1 <= lo <= hi <= n_trainable):
        raise ValueError(
            f"layer range {spec!r} outside 1..{n_trainable}"
        )
    return list(range(lo, hi + 1))


def scenario_report(
    model,
    batch_size: int,
    scenario: str,
    factors: EnergyFactors | None = None,
    cfg: CimaConfig | None = None,
    layers: str = "all",
    nmc_mode: str = "per_conversion",
) -> dict:
    """Per-layer, per-MVM joules for one deployment scenario, plus the
    energy ratio against the all-GPU baseline over the same layers.

    In every IMC scenario the first and last trainable layers stay on the
    GPU (their quantizers are out of reach), which is also what makes them
    the bottleneck the layer filter exposes.
    """
    if scenario not in SCENARIOS:
        raise ValueError(
            f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}"
        )
    factors = factors or EnergyFactors()
    cfg = cfg or CimaConfig()
    imc_kinds = SCENARIOS[scenario]
    all_dims = trainable_mvm_dims(model, batch_size)
    selected = set(parse_layer_filter(layers, len(all_dims)))

    rows = []
    total = 0.0
    gpu_total = 0.0
    for ordinal, dims in enumerate(all_dims, start=1):
        if ordinal not in selected:
            continue
        interior = 1 < ordinal < len(all_dims)
        for mvm in MVM_KINDS:
            macs = count_macs(dims)[mvm]
            gpu_total += gpu_energy(macs, factors)
            if mvm in imc_kinds and interior:
                counts = _layer_mvm_counts(dims, mvm, cfg, nmc_mode)
                joules = imc_energy(counts, factors)["total"]
                device = "imc"
            else:
                counts = EnergyCounts(macs=macs)
                joules = gpu_energy(macs, factors)
                device = "gpu"
            total += joules
            rows.append(
                (
                    dims.name,
                    mvm,
                    device,
                    counts.macs if device == "imc" else macs,
                    counts.bitcell_ops,
                    counts.adc_samples,
                    counts.nmc_outputs,
                    counts.reshape_words,
                    counts.load_words,
                    repr(joules),
                )
            )
    return {
        "rows": rows,
        "total_joules": total,
        "gpu_joules": gpu_total,
        "ratio_vs_gpu": gpu_total / total if total else float("inf"),
    }
