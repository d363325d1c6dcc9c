"""Model specifications and the shape walk behind MAC/energy accounting.

Layer kinds: conv3x3 (stride 1, same padding), dense, batchnorm, relu,
maxpool2x2. Two presets ship: the 9-layer VGG-lite used for the published
energy analysis, and a reduced desk-scale model (3 convs + dense + 10-way
classifier) small enough to train in minutes.
"""

from __future__ import annotations

from dataclasses import dataclass

LAYER_KINDS = ("conv3x3", "dense", "batchnorm", "relu", "maxpool2x2")

# Long-form aliases accepted in configs.
KIND_ALIASES = {
    "conv3x3-same-stride1": "conv3x3",
    "conv": "conv3x3",
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int | None = None  # conv3x3
    units: int | None = None    # dense

    def __post_init__(self):
        kind = KIND_ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if kind == "conv3x3" and not (self.filters and self.filters > 0):
            raise ValueError("conv3x3 needs a positive filter count")
        if kind == "dense" and not (self.units and self.units > 0):
            raise ValueError("dense needs a positive unit count")


def conv(filters: int) -> LayerSpec:
    return LayerSpec(kind="conv3x3", filters=filters)


def dense(units: int) -> LayerSpec:
    return LayerSpec(kind="dense", units=units)


def bn() -> LayerSpec:
    return LayerSpec(kind="batchnorm")


def relu() -> LayerSpec:
    return LayerSpec(kind="relu")


def maxpool() -> LayerSpec:
    return LayerSpec(kind="maxpool2x2")


def vgg_lite() -> list:
    """The 9-layer CIFAR-10 model of the published energy analysis."""
    return [
        conv(128), bn(), relu(),
        conv(128), maxpool(), bn(), relu(),
        conv(256), bn(), relu(),
        conv(256), maxpool(), bn(), relu(),
        conv(256), bn(), relu(),
        conv(256), maxpool(), bn(), relu(),
        dense(1024), bn(), relu(),
        dense(1024), bn(), relu(),
        dense(10), bn(),
    ]


def desk_model() -> list:
    """Reduced model for desk-scale training runs."""
    return [
        conv(16), bn(), relu(), maxpool(),
        conv(32), bn(), relu(), maxpool(),
        conv(32), bn(), relu(), maxpool(),
        dense(64), bn(), relu(),
        dense(10),
    ]


MODEL_PRESETS = {
    "vgg-lite": vgg_lite,
    "desk": desk_model,
}


@dataclass(frozen=True)
class TrainableDims:
    """MVM dimensions of one trainable layer at a given batch size.

    Forward streams B*P activation vectors of length M against an (M, N)
    stored matrix; backward streams B*P gradient vectors against the
    rearranged (9N-or-N, M') weights; weight-update stores the B*P-deep
    activation matrix and streams the N gradient columns. All three share
    the MAC product B*P*M*N.
    """

    name: str
    kind: str
    fwd_vectors: int
    fwd_inner: int
    fwd_outputs: int
    bwd_vectors: int
    bwd_inner: int
    bwd_outputs: int
    wu_vectors: int
    wu_inner: int
    wu_outputs: int


def trainable_mvm_dims(
    model: list, batch_size: int, image_shape: tuple = (32, 32, 3)
) -> list:
    """Walk the model, tracking tensor shapes, and emit per-trainable-layer
    MVM dimensions."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    h, w, c = image_shape
    flat = None  # dense-domain feature count once the spatial map collapses
    out = []
    index = 0
    for spec in model:
        if spec.kind == "conv3x3":
            if flat is not None:
                raise ValueError("conv3x3 after dense is unsupported")
            index += 1
            p = h * w
            dims = TrainableDims(
                name=f"L{index}-conv{spec.filters}",
                kind="conv3x3",
                fwd_vectors=batch_size * p,
                fwd_inner=9 * c,
                fwd_outputs=spec.filters,
                bwd_vectors=batch_size * p,
                bwd_inner=9 * spec.filters,
                bwd_outputs=c,
                wu_vectors=spec.filters,
                wu_inner=batch_size * p,
                wu_outputs=9 * c,
            )
            out.append(dims)
            c = spec.filters
        elif spec.kind == "dense":
            if flat is None:
                flat = h * w * c
            index += 1
            dims = TrainableDims(
                name=f"L{index}-dense{spec.units}",
                kind="dense",
                fwd_vectors=batch_size,
                fwd_inner=flat,
                fwd_outputs=spec.units,
                bwd_vectors=batch_size,
                bwd_inner=spec.units,
                bwd_outputs=flat,
                wu_vectors=spec.units,
                wu_inner=batch_size,
                wu_outputs=flat,
            )
            out.append(dims)
            flat = spec.units
        elif spec.kind == "maxpool2x2":
            if flat is not None:
                raise ValueError("maxpool after dense is unsupported")
            if h % 2 or w % 2:
                raise ValueError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
            h //= 2
            w //= 2
        elif spec.kind in ("batchnorm", "relu"):
            pass
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
    if not out:
        raise ValueError("model has no trainable layers")
    return out
