"""Small residual networks with stable per-kernel addressing.

A model is a stem convolution, a sequence of stages of residual units, and a
task head. Unit 0 of every stage past the first downsamples with stride 2 and
carries a 1x1 projection shortcut; all other units use identity shortcuts.
Each convolution kernel in the backbone has exactly one ``LayerAddress`` so
ablation sweeps, checkpoints and reports can name it unambiguously.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import BatchNormState, ConvKernel, Tensor

SLOTS = ("stem", "conv1", "conv2", "proj", "head")


@dataclass(frozen=True)
class ResNetConfig:
    """Architecture description; fully determines the network layout."""

    stage_widths: tuple[int, ...]
    units_per_stage: tuple[int, ...]
    input_channels: int = 3
    num_classes: int = 10
    task: str = "classify"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        object.__setattr__(self, "units_per_stage", tuple(int(u) for u in self.units_per_stage))
        if len(self.stage_widths) != len(self.units_per_stage):
            raise ConfigError("stage_widths and units_per_stage lengths differ")
        if len(self.stage_widths) < 2:
            raise ConfigError("need at least 2 stages")
        if any(w <= 0 for w in self.stage_widths) or any(u <= 0 for u in self.units_per_stage):
            raise ConfigError("stage widths and unit counts must be positive")
        if any(a >= b for a, b in zip(self.stage_widths, self.stage_widths[1:])):
            raise ConfigError("stage widths must strictly increase")
        if self.input_channels <= 0:
            raise ConfigError("input_channels must be positive")
        if self.input_channels == self.stage_widths[0]:
            raise ConfigError("input_channels must differ from the first stage width")
        if self.task not in ("classify", "segment"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task == "segment":
            if self.num_classes != 1:
                raise ConfigError("segment task is binary: num_classes must be 1")
        elif self.num_classes < 2:
            raise ConfigError("classify task needs at least 2 classes")

    @property
    def num_stages(self) -> int:
        return len(self.stage_widths)

    def to_dict(self) -> dict:
        return {
            "stage_widths": list(self.stage_widths),
            "units_per_stage": list(self.units_per_stage),
            "input_channels": self.input_channels,
            "num_classes": self.num_classes,
            "task": self.task,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResNetConfig":
        try:
            return cls(
                stage_widths=tuple(d["stage_widths"]),
                units_per_stage=tuple(d["units_per_stage"]),
                input_channels=int(d["input_channels"]),
                num_classes=int(d["num_classes"]),
                task=str(d["task"]),
                seed=int(d["seed"]),
            )
        except KeyError as e:
            raise ConfigError(f"config missing field {e.args[0]!r}") from None


@dataclass(frozen=True, order=True)
class LayerAddress:
    """Stable coordinate of one convolution kernel.

    stem and head carry no stage/unit; proj exists only at unit 0 of stages
    past the first.
    """

    stage: int = -1
    unit: int = -1
    slot: str = "stem"

    def __post_init__(self):
        if self.slot not in SLOTS:
            raise ConfigError(f"unknown slot {self.slot!r}")
        if self.slot in ("stem", "head"):
            if self.stage != -1 or self.unit != -1:
                raise ConfigError(f"{self.slot} address carries no stage/unit")
        else:
            if self.stage < 0 or self.unit < 0:
                raise ConfigError(f"{self.slot} address needs stage and unit")
            if self.slot == "proj" and not (self.unit == 0 and self.stage >= 1):
                raise ConfigError("proj exists only at unit 0 of stages >= 1")

    @classmethod
    def stem(cls) -> "LayerAddress":
        return cls(slot="stem")

    @classmethod
    def head(cls) -> "LayerAddress":
        return cls(slot="head")

    @classmethod
    def of(cls, stage: int, unit: int, slot: str) -> "LayerAddress":
        return cls(stage=stage, unit=unit, slot=slot)

    def __str__(self) -> str:
        if self.slot in ("stem", "head"):
            return self.slot
        return f"s{self.stage}u{self.unit}.{self.slot}"

    @classmethod
    def parse(cls, text: str) -> "LayerAddress":
        if text in ("stem", "head"):
            return cls(slot=text)
        try:
            pos, slot = text.split(".", 1)
            stage, unit = pos[1:].split("u", 1)
            if not pos.startswith("s"):
                raise ValueError
            return cls(stage=int(stage), unit=int(unit), slot=slot)
        except (ValueError, ConfigError):
            raise ConfigError(f"cannot parse layer address {text!r}") from None


@dataclass
class ConvBN:
    """A convolution kernel together with its batch-norm state."""

    kernel: ConvKernel
    bn: BatchNormState

    def copy(self) -> "ConvBN":
        return ConvBN(self.kernel.copy(), self.bn.copy())


@dataclass
class ClassifyHead:
    weight: np.ndarray  # (classes, channels)
    bias: np.ndarray  # (classes,)

    def copy(self) -> "ClassifyHead":
        return ClassifyHead(self.weight.copy(), self.bias.copy())


@dataclass
class SegmentHead:
    """Upsample chain restoring input resolution, then a 1x1 conv to logits."""

    blocks: list[ConvBN]
    final_kernel: ConvKernel
    final_bias: np.ndarray

    def copy(self) -> "SegmentHead":
        return SegmentHead(
            [b.copy() for b in self.blocks],
            self.final_kernel.copy(),
            self.final_bias.copy(),
        )


def residual_forward_identity(x: Tensor, conv1: ConvBN, conv2: ConvBN,
                              mode: str) -> Tensor:
    """sigma(x + BN(sigma(BN(x * w1)) * w2)) with an identity shortcut."""
    branch = ops.batchnorm(
        ops.conv2d(ops.relu(ops.batchnorm(ops.conv2d(x, conv1.kernel),
                                          conv1.bn, mode)),
                   conv2.kernel), conv2.bn, mode)
    if branch.shape != x.shape:
        raise ShapeError(
            f"identity unit: branch {branch.shape} != shortcut {x.shape}")
    return ops.relu(Tensor(x.data + branch.data))


def residual_forward_projection(x: Tensor, conv1: ConvBN, conv2: ConvBN,
                                proj: ConvBN, mode: str) -> Tensor:
    """sigma(BN(x * w_1x1) + BN(sigma(BN(x * w1)) * w2))."""
    shortcut = ops.batchnorm(ops.conv2d(x, proj.kernel), proj.bn, mode)
    branch = ops.batchnorm(
        ops.conv2d(ops.relu(ops.batchnorm(ops.conv2d(x, conv1.kernel),
                                          conv1.bn, mode)),
                   conv2.kernel), conv2.bn, mode)
    if branch.shape != shortcut.shape:
        raise ShapeError(
            f"projection unit: branch {branch.shape} != shortcut {shortcut.shape}")
    return ops.relu(Tensor(shortcut.data + branch.data))


@dataclass
class LayerInfo:
    address: LayerAddress
    is_feature_decomposition: bool
    channel_in: int
    channel_out: int


@dataclass
class LayerBlock:
    """All swept addresses of one stage (the layers sharing one channel width)."""

    stage: int
    addresses: list[LayerAddress]


class Model:
    """A built network: config, addressed kernel registry, head parameters.

    ``registry`` maps each backbone address to its ConvBN in forward order.
    ``folded`` holds per-channel constants for branches removed by
    fold-and-prune; a folded address is no longer in the registry.
    """

    def __init__(self, config: ResNetConfig, registry: dict, head,
                 folded: dict | None = None):
        self.config = config
        self.registry = registry
        self.head = head
        self.folded = dict(folded or {})

    # -- structure ---------------------------------------------------------

    def backbone_addresses(self) -> list[LayerAddress]:
        """Every backbone address in forward order, folded ones included."""
        out = [LayerAddress.stem()]
        for s, units in enumerate(self.config.units_per_stage):
            for u in range(units):
                out.append(LayerAddress.of(s, u, "conv1"))
                out.append(LayerAddress.of(s, u, "conv2"))
                if s >= 1 and u == 0:
                    out.append(LayerAddress.of(s, u, "proj"))
        return out

    def sweepable_addresses(self) -> list[LayerAddress]:
        """Addresses a zero-ablation sweep may target (head excluded)."""
        return [a for a in self.backbone_addresses() if a in self.registry]

    def is_feature_decomposition(self, addr: LayerAddress) -> bool:
        if addr.slot == "stem":
            return True
        if addr.slot == "proj":
            return True
        return addr.slot == "conv1" and addr.stage >= 1 and addr.unit == 0

    def _unit_geometry(self, stage: int, unit: int) -> tuple[int, int, int]:
        """(in_channels, out_channels, first-conv stride) of one unit."""
        widths = self.config.stage_widths
        out_w = widths[stage]
        if unit == 0 and stage >= 1:
            return widths[stage - 1], out_w, 2
        return out_w, out_w, 1

    # -- parameters ---------------------------------------------------------

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        """Learnable arrays in a fixed order: backbone, then head."""
        params: list[tuple[str, np.ndarray]] = []
        for addr in self.backbone_addresses():
            cb = self.registry.get(addr)
            if cb is None:
                continue
            key = str(addr)
            params.append((f"{key}/kernel", cb.kernel.weights))
            params.append((f"{key}/bn/gamma", cb.bn.gamma))
            params.append((f"{key}/bn/beta", cb.bn.beta))
        if isinstance(self.head, ClassifyHead):
            params.append(("head/fc/weight", self.head.weight))
            params.append(("head/fc/bias", self.head.bias))
        else:
            for i, blk in enumerate(self.head.blocks):
                params.append((f"head/up{i}/kernel", blk.kernel.weights))
                params.append((f"head/up{i}/bn/gamma", blk.bn.gamma))
                params.append((f"head/up{i}/bn/beta", blk.bn.beta))
            params.append(("head/final/kernel", self.head.final_kernel.weights))
            params.append(("head/final/bias", self.head.final_bias))
        return params

    def parameter_count(self) -> int:
        return sum(arr.size for _, arr in self.named_parameters())

    def copy(self) -> "Model":
        return Model(
            self.config,
            {a: cb.copy() for a, cb in self.registry.items()},
            self.head.copy(),
            {a: c.copy() for a, c in self.folded.items()},
        )

    # -- forward ------------------------------------------------------------

    def _conv_bn(self, addr: LayerAddress) -> ConvBN:
        cb = self.registry.get(addr)
        if cb is None:
            raise ConfigError(f"no kernel at address {addr}")
        return cb

    def _folded_branch(self, addr: LayerAddress, like: Tensor,
                       hw: tuple[int, int]) -> Tensor:
        const = self.folded[addr]
        shape = (like.shape[0], const.shape[0], hw[0], hw[1])
        data = np.broadcast_to(
            const.reshape(1, -1, 1, 1).astype(like.dtype, copy=False), shape
        )
        return Tensor(np.ascontiguousarray(data))

    def _stem_forward(self, x: Tensor, mode: str) -> Tensor:
        cb = self._conv_bn(LayerAddress.stem())
        return ops.relu(ops.batchnorm(ops.conv2d(x, cb.kernel), cb.bn, mode))

    def _unit_forward(self, stage: int, unit: int, x: Tensor, mode: str) -> Tensor:
        a1 = LayerAddress.of(stage, unit, "conv1")
        a2 = LayerAddress.of(stage, unit, "conv2")
        has_proj = stage >= 1 and unit == 0
        ap = LayerAddress.of(stage, unit, "proj") if has_proj else None
        touched = {a1, a2, ap} & set(self.folded)

        if not touched:
            if has_proj:
                return residual_forward_projection(
                    x, self._conv_bn(a1), self._conv_bn(a2), self._conv_bn(ap), mode)
            return residual_forward_identity(
                x, self._conv_bn(a1), self._conv_bn(a2), mode)

        # some branch was folded into its precomputed constant
        if has_proj:
            if ap in self.folded:
                hw = _proj_output_hw(x.shape[2], x.shape[3])
                shortcut = self._folded_branch(ap, x, hw)
            else:
                cbp = self._conv_bn(ap)
                shortcut = ops.batchnorm(ops.conv2d(x, cbp.kernel), cbp.bn, mode)
        else:
            shortcut = x

        if a2 in self.folded:
            branch = self._folded_branch(a2, x, (shortcut.shape[2], shortcut.shape[3]))
        else:
            if a1 in self.folded:
                hw = _proj_output_hw(x.shape[2], x.shape[3]) if has_proj else (
                    x.shape[2], x.shape[3])
                h = ops.relu(self._folded_branch(a1, x, hw))
            else:
                cb1 = self._conv_bn(a1)
                h = ops.relu(ops.batchnorm(ops.conv2d(x, cb1.kernel), cb1.bn, mode))
            cb2 = self._conv_bn(a2)
            branch = ops.batchnorm(ops.conv2d(h, cb2.kernel), cb2.bn, mode)

        if shortcut.shape != branch.shape:
            raise ShapeError(
                f"unit s{stage}u{unit}: shortcut {shortcut.shape} != branch {branch.shape}"
            )
        return ops.relu(Tensor(shortcut.data + branch.data))

    def _head_forward(self, t: Tensor, mode: str) -> np.ndarray:
        if isinstance(self.head, ClassifyHead):
            pooled = ops.global_avg_pool(t)
            flat = pooled.data.reshape(t.shape[0], t.shape[1])
            return ops.fully_connected(flat, self.head.weight, self.head.bias)
        for blk in self.head.blocks:
            t = ops.relu(ops.batchnorm(ops.conv2d(ops.upsample_nearest2x(t), blk.kernel), blk.bn, mode))
        logits = ops.conv2d(t, self.head.final_kernel)
        return logits.data + self.head.final_bias.reshape(1, -1, 1, 1)

    def _check_input(self, batch: Tensor) -> None:
        if batch.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"batch has {batch.shape[1]} channels, model expects "
                f"{self.config.input_channels}"
            )
        down = 2 ** (self.config.num_stages - 1)
        if batch.shape[2] % down or batch.shape[3] % down:
            raise ShapeError(
                f"input extents {batch.shape[2]}x{batch.shape[3]} must be "
                f"divisible by the downsampling factor {down}"
            )

    def forward(self, batch, mode: str = "eval") -> np.ndarray:
        """Run the network. Returns (b, classes) logits for classification or
        (b, classes, H, W) logits for segmentation.

        Eval mode is a pure function of weights and input. Train mode also
        updates BN running statistics in place.
        """
        if mode not in ("train", "eval"):
            raise ConfigError(f"unknown mode {mode!r}")
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        self._check_input(x)
        t = self._stem_forward(x, mode)
        for s, units in enumerate(self.config.units_per_stage):
            for u in range(units):
                t = self._unit_forward(s, u, t, mode)
        return self._head_forward(t, mode)

    # -- training forward/backward ------------------------------------------

    def forward_train(self, batch: Tensor) -> tuple[np.ndarray, dict]:
        """Train-mode forward keeping the intermediates backward() needs."""
        if self.folded:
            raise ConfigError("cannot train a pruned model")
        self._check_input(batch)
        cache: dict = {"input": batch, "units": []}

        cb = self._conv_bn(LayerAddress.stem())
        h1 = ops.conv2d(batch, cb.kernel)
        h2 = ops.batchnorm(h1, cb.bn, "train")
        t = ops.relu(h2)
        cache["stem"] = {"x": batch, "h1": h1, "h2": h2}

        for s, units in enumerate(self.config.units_per_stage):
            for u in range(units):
                uc: dict = {"stage": s, "unit": u, "x": t}
                cb1 = self._conv_bn(LayerAddress.of(s, u, "conv1"))
                cb2 = self._conv_bn(LayerAddress.of(s, u, "conv2"))
                uc["h1"] = ops.conv2d(t, cb1.kernel)
                uc["h2"] = ops.batchnorm(uc["h1"], cb1.bn, "train")
                uc["h3"] = ops.relu(uc["h2"])
                uc["h4"] = ops.conv2d(uc["h3"], cb2.kernel)
                branch = ops.batchnorm(uc["h4"], cb2.bn, "train")
                if s >= 1 and u == 0:
                    cbp = self._conv_bn(LayerAddress.of(s, u, "proj"))
                    uc["px"] = ops.conv2d(t, cbp.kernel)
                    shortcut = ops.batchnorm(uc["px"], cbp.bn, "train")
                else:
                    shortcut = t
                uc["s"] = Tensor(shortcut.data + branch.data)
                t = ops.relu(uc["s"])
                cache["units"].append(uc)

        if isinstance(self.head, ClassifyHead):
            pooled = ops.global_avg_pool(t)
            flat = pooled.data.reshape(t.shape[0], t.shape[1])
            logits = ops.fully_connected(flat, self.head.weight, self.head.bias)
            cache["head"] = {"t": t, "flat": flat}
        else:
            hc: dict = {"t": t, "blocks": []}
            for blk in self.head.blocks:
                bc = {"x": t}
                bc["up"] = ops.upsample_nearest2x(t)
                bc["h1"] = ops.conv2d(bc["up"], blk.kernel)
                bc["h2"] = ops.batchnorm(bc["h1"], blk.bn, "train")
                t = ops.relu(bc["h2"])
                hc["blocks"].append(bc)
            hc["final_in"] = t
            logits = ops.conv2d(t, self.head.final_kernel).data + \
                self.head.final_bias.reshape(1, -1, 1, 1)
            cache["head"] = hc
        return logits, cache

    def backward(self, cache: dict, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagate grad_logits through the cached forward pass.

        Returns a dict keyed like named_parameters(). Does not mutate weights.
        """
        grads: dict[str, np.ndarray] = {}

        if isinstance(self.head, ClassifyHead):
            hc = cache["head"]
            gx_flat, gw, gb = ops.fully_connected_grad(hc["flat"], self.head.weight, grad_logits)
            grads["head/fc/weight"] = gw
            grads["head/fc/bias"] = gb
            t = hc["t"]
            g = ops.global_avg_pool_grad(t, Tensor(gx_flat.reshape(t.shape[0], t.shape[1], 1, 1)))
        else:
            hc = cache["head"]
            g4 = Tensor(np.ascontiguousarray(grad_logits))
            grads["head/final/bias"] = grad_logits.sum(axis=(0, 2, 3))
            g, gwf = ops.conv2d_grad(hc["final_in"], self.head.final_kernel, g4)
            grads["head/final/kernel"] = gwf
            for i in range(len(self.head.blocks) - 1, -1, -1):
                blk = self.head.blocks[i]
                bc = hc["blocks"][i]
                g = ops.relu_grad(bc["h2"], g)
                g, gg, gbeta = ops.batchnorm_grad(bc["h1"], blk.bn, g)
                grads[f"head/up{i}/bn/gamma"] = gg
                grads[f"head/up{i}/bn/beta"] = gbeta
                g, gw = ops.conv2d_grad(bc["up"], blk.kernel, g)
                grads[f"head/up{i}/kernel"] = gw
                g = ops.upsample_nearest2x_grad(bc["x"], g)

        for uc in reversed(cache["units"]):
            s, u = uc["stage"], uc["unit"]
            key1 = f"s{s}u{u}.conv1"
            key2 = f"s{s}u{u}.conv2"
            cb1 = self._conv_bn(LayerAddress.of(s, u, "conv1"))
            cb2 = self._conv_bn(LayerAddress.of(s, u, "conv2"))
            gs = ops.relu_grad(uc["s"], g)
            gb, gg, gbeta = ops.batchnorm_grad(uc["h4"], cb2.bn, gs)
            grads[f"{key2}/bn/gamma"] = gg
            grads[f"{key2}/bn/beta"] = gbeta
            gb, gw2 = ops.conv2d_grad(uc["h3"], cb2.kernel, gb)
            grads[f"{key2}/kernel"] = gw2
            gb = ops.relu_grad(uc["h2"], gb)
            gb, gg, gbeta = ops.batchnorm_grad(uc["h1"], cb1.bn, gb)
            grads[f"{key1}/bn/gamma"] = gg
            grads[f"{key1}/bn/beta"] = gbeta
            gb, gw1 = ops.conv2d_grad(uc["x"], cb1.kernel, gb)
            grads[f"{key1}/kernel"] = gw1
            if s >= 1 and u == 0:
                keyp = f"s{s}u{u}.proj"
                cbp = self._conv_bn(LayerAddress.of(s, u, "proj"))
                gsc, gg, gbeta = ops.batchnorm_grad(uc["px"], cbp.bn, gs)
                grads[f"{keyp}/bn/gamma"] = gg
                grads[f"{keyp}/bn/beta"] = gbeta
                gsc, gwp = ops.conv2d_grad(uc["x"], cbp.kernel, gsc)
                grads[f"{keyp}/kernel"] = gwp
                g = Tensor(gb.data + gsc.data)
            else:
                g = Tensor(gb.data + gs.data)

        sc = cache["stem"]
        cb = self._conv_bn(LayerAddress.stem())
        g = ops.relu_grad(sc["h2"], g)
        g, gg, gbeta = ops.batchnorm_grad(sc["h1"], cb.bn, g)
        grads["stem/bn/gamma"] = gg
        grads["stem/bn/beta"] = gbeta
        _, gw = ops.conv2d_grad(sc["x"], cb.kernel, g)
        grads["stem/kernel"] = gw
        return grads


def _proj_output_hw(h: int, w: int) -> tuple[int, int]:
    # stride-2 output extents for both the 3x3 pad-1 and the 1x1 pad-0 convs
    return (h - 1) // 2 + 1, (w - 1) // 2 + 1


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def build_model(config: ResNetConfig, dtype=np.float32) -> Model:
    """Construct a network with seeded fan-in-scaled symmetric init.

    BN starts at gamma=1, beta=0, running stats (0, 1). The draw order is
    fixed (stem, stages in order, head) so a seed pins every weight.
    """
    rng = np.random.Generator(np.random.PCG64(config.seed))
    registry: dict[LayerAddress, ConvBN] = {}

    def make_conv(cin, cout, k, stride, padding):
        w = _he_uniform(rng, (cout, cin, k, k), cin * k * k, dtype)
        return ConvKernel(w, stride=stride, padding=padding)

    registry[LayerAddress.stem()] = ConvBN(
        make_conv(config.input_channels, config.stage_widths[0], 3, 1, 1),
        BatchNormState.create(config.stage_widths[0], dtype),
    )
    for s, units in enumerate(config.units_per_stage):
        width = config.stage_widths[s]
        for u in range(units):
            cin = config.stage_widths[s - 1] if (u == 0 and s >= 1) else width
            stride = 2 if (u == 0 and s >= 1) else 1
            registry[LayerAddress.of(s, u, "conv1")] = ConvBN(
                make_conv(cin, width, 3, stride, 1), BatchNormState.create(width, dtype)
            )
            registry[LayerAddress.of(s, u, "conv2")] = ConvBN(
                make_conv(width, width, 3, 1, 1), BatchNormState.create(width, dtype)
            )
            if u == 0 and s >= 1:
                registry[LayerAddress.of(s, u, "proj")] = ConvBN(
                    make_conv(cin, width, 1, 2, 0), BatchNormState.create(width, dtype)
                )

    last = config.stage_widths[-1]
    if config.task == "classify":
        head = ClassifyHead(
            weight=_he_uniform(rng, (config.num_classes, last), last, dtype),
            bias=np.zeros(config.num_classes, dtype=dtype),
        )
    else:
        # thin decode chain: the backbone, not the head, carries the
        # representational burden
        blocks = []
        c = last
        c_out = max(last // 4, 2)
        for _ in range(config.num_stages - 1):
            blocks.append(ConvBN(make_conv(c, c_out, 3, 1, 1),
                                 BatchNormState.create(c_out, dtype)))
            c = c_out
            c_out = max(c // 2, 2)
        head = SegmentHead(
            blocks=blocks,
            final_kernel=make_conv(c, config.num_classes, 1, 1, 0),
            final_bias=np.zeros(config.num_classes, dtype=dtype),
        )
    return Model(config, registry, head)


def list_layers(model: Model) -> list[LayerInfo]:
    """Every live kernel once, in forward order, the head as a single entry."""
    rows = []
    for addr in model.backbone_addresses():
        cb = model.registry.get(addr)
        if cb is None:
            continue
        rows.append(
            LayerInfo(
                address=addr,
                is_feature_decomposition=model.is_feature_decomposition(addr),
                channel_in=cb.kernel.in_channels,
                channel_out=cb.kernel.out_channels,
            )
        )
    last = model.config.stage_widths[-1]
    rows.append(
        LayerInfo(LayerAddress.head(), False, last, model.config.num_classes)
    )
    return rows


def partition_layer_blocks(model: Model) -> list[LayerBlock]:
    """One block per stage: the run of layers sharing that stage's width."""
    blocks = []
    for s, units in enumerate(model.config.units_per_stage):
        addrs = []
        for u in range(units):
            addrs.append(LayerAddress.of(s, u, "conv1"))
            addrs.append(LayerAddress.of(s, u, "conv2"))
            if s >= 1 and u == 0:
                addrs.append(LayerAddress.of(s, u, "proj"))
        blocks.append(LayerBlock(stage=s, addresses=addrs))
    return blocks
