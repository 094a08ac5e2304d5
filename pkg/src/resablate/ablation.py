"""Kernel zeroing, sweep protocols, the closed-form branch oracle, and
fold-based pruning.

When a convolution kernel is replaced by exact zeros, the batch-norm that
follows it sees an all-zero map and (in eval mode, with frozen running
statistics) emits a per-channel constant. ``analytic_ablated_forward``
exploits that collapse to predict a zeroed unit's output without running the
dead convolution; ``fold_and_prune`` makes the same collapse permanent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .checkpoint import fingerprint
from .errors import ConfigError, UnsupportedTargetError
from .model import LayerAddress, Model, _proj_output_hw, partition_layer_blocks
from .tensor import Tensor

FOLDABLE_SLOTS = ("conv1", "conv2", "proj")


@dataclass
class AblationSpec:
    """A set of kernels to zero, tagged with the protocol that produced it."""

    targets: frozenset[LayerAddress]
    protocol_tag: str = "custom"

    def __post_init__(self):
        self.targets = frozenset(self.targets)
        if not self.targets:
            raise ConfigError("ablation spec needs at least one target")
        if any(a.slot == "head" for a in self.targets):
            raise ConfigError("the head is never an ablation target")
        if self.protocol_tag not in ("e1", "e2", "e3", "custom"):
            raise ConfigError(f"unknown protocol tag {self.protocol_tag!r}")

    def sorted_targets(self) -> list[LayerAddress]:
        return sorted(self.targets)


@dataclass
class AblationResult:
    """Outcome of evaluating one zeroing spec against the baseline."""

    addresses: list[LayerAddress]
    ablated: float
    delta: float
    trivial: bool


@dataclass
class TrivialityReport:
    fingerprint: str
    task: str
    metric: str
    baseline: float
    tau: float
    protocol: str
    results: list[AblationResult]
    seed: int
    dataset: dict = field(default_factory=dict)


def classify_triviality(baseline: float, ablated: float, tau: float) -> str:
    """'trivial' when zeroing moved the metric by at most tau, else 'non_trivial'."""
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    return "trivial" if abs(baseline - ablated) <= tau else "non_trivial"


def zero_kernels(model: Model, spec: AblationSpec) -> Model:
    """Deep copy of the model with every targeted kernel set to exact zeros.

    BN states are untouched; the input model is never modified.
    """
    for addr in spec.targets:
        if addr not in model.registry:
            raise ConfigError(f"no kernel at address {addr}")
    out = model.copy()
    for addr in spec.targets:
        k = out.registry[addr].kernel
        k.weights[...] = 0
        k.zeroed = True
    return out


def analytic_ablated_forward(model: Model, x, target: LayerAddress) -> np.ndarray:
    """Eval forward with the targeted kernel's unit computed in closed form.

    The zeroed convolution's output is known to be the all-zero map, so its
    BN emits a per-channel constant; the constant map is materialized and the
    remaining live primitives of the unit run on it. All other layers run
    normally.
    """
    if target.slot not in FOLDABLE_SLOTS:
        raise UnsupportedTargetError(
            f"no closed form for slot {target.slot!r} (only conv1/conv2/proj)"
        )
    if target not in model.registry:
        raise ConfigError(f"no kernel at address {target}")

    x = x if isinstance(x, Tensor) else Tensor(x)
    model._check_input(x)
    t = model._stem_forward(x, "eval")
    for s, units in enumerate(model.config.units_per_stage):
        for u in range(units):
            if s == target.stage and u == target.unit:
                t = _closed_form_unit(model, s, u, t, target.slot)
            else:
                t = model._unit_forward(s, u, t, "eval")
    return model._head_forward(t, "eval")


def _const_map(const: np.ndarray, like: Tensor, hw: tuple[int, int]) -> Tensor:
    shape = (like.shape[0], const.shape[0], hw[0], hw[1])
    data = np.broadcast_to(const.reshape(1, -1, 1, 1).astype(like.dtype, copy=False), shape)
    return Tensor(np.ascontiguousarray(data))


def _closed_form_unit(model: Model, stage: int, unit: int, x: Tensor,
                      target_slot: str) -> Tensor:
    cb1 = model.registry[LayerAddress.of(stage, unit, "conv1")]
    cb2 = model.registry[LayerAddress.of(stage, unit, "conv2")]
    has_proj = stage >= 1 and unit == 0

    if has_proj:
        cbp = model.registry[LayerAddress.of(stage, unit, "proj")]
        if target_slot == "proj":
            c3 = ops.bn_zero_response(cbp.bn, x.dtype)
            shortcut = _const_map(c3, x, _proj_output_hw(x.shape[2], x.shape[3]))
        else:
            shortcut = ops.batchnorm(ops.conv2d(x, cbp.kernel), cbp.bn, "eval")
    else:
        if target_slot == "proj":
            raise UnsupportedTargetError(
                f"unit s{stage}u{unit} has no projection shortcut"
            )
        shortcut = x

    if target_slot == "conv2":
        c2 = ops.bn_zero_response(cb2.bn, x.dtype)
        branch = _const_map(c2, x, (shortcut.shape[2], shortcut.shape[3]))
    else:
        if target_slot == "conv1":
            c1 = ops.bn_zero_response(cb1.bn, x.dtype)
            hw = ops.conv_output_hw(x.shape[2], x.shape[3], cb1.kernel)
            h = ops.relu(_const_map(c1, x, hw))
        else:
            h = ops.relu(ops.batchnorm(ops.conv2d(x, cb1.kernel), cb1.bn, "eval"))
        branch = ops.batchnorm(ops.conv2d(h, cb2.kernel), cb2.bn, "eval")

    return ops.relu(Tensor(shortcut.data + branch.data))


def fold_and_prune(model: Model, trivial_addresses) -> Model:
    """Replace each targeted branch by its batch-norm zero-response constant.

    The folded model's eval outputs equal the corresponding zero-ablated
    model's outputs; the dead kernel and its BN are dropped from the model.
    """
    addrs = set(trivial_addresses)
    for addr in addrs:
        if addr.slot not in FOLDABLE_SLOTS:
            raise UnsupportedTargetError(
                f"cannot fold slot {addr.slot!r} (only conv1/conv2/proj)"
            )
        if addr not in model.registry:
            raise ConfigError(f"no kernel at address {addr}")
    out = model.copy()
    for addr in sorted(addrs):
        cb = out.registry.pop(addr)
        out.folded[addr] = ops.bn_zero_response(cb.bn, cb.bn.gamma.dtype)
    return out


# ---------------------------------------------------------------------------
# sweep protocols
# ---------------------------------------------------------------------------

def _evaluate(model: Model, dataset) -> float:
    from .training import evaluate

    return evaluate(model, dataset)


def _report(model: Model, dataset, tau: float, protocol: str,
            target_sets: list[list[LayerAddress]]) -> TrivialityReport:
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    baseline = _evaluate(model, dataset)
    results = []
    for targets in target_sets:
        if targets:
            spec = AblationSpec(frozenset(targets), protocol)
            ablated = _evaluate(zero_kernels(model, spec), dataset)
        else:
            # a block with nothing to zero is recorded as a no-op
            ablated = baseline
        delta = baseline - ablated
        results.append(
            AblationResult(
                addresses=sorted(targets),
                ablated=ablated,
                delta=delta,
                trivial=classify_triviality(baseline, ablated, tau) == "trivial",
            )
        )
    return TrivialityReport(
        fingerprint=fingerprint(model),
        task=model.config.task,
        metric="accuracy" if model.config.task == "classify" else "dice",
        baseline=baseline,
        tau=tau,
        protocol=protocol,
        results=results,
        seed=model.config.seed,
        dataset=dict(getattr(dataset, "descriptor", {})),
    )


def run_protocol_e1(model: Model, eval_dataset, tau: float) -> TrivialityReport:
    """Zero every sweepable kernel one at a time (stem and proj included,
    head excluded) and measure each drop against the shared baseline."""
    sets = [[addr] for addr in model.sweepable_addresses()]
    return _report(model, eval_dataset, tau, "e1", sets)


def run_protocol_e2(model: Model, eval_dataset, tau: float) -> TrivialityReport:
    """Per layer block, zero every conv except the block's first unit.

    The first unit holds the feature-decomposition conv (where the channel
    count changes), its projection, and the adjacent conv2; all of it is kept.
    Blocks with a single unit have nothing to zero and record a no-op.
    """
    sets = []
    for block in partition_layer_blocks(model):
        targets = [
            a for a in block.addresses
            if a.unit >= 1 and a.slot in ("conv1", "conv2") and a in model.registry
        ]
        sets.append(targets)
    return _report(model, eval_dataset, tau, "e2", sets)


def run_protocol_e3(model: Model, eval_dataset, tau: float) -> TrivialityReport:
    """Zero each stage's projection shortcut (the short-connection
    feature-decomposition layer); stage 0 has none, so results start at the
    second layer block."""
    sets = []
    for s in range(1, model.config.num_stages):
        addr = LayerAddress.of(s, 0, "proj")
        if addr not in model.registry:
            raise ConfigError(f"projection {addr} missing (folded model?)")
        sets.append([addr])
    return _report(model, eval_dataset, tau, "e3", sets)
