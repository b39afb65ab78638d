"""Structural models of the datapath blocks.

Three pieces, mirroring the physical layer: an array slot that fuses
multiply-accumulate with bias preload (FmaUnit), the parallel-in-serial-out
register bank that captures all slot outputs in one cycle and drains them one
per cycle (PisoBuffer), and the single shared activation unit the drained
values pass through (ActivationUnit).

Cycle costs are not modeled here; the engine charges one cycle per PISO load,
one cycle of activation latency, and one cycle per drained element.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from enum import Enum

from .errors import ConfigError, ControlFault
from .fxp import (
    QFormat,
    QValue,
    WideAcc,
    acc_init_bias,
    acc_mac,
    dequantize,
    quantize,
    sign_extend,
)


class AfKind(Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


@dataclass
class FmaUnit:
    """One multiply-accumulate slot of the array.

    A disabled unit is power-gated: its accumulator never changes and stepping
    it is a control fault, not a silent no-op.
    """

    acc: WideAcc | None = None
    enabled: bool = False
    steps_taken: int = 0

    def preload(self, bias: QValue, max_inputs: int) -> None:
        """Load the bias into the accumulator and arm the unit for a new pass."""
        self.acc = acc_init_bias(bias, max_inputs)
        self.steps_taken = 0
        self.enabled = True

    def gate_off(self) -> None:
        self.enabled = False

    def step(self, x: QValue, w: QValue) -> None:
        if not self.enabled:
            raise ControlFault("stepped a power-gated FMA unit")
        if self.acc is None:
            raise ControlFault("FMA stepped before bias preload")
        self.acc = acc_mac(self.acc, x, w)
        self.steps_taken += 1


class PisoBuffer:
    """Parallel-in-serial-out bank: loaded in one cycle, drained one value per cycle."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f"PISO capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.slots: list[QValue] = []
        self.loaded_count = 0
        self.shift_index = 0

    def load(self, values) -> None:
        values = list(values)
        if len(values) > self.capacity:
            raise ConfigError(
                f"PISO load of {len(values)} values exceeds capacity {self.capacity}"
            )
        self.slots = values
        self.loaded_count = len(values)
        self.shift_index = 0

    @property
    def remaining(self) -> int:
        return self.loaded_count - self.shift_index

    def shift(self) -> QValue:
        """Emit the next value in load order."""
        if self.shift_index >= self.loaded_count:
            raise ControlFault("PISO shift past loaded count")
        v = self.slots[self.shift_index]
        self.shift_index += 1
        return v


@functools.lru_cache(maxsize=8)
def build_sigmoid_lut(fmt: QFormat) -> tuple[int, ...]:
    """Sigmoid lookup table: entry i is quantize(sigmoid(value of raw i)).

    Indexed by the raw encoding reinterpreted as unsigned, so a table has
    2^total_bits entries; formats wider than 16 bits are rejected.
    """
    if fmt.total_bits > 16:
        raise ConfigError(
            f"sigmoid LUT limited to total_bits <= 16, got {fmt.total_bits}"
        )
    entries = []
    for i in range(1 << fmt.total_bits):
        v = dequantize(QValue(sign_extend(i, fmt.total_bits), fmt))
        entries.append(quantize(1.0 / (1.0 + math.exp(-v)), fmt).raw)
    return tuple(entries)


class ActivationUnit:
    """The single shared activation function, reconfigured between layers.

    `instances_created` is a construction audit: an engine must build exactly
    one of these no matter how wide its layers are.
    """

    instances_created = 0

    def __init__(self, fmt: QFormat, lut: tuple[int, ...] | None = None):
        self.fmt = fmt
        self.kind = AfKind.IDENTITY
        self.lut = lut
        ActivationUnit.instances_created += 1

    def configure(self, kind: AfKind) -> None:
        self.kind = kind

    def apply(self, x: QValue) -> QValue:
        if x.fmt != self.fmt:
            raise ValueError(f"activation input format {x.fmt} != unit format {self.fmt}")
        if self.kind is AfKind.RELU:
            return QValue(max(0, x.raw), self.fmt) if x.raw < 0 else x
        if self.kind is AfKind.IDENTITY:
            return x
        if self.lut is None:
            raise ConfigError("sigmoid selected but no LUT was built for this unit")
        return QValue(self.lut[x.raw & ((1 << self.fmt.total_bits) - 1)], self.fmt)
