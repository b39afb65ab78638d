"""Layer-multiplexed control engine.

One physical bank of MAX_FMA multiply-accumulate units, one PISO capture
stage, and one shared activation unit execute every layer of the network in
sequence.  The engine is a cycle-accurate state machine: each step() call is
one clock cycle.

Cycle accounting, store-and-forward mode
----------------------------------------
    layer entry -> [inputs(l) MAC cycles, all enabled units in lockstep]
                -> [1 PISO capture cycle]
                -> [1 activation-latency cycle: first output available]
                -> [n(l) store cycles, one serialized output each]
so a layer costs inputs(l) + n(l) + 2 cycles, its first output lands
inputs(l) + 2 cycles after layer entry, and bias preload costs nothing (it
overlaps the first input fetch).

Streamed mode
-------------
Once the PISO has captured a layer's accumulator outputs the FMA bank is
free, so the next layer's MAC consumes each serialized output on the cycle it
is stored.  Each layer after the first therefore adds inputs(l) + 2 cycles to
the point where its own output stream begins.  Reported total_cycles is the
cycle the final layer's output stream starts; last_output_cycle records when
the final element lands.  Outputs are bit-identical across modes.

Tiling (off by default) splits an oversized layer into ceil(n/MAX_FMA) passes
of inputs + pass_width + 2 cycles each; pass boundaries reuse the layer-done
phase but only real layer boundaries emit events.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

from .datapath import ActivationUnit, AfKind, FmaUnit, PisoBuffer, build_sigmoid_lut
from .errors import ConfigError, ControlFault
from .fxp import QFormat, QValue, acc_round
from .model import Mode, NetworkConfig, Params, check_dims, ensure_valid


class Phase(Enum):
    IDLE = "idle"
    LOAD_BIAS = "load_bias"
    MAC = "mac"
    PISO_LOAD = "piso_load"
    SERIALIZE = "serialize"
    LAYER_DONE = "layer_done"
    ANN_DONE = "ann_done"


LEGAL_PHASE_TRANSITIONS = {
    Phase.IDLE: {Phase.LOAD_BIAS},
    Phase.LOAD_BIAS: {Phase.MAC},
    Phase.MAC: {Phase.MAC, Phase.PISO_LOAD},
    Phase.PISO_LOAD: {Phase.SERIALIZE},
    Phase.SERIALIZE: {Phase.SERIALIZE, Phase.LAYER_DONE, Phase.ANN_DONE},
    Phase.LAYER_DONE: {Phase.LOAD_BIAS},
    Phase.ANN_DONE: set(),
}


class EventKind(Enum):
    LAYER_STARTED = "layer_started"
    FIRST_OUTPUT = "first_output"
    LAYER_FINISHED = "layer_finished"
    ANN_DONE = "ann_done"


# When two land on the same cycle only the most significant is returned from
# step(); the full log is kept on engine.events.
_EVENT_PRIORITY = {
    EventKind.ANN_DONE: 3,
    EventKind.LAYER_FINISHED: 2,
    EventKind.FIRST_OUTPUT: 1,
    EventKind.LAYER_STARTED: 0,
}


@dataclass(frozen=True)
class Event:
    kind: EventKind
    layer: int
    cycle: int


@dataclass(frozen=True)
class TraceRecord:
    cycle: int
    phase: str
    layer: int
    active_fma: int

    def line(self) -> str:
        return f"cycle={self.cycle} phase={self.phase} layer={self.layer} active_fma={self.active_fma}"


@dataclass
class LayerTiming:
    layer: int
    start_cycle: int          # boundary before the layer's first active cycle
    mac_cycles: int
    first_output_cycle: int   # absolute cycle the first activation leaves the AF
    serialize_cycles: int
    total_cycles: int         # cycles attributed to this layer in the mode's total


@dataclass
class CycleReport:
    per_layer: list[LayerTiming]
    total_cycles: int
    mac_ops: int
    af_invocations: int
    fma_utilization: float
    softmax_cycles: int
    mode: Mode
    last_output_cycle: int    # cycle the final layer's last activation is stored
    bank_load_cycles: int     # hypothetical serial weight/input bank loading (not simulated)


@dataclass(frozen=True)
class _Pass:
    layer: int
    width: int        # neurons computed this pass
    offset: int       # neuron offset within the layer
    inputs: int
    first: bool       # first pass of its layer
    last: bool        # last pass of its layer
    last_of_net: bool


def _build_schedule(cfg: NetworkConfig) -> list[_Pass]:
    passes = []
    for l in range(cfg.n_layers):
        n, inputs = cfg.width_of(l), cfg.inputs_of(l)
        offsets = list(range(0, n, cfg.max_fma))
        for i, off in enumerate(offsets):
            passes.append(
                _Pass(
                    layer=l,
                    width=min(cfg.max_fma, n - off),
                    offset=off,
                    inputs=inputs,
                    first=i == 0,
                    last=i == len(offsets) - 1,
                    last_of_net=False,
                )
            )
    passes[-1] = dataclasses.replace(passes[-1], last_of_net=True)
    return passes


class Engine:
    """Cycle-accurate execution of one network on the multiplexed layer."""

    def __init__(self, cfg: NetworkConfig, params: Params, trace_hook=None):
        ensure_valid(cfg)
        if not params.is_quantized:
            raise ConfigError("engine needs quantized parameters")
        if params.qformat != cfg.qformat:
            raise ConfigError(
                f"parameter format {params.qformat} != config format {cfg.qformat}"
            )
        check_dims(params, cfg)
        self.cfg = cfg
        self.fmt: QFormat = cfg.qformat
        self.mode: Mode = cfg.mode
        self.trace_hook = trace_hook
        self.fma_bank = [FmaUnit() for _ in range(cfg.max_fma)]
        self.piso = PisoBuffer(cfg.max_fma)
        lut = build_sigmoid_lut(self.fmt) if AfKind.SIGMOID in cfg.afs else None
        self.afu = ActivationUnit(self.fmt, lut)
        # Weight columns and biases pre-wrapped as QValues, one column per MAC
        # step: models the pre-banked weight memory.
        self._wcols = []
        self._biases = []
        for lp in params.layers:
            n, k = lp.weights.shape
            self._wcols.append(
                [[QValue(int(lp.weights[j, c]), self.fmt) for j in range(n)] for c in range(k)]
            )
            self._biases.append([QValue(int(lp.biases[j]), self.fmt) for j in range(n)])
        self._schedule = _build_schedule(cfg)
        self.reset()

    # -- state management ---------------------------------------------------

    def reset(self) -> None:
        """Back to Idle at cycle 0 with every unit gated off."""
        self.phase = Phase.IDLE
        self.cycle = 0
        self.layer_index = 0
        self.in_buf: list[QValue] = []
        self.out_buf: list[QValue] = []
        self.events: list[Event] = []
        self.mac_ops = 0
        self.af_invocations = 0
        for u in self.fma_bank:
            u.gate_off()
        self._pass_idx = 0
        self._mac_step = 0
        self._ser_step = 0
        self._af_out: QValue | None = None
        self._stream_armed = False
        self._stream_step = 0
        self._layer_start = [0] * self.cfg.n_layers
        self._first_output = [0] * self.cfg.n_layers
        self._layer_finish = [0] * self.cfg.n_layers
        self._mac_cycles = [0] * self.cfg.n_layers
        self._ser_cycles = [0] * self.cfg.n_layers

    @property
    def gate_mask(self) -> list[bool]:
        return [u.enabled for u in self.fma_bank]

    def set_mode(self, mode: Mode) -> None:
        if self.phase is not Phase.IDLE:
            raise ControlFault("mode change while the engine is running")
        if mode is Mode.STREAMED and any(
            w > self.cfg.max_fma for w in self.cfg.layer_sizes[1:]
        ):
            raise ConfigError("tiled layers require store-and-forward mode")
        self.mode = mode

    def load_input(self, x) -> None:
        if self.phase is not Phase.IDLE:
            raise ControlFault("input load while the engine is running")
        x = list(x)
        if len(x) != self.cfg.layer_sizes[0]:
            raise ConfigError(
                f"input length {len(x)} != input dimension {self.cfg.layer_sizes[0]}"
            )
        for v in x:
            if v.fmt != self.fmt:
                raise ConfigError(f"input format {v.fmt} != engine format {self.fmt}")
        self.in_buf = x

    def _set_phase(self, new: Phase) -> None:
        if new not in LEGAL_PHASE_TRANSITIONS[self.phase]:
            raise ControlFault(f"illegal phase transition {self.phase} -> {new}")
        self.phase = new

    # -- per-cycle micro-operations ------------------------------------------

    def _arm_units(self, p: _Pass) -> None:
        """Bias preload + gate mask for a pass; costs no cycle (overlaps fetch)."""
        for j, unit in enumerate(self.fma_bank):
            if j < p.width:
                unit.preload(self._biases[p.layer][p.offset + j], self.cfg.max_inputs)
            else:
                unit.gate_off()
        self._mac_step = 0

    def _begin_pass(self, idx: int, events: list[Event]) -> None:
        p = self._schedule[idx]
        self._pass_idx = idx
        self.layer_index = p.layer
        self._set_phase(Phase.LOAD_BIAS)
        self._arm_units(p)
        if p.first:
            self._layer_start[p.layer] = self.cycle - 1
            events.append(Event(EventKind.LAYER_STARTED, p.layer, self.cycle))
        self._set_phase(Phase.MAC)

    def _mac_cycle(self) -> int:
        p = self._schedule[self._pass_idx]
        x = self.in_buf[self._mac_step]
        col = self._wcols[p.layer][self._mac_step]
        for j in range(p.width):
            self.fma_bank[j].step(x, col[p.offset + j])
        self.mac_ops += p.width
        self._mac_cycles[p.layer] += 1
        self._mac_step += 1
        return p.width

    def _piso_load(self) -> None:
        p = self._schedule[self._pass_idx]
        self.afu.configure(self.cfg.afs[p.layer])
        self.piso.load(acc_round(self.fma_bank[j].acc, self.fmt) for j in range(p.width))
        self._ser_step = 0
        self._af_out = None

    def _stream_mac(self, v: QValue, events: list[Event]) -> int:
        """Feed one stored output into the next layer's MAC (streamed mode)."""
        p = self._schedule[self._pass_idx]
        if self.mode is not Mode.STREAMED or not p.last or p.last_of_net:
            return 0
        q = self._schedule[self._pass_idx + 1]
        if not self._stream_armed:
            self._arm_units(q)
            self._stream_armed = True
            self._stream_step = 0
            self._layer_start[q.layer] = self.cycle - 1
            events.append(Event(EventKind.LAYER_STARTED, q.layer, self.cycle))
        col = self._wcols[q.layer][self._stream_step]
        for j in range(q.width):
            self.fma_bank[j].step(v, col[q.offset + j])
        self.mac_ops += q.width
        self._mac_cycles[q.layer] += 1
        self._stream_step += 1
        return q.width

    def _serialize_cycle(self, events: list[Event]) -> int:
        p = self._schedule[self._pass_idx]
        i = self._ser_step
        active = 0
        if i >= 1:
            self.out_buf.append(self._af_out)
            active = self._stream_mac(self._af_out, events)
        if i < p.width:
            v = self.piso.shift()
            self._af_out = self.afu.apply(v)
            self.af_invocations += 1
            if i == 0 and p.first:
                self._first_output[p.layer] = self.cycle
                events.append(Event(EventKind.FIRST_OUTPUT, p.layer, self.cycle))
        self._ser_cycles[p.layer] += 1
        self._ser_step += 1
        if i == p.width:
            if p.last:
                self._layer_finish[p.layer] = self.cycle
            if p.last_of_net:
                self._set_phase(Phase.ANN_DONE)
                events.append(Event(EventKind.ANN_DONE, p.layer, self.cycle))
            else:
                self._set_phase(Phase.LAYER_DONE)
                if p.last:
                    events.append(Event(EventKind.LAYER_FINISHED, p.layer, self.cycle))
        return active

    # -- the clock ------------------------------------------------------------

    def step(self) -> Event | None:
        """Advance one clock cycle; returns the most significant event, if any."""
        if self.phase is Phase.ANN_DONE:
            raise ControlFault("step after 'ANN done'")
        self.cycle += 1
        events: list[Event] = []
        active = 0
        if self.phase is Phase.IDLE:
            if len(self.in_buf) != self.cfg.layer_sizes[0]:
                raise ControlFault("step before load_input")
            self._begin_pass(0, events)
            active = self._mac_cycle()
        elif self.phase is Phase.MAC:
            if self._mac_step < self._schedule[self._pass_idx].inputs:
                active = self._mac_cycle()
            else:
                self._set_phase(Phase.PISO_LOAD)
                self._piso_load()
        elif self.phase is Phase.PISO_LOAD:
            self._set_phase(Phase.SERIALIZE)
            active = self._serialize_cycle(events)
        elif self.phase is Phase.SERIALIZE:
            active = self._serialize_cycle(events)
        elif self.phase is Phase.LAYER_DONE:
            nxt = self._pass_idx + 1
            q = self._schedule[nxt]
            done = self._schedule[self._pass_idx]
            if done.last:
                # Hand the stored activations to the next layer (store-and-forward);
                # in streamed mode they were consumed as they arrived.
                if not self._stream_armed:
                    self.in_buf = self.out_buf
                self.out_buf = []
            if self._stream_armed:
                # Streamed: this pass's MAC already ran during the upstream
                # layer's store cycles; go straight to the PISO capture.
                if self._stream_step != q.inputs:
                    raise ControlFault(
                        f"streamed MAC consumed {self._stream_step} of "
                        f"{q.inputs} inputs at layer boundary"
                    )
                self._pass_idx = nxt
                self.layer_index = q.layer
                self._mac_step = q.inputs
                self._stream_armed = False
                self._set_phase(Phase.LOAD_BIAS)
                self._set_phase(Phase.MAC)
                self._set_phase(Phase.PISO_LOAD)
                self._piso_load()
            else:
                self._begin_pass(nxt, events)
                active = self._mac_cycle()
        if self.trace_hook is not None:
            self.trace_hook(
                TraceRecord(self.cycle, self.phase.value, self.layer_index, active)
            )
        self.events.extend(events)
        if events:
            return max(events, key=lambda e: _EVENT_PRIORITY[e.kind])
        return None

    def run(self, x) -> tuple[list[QValue], CycleReport]:
        """Load an input, clock the engine to 'ANN done', return outputs + report."""
        if self.phase is Phase.ANN_DONE:
            self.reset()
        self.load_input(x)
        while self.phase is not Phase.ANN_DONE:
            self.step()
        return list(self.out_buf), self.report()

    # -- reporting -------------------------------------------------------------

    def report(self) -> CycleReport:
        if self.phase is not Phase.ANN_DONE:
            raise ControlFault("report requested before 'ANN done'")
        cfg = self.cfg
        streamed = self.mode is Mode.STREAMED and cfg.n_layers > 1
        per_layer = []
        for l in range(cfg.n_layers):
            if streamed:
                prev = self._first_output[l - 1] if l > 0 else 0
                total = self._first_output[l] - prev
            else:
                total = self._layer_finish[l] - self._layer_start[l]
            per_layer.append(
                LayerTiming(
                    layer=l,
                    start_cycle=self._layer_start[l],
                    mac_cycles=self._mac_cycles[l],
                    first_output_cycle=self._first_output[l],
                    serialize_cycles=self._ser_cycles[l],
                    total_cycles=total,
                )
            )
        end = self._first_output[-1] if streamed else self._layer_finish[-1]
        total_cycles = end + cfg.softmax_cycles
        bank_load = sum(
            cfg.inputs_of(l) * (cfg.width_of(l) + 1) for l in range(cfg.n_layers)
        )
        return CycleReport(
            per_layer=per_layer,
            total_cycles=total_cycles,
            mac_ops=self.mac_ops,
            af_invocations=self.af_invocations,
            fma_utilization=self.mac_ops / (cfg.max_fma * total_cycles),
            softmax_cycles=cfg.softmax_cycles,
            mode=self.mode,
            last_output_cycle=self._layer_finish[-1],
            bank_load_cycles=bank_load,
        )


def run_inference(
    cfg: NetworkConfig,
    params: Params,
    x,
    mode: Mode | None = None,
    trace_hook=None,
) -> tuple[list[QValue], CycleReport]:
    """One-shot convenience wrapper around Engine."""
    engine = Engine(cfg, params, trace_hook=trace_hook)
    if mode is not None:
        engine.set_mode(mode)
    return engine.run(x)


def classify(outputs) -> int:
    """Index of the largest output; ties resolve to the lowest index."""
    outputs = list(outputs)
    if not outputs:
        raise ConfigError("classify needs a non-empty output vector")
    best, best_raw = 0, outputs[0].raw
    for i, v in enumerate(outputs[1:], start=1):
        if v.raw > best_raw:
            best, best_raw = i, v.raw
    return best
