"""Per-window coupling iteration state machine.

One :class:`CouplingEngine` lives inside each participant and drives the
window life cycle: committing written samples, exchanging storages with the
peer at window ends, measuring convergence, accelerating, and deciding
whether the window repeats or the run moves on.  Serial schemes advance the
participants one after the other (the engine blocks on the peer where the
ordering demands it); parallel schemes advance them concurrently on data
from the previous iteration.  The second participant owns the convergence
check and broadcasts the verdict as a one-byte message.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import acceleration as accel_mod
from . import comm, mapping
from .comm import Message, Tag
from .config import CouplingConfig, ExchangeSpec
from .errors import HandshakeError, StateError, TransportError
from .mapping import Mesh, MappingPlan
from .storage import Sample, Storage, same_time

log = logging.getLogger(__name__)

WINDOW_TIME_RTOL = 1e-12


@dataclass
class WindowState:
    """Where this participant stands inside the current time window."""

    t_ini: float
    dt_window: float
    k: int = 0
    window_index: int = 0
    converged: bool = False
    t_local: float = 0.0

    @property
    def t_end(self) -> float:
        return self.t_ini + self.dt_window

    def at_window_end(self) -> bool:
        return abs(self.t_local - self.t_end) <= WINDOW_TIME_RTOL * self.dt_window


def check_convergence(limit: float, previous: np.ndarray,
                      current: np.ndarray) -> bool:
    """Relative l2 convergence test of one measure.

    Converged iff ||current - previous|| <= limit * ||current||; for
    zero-valued data the difference itself is compared against the limit.
    """
    diff = float(np.linalg.norm(current - previous))
    scale = float(np.linalg.norm(current))
    if scale == 0.0:
        return diff <= limit
    return diff <= limit * scale


@dataclass
class FieldState:
    """Runtime state of one exchanged data field for one participant."""

    exchange: ExchangeSpec
    data_id: int
    outgoing: bool
    degree: int
    # outgoing: storage on the participant's write mesh and, when a write
    # mapping is configured, the mapped storage on the exchange mesh
    own_storage: Storage | None = None
    send_storage: Storage | None = None
    write_plan: MappingPlan | None = None
    # incoming: storage on the participant's read mesh
    read_storage: Storage | None = None
    read_plan: MappingPlan | None = None
    start_received: bool = False

    @property
    def name(self) -> str:
        return self.exchange.data

    def storage_for_scheme(self) -> Storage:
        return self.own_storage if self.outgoing else self.read_storage


@dataclass
class RoundResult:
    repeat: bool
    window_completed: bool


class CouplingEngine:
    def __init__(self, cfg: CouplingConfig, participant: str,
                 channel: comm.Channel):
        self.cfg = cfg
        self.me = cfg.participant(participant)
        self.peer = cfg.peer_of(participant)
        self.channel = channel
        scheme = cfg.scheme
        if participant not in (scheme.first, scheme.second):
            raise StateError(
                f"participant '{participant}' takes no part in the coupling scheme"
            )
        self.scheme = scheme
        self.is_first = participant == scheme.first
        self.is_second = not self.is_first
        self._window_sizes = scheme.window_sizes()
        self.window = WindowState(t_ini=0.0, dt_window=self._window_sizes[0])
        self.fields: dict[str, FieldState] = {}
        self.meshes: dict[str, Mesh] = {}
        self._plans: dict[tuple[str, str, str], MappingPlan] = {}
        self._measure_prev: dict[str, np.ndarray] = {}
        self._accel: accel_mod.AccelerationState | None = None
        self._accel_fields: list[str] = []
        if self.is_second and scheme.acceleration is not None:
            a = scheme.acceleration
            self._accel = accel_mod.AccelerationState(
                variant=a.variant, omega=a.omega, filter_eps=a.filter_eps
            )
            self._accel_fields = [d.name for d in a.data]
        self.ongoing = True
        self.pending_write_checkpoint = False
        self.pending_read_checkpoint = False
        self.window_just_completed = False

    # -- initialization ----------------------------------------------------

    def initialize(self, provided: dict[str, Mesh],
                   initial_samples: dict[str, Sample]) -> None:
        """Connect to the peer, exchange meshes and initial data, and set
        up the per-field storages.  For a serial second participant this
        blocks until the first participant finishes its first traversal."""
        peer_name = self.channel.handshake(self.me.name)
        if peer_name != self.peer.name:
            raise HandshakeError(
                f"connected to '{peer_name}' but configuration expects "
                f"'{self.peer.name}'"
            )
        self.meshes.update(provided)
        self._exchange_meshes(provided)
        self._build_plans()
        self._create_fields(initial_samples)
        self._exchange_initial_data()
        if self.scheme.serial and self.is_second:
            # the first participant computes the window first; wait for its
            # first storage communication before the solver may read
            for f in self._incoming():
                self._receive_storage(f)
        self._reset_measure_cache()
        if self._accel is not None:
            accel_mod.begin_window(self._accel)
        if self.scheme.implicit:
            self.pending_write_checkpoint = True

    def _exchange_meshes(self, provided: dict[str, Mesh]) -> None:
        to_send = [r.name for r in self.peer.receive_meshes if r.source == self.me.name]
        to_recv = [r.name for r in self.me.receive_meshes]
        is_acceptor = self.me.name == self.cfg.m2n.acceptor

        def send_all():
            for name in to_send:
                if name not in provided:
                    raise StateError(
                        f"mesh '{name}' was never registered via set_mesh_vertices"
                    )
                self.channel.send(
                    Message(Tag.MESH, comm.serialize_mesh(provided[name]))
                )

        def recv_all():
            for name in to_recv:
                mesh = comm.deserialize_mesh(self.channel.expect(Tag.MESH).payload)
                if mesh.name != name:
                    raise TransportError(
                        f"expected mesh '{name}', received '{mesh.name}'"
                    )
                self.meshes[mesh.name] = mesh

        if is_acceptor:
            send_all()
            recv_all()
        else:
            recv_all()
            send_all()

    def _build_plans(self) -> None:
        for spec in self.me.mappings:
            plan = mapping.build_plan(
                spec.plan_kind, self.meshes[spec.from_mesh], self.meshes[spec.to_mesh]
            )
            self._plans[(spec.direction, spec.from_mesh, spec.to_mesh)] = plan

    def _create_fields(self, initial_samples: dict[str, Sample]) -> None:
        for e in self.cfg.exchanges_from(self.me.name):
            degree = self.cfg.data_spec(e.data).waveform_degree
            write_mesh = self.me.write_mesh(e.data)
            comps = self.cfg.components(e.data, write_mesh)
            length = self.meshes[write_mesh].vertex_count * comps
            initial = initial_samples.get(e.data, Sample(np.zeros(length)))
            state = FieldState(
                exchange=e,
                data_id=self.cfg.data_id(e.data),
                outgoing=True,
                degree=degree,
                own_storage=Storage(degree, 0.0, initial),
            )
            if write_mesh != e.mesh:
                state.write_plan = self._plans[("write", write_mesh, e.mesh)]
                state.send_storage = Storage(
                    degree, 0.0, mapping.apply(state.write_plan, initial)
                )
            else:
                state.send_storage = state.own_storage
            self.fields[e.data] = state
        for e in self.cfg.exchanges_to(self.me.name):
            degree = self.cfg.data_spec(e.data).waveform_degree
            read_mesh = self.me.read_mesh(e.data)
            comps = self.cfg.components(e.data, read_mesh)
            length = self.meshes[read_mesh].vertex_count * comps
            state = FieldState(
                exchange=e,
                data_id=self.cfg.data_id(e.data),
                outgoing=False,
                degree=degree,
                read_storage=Storage(degree, 0.0, Sample(np.zeros(length))),
            )
            if read_mesh != e.mesh:
                state.read_plan = self._plans[("read", e.mesh, read_mesh)]
            self.fields[e.data] = state

    def _exchange_initial_data(self) -> None:
        """Dedicated initial-value messages where the first storage
        communication cannot carry them."""
        sends = []
        recvs = []
        serial = self.scheme.serial
        for f in self._outgoing():
            e = f.exchange
            if not e.initialize:
                continue
            if not serial or self.is_second or not e.substeps:
                sends.append(f)
        for f in self._incoming():
            e = f.exchange
            if not e.initialize:
                continue
            peer_is_second = self.peer.name == self.scheme.second
            if not serial or peer_is_second or not e.substeps:
                recvs.append(f)

        def send_all():
            for f in sends:
                st = f.send_storage.first
                payload = comm.serialize_sample(f.data_id, st.time, st.sample)
                self.channel.send(Message(Tag.INITIAL_DATA, payload))

        def recv_all():
            for f in recvs:
                msg = self.channel.expect(Tag.INITIAL_DATA)
                data_id, records = comm.deserialize_storage(msg.payload)
                if data_id != f.data_id:
                    raise TransportError(
                        f"initial data for id {data_id}, expected {f.data_id}"
                    )
                t0, values = records[0]
                sample = Sample(values)
                if f.read_plan is not None:
                    sample = mapping.apply(f.read_plan, sample)
                f.read_storage = Storage(f.degree, t0, sample)
                f.start_received = True

        if serial:
            if self.is_second:
                send_all()
                recv_all()
            else:
                recv_all()
                send_all()
        elif self.me.name == self.cfg.m2n.acceptor:
            send_all()
            recv_all()
        else:
            recv_all()
            send_all()

    # -- field access ------------------------------------------------------

    def _outgoing(self) -> list[FieldState]:
        return [self.fields[e.data] for e in self.cfg.exchanges_from(self.me.name)]

    def _incoming(self) -> list[FieldState]:
        return [self.fields[e.data] for e in self.cfg.exchanges_to(self.me.name)]

    def field(self, name: str) -> FieldState:
        return self.fields[name]

    # -- time bookkeeping ---------------------------------------------------

    def max_time_step_size(self) -> float:
        return self.window.t_end - self.window.t_local

    def commit_time(self, dt: float) -> float:
        """Absolute stample time for a step of size ``dt``, snapped onto
        the window end so that repeated step-size addition cannot drift
        past the trim tolerance."""
        w = self.window
        t_next = w.t_local + dt
        if abs(t_next - w.t_end) <= WINDOW_TIME_RTOL * w.dt_window:
            return w.t_end
        return t_next

    def advance_time(self, dt: float) -> None:
        w = self.window
        if dt > self.max_time_step_size() + WINDOW_TIME_RTOL * w.dt_window:
            raise StateError(
                f"step size {dt} overruns the window end "
                f"{w.t_end} (local time {w.t_local})"
            )
        w.t_local = min(self.commit_time(dt), w.t_end)

    # -- the window-end round ------------------------------------------------

    def step_window(self) -> RoundResult:
        """Run the coupling round at the window end and update all state.

        Returns whether the window must be repeated and whether it was
        completed (accepted).  Must only be called at the window end.
        """
        if not self.window.at_window_end():
            raise StateError("step_window called before the window end")
        if self.scheme.serial:
            repeat = self._serial_round()
        else:
            repeat = self._parallel_round()
        if repeat:
            self._rewind_window()
            return RoundResult(repeat=True, window_completed=False)
        self._complete_window()
        self.window_just_completed = True
        return RoundResult(repeat=False, window_completed=True)

    def _serial_round(self) -> bool:
        if self.is_first:
            for f in self._outgoing():
                self._send_storage(f)
            repeat = self._receive_verdict()
            for f in self._incoming():
                self._receive_storage(f)
            return repeat
        repeat = self._decide_and_accelerate()
        self._send_verdict(repeat)
        for f in self._outgoing():
            self._send_storage(f)
        more_windows = self.window.window_index + 1 < len(self._window_sizes)
        if repeat or more_windows:
            for f in self._incoming():
                self._receive_storage(f)
        return repeat

    def _parallel_round(self) -> bool:
        if self.is_first:
            for f in self._outgoing():
                self._send_storage(f)
            repeat = self._receive_verdict()
            for f in self._incoming():
                self._receive_storage(f)
            return repeat
        for f in self._incoming():
            self._receive_storage(f)
        repeat = self._decide_and_accelerate()
        self._send_verdict(repeat)
        for f in self._outgoing():
            self._send_storage(f)
        return repeat

    def _decide_and_accelerate(self) -> bool:
        scheme = self.scheme
        repeat = False
        if scheme.implicit:
            converged = self._measures_converged()
            forced = self.window.k + 1 >= scheme.max_iterations
            repeat = not converged and not forced
            self.window.converged = converged
            if not converged and forced:
                log.warning(
                    "window %d did not converge within %d iterations; advancing",
                    self.window.window_index, scheme.max_iterations,
                )
            if repeat and self._accel is not None:
                self._run_acceleration()
            self._update_measure_cache()
        return repeat

    def _measures_converged(self) -> bool:
        if not self.scheme.convergence_measures:
            return False
        for m in self.scheme.convergence_measures:
            current = self.fields[m.data].storage_for_scheme().last.sample.values
            previous = self._measure_prev[m.data]
            if not check_convergence(m.relative_limit, previous, current):
                return False
        return True

    def _update_measure_cache(self) -> None:
        for m in self.scheme.convergence_measures:
            values = self.fields[m.data].storage_for_scheme().last.sample.values
            self._measure_prev[m.data] = values.copy()

    def _reset_measure_cache(self) -> None:
        if not self.is_second:
            return
        for m in self.scheme.convergence_measures:
            values = self.fields[m.data].storage_for_scheme().first.sample.values
            self._measure_prev[m.data] = values.copy()

    def _run_acceleration(self) -> None:
        state = self._accel
        storages = {
            name: self.fields[name].storage_for_scheme()
            for name in self._accel_fields
        }
        accel_mod.capture_grid(state, storages, self._accel_fields)
        x_tilde = accel_mod.flatten(state, storages, self._accel_fields)
        if state.prev_x is None:
            x_old = accel_mod.flatten_start(state, storages, self._accel_fields)
        else:
            x_old = state.prev_x
        x_new = accel_mod.accelerate(state, x_old, x_tilde)
        state.prev_x = x_new
        accel_mod.resample_to_storage(state, x_new, storages, self._accel_fields)

    # -- verdict and storage transport ---------------------------------------

    def _send_verdict(self, repeat: bool) -> None:
        payload = b"\x00" if repeat else b"\x01"
        self.channel.send(Message(Tag.CONVERGENCE, payload))

    def _receive_verdict(self) -> bool:
        msg = self.channel.expect(Tag.CONVERGENCE)
        return msg.payload == b"\x00"

    def _send_storage(self, f: FieldState) -> None:
        self._sync_send_storage(f)
        if f.exchange.substeps:
            payload = comm.serialize_storage(f.data_id, f.send_storage)
        else:
            last = f.send_storage.last
            payload = comm.serialize_sample(f.data_id, last.time, last.sample)
        self.channel.send(Message(Tag.STORAGE, payload))

    def _sync_send_storage(self, f: FieldState) -> None:
        """Apply the write mapping sample by sample; the window-start
        stample was mapped previously and is carried over."""
        if f.write_plan is None:
            return
        for st in f.own_storage.stamples()[1:]:
            f.send_storage.set_sample_at_time(
                st.time, mapping.apply(f.write_plan, st.sample)
            )

    def _receive_storage(self, f: FieldState) -> None:
        msg = self.channel.expect(Tag.STORAGE)
        data_id, records = comm.deserialize_storage(msg.payload)
        if data_id != f.data_id:
            raise TransportError(
                f"received storage for data id {data_id}, expected {f.data_id}"
            )
        self._merge_records(f, records)

    def _merge_records(self, f: FieldState,
                       records: list[tuple[float, np.ndarray]]) -> None:
        def mapped(values: np.ndarray) -> Sample:
            sample = Sample(values)
            if f.read_plan is not None:
                sample = mapping.apply(f.read_plan, sample)
            return sample

        if f.exchange.substeps and not f.start_received:
            # adopt the peer's window-start sample on first contact; it
            # carries the peer's initial data in serial coupling
            t0, values = records[0]
            f.read_storage = Storage(f.degree, t0, mapped(values))
            f.start_received = True
            rest = records[1:]
        elif f.exchange.substeps:
            rest = records[1:]
        else:
            rest = records
        for t, values in rest:
            f.read_storage.set_sample_at_time(t, mapped(values))

    # -- window transitions ----------------------------------------------------

    def _rewind_window(self) -> None:
        w = self.window
        for f in self._outgoing():
            f.own_storage.trim_after(w.t_ini)
            if f.send_storage is not f.own_storage:
                f.send_storage.trim_after(w.t_ini)
        w.t_local = w.t_ini
        w.k += 1
        if self.scheme.implicit:
            self.pending_read_checkpoint = True

    def _complete_window(self) -> None:
        w = self.window
        t_end = w.t_end
        for f in self.fields.values():
            for storage in (f.own_storage, f.send_storage, f.read_storage):
                if storage is not None:
                    storage.trim_before(t_end)
        w.window_index += 1
        w.k = 0
        w.converged = False
        if w.window_index < len(self._window_sizes):
            w.t_ini = t_end
            w.dt_window = self._window_sizes[w.window_index]
            w.t_local = w.t_ini
            self._reset_measure_cache()
            if self._accel is not None:
                accel_mod.begin_window(self._accel)
            if self.scheme.implicit:
                self.pending_write_checkpoint = True
        else:
            self.ongoing = False

    # -- shutdown ---------------------------------------------------------------

    def finalize(self) -> None:
        try:
            self.channel.send(Message(Tag.BYE, b""))
            self.channel.expect(Tag.BYE)
        except TransportError:
            pass
        self.channel.close()
