"""Participant facade: the solver-facing API of the coupling library.

A solver couples by creating one :class:`Participant`, registering its
coupling mesh, optionally writing initial data, and then looping
``read_data`` / ``write_data`` / ``advance`` until ``is_coupling_ongoing``
turns false.  The lifecycle order is enforced; any out-of-order call
raises a :class:`~couplib.errors.StateError` instead of corrupting state.
"""

from __future__ import annotations

import logging

import numpy as np

from . import comm
from .config import CouplingConfig, parse_config
from .cplscheme import WINDOW_TIME_RTOL, CouplingEngine
from .errors import ConfigurationError, DomainError, StateError, ValidationError
from .mapping import Mesh
from .storage import Sample

log = logging.getLogger(__name__)

_CREATED = "created"
_INITIALIZED = "initialized"
_FINALIZED = "finalized"


class Participant:
    """One coupled solver's handle on the coupling library.

    ``config`` may be a parsed :class:`~couplib.config.CouplingConfig`, a
    dict, or a JSON string.  In in-process mode the pre-built channel
    endpoint must be passed as ``channel``
    (see :meth:`couplib.comm.InProcessChannel.pair`).
    """

    def __init__(self, name: str, config, channel: comm.Channel | None = None):
        if isinstance(config, CouplingConfig):
            self._cfg = config
        else:
            self._cfg = parse_config(config)
        self._me = self._cfg.participant(name)
        self._state = _CREATED
        self._channel_arg = channel
        self._meshes: dict[str, Mesh] = {}
        self._initial_buffers: dict[str, np.ndarray] = {}
        self._step_buffers: dict[str, np.ndarray] = {}
        self._engine: CouplingEngine | None = None

    # -- setup --------------------------------------------------------------

    def set_mesh_vertices(self, mesh_name: str, coordinates) -> np.ndarray:
        """Register the coupling vertices of a provided mesh.

        Returns stable vertex ids 0..n-1 in input order.
        """
        self._require_state(_CREATED, "set_mesh_vertices")
        if mesh_name not in self._me.provide_meshes:
            raise StateError(
                f"participant '{self._me.name}' does not provide mesh '{mesh_name}'"
            )
        if mesh_name in self._meshes:
            raise StateError(f"mesh '{mesh_name}' was already registered")
        spec = self._cfg.mesh_spec(mesh_name)
        coords = np.asarray(coordinates, dtype=float)
        if coords.ndim == 1:
            coords = coords.reshape(-1, spec.dimensions)
        if coords.size == 0:
            raise ConfigurationError(f"mesh '{mesh_name}': empty vertex array")
        self._meshes[mesh_name] = Mesh(mesh_name, spec.dimensions, coords)
        return np.arange(coords.shape[0], dtype=np.int64)

    def requires_initial_data(self) -> bool:
        """Whether any data written by this participant must be provided
        before initialize (exchange configured with initialize=true)."""
        return any(e.initialize for e in self._cfg.exchanges_from(self._me.name))

    def initialize(self) -> None:
        """Exchange meshes and initial data and arm the first time window.

        For the second participant of a serial scheme this returns only
        once the first participant has communicated its first window.
        """
        self._require_state(_CREATED, "initialize")
        for mesh_name in self._me.provide_meshes:
            if mesh_name not in self._meshes:
                raise StateError(
                    f"provided mesh '{mesh_name}' was never registered"
                )
        initial_samples: dict[str, Sample] = {}
        for e in self._cfg.exchanges_from(self._me.name):
            if e.initialize and e.data not in self._initial_buffers:
                raise ConfigurationError(
                    f"exchange of '{e.data}' has initialize=true but "
                    f"'{self._me.name}' wrote no initial data"
                )
            if e.data in self._initial_buffers:
                initial_samples[e.data] = Sample(self._initial_buffers[e.data])
        channel = comm.open_channel(
            self._cfg.m2n.mode,
            self._me.name == self._cfg.m2n.acceptor,
            self._cfg.m2n.address,
            self._channel_arg,
        )
        self._engine = CouplingEngine(self._cfg, self._me.name, channel)
        self._engine.initialize(self._meshes, initial_samples)
        self._state = _INITIALIZED

    # -- data access ----------------------------------------------------------

    def write_data(self, mesh_name: str, data_name: str, vertex_ids,
                   values) -> None:
        """Buffer values for the in-flight step (or as initial data before
        initialize); the time stamp is attached by the next advance."""
        if self._state == _FINALIZED:
            raise StateError("write_data after finalize")
        exchange = self._outgoing_exchange(data_name)
        if self._me.write_mesh(data_name) != mesh_name:
            raise ConfigurationError(
                f"'{self._me.name}' writes '{data_name}' on mesh "
                f"'{self._me.write_mesh(data_name)}', not '{mesh_name}'"
            )
        if mesh_name not in self._meshes:
            raise StateError(f"mesh '{mesh_name}' is not registered yet")
        comps = self._cfg.components(data_name, mesh_name)
        n_vertices = self._meshes[mesh_name].vertex_count
        ids = np.asarray(vertex_ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= n_vertices):
            raise ValidationError(f"vertex ids out of range for '{mesh_name}'")
        arr = np.asarray(values, dtype=float).reshape(-1)
        if arr.size != ids.size * comps:
            raise ValidationError(
                f"write_data('{data_name}'): expected {ids.size * comps} "
                f"values, got {arr.size}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"write_data('{data_name}'): non-finite values")
        buffers = (
            self._initial_buffers if self._state == _CREATED else self._step_buffers
        )
        if data_name not in buffers:
            buffers[data_name] = self._fresh_buffer(data_name, n_vertices * comps)
        target = buffers[data_name].reshape(n_vertices, comps)
        target[ids] = arr.reshape(ids.size, comps)

    def _fresh_buffer(self, data_name: str, length: int) -> np.ndarray:
        if self._state == _CREATED:
            return np.zeros(length)
        # unwritten vertices keep their most recent committed values
        last = self._engine.field(data_name).own_storage.last
        return last.sample.values.copy()

    def read_data(self, mesh_name: str, data_name: str, vertex_ids,
                  relative_time: float) -> np.ndarray:
        """Evaluate the peer's waveform at ``relative_time`` within the
        current step, from 0 (step start) up to the committed step end."""
        self._require_state(_INITIALIZED, "read_data")
        self._incoming_exchange(data_name)
        if self._me.read_mesh(data_name) != mesh_name:
            raise ConfigurationError(
                f"'{self._me.name}' reads '{data_name}' on mesh "
                f"'{self._me.read_mesh(data_name)}', not '{mesh_name}'"
            )
        window = self._engine.window
        tol = WINDOW_TIME_RTOL * window.dt_window
        max_dt = self._engine.max_time_step_size()
        if relative_time < -tol or relative_time > max_dt + tol:
            raise DomainError(
                f"read at relative time {relative_time} outside [0, {max_dt}]"
            )
        t = window.t_local + min(max(relative_time, 0.0), max_dt)
        values = self._engine.field(data_name).read_storage.sample(t)
        comps = self._cfg.components(data_name, mesh_name)
        ids = np.asarray(vertex_ids, dtype=np.int64).reshape(-1)
        n_vertices = self._meshes_vertex_count(mesh_name)
        if ids.size and (ids.min() < 0 or ids.max() >= n_vertices):
            raise ValidationError(f"vertex ids out of range for '{mesh_name}'")
        picked = values.reshape(n_vertices, comps)[ids]
        return picked[:, 0].copy() if comps == 1 else picked.copy()

    def _meshes_vertex_count(self, mesh_name: str) -> int:
        if mesh_name in self._meshes:
            return self._meshes[mesh_name].vertex_count
        return self._engine.meshes[mesh_name].vertex_count

    # -- stepping ---------------------------------------------------------------

    def advance(self, dt: float) -> None:
        """Commit the buffered writes at the step end, advance local time,
        and run the coupling round when the window end is reached."""
        self._require_state(_INITIALIZED, "advance")
        if not np.isfinite(dt) or dt <= 0.0:
            raise ValidationError(f"advance: step size must be > 0, got {dt}")
        engine = self._engine
        if not engine.ongoing:
            raise StateError("advance called after the final time window")
        if engine.pending_write_checkpoint:
            raise StateError(
                "requires_writing_checkpoint() was not consulted before advance"
            )
        if engine.pending_read_checkpoint:
            raise StateError(
                "requires_reading_checkpoint() was not consulted before advance"
            )
        window = engine.window
        if dt > engine.max_time_step_size() + WINDOW_TIME_RTOL * window.dt_window:
            raise StateError(
                f"advance({dt}) overruns the window end at {window.t_end}"
            )
        engine.window_just_completed = False
        t_commit = min(engine.commit_time(dt), window.t_end)
        for exchange in self._cfg.exchanges_from(self._me.name):
            name = exchange.data
            field = engine.field(name)
            if name in self._step_buffers:
                field.own_storage.set_sample_at_time(
                    t_commit, Sample(self._step_buffers.pop(name))
                )
            else:
                log.warning(
                    "participant '%s' advanced without writing '%s'; the "
                    "existing samples are interpolated instead",
                    self._me.name, name,
                )
        engine.advance_time(dt)
        if window.at_window_end():
            engine.step_window()

    def get_max_time_step_size(self) -> float:
        self._require_state(_INITIALIZED, "get_max_time_step_size")
        return self._engine.max_time_step_size()

    def is_coupling_ongoing(self) -> bool:
        self._require_state(_INITIALIZED, "is_coupling_ongoing")
        return self._engine.ongoing

    def is_time_window_complete(self) -> bool:
        """Whether the most recent advance accepted a time window."""
        self._require_state(_INITIALIZED, "is_time_window_complete")
        return self._engine.window_just_completed

    # -- checkpoint signals -------------------------------------------------------

    def requires_writing_checkpoint(self) -> bool:
        """True at the first solver step of a window's first iteration of
        an implicit scheme; the caller must then save its solver state."""
        self._require_state(_INITIALIZED, "requires_writing_checkpoint")
        if self._engine.pending_write_checkpoint:
            self._engine.pending_write_checkpoint = False
            return True
        return False

    def requires_reading_checkpoint(self) -> bool:
        """True right after an advance completed a non-converged iteration;
        the caller must then restore its solver state."""
        self._require_state(_INITIALIZED, "requires_reading_checkpoint")
        if self._engine.pending_read_checkpoint:
            self._engine.pending_read_checkpoint = False
            self._step_buffers.clear()
            return True
        return False

    # -- shutdown -------------------------------------------------------------------

    def finalize(self) -> None:
        self._require_state(_INITIALIZED, "finalize")
        self._engine.finalize()
        self._state = _FINALIZED

    # -- helpers ----------------------------------------------------------------------

    def _require_state(self, state: str, what: str) -> None:
        if self._state != state:
            raise StateError(
                f"{what} is not allowed in lifecycle state '{self._state}'"
            )

    def _outgoing_exchange(self, data_name: str):
        for e in self._cfg.exchanges_from(self._me.name):
            if e.data == data_name:
                return e
        raise ConfigurationError(
            f"participant '{self._me.name}' does not write '{data_name}'"
        )

    def _incoming_exchange(self, data_name: str):
        for e in self._cfg.exchanges_to(self._me.name):
            if e.data == data_name:
                return e
        raise ConfigurationError(
            f"participant '{self._me.name}' does not read '{data_name}'"
        )
