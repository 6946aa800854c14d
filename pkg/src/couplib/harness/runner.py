"""Case driver: builds coupling configurations for the benchmark cases,
runs both participants (threads for in-process mode, spawned processes for
TCP mode), collects errors and iteration counts, and writes CSV rows.
"""

from __future__ import annotations

import json
import math
import socket
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import comm
from ..config import parse_config
from ..errors import ConfigurationError, CouplingError
from ..participant import Participant
from .cases import HeatParams, HeatSide, OscillatorParams, OscillatorSide

CSV_HEADER = "time_window_size,dt_A,dt_B,degree,e_A,e_B,avg_iterations,wall_time_s"

OSCILLATOR = "oscillator"
HEAT = "heat"


@dataclass(frozen=True)
class CaseConfig:
    """Everything needed to run one configuration of one case."""

    case: str                       # "oscillator" | "heat"
    window: float
    dt_a: float
    dt_b: float
    degree: int = 3
    substeps: bool = True
    scheme: str = "serial-implicit"
    acceleration: str = "none"      # none|constant|iqn-ils-full|iqn-ils-reduced
    omega: float = 0.5
    filter_eps: float = 1e-10
    limit: float | None = None      # convergence limit; case default when None
    max_iterations: int = 200
    integrator_a: str = ""          # case default when empty
    integrator_b: str = ""
    rho_inf: float = 0.9
    t_end: float = 1.0
    h: float = 0.1                  # heat vertex spacing
    comm_mode: str = "inprocess"
    tcp_address: str = "127.0.0.1:0"
    record_wall_time: bool = True

    def resolved(self) -> "CaseConfig":
        limit = self.limit
        if limit is None:
            limit = 1e-10 if self.case == OSCILLATOR else 1e-12
        ia = self.integrator_a or ("rk4" if self.case == OSCILLATOR else "implicit-euler")
        ib = self.integrator_b or (
            "generalized-alpha" if self.case == OSCILLATOR else "implicit-euler"
        )
        return replace(self, limit=limit, integrator_a=ia, integrator_b=ib)


# side metadata: participant and data names per case
_SIDES = {
    OSCILLATOR: {
        "A": ("MassA", "PointA", "DisplacementA", "DisplacementB"),
        "B": ("MassB", "PointB", "DisplacementB", "DisplacementA"),
    },
    HEAT: {
        "A": ("Dirichlet", "InterfaceD", "HeatFlux", "Temperature"),
        "B": ("Neumann", "InterfaceN", "Temperature", "HeatFlux"),
    },
}


def participant_name(case: str, side: str) -> str:
    return _SIDES[case][side][0]


def build_coupling_document(cfg: CaseConfig) -> dict:
    """The coupling configuration JSON document for one case run.

    Both participants provide a matching one-vertex interface mesh and
    read the peer's field through a nearest-neighbor read mapping; the
    first participant of the serial scheme is the B side.
    """
    cfg = cfg.resolved()
    name_a, mesh_a, data_a, _ = _SIDES[cfg.case]["A"]
    name_b, mesh_b, data_b, _ = _SIDES[cfg.case]["B"]
    n_windows = int(math.ceil(cfg.t_end / cfg.window - 1e-9))
    doc = {
        "data": [
            {"name": data_a, "rank": "scalar", "waveform_degree": cfg.degree},
            {"name": data_b, "rank": "scalar", "waveform_degree": cfg.degree},
        ],
        "meshes": [
            {"name": mesh_a, "dimensions": 1, "use_data": [data_a, data_b]},
            {"name": mesh_b, "dimensions": 1, "use_data": [data_a, data_b]},
        ],
        "participants": [
            {
                "name": name_a,
                "provide_meshes": [mesh_a],
                "receive_meshes": [{"name": mesh_b, "from": name_b}],
                "write_data": [{"name": data_a, "mesh": mesh_a}],
                "read_data": [{"name": data_b, "mesh": mesh_a}],
                "mappings": [
                    {"kind": "nearest-neighbor", "direction": "read",
                     "from": mesh_b, "to": mesh_a, "constraint": "consistent"}
                ],
            },
            {
                "name": name_b,
                "provide_meshes": [mesh_b],
                "receive_meshes": [{"name": mesh_a, "from": name_a}],
                "write_data": [{"name": data_b, "mesh": mesh_b}],
                "read_data": [{"name": data_a, "mesh": mesh_b}],
                "mappings": [
                    {"kind": "nearest-neighbor", "direction": "read",
                     "from": mesh_a, "to": mesh_b, "constraint": "consistent"}
                ],
            },
        ],
        "m2n": {
            "mode": cfg.comm_mode,
            "acceptor": name_a,
            "connector": name_b,
            "address": cfg.tcp_address if cfg.comm_mode == "tcp" else "",
        },
        "coupling_scheme": {
            "kind": cfg.scheme,
            "first": name_b,
            "second": name_a,
            "max_time_windows": n_windows,
            "time_window_size": cfg.window,
            "total_time": cfg.t_end,
            "max_iterations": cfg.max_iterations if "implicit" in cfg.scheme else 1,
            "exchanges": [
                {"data": data_a, "mesh": mesh_a, "from": name_a, "to": name_b,
                 "substeps": cfg.substeps, "initialize": True},
                {"data": data_b, "mesh": mesh_b, "from": name_b, "to": name_a,
                 "substeps": cfg.substeps, "initialize": True},
            ],
        },
    }
    if "implicit" in cfg.scheme:
        doc["coupling_scheme"]["convergence_measures"] = [
            {"data": data_a, "mesh": mesh_a, "relative_limit": cfg.limit},
            {"data": data_b, "mesh": mesh_b, "relative_limit": cfg.limit},
        ]
    if cfg.acceleration != "none":
        doc["coupling_scheme"]["acceleration"] = {
            "variant": cfg.acceleration,
            "omega": cfg.omega,
            "filter_eps": cfg.filter_eps,
            "data": [{"name": data_a, "mesh": mesh_a}],
        }
    return doc


def make_solver(cfg: CaseConfig, side: str):
    cfg = cfg.resolved()
    integrator = cfg.integrator_a if side == "A" else cfg.integrator_b
    if cfg.case == OSCILLATOR:
        return OscillatorSide(side, OscillatorParams(t_end=cfg.t_end),
                              integrator, cfg.rho_inf)
    params = HeatParams(h=cfg.h, t_end=cfg.t_end)
    return HeatSide("dirichlet" if side == "A" else "neumann", params, integrator)


@dataclass
class SideOutcome:
    error: float
    iterations: int
    windows: int
    trajectory: list = field(default_factory=list)

    @property
    def avg_iterations(self) -> float:
        return self.iterations / self.windows if self.windows else 0.0


def run_participant_loop(coupling_doc, cfg: CaseConfig, side: str,
                         channel=None) -> SideOutcome:
    """The standard solver loop of one participant, with window
    checkpointing and committed-step error accounting."""
    cfg = cfg.resolved()
    name, mesh, own_data, peer_data = _SIDES[cfg.case][side]
    solver = make_solver(cfg, side)
    dt_solver = cfg.dt_a if side == "A" else cfg.dt_b
    if cfg.case == HEAT:
        coords = [[1.0]]
    else:
        coords = [[0.0]]

    participant = Participant(name, parse_config(coupling_doc), channel=channel)
    ids = participant.set_mesh_vertices(mesh, coords)
    if participant.requires_initial_data():
        participant.write_data(mesh, own_data, ids, solver.initial_write())
    participant.initialize()

    t = 0.0
    checkpoint = None
    pending: list[tuple[float, float, float]] = []
    outcome = SideOutcome(error=0.0, iterations=0, windows=0)

    def read(rel: float):
        return participant.read_data(mesh, peer_data, ids, rel)

    while participant.is_coupling_ongoing():
        if participant.requires_writing_checkpoint():
            checkpoint = (solver.snapshot(), t)
        dt = min(dt_solver, participant.get_max_time_step_size())
        values = solver.step(t, dt, read)
        participant.write_data(mesh, own_data, ids, values)
        participant.advance(dt)
        t += dt
        pending.append((t, solver.error_now(t), solver.observe()))
        if participant.requires_reading_checkpoint():
            solver.restore(checkpoint[0])
            t = checkpoint[1]
            pending.clear()
            outcome.iterations += 1
        elif participant.is_time_window_complete():
            outcome.iterations += 1
            outcome.windows += 1
            for tt, err, obs in pending:
                outcome.error = max(outcome.error, err)
                outcome.trajectory.append((tt, obs))
            pending.clear()
    participant.finalize()
    return outcome


# -- orchestration -------------------------------------------------------------


@dataclass(frozen=True)
class CaseResult:
    """One CSV row of a case run."""

    time_window_size: float
    dt_a: float
    dt_b: float
    degree: int
    e_a: float
    e_b: float
    avg_iterations: float
    wall_time_s: float

    def csv_row(self) -> str:
        return ",".join(
            [repr(float(self.time_window_size)), repr(float(self.dt_a)),
             repr(float(self.dt_b)), str(int(self.degree)),
             repr(float(self.e_a)), repr(float(self.e_b)),
             repr(float(self.avg_iterations)), repr(float(self.wall_time_s))]
        )


def run_case(cfg: CaseConfig, coupling_doc: dict | None = None) -> CaseResult:
    """Run both participants of a case to t_end and collect one result row.

    In-process mode runs the two participants on two threads; TCP mode
    spawns one subprocess per participant and merges their reports.  A
    ``coupling_doc`` overrides the generated coupling configuration.
    """
    cfg = cfg.resolved()
    start = time.perf_counter()
    if cfg.comm_mode == "inprocess":
        outcomes = _run_inprocess(cfg, coupling_doc)
    elif cfg.comm_mode == "tcp":
        outcomes = _run_tcp(cfg, coupling_doc)
    else:
        raise ConfigurationError(f"unknown comm mode '{cfg.comm_mode}'")
    wall = time.perf_counter() - start
    out_a, out_b = outcomes["A"], outcomes["B"]
    if out_a.windows != out_b.windows or out_a.iterations != out_b.iterations:
        raise CouplingError(
            "participants disagree on the iteration history: "
            f"A {out_a.iterations}/{out_a.windows}, "
            f"B {out_b.iterations}/{out_b.windows}"
        )
    return CaseResult(
        time_window_size=cfg.window,
        dt_a=cfg.dt_a,
        dt_b=cfg.dt_b,
        degree=cfg.degree,
        e_a=out_a.error,
        e_b=out_b.error,
        avg_iterations=out_a.avg_iterations,
        wall_time_s=wall if cfg.record_wall_time else 0.0,
    )


def _run_inprocess(cfg: CaseConfig,
                   coupling_doc: dict | None = None) -> dict[str, SideOutcome]:
    doc = coupling_doc if coupling_doc is not None else build_coupling_document(cfg)
    chan_a, chan_b = comm.InProcessChannel.pair()
    outcomes: dict[str, SideOutcome] = {}
    errors: list[BaseException] = []

    def run(side: str, channel) -> None:
        try:
            outcomes[side] = run_participant_loop(doc, cfg, side, channel=channel)
        except BaseException as exc:  # propagate into the caller thread
            errors.append(exc)
            chan_a.close()
            chan_b.close()

    threads = [
        threading.Thread(target=run, args=("A", chan_a), daemon=True),
        threading.Thread(target=run, args=("B", chan_b), daemon=True),
    ]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    return outcomes


def _free_tcp_port(host: str) -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.bind((host, 0))
        return sock.getsockname()[1]


def _run_tcp(cfg: CaseConfig,
             coupling_doc: dict | None = None) -> dict[str, SideOutcome]:
    host, _, port = cfg.tcp_address.rpartition(":")
    if port in ("", "0"):
        address = f"{host}:{_free_tcp_port(host)}"
        cfg = replace(cfg, tcp_address=address)
        if coupling_doc is not None:
            coupling_doc = dict(coupling_doc)
            coupling_doc["m2n"] = dict(coupling_doc["m2n"], address=address)
    outcomes: dict[str, SideOutcome] = {}
    with tempfile.TemporaryDirectory(prefix="couplib-") as tmp:
        doc_path = None
        if coupling_doc is not None:
            doc_path = Path(tmp) / "coupling.json"
            with open(doc_path, "w", encoding="utf-8") as fh:
                json.dump(coupling_doc, fh)
        procs = {}
        for side in ("A", "B"):
            result_path = Path(tmp) / f"{side}.json"
            argv = [sys.executable, "-m", "couplib"] + _role_argv(cfg, side, result_path)
            if doc_path is not None:
                argv += ["--config", str(doc_path)]
            procs[side] = (subprocess.Popen(argv), result_path)
        for side, (proc, result_path) in procs.items():
            code = proc.wait()
            if code != 0:
                raise CouplingError(f"participant process {side} exited with {code}")
            with open(result_path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
            outcomes[side] = SideOutcome(
                error=raw["error"], iterations=raw["iterations"],
                windows=raw["windows"],
                trajectory=[tuple(row) for row in raw["trajectory"]],
            )
    return outcomes


def _role_argv(cfg: CaseConfig, side: str, result_path) -> list[str]:
    sub = "run-oscillator" if cfg.case == OSCILLATOR else "run-heat"
    argv = [
        sub,
        "--window", repr(cfg.window),
        "--dt-a", repr(cfg.dt_a),
        "--dt-b", repr(cfg.dt_b),
        "--degree", str(cfg.degree),
        "--substeps", "on" if cfg.substeps else "off",
        "--scheme", cfg.scheme,
        "--acceleration", cfg.acceleration,
        "--omega", repr(cfg.omega),
        "--max-iterations", str(cfg.max_iterations),
        "--limit", repr(cfg.resolved().limit),
        "--integrator-a", cfg.resolved().integrator_a,
        "--integrator-b", cfg.resolved().integrator_b,
        "--rho-inf", repr(cfg.rho_inf),
        "--t-end", repr(cfg.t_end),
        "--comm", "tcp",
        "--tcp-address", cfg.tcp_address,
        "--role", side,
        "--result-json", str(result_path),
    ]
    if cfg.case == HEAT:
        argv += ["--h", repr(cfg.h)]
    return argv


def run_role(cfg: CaseConfig, side: str, result_json: str,
             coupling_doc: dict | None = None) -> SideOutcome:
    """Run a single participant (TCP multi-process mode) and dump its
    outcome as JSON for the orchestrating process."""
    doc = coupling_doc if coupling_doc is not None else build_coupling_document(cfg)
    outcome = run_participant_loop(doc, cfg, side)
    payload = {
        "error": outcome.error,
        "iterations": outcome.iterations,
        "windows": outcome.windows,
        "trajectory": [[t, v] for t, v in outcome.trajectory],
    }
    with open(result_json, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    return outcome


# -- sweeps and CSV -------------------------------------------------------------


def fitted_order(window_sizes, errors) -> float:
    """Least-squares slope of log(error) against log(window size)."""
    xs = np.log(np.asarray(window_sizes, dtype=float))
    ys = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(xs, ys, 1)[0])


def sweep(base: CaseConfig, axis: str, values) -> tuple[list[CaseResult], float]:
    """Run the case once per value of the swept axis and fit the observed
    convergence order of e_A against the window size."""
    if len(values) < 3:
        raise ConfigurationError("a sweep needs at least 3 values")
    results = []
    for value in values:
        if axis == "window":
            cfg = replace(base, window=float(value),
                          dt_a=base.dt_a / base.window * float(value),
                          dt_b=base.dt_b / base.window * float(value))
        elif axis == "dt_A":
            cfg = replace(base, dt_a=float(value))
        elif axis == "dt_B":
            cfg = replace(base, dt_b=float(value))
        elif axis == "degree":
            cfg = replace(base, degree=int(value))
        else:
            raise ConfigurationError(f"unknown sweep axis '{axis}'")
        results.append(run_case(cfg))
    order = fitted_order(
        [r.time_window_size for r in results], [max(r.e_a, 1e-300) for r in results]
    )
    return results, order


def write_csv(path, results: list[CaseResult]) -> None:
    lines = [CSV_HEADER] + [r.csv_row() for r in results]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
