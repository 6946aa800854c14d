"""Coupling configuration: JSON schema, parsing, and cross-validation.

The configuration is one JSON document with top-level keys ``data``,
``meshes``, ``participants``, ``m2n``, and ``coupling_scheme``.  Every
cross-reference (data to mesh, exchange to participant, mapping to mesh,
...) is resolved and checked here so that later stages can assume a
consistent setup; each violated rule raises a
:class:`~couplib.errors.ConfigurationError` with its own message.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigurationError

SUPPORTED_DEGREES = (0, 1, 2, 3, 5)
SCHEME_KINDS = (
    "serial-explicit",
    "serial-implicit",
    "parallel-explicit",
    "parallel-implicit",
)
MAPPING_KINDS = ("nearest-neighbor", "identity")
CONSTRAINTS = ("consistent", "conservative")
ACCELERATION_VARIANTS = ("constant", "iqn-ils-full", "iqn-ils-reduced")


@dataclass(frozen=True)
class DataSpec:
    name: str
    rank: str                 # "scalar" | "vector"
    waveform_degree: int = 1


@dataclass(frozen=True)
class MeshSpec:
    name: str
    dimensions: int
    use_data: tuple[str, ...]


@dataclass(frozen=True)
class ReceiveMeshSpec:
    name: str
    source: str


@dataclass(frozen=True)
class DataOnMesh:
    name: str
    mesh: str


@dataclass(frozen=True)
class MappingSpec:
    kind: str                 # "nearest-neighbor" | "identity"
    direction: str            # "read" | "write"
    from_mesh: str
    to_mesh: str
    constraint: str = "consistent"

    @property
    def plan_kind(self) -> str:
        if self.kind == "identity":
            return "identity"
        return f"nearest-neighbor-{self.constraint}"


@dataclass(frozen=True)
class ParticipantSpec:
    name: str
    provide_meshes: tuple[str, ...]
    receive_meshes: tuple[ReceiveMeshSpec, ...]
    write_data: tuple[DataOnMesh, ...]
    read_data: tuple[DataOnMesh, ...]
    mappings: tuple[MappingSpec, ...]

    def writes(self, data: str) -> bool:
        return any(d.name == data for d in self.write_data)

    def reads(self, data: str) -> bool:
        return any(d.name == data for d in self.read_data)

    def write_mesh(self, data: str) -> str:
        return next(d.mesh for d in self.write_data if d.name == data)

    def read_mesh(self, data: str) -> str:
        return next(d.mesh for d in self.read_data if d.name == data)

    def known_meshes(self) -> tuple[str, ...]:
        return self.provide_meshes + tuple(r.name for r in self.receive_meshes)


@dataclass(frozen=True)
class M2NSpec:
    mode: str                 # "tcp" | "inprocess"
    acceptor: str
    connector: str
    address: str = ""


@dataclass(frozen=True)
class ExchangeSpec:
    data: str
    mesh: str
    source: str               # sending participant ("from")
    target: str               # receiving participant ("to")
    substeps: bool = True
    initialize: bool = False


@dataclass(frozen=True)
class ConvergenceMeasureSpec:
    data: str
    mesh: str
    relative_limit: float


@dataclass(frozen=True)
class AccelerationSpec:
    variant: str
    omega: float = 0.5
    filter_eps: float = 1e-10
    data: tuple[DataOnMesh, ...] = ()


@dataclass(frozen=True)
class SchemeSpec:
    kind: str
    first: str
    second: str
    max_time_windows: int
    time_window_size: float
    max_iterations: int = 1
    exchanges: tuple[ExchangeSpec, ...] = ()
    convergence_measures: tuple[ConvergenceMeasureSpec, ...] = ()
    acceleration: AccelerationSpec | None = None
    total_time: float | None = None

    @property
    def implicit(self) -> bool:
        return self.kind.endswith("-implicit")

    @property
    def serial(self) -> bool:
        return self.kind.startswith("serial-")

    def window_sizes(self) -> list[float]:
        """Window sizes for the whole run; the final window is shortened
        when the total simulated time is not a multiple of the window size."""
        dt = self.time_window_size
        sizes = [dt] * self.max_time_windows
        if self.total_time is None:
            return sizes
        tol = 1e-12 * dt
        out: list[float] = []
        acc = 0.0
        for size in sizes:
            if acc + size <= self.total_time + tol:
                out.append(size)
                acc += size
            else:
                rest = self.total_time - acc
                if rest > tol:
                    out.append(rest)
                break
        return out


@dataclass(frozen=True)
class CouplingConfig:
    data: tuple[DataSpec, ...]
    meshes: tuple[MeshSpec, ...]
    participants: tuple[ParticipantSpec, ...]
    m2n: M2NSpec
    scheme: SchemeSpec
    _data_by_name: dict = field(repr=False, default_factory=dict)
    _mesh_by_name: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        self._data_by_name.update({d.name: d for d in self.data})
        self._mesh_by_name.update({m.name: m for m in self.meshes})

    def data_spec(self, name: str) -> DataSpec:
        return self._data_by_name[name]

    def mesh_spec(self, name: str) -> MeshSpec:
        return self._mesh_by_name[name]

    def data_id(self, name: str) -> int:
        return next(i for i, d in enumerate(self.data) if d.name == name)

    def data_name(self, data_id: int) -> str:
        return self.data[data_id].name

    def participant(self, name: str) -> ParticipantSpec:
        for p in self.participants:
            if p.name == name:
                return p
        raise ConfigurationError(f"unknown participant '{name}'")

    def peer_of(self, name: str) -> ParticipantSpec:
        self.participant(name)
        return next(p for p in self.participants if p.name != name)

    def components(self, data: str, mesh: str) -> int:
        if self.data_spec(data).rank == "scalar":
            return 1
        return self.mesh_spec(mesh).dimensions

    def exchanges_from(self, name: str) -> list[ExchangeSpec]:
        return [e for e in self.scheme.exchanges if e.source == name]

    def exchanges_to(self, name: str) -> list[ExchangeSpec]:
        return [e for e in self.scheme.exchanges if e.target == name]


# -- parsing -----------------------------------------------------------------


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigurationError(f"{where}: missing required key '{key}'")
    return doc[key]


def _as_bool(value, where: str) -> bool:
    if isinstance(value, bool):
        return value
    if value in ("on", "true", "yes"):
        return True
    if value in ("off", "false", "no"):
        return False
    raise ConfigurationError(f"{where}: expected a boolean, got {value!r}")


def parse_config(document) -> CouplingConfig:
    """Parse and fully validate a configuration document.

    ``document`` may be a dict (already-parsed JSON) or a JSON string.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"configuration is not valid JSON: {exc}")
    if not isinstance(document, dict):
        raise ConfigurationError("configuration must be a JSON object")

    data = tuple(_parse_data(d) for d in _require(document, "data", "configuration"))
    _check_unique([d.name for d in data], "data field")

    meshes = tuple(
        _parse_mesh(m, {d.name for d in data})
        for m in _require(document, "meshes", "configuration")
    )
    _check_unique([m.name for m in meshes], "mesh")

    participants = tuple(
        _parse_participant(p) for p in _require(document, "participants", "configuration")
    )
    _check_unique([p.name for p in participants], "participant")
    if len(participants) != 2:
        raise ConfigurationError(
            f"exactly two participants are supported, got {len(participants)}"
        )

    m2n = _parse_m2n(_require(document, "m2n", "configuration"))
    scheme = _parse_scheme(_require(document, "coupling_scheme", "configuration"))

    cfg = CouplingConfig(data, meshes, participants, m2n, scheme)
    _cross_validate(cfg)
    return cfg


def load_config(path) -> CouplingConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(json.load(fh))


def _parse_data(doc: dict) -> DataSpec:
    name = _require(doc, "name", "data entry")
    rank = doc.get("rank", "scalar")
    if rank not in ("scalar", "vector"):
        raise ConfigurationError(
            f"data '{name}': rank must be 'scalar' or 'vector', got '{rank}'"
        )
    degree = int(doc.get("waveform_degree", 1))
    if degree not in SUPPORTED_DEGREES:
        raise ConfigurationError(
            f"data '{name}': waveform_degree must be one of "
            f"{list(SUPPORTED_DEGREES)}, got {degree}"
        )
    return DataSpec(name, rank, degree)


def _parse_mesh(doc: dict, data_names: set[str]) -> MeshSpec:
    name = _require(doc, "name", "mesh entry")
    dims = int(_require(doc, "dimensions", f"mesh '{name}'"))
    if dims not in (1, 2, 3):
        raise ConfigurationError(f"mesh '{name}': dimensions must be 1, 2, or 3")
    use = tuple(doc.get("use_data", ()))
    for d in use:
        if d not in data_names:
            raise ConfigurationError(f"mesh '{name}' uses undefined data '{d}'")
    return MeshSpec(name, dims, use)


def _parse_participant(doc: dict) -> ParticipantSpec:
    name = _require(doc, "name", "participant entry")
    where = f"participant '{name}'"
    receive = tuple(
        ReceiveMeshSpec(_require(r, "name", where), _require(r, "from", where))
        for r in doc.get("receive_meshes", ())
    )
    mappings = []
    for m in doc.get("mappings", ()):
        kind = _require(m, "kind", where)
        if kind not in MAPPING_KINDS:
            raise ConfigurationError(
                f"{where}: mapping kind must be one of {list(MAPPING_KINDS)}"
            )
        direction = _require(m, "direction", where)
        if direction not in ("read", "write"):
            raise ConfigurationError(
                f"{where}: mapping direction must be 'read' or 'write'"
            )
        constraint = m.get("constraint", "consistent")
        if constraint not in CONSTRAINTS:
            raise ConfigurationError(
                f"{where}: mapping constraint must be one of {list(CONSTRAINTS)}"
            )
        mappings.append(
            MappingSpec(kind, direction, _require(m, "from", where),
                        _require(m, "to", where), constraint)
        )
    return ParticipantSpec(
        name=name,
        provide_meshes=tuple(doc.get("provide_meshes", ())),
        receive_meshes=receive,
        write_data=tuple(
            DataOnMesh(_require(d, "name", where), _require(d, "mesh", where))
            for d in doc.get("write_data", ())
        ),
        read_data=tuple(
            DataOnMesh(_require(d, "name", where), _require(d, "mesh", where))
            for d in doc.get("read_data", ())
        ),
        mappings=tuple(mappings),
    )


def _parse_m2n(doc: dict) -> M2NSpec:
    mode = _require(doc, "mode", "m2n")
    if mode not in ("tcp", "inprocess"):
        raise ConfigurationError(f"m2n: mode must be 'tcp' or 'inprocess', got '{mode}'")
    address = doc.get("address", "")
    if mode == "tcp" and not address:
        raise ConfigurationError("m2n: tcp mode requires an 'address' (HOST:PORT)")
    return M2NSpec(
        mode=mode,
        acceptor=_require(doc, "acceptor", "m2n"),
        connector=_require(doc, "connector", "m2n"),
        address=address,
    )


def _parse_scheme(doc: dict) -> SchemeSpec:
    kind = _require(doc, "kind", "coupling_scheme")
    if kind not in SCHEME_KINDS:
        raise ConfigurationError(
            f"coupling_scheme: kind must be one of {list(SCHEME_KINDS)}, got '{kind}'"
        )
    where = f"coupling_scheme ({kind})"
    exchanges = tuple(
        ExchangeSpec(
            data=_require(e, "data", where),
            mesh=_require(e, "mesh", where),
            source=_require(e, "from", where),
            target=_require(e, "to", where),
            substeps=_as_bool(e.get("substeps", True), where),
            initialize=_as_bool(e.get("initialize", False), where),
        )
        for e in doc.get("exchanges", ())
    )
    measures = tuple(
        ConvergenceMeasureSpec(
            data=_require(m, "data", where),
            mesh=_require(m, "mesh", where),
            relative_limit=float(_require(m, "relative_limit", where)),
        )
        for m in doc.get("convergence_measures", ())
    )
    for m in measures:
        if m.relative_limit <= 0:
            raise ConfigurationError(
                f"{where}: convergence limit must be > 0, got {m.relative_limit}"
            )
    accel_doc = doc.get("acceleration")
    acceleration = None
    if accel_doc is not None:
        variant = _require(accel_doc, "variant", "acceleration")
        if variant not in ACCELERATION_VARIANTS:
            raise ConfigurationError(
                f"acceleration: variant must be one of "
                f"{list(ACCELERATION_VARIANTS)}, got '{variant}'"
            )
        omega = float(accel_doc.get("omega", 0.5))
        if not 0.0 < omega <= 1.0:
            raise ConfigurationError(
                f"acceleration: omega must be in (0, 1], got {omega}"
            )
        filter_eps = float(accel_doc.get("filter_eps", 1e-10))
        if filter_eps <= 0:
            raise ConfigurationError("acceleration: filter_eps must be > 0")
        acceleration = AccelerationSpec(
            variant=variant,
            omega=omega,
            filter_eps=filter_eps,
            data=tuple(
                DataOnMesh(_require(d, "name", "acceleration"),
                           _require(d, "mesh", "acceleration"))
                for d in accel_doc.get("data", ())
            ),
        )
        if not acceleration.data:
            raise ConfigurationError("acceleration: at least one data field required")

    windows = int(_require(doc, "max_time_windows", where))
    if windows < 1:
        raise ConfigurationError(f"{where}: max_time_windows must be >= 1")
    window_size = float(_require(doc, "time_window_size", where))
    if window_size <= 0:
        raise ConfigurationError(f"{where}: time_window_size must be > 0")
    max_iterations = int(doc.get("max_iterations", 1))
    total_time = doc.get("total_time")

    scheme = SchemeSpec(
        kind=kind,
        first=_require(doc, "first", where),
        second=_require(doc, "second", where),
        max_time_windows=windows,
        time_window_size=window_size,
        max_iterations=max_iterations,
        exchanges=exchanges,
        convergence_measures=measures,
        acceleration=acceleration,
        total_time=None if total_time is None else float(total_time),
    )
    if scheme.implicit:
        if scheme.max_iterations < 1:
            raise ConfigurationError(
                f"{where}: implicit coupling requires max_iterations >= 1"
            )
        if not scheme.convergence_measures:
            raise ConfigurationError(
                f"{where}: implicit coupling requires at least one "
                "convergence measure"
            )
    if scheme.total_time is not None and scheme.total_time <= 0:
        raise ConfigurationError(f"{where}: total_time must be > 0")
    return scheme


def _check_unique(names: list[str], what: str) -> None:
    seen = set()
    for n in names:
        if n in seen:
            raise ConfigurationError(f"duplicate {what} name '{n}'")
        seen.add(n)


def _cross_validate(cfg: CouplingConfig) -> None:
    part_names = {p.name for p in cfg.participants}
    scheme = cfg.scheme

    providers: dict[str, str] = {}
    for p in cfg.participants:
        for mesh in p.provide_meshes:
            if mesh not in cfg._mesh_by_name:
                raise ConfigurationError(
                    f"participant '{p.name}' provides undefined mesh '{mesh}'"
                )
            if mesh in providers:
                raise ConfigurationError(
                    f"mesh '{mesh}' is provided by both '{providers[mesh]}' "
                    f"and '{p.name}'"
                )
            providers[mesh] = p.name

    for p in cfg.participants:
        for r in p.receive_meshes:
            if r.name not in cfg._mesh_by_name:
                raise ConfigurationError(
                    f"participant '{p.name}' receives undefined mesh '{r.name}'"
                )
            if providers.get(r.name) != r.source:
                raise ConfigurationError(
                    f"participant '{p.name}' receives mesh '{r.name}' from "
                    f"'{r.source}', which does not provide it"
                )
            if r.source == p.name:
                raise ConfigurationError(
                    f"participant '{p.name}' cannot receive its own mesh"
                )
        known = set(p.known_meshes())
        for entry, verb in ((p.write_data, "write"), (p.read_data, "read")):
            for d in entry:
                if d.name not in cfg._data_by_name:
                    raise ConfigurationError(
                        f"participant '{p.name}' {verb}s undefined data '{d.name}'"
                    )
                if d.mesh not in known:
                    raise ConfigurationError(
                        f"participant '{p.name}' {verb}s '{d.name}' on mesh "
                        f"'{d.mesh}' which it neither provides nor receives"
                    )
                if d.name not in cfg.mesh_spec(d.mesh).use_data:
                    raise ConfigurationError(
                        f"mesh '{d.mesh}' does not use data '{d.name}'"
                    )
        for d in p.write_data:
            if p.reads(d.name):
                raise ConfigurationError(
                    f"participant '{p.name}' both reads and writes '{d.name}'"
                )
        for m in p.mappings:
            for mesh in (m.from_mesh, m.to_mesh):
                if mesh not in known:
                    raise ConfigurationError(
                        f"participant '{p.name}' maps over unknown mesh '{mesh}'"
                    )

    for who, role in ((cfg.m2n.acceptor, "acceptor"), (cfg.m2n.connector, "connector")):
        if who not in part_names:
            raise ConfigurationError(f"m2n {role} '{who}' is not a participant")
    if cfg.m2n.acceptor == cfg.m2n.connector:
        raise ConfigurationError("m2n acceptor and connector must differ")

    for who, role in ((scheme.first, "first"), (scheme.second, "second")):
        if who not in part_names:
            raise ConfigurationError(
                f"coupling_scheme {role} participant '{who}' is not defined"
            )
    if scheme.first == scheme.second:
        raise ConfigurationError("coupling_scheme first and second must differ")

    exchanged = set()
    for e in scheme.exchanges:
        if e.data not in cfg._data_by_name:
            raise ConfigurationError(f"exchange references undefined data '{e.data}'")
        if e.mesh not in cfg._mesh_by_name:
            raise ConfigurationError(f"exchange references undefined mesh '{e.mesh}'")
        if e.data not in cfg.mesh_spec(e.mesh).use_data:
            raise ConfigurationError(
                f"exchange: mesh '{e.mesh}' does not use data '{e.data}'"
            )
        for who in (e.source, e.target):
            if who not in part_names:
                raise ConfigurationError(
                    f"exchange of '{e.data}' references unknown participant '{who}'"
                )
        if e.source == e.target:
            raise ConfigurationError(
                f"exchange of '{e.data}' has identical source and target"
            )
        writer = cfg.participant(e.source)
        reader = cfg.participant(e.target)
        if not writer.writes(e.data):
            raise ConfigurationError(
                f"exchange: participant '{e.source}' does not write '{e.data}'"
            )
        if not reader.reads(e.data):
            raise ConfigurationError(
                f"exchange: participant '{e.target}' does not read '{e.data}'"
            )
        if (e.data, e.target) in exchanged:
            raise ConfigurationError(f"duplicate exchange of '{e.data}' to '{e.target}'")
        exchanged.add((e.data, e.target))
        _validate_route(cfg, e)

    exchanged_data = {e.data for e in scheme.exchanges}
    for m in scheme.convergence_measures:
        if m.data not in exchanged_data:
            raise ConfigurationError(
                f"convergence measure on '{m.data}' which is not exchanged"
            )
    if scheme.acceleration is not None:
        if not scheme.implicit:
            raise ConfigurationError("acceleration requires an implicit scheme")
        for d in scheme.acceleration.data:
            if d.name not in exchanged_data:
                raise ConfigurationError(
                    f"acceleration on '{d.name}' which is not exchanged"
                )
            if not cfg.participant(scheme.second).writes(d.name) and not (
                cfg.participant(scheme.second).reads(d.name)
            ):
                raise ConfigurationError(
                    f"acceleration on '{d.name}' which the second participant "
                    f"'{scheme.second}' neither writes nor reads"
                )


def _validate_route(cfg: CouplingConfig, e: ExchangeSpec) -> None:
    """The writer must reach the exchange mesh and the reader must reach
    its read mesh, either directly or through a configured mapping."""
    writer = cfg.participant(e.source)
    reader = cfg.participant(e.target)
    w_mesh = writer.write_mesh(e.data)
    if w_mesh != e.mesh:
        if not any(
            m.direction == "write" and m.from_mesh == w_mesh and m.to_mesh == e.mesh
            for m in writer.mappings
        ):
            raise ConfigurationError(
                f"participant '{e.source}' writes '{e.data}' on '{w_mesh}' but "
                f"exchanges it on '{e.mesh}' without a write mapping"
            )
    r_mesh = reader.read_mesh(e.data)
    if r_mesh != e.mesh:
        if not any(
            m.direction == "read" and m.from_mesh == e.mesh and m.to_mesh == r_mesh
            for m in reader.mappings
        ):
            raise ConfigurationError(
                f"participant '{e.target}' reads '{e.data}' on '{r_mesh}' but "
                f"receives it on '{e.mesh}' without a read mapping"
            )
