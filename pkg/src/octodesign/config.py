"""Run configuration: one JSON file drives every command.

Relative paths inside a configuration file resolve against the file's own
directory; ``null`` selects the bundled data files.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
from referencing import Registry, Resource
from referencing.jsonschema import DRAFT202012

from .dynamics import FaultScenario, MissionProfile, load_mission
from .htune import Tier
from .sizing import DEFAULT_BOUNDS, DESIGN_NAMES, PlantDesign, ReferenceComponents, load_reference

DATA_DIR = Path(__file__).parent / "data"
SCHEMA_DIR = Path(__file__).parent / "schemas"
DEFAULT_CONFIG = DATA_DIR / "config.json"
SEED_MAX = 2 ** 64 - 1


class ConfigError(ValueError):
    pass


def load_schema(name: str) -> dict:
    return json.loads(resources.files("octodesign").joinpath("schemas", name).read_text())


def _registry() -> Registry:
    files = resources.files("octodesign").joinpath("schemas")
    pairs = [(f.name, Resource.from_contents(json.loads(f.read_text()), DRAFT202012))
             for f in files.iterdir() if f.name.endswith(".schema.json")]
    return Registry().with_resources(pairs)


def validate_output(instance, schema_name: str):
    """Validate ``instance`` against a bundled schema (cross-file references allowed)."""
    validator = jsonschema.Draft202012Validator(load_schema(schema_name), registry=_registry())
    validator.validate(instance)


def _resolve(base: Path, value):
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else (base / p)


@dataclass(frozen=True)
class SimulationSettings:
    mission: str = "hover"
    hover_duration: float = 15.0
    dt: float = 1e-3
    fault: str | None = "1:3.0"


@dataclass(frozen=True)
class RunConfig:
    reference_path: Path | None = None
    mission_path: Path | None = None
    design: PlantDesign = field(default_factory=PlantDesign)
    objective: str = "energy"
    seed: int = 0
    ftc: bool = True
    tuning_budget: int = 400
    restarts: int = 8
    rel_tol: float = 1e-3
    sweep_margin: float = 0.01
    nominal: Tier = field(default_factory=Tier)
    degraded: Tier | None = None
    outer_budget: int = 80
    initial_samples: int = 13
    codesign_dt: float = 5e-3
    eta_dod: float = 0.8
    power_margin: float = 1.0
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    faults: tuple = ()
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    output: Path = Path("out")
    source: Path | None = None

    # -- loading -----------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict, base: Path = DATA_DIR) -> "RunConfig":
        try:
            jsonschema.validate(d, load_schema("config.schema.json"))
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid configuration at {where}: {exc.message}") from None
        tun = d.get("tuning", {})
        opt = d.get("design_optimization", {})
        sim = d.get("simulation", {})
        bounds = dict(DEFAULT_BOUNDS)
        bounds.update({k: tuple(v) for k, v in opt.get("bounds", {}).items()})
        cfg = cls(
            reference_path=_resolve(base, d.get("reference")),
            mission_path=_resolve(base, d.get("mission")),
            design=PlantDesign(**{n: float(d.get("design", {}).get(n, 1.0)) for n in DESIGN_NAMES}),
            objective=d.get("objective", "energy"),
            seed=int(d.get("seed", 0)),
            ftc=bool(d.get("ftc", True)),
            tuning_budget=int(tun.get("budget", 400)),
            restarts=int(tun.get("restarts", 8)),
            rel_tol=float(tun.get("rel_tol", 1e-3)),
            sweep_margin=float(tun.get("sweep_margin", 0.01)),
            nominal=Tier.from_dict(tun["nominal"]) if "nominal" in tun else Tier(),
            degraded=Tier.from_dict(tun["degraded"]) if tun.get("degraded") else None,
            outer_budget=int(opt.get("outer_budget", 80)),
            initial_samples=int(opt.get("initial_samples", 13)),
            codesign_dt=float(opt.get("dt", 5e-3)),
            eta_dod=float(opt.get("eta_dod", 0.8)),
            power_margin=float(opt.get("power_margin", 1.0)),
            bounds=bounds,
            faults=tuple(FaultScenario.parse(f) for f in opt.get("faults", [])),
            simulation=SimulationSettings(
                mission=sim.get("mission", "hover"),
                hover_duration=float(sim.get("hover_duration", 15.0)),
                dt=float(sim.get("dt", 1e-3)),
                fault=sim.get("fault", "1:3.0"),
            ),
            output=Path(d.get("output", "out")),
        )
        cfg.check_files()
        return cfg

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        path = Path(path) if path is not None else DEFAULT_CONFIG
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"configuration file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return replace(cls.from_dict(data, base=path.resolve().parent), source=path)

    def check_files(self):
        for label, p in (("reference", self.reference_path), ("mission", self.mission_path)):
            if p is not None and not p.is_file():
                raise ConfigError(f"{label} file not found: {p}")
        if self.simulation.mission != "hover" and not Path(self.simulation.mission).is_file():
            raise ConfigError(f"simulation mission file not found: {self.simulation.mission}")

    def with_overrides(self, *, out=None, seed=None, objective=None, ftc=None,
                       fault=None) -> "RunConfig":
        cfg = self
        if out is not None:
            cfg = replace(cfg, output=Path(out))
        if seed is not None:
            if not 0 <= seed <= SEED_MAX:
                raise ConfigError("seed must be a 64-bit unsigned integer")
            cfg = replace(cfg, seed=int(seed))
        if objective is not None:
            cfg = replace(cfg, objective=objective)
        if ftc is not None:
            cfg = replace(cfg, ftc=ftc)
        if fault is not None:
            FaultScenario.parse(fault)
            cfg = replace(cfg, simulation=replace(cfg.simulation, fault=fault))
        return cfg

    # -- derived objects -----------------------------------------------------
    def reference(self) -> ReferenceComponents:
        try:
            return load_reference(self.reference_path)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid reference file: {exc}") from None

    def mission(self) -> MissionProfile:
        try:
            return load_mission(self.mission_path)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid mission file: {exc}") from None

    def simulation_mission(self) -> MissionProfile:
        sim = self.simulation
        if sim.mission == "hover":
            return MissionProfile.hover(sim.hover_duration)
        try:
            return load_mission(sim.mission)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid simulation mission: {exc}") from None

    def fault(self) -> FaultScenario:
        return FaultScenario.parse(self.simulation.fault) if self.simulation.fault else FaultScenario()

    def tuning_kwargs(self) -> dict:
        return dict(nominal=self.nominal, degraded=self.degraded, restarts=self.restarts,
                    rel_tol=self.rel_tol, sweep_margin=self.sweep_margin)

    def to_dict(self) -> dict:
        """Resolved settings as written next to the outputs."""
        sim = self.simulation
        return {
            "reference": str(self.reference_path) if self.reference_path else None,
            "mission": str(self.mission_path) if self.mission_path else None,
            "design": dict(zip(DESIGN_NAMES, self.design.as_array().tolist())),
            "objective": self.objective,
            "seed": self.seed,
            "ftc": self.ftc,
            "tuning": {
                "budget": self.tuning_budget, "restarts": self.restarts, "rel_tol": self.rel_tol,
                "sweep_margin": self.sweep_margin, "nominal": self.nominal.to_dict(),
                "degraded": self.degraded.to_dict() if self.degraded else None,
            },
            "design_optimization": {
                "outer_budget": self.outer_budget, "initial_samples": self.initial_samples,
                "dt": self.codesign_dt, "eta_dod": self.eta_dod, "power_margin": self.power_margin,
                "bounds": {k: list(v) for k, v in self.bounds.items()},
                "faults": [f"{f.failed_rotor}:{f.fail_time}" for f in self.faults],
            },
            "simulation": {"mission": sim.mission, "hover_duration": sim.hover_duration,
                           "dt": sim.dt, "fault": sim.fault},
            "output": str(self.output),
        }
