"""
Configuration module for the weighted cscK lab
TOML run configs validated into a RunConfig, plus the builders that turn a
config into sample plans and weight pairs
"""
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

try:
    from wcsk.weights import WeightPair, is_log_concave, parse_weight, soliton_weight
    from wcsk.chart import CHART_BUILDERS
    from wcsk.identity_suite import SamplePlan, default_roster, normalized_box
    from wcsk.sphere_solver import INTERVAL, get_sphere_pair
    from wcsk.utils import (
        CONVERGENCE_FACTOR, CONVERGENCE_FLOOR, DEFAULT_AMPLITUDES, IDENTITY_CHECKS, INEQUALITY_CHECKS, MAX_TRIES,
        POSITIVITY_MARGIN, SPHERE_ROSTER,
    )
except ImportError:
    # For direct execution
    import sys
    sys.path.insert(0, str(Path(__file__).parent.parent))
    from wcsk.weights import WeightPair, is_log_concave, parse_weight, soliton_weight
    from wcsk.chart import CHART_BUILDERS
    from wcsk.identity_suite import SamplePlan, default_roster, normalized_box
    from wcsk.sphere_solver import INTERVAL, get_sphere_pair
    from wcsk.utils import (
        CONVERGENCE_FACTOR, CONVERGENCE_FLOOR, DEFAULT_AMPLITUDES, IDENTITY_CHECKS, INEQUALITY_CHECKS, MAX_TRIES,
        POSITIVITY_MARGIN, SPHERE_ROSTER,
    )

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Unreadable or invalid run config"""


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RunSection(Section):
    command: Literal["verify", "solve", "audit"]
    seed: Optional[int] = None
    output_dir: str = "results"
    threads: int = Field(1, ge=1)


class ChartSection(Section):
    families: List[str] = ["sphere"]

    @field_validator("families")
    @classmethod
    def known_families(cls, families: List[str]) -> List[str]:
        unknown = [f for f in families if f not in CHART_BUILDERS]
        if unknown:
            raise ValueError(f"unknown chart families: {unknown}")
        if not families:
            raise ValueError("at least one chart family is required")
        return families


class WeightEntry(Section):
    name: str
    v: str
    w: str
    rank: int = Field(1, ge=1)
    log_concave: Optional[bool] = None

    @field_validator("v", "w")
    @classmethod
    def parses(cls, text: str) -> str:
        if text != "soliton":
            parse_weight(text)
        return text


class PlanSection(Section):
    potentials: int = Field(4, ge=1)
    points: int = Field(50, ge=1)
    amplitudes: List[float] = list(DEFAULT_AMPLITUDES)
    delta: float = Field(POSITIVITY_MARGIN, gt=0)
    max_tries: int = Field(MAX_TRIES, ge=1)
    degree: int = Field(2, ge=1)
    K: float = Field(1.0, gt=0)
    identities: Optional[List[str]] = None
    audits: Optional[List[str]] = None

    @field_validator("amplitudes")
    @classmethod
    def nonnegative(cls, amplitudes: List[float]) -> List[float]:
        if not amplitudes or any(a < 0 for a in amplitudes):
            raise ValueError("amplitudes must be a nonempty list of nonnegative numbers")
        return amplitudes

    @field_validator("identities")
    @classmethod
    def known_identities(cls, names: Optional[List[str]]) -> Optional[List[str]]:
        if names is not None and any(n not in IDENTITY_CHECKS for n in names):
            raise ValueError(f"unknown identity checks: {[n for n in names if n not in IDENTITY_CHECKS]}")
        return names

    @field_validator("audits")
    @classmethod
    def known_audits(cls, names: Optional[List[str]]) -> Optional[List[str]]:
        if names is not None and any(n not in INEQUALITY_CHECKS for n in names):
            raise ValueError(f"unknown inequality audits: {[n for n in names if n not in INEQUALITY_CHECKS]}")
        return names


class SolverSection(Section):
    N: int = Field(129, ge=9)
    tolerance: float = Field(1e-9, gt=0)
    stall_tolerance: float = Field(1e-7, gt=0)
    oracle_tolerance: float = Field(1e-6, gt=0)
    residual_tolerance: float = Field(1e-6, gt=0)
    max_iterations: int = Field(50, ge=1)
    damping: float = Field(0.5, gt=0, lt=1)
    max_backtracks: int = Field(30, ge=0)
    roster: Optional[List[str]] = None

    @field_validator("roster")
    @classmethod
    def known_members(cls, names: Optional[List[str]]) -> Optional[List[str]]:
        if names is not None and any(n not in SPHERE_ROSTER for n in names):
            raise ValueError(f"unknown sphere roster members: {[n for n in names if n not in SPHERE_ROSTER]}")
        return names

    @model_validator(mode="after")
    def stall_above_tolerance(self) -> "SolverSection":
        if self.stall_tolerance < self.tolerance:
            raise ValueError("stall_tolerance must be at least tolerance")
        return self

    def newton_kwargs(self) -> dict:
        return {
            "count": self.N,
            "tolerance": self.tolerance,
            "stall_tolerance": self.stall_tolerance,
            "max_iterations": self.max_iterations,
            "damping": self.damping,
            "max_backtracks": self.max_backtracks,
        }


class AuditSection(Section):
    epsilon: float = Field(0.5, gt=0)
    A: Optional[float] = Field(None, gt=0)
    entropy_members: int = Field(20, ge=2)
    p_values: List[int] = [1, 2, 4, 8]
    grid_counts: List[int] = Field([17, 33, 65], min_length=2)
    convergence_factor: float = Field(CONVERGENCE_FACTOR, gt=1)
    convergence_floor: float = Field(CONVERGENCE_FLOOR, gt=0)
    dh_tolerance: float = Field(1e-6, gt=0)


class RunConfig(Section):
    run: RunSection
    chart: ChartSection = ChartSection()
    weights: List[WeightEntry] = []
    plan: PlanSection = PlanSection()
    solver: SolverSection = SolverSection()
    audit: AuditSection = AuditSection()

    @model_validator(mode="after")
    def seed_for_verify(self) -> "RunConfig":
        if self.run.command == "verify" and self.run.seed is None:
            raise ValueError("[run] seed is mandatory for verify")
        return self

    @property
    def seed(self) -> int:
        return 42 if self.run.seed is None else self.run.seed

    def weight_pairs(self) -> Tuple[WeightPair, ...]:
        """
        Certified identity roster on [-1, 1]^rank.

        Raises:
            InvalidWeightError: v is not positive on its box
        """
        if not self.weights:
            return default_roster()
        pairs = []
        for entry in self.weights:
            v = parse_weight(entry.v)
            w = soliton_weight(v, 1, entry.rank) if entry.w == "soliton" else parse_weight(entry.w)
            pair = WeightPair(v, w, normalized_box(entry.rank), name=entry.name).certify()
            if entry.log_concave is not None and is_log_concave(v, pair.polytope).log_concave != entry.log_concave:
                logger.warning("'%s' declared log_concave = %s, the grid disagrees", entry.name, entry.log_concave)
            pairs.append(pair)
        return tuple(pairs)

    def sphere_pairs(self) -> Tuple[WeightPair, ...]:
        """Sphere roster with base w₀, certified on [-1, 1]"""
        if self.weights:
            pairs = []
            for entry in self.weights:
                if entry.rank != 1:
                    raise ConfigError(f"sphere weights must have rank 1, '{entry.name}' has rank {entry.rank}")
                v = parse_weight(entry.v)
                w = soliton_weight(v, 1, 1) if entry.w == "soliton" else parse_weight(entry.w)
                pairs.append(WeightPair(v, w, INTERVAL, name=entry.name))
        else:
            names = self.solver.roster or list(SPHERE_ROSTER)
            pairs = [get_sphere_pair(name) for name in names]
        return tuple(p.certify() for p in pairs)

    def sample_plans(self, roster: Tuple[WeightPair, ...]) -> List[SamplePlan]:
        return [
            SamplePlan(
                chart=family,
                potentials=self.plan.potentials,
                points=self.plan.points,
                amplitudes=tuple(self.plan.amplitudes),
                seed=self.seed,
                roster=roster,
                delta=self.plan.delta,
                max_tries=self.plan.max_tries,
                degree=self.plan.degree,
                K=self.plan.K,
            )
            for family in self.chart.families
        ]


def load_config(path: Path) -> RunConfig:
    """
    Read and validate a TOML run config.

    Args:
        path: Config file

    Returns:
        RunConfig

    Raises:
        ConfigError: Missing file, TOML syntax or validation failure
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config not found: {path}")
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
        config = RunConfig.model_validate(raw)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e
    logger.info("Loaded %s config from %s", config.run.command, path)
    return config
