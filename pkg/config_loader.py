"""
Configuration set loader and RunConfig validation.

Handles loading config/<name>/config.yaml files, unit parsing, the shared CLI
flags of all stage scripts and the precedence

    CLI flags > config file / config set > built-in defaults
"""

import argparse
import math
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from qubit_arrow.state import QubitState, QubitValidationError, SimParams
from qubit_arrow.unraveling import UnravelConfig

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_ACCEPTANCE = 3


class ConfigSetNotFoundError(Exception):
    """Raised when a configuration set cannot be found."""
    pass


class ConfigError(ValueError):
    """Raised for unknown keys, unparseable values or violated invariants."""
    pass


# ---------- units ----------
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S.*?)?\s*$")

TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "μs": 1e-6, "ns": 1e-9}
RATE_UNITS = {"/s": 1.0, "/ms": 1e3, "/us": 1e6, "/µs": 1e6, "/μs": 1e6, "/ns": 1e9,
              "hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
FREQUENCY_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
ANGULAR_UNITS = {"rad/s": 1.0, "rad/ms": 1e3, "rad/us": 1e6, "rad/ns": 1e9}


def _split_quantity(value: Any) -> Tuple[float, str]:
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value), ""
    match = _QUANTITY.match(str(value))
    if not match:
        raise ValueError(f"cannot parse quantity {value!r}")
    return float(match.group(1)), (match.group(2) or "").strip()


def parse_time(value: Any) -> float:
    """'16ns', '0.32 us', '1e-6' (seconds) → seconds."""
    number, unit = _split_quantity(value)
    if not unit:
        return number
    if unit not in TIME_UNITS:
        raise ValueError(f"unknown time unit '{unit}' (use {', '.join(TIME_UNITS)})")
    return number * TIME_UNITS[unit]


def parse_rate(value: Any) -> float:
    """'1.97/us', '1.97 1/us', '2e5' (1/s) → 1/s."""
    number, unit = _split_quantity(value)
    if not unit:
        return number
    key = unit.lower() if unit.lower().endswith("hz") else unit
    if key.startswith("1/"):
        key = key[1:]
    if key not in RATE_UNITS:
        raise ValueError(f"unknown rate unit '{unit}' (use /s, /ms, /us, /ns)")
    return number * RATE_UNITS[key]


def parse_angular_frequency(value: Any) -> float:
    """'2.16MHz' means Ω/2π = 2.16 MHz; 'rad/us' suffixes and bare numbers are angular (rad/s)."""
    number, unit = _split_quantity(value)
    if not unit:
        return number
    if unit.lower() in FREQUENCY_UNITS:
        return 2.0 * math.pi * number * FREQUENCY_UNITS[unit.lower()]
    if unit in ANGULAR_UNITS:
        return number * ANGULAR_UNITS[unit]
    raise ValueError(f"unknown frequency unit '{unit}' (use Hz, kHz, MHz or rad/s)")


# ---------- RunConfig ----------
BASIS_ALIASES = {"z": "compatible_z", "phi": "incompatible_phi"}


class RunConfig(BaseModel):
    """All run parameters in SI units. Defaults are the experimental values."""

    model_config = ConfigDict(extra="forbid")

    dt: float = 16e-9
    tau: float = 1.0 / 1.97e6
    eta: float = Field(0.4, gt=0.0, le=1.0)
    rabi: float = 2.0 * math.pi * 2.16e6
    gamma_z: Optional[float] = Field(None, ge=0.0)
    gamma_phi: Optional[float] = Field(None, ge=0.0)
    durations: List[float] = Field(default_factory=lambda: [0.32e-6], min_length=1)
    seed: int = Field(0, ge=0)

    n_traj: int = Field(280_000, ge=1)
    n_samples: int = Field(1000, ge=1)
    basis: Literal["compatible_z", "incompatible_phi", "mixed"] = "compatible_z"
    scheme: Literal["segmented", "beamsplitter"] = "segmented"
    initial_state: Union[str, Tuple[float, float, float]] = "x+"
    mode: Literal["driven", "qnd"] = "driven"
    output_dir: Optional[str] = None

    bin_width: float = Field(0.25, gt=0.0)
    q_max: float = Field(10.0, gt=0.0)
    min_bin_count: int = Field(10, ge=1)
    ft_window: float = Field(3.0, gt=0.0)

    threads: int = Field(1, ge=1)
    chunk_size: int = Field(4096, ge=1)
    export_limit: int = Field(10, ge=0)
    min_stats_samples: int = Field(100, ge=1)

    @field_validator("dt", "tau", mode="before")
    @classmethod
    def _time(cls, v):
        return parse_time(v)

    @field_validator("gamma_z", "gamma_phi", mode="before")
    @classmethod
    def _rate(cls, v):
        return None if v is None else parse_rate(v)

    @field_validator("rabi", mode="before")
    @classmethod
    def _angular(cls, v):
        return parse_angular_frequency(v)

    @field_validator("durations", mode="before")
    @classmethod
    def _durations(cls, v):
        if not isinstance(v, (list, tuple)):
            v = [v]
        return [parse_time(d) for d in v]

    @field_validator("basis", mode="before")
    @classmethod
    def _basis(cls, v):
        return BASIS_ALIASES.get(v, v)

    @field_validator("dt", "tau")
    @classmethod
    def _positive(cls, v):
        if not (math.isfinite(v) and v > 0):
            raise ValueError("must be a positive time")
        return v

    @field_validator("durations")
    @classmethod
    def _nonnegative(cls, v):
        if any(not math.isfinite(d) or d < 0 for d in v):
            raise ValueError("durations must be >= 0")
        return v

    @field_validator("initial_state")
    @classmethod
    def _physical(cls, v):
        try:
            if isinstance(v, str):
                QubitState.preset(v)
            else:
                QubitState(*v)
        except QubitValidationError as e:
            raise ValueError(str(e))
        return v

    @model_validator(mode="after")
    def _consistency(self):
        if self.dt / self.tau > 0.5:
            raise ValueError(f"dt/tau = {self.dt / self.tau:.3g} exceeds 0.5")
        if self.mode == "qnd":
            self.rabi = 0.0
        return self

    # --- derived objects ---
    def initial(self) -> QubitState:
        if isinstance(self.initial_state, str):
            return QubitState.preset(self.initial_state)
        return QubitState(*self.initial_state)

    @property
    def initial_label(self) -> str:
        if isinstance(self.initial_state, str):
            return self.initial_state
        return "custom"

    @property
    def max_duration(self) -> float:
        return max(self.durations)

    def sim_params(self, duration: Optional[float] = None) -> SimParams:
        """
        Parameters for simulation and unraveling.

        Without explicit gamma_z / gamma_phi the inefficiency (1-η)/(2ητ) is
        put into the channel named by `basis`.
        """
        duration = self.max_duration if duration is None else duration
        if self.gamma_z is None and self.gamma_phi is None and self.basis != "mixed":
            return SimParams.for_efficiency(
                self.dt, self.tau, self.eta, self.basis,
                rabi=self.rabi, duration=duration, seed=self.seed,
            )
        return SimParams(
            dt=self.dt, tau=self.tau, eta=self.eta, rabi=self.rabi,
            gamma_z=self.gamma_z or 0.0, gamma_phi=self.gamma_phi or 0.0,
            duration=duration, seed=self.seed,
        )

    def unravel_config(self) -> UnravelConfig:
        return UnravelConfig(eta=self.eta, basis=self.basis, n_samples=self.n_samples, seed=self.seed,
                             scheme=self.scheme)


def format_validation_error(error: ValidationError) -> str:
    """One '<key>: <message>' line per problem."""
    lines = []
    for item in error.errors():
        key = ".".join(str(p) for p in item.get("loc", ())) or "config"
        message = item.get("msg", "invalid value")
        if item.get("type") == "extra_forbidden":
            message = "unknown key"
        lines.append(f"{key}: {message}")
    return "\n".join(lines)


def build_run_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e)) from None


def dump_config(cfg: RunConfig) -> Dict[str, Any]:
    """Plain YAML/JSON-safe dict; build_run_config(dump_config(cfg)) == cfg."""
    return cfg.model_dump(mode="json")


def dump_config_yaml(cfg: RunConfig) -> str:
    return yaml.safe_dump(dump_config(cfg), sort_keys=True)


# ---------- configuration sets ----------
class ConfigSet:
    """Represents a loaded configuration set."""

    def __init__(self, name: str, config_dir: Path, project_root: Path):
        self.name = name
        self.config_dir = config_dir
        self.project_root = project_root
        self.config_file = config_dir / "config.yaml"
        self.data = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load config.yaml as a flat key/value map."""
        if not self.config_file.exists():
            raise ConfigSetNotFoundError(
                f"Configuration file not found: {self.config_file}"
            )
        return load_yaml_file(self.config_file)

    def _substitute_variables(self, path: str) -> str:
        """Substitute {config_set_name} and {data_dir} in path strings."""
        path = path.replace("{config_set_name}", self.name)
        if "{data_dir}" in path:
            path = path.replace("{data_dir}", f"data/{self.name}")
        return path

    def resolve_path(self, path: str) -> Path:
        """
        Resolve a path from config.yaml.

        - Absolute paths are returned as-is
        - Relative paths are resolved relative to project root
        - Paths can use {config_set_name} and {data_dir} variables
        """
        path_obj = Path(self._substitute_variables(path))
        if path_obj.is_absolute():
            return path_obj
        return (self.project_root / path_obj).resolve()


def load_yaml_file(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"config: invalid YAML in {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config: {path} must be a flat key/value mapping")
    return data


def load_config_set(name: str, project_root: Path = None,
                    config_base_dir: str = "config") -> ConfigSet:
    """
    Load a configuration set by name.

    Args:
        name: Name of the config set (e.g., "driven_fig3")
        project_root: Project root directory (default: current working directory)
        config_base_dir: Base directory containing config sets (default: "config")

    Raises:
        ConfigSetNotFoundError: If config set doesn't exist
    """
    project_root = Path.cwd() if project_root is None else Path(project_root)
    config_dir = project_root / config_base_dir / name

    if not (config_dir / "config.yaml").exists():
        available = list_config_sets(project_root, config_base_dir)
        available_str = "\n  - ".join(available) if available else "  (none)"

        raise ConfigSetNotFoundError(
            f"Configuration set '{name}' not found.\n"
            f"Expected: {config_dir / 'config.yaml'}\n\n"
            f"Available config sets:\n  - {available_str}"
        )

    return ConfigSet(name, config_dir, project_root)


def list_config_sets(project_root: Path = None,
                     config_base_dir: str = "config") -> list[str]:
    """List all available configuration sets."""
    project_root = Path.cwd() if project_root is None else Path(project_root)
    base_dir = project_root / config_base_dir

    if not base_dir.exists():
        return []

    config_sets = []
    for item in base_dir.iterdir():
        if item.is_dir() and (item / "config.yaml").exists():
            config_sets.append(item.name)

    return sorted(config_sets)


# ---------- CLI ----------
def add_run_arguments(parser: argparse.ArgumentParser, with_config_set: bool = True):
    """Flags shared by every stage script. All default to None so config values survive."""
    if with_config_set:
        parser.add_argument("config_set", nargs="?", default=None,
                            help="Name of configuration set in config/ directory (optional)")
    parser.add_argument("--config", help="Path to a flat YAML config file")
    parser.add_argument("--seed", type=int, help="Base RNG seed")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--n-traj", type=int, dest="n_traj", help="Ensemble size")
    parser.add_argument("--n-samples", type=int, dest="n_samples", help="Unraveled trajectories per record")
    parser.add_argument("--mode", choices=["driven", "qnd"], help="driven (Rabi on) or qnd (Ω = 0)")
    parser.add_argument("--eta", type=float, help="Quantum efficiency η in (0, 1]")
    parser.add_argument("--basis", choices=["z", "phi", "compatible_z", "incompatible_phi", "mixed"],
                        help="Unmonitored observer basis")
    parser.add_argument("--scheme", choices=["segmented", "beamsplitter"],
                        help="Unraveling scheme: one channel per step, or all channels every step")
    parser.add_argument("--duration-us", type=float, action="append", dest="duration_us",
                        help="Propagation time in μs (repeatable)")
    parser.add_argument("--initial-state", dest="initial_state", help="z+, z-, x+, x-, y+, y-, mixed")
    parser.add_argument("--dt", help="Time step, e.g. 16ns")
    parser.add_argument("--tau", help="Measurement time τ, e.g. 0.5076us")
    parser.add_argument("--rabi", help="Rabi drive, e.g. 2.16MHz (Ω/2π) or rad/s")
    parser.add_argument("--bin-width", type=float, dest="bin_width", help="Histogram bin width in Q units")
    parser.add_argument("--q-max", type=float, dest="q_max", help="Histogram half range")
    parser.add_argument("--min-bin-count", type=int, dest="min_bin_count", help="Minimum count per FT bin")
    parser.add_argument("--ft-window", type=float, dest="ft_window", help="|Q| window of the FT slope fit")
    parser.add_argument("--threads", type=int, help="Worker threads")
    parser.add_argument("--quiet", action="store_true", help="Disable progress bars")


_FLAG_KEYS = ["seed", "n_traj", "n_samples", "mode", "eta", "basis", "scheme", "initial_state", "dt", "tau",
              "rabi", "bin_width", "q_max", "min_bin_count", "ft_window", "threads"]


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {}
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "duration_us", None):
        overrides["durations"] = [d * 1e-6 for d in args.duration_us]
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    return overrides


def parse_config(args: argparse.Namespace, project_root: Path = None) -> Tuple[RunConfig, Optional[ConfigSet]]:
    """
    Resolve a RunConfig from a config set, an optional --config file and flags.

    The output directory defaults to data/<config_set_name> (data/run without
    a set); {config_set_name} and {data_dir} placeholders are expanded.

    Raises:
        ConfigSetNotFoundError, ConfigError
    """
    project_root = Path.cwd() if project_root is None else Path(project_root)
    config_set = None
    data: Dict[str, Any] = {}
    if getattr(args, "config_set", None):
        config_set = load_config_set(args.config_set, project_root)
        data.update(config_set.data)
    if getattr(args, "config", None):
        data.update(load_yaml_file(Path(args.config)))
    data.update(flag_overrides(args))

    cfg = build_run_config(data)
    output_dir = cfg.output_dir or "{data_dir}"
    if config_set:
        out_path = config_set.resolve_path(output_dir)
    else:
        out_path = Path(output_dir.replace("{config_set_name}", "run").replace("{data_dir}", "data/run"))
        if not out_path.is_absolute():
            out_path = (project_root / out_path).resolve()
    return cfg.model_copy(update={"output_dir": str(out_path)}), config_set
