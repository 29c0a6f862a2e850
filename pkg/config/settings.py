"""
Settings for every trustplane command

Values come from (lowest to highest precedence):

    1. the defaults below
    2. a flat KEY=VALUE file passed with --config (dotenv syntax)
    3. the process environment (a local .env is loaded first, like before)
    4. command-line flags

Everything is validated by pydantic; any problem surfaces as ConfigError so
the CLI can exit with the configuration-error code instead of a traceback.
"""

import os
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from src.measurement_log import DEFAULT_MEASUREMENT_PCR, PCR_COUNT
from src.wire import Endpoint

TAMPER_CHOICES = (
    "none", "measurement", "quote-sig", "nonce-replay", "csr", "pcr-mismatch", "missing-required",
)
CIPHER_POLICIES = ("default", "hardened")
DEFAULT_SIZES = "64:1408:64"


class ConfigError(Exception):
    """Configuration file, environment or flags are invalid."""


def parse_sizes(value) -> Tuple[int, ...]:
    """
    "A:B:STEP" (inclusive) or a comma list, e.g. "64:1408:64" or "64,128".
    """
    if isinstance(value, (list, tuple)):
        sizes = tuple(int(v) for v in value)
    else:
        text = str(value).strip()
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError(f"sizes {text!r} must look like A:B:STEP")
            start, stop, step = (int(p) for p in parts)
            if step <= 0 or stop < start:
                raise ValueError(f"empty size sweep {text!r}")
            sizes = tuple(range(start, stop + 1, step))
        else:
            sizes = tuple(int(p) for p in text.split(",") if p.strip())
    if not sizes:
        raise ValueError("size sweep is empty")
    return sizes


def _int_list(value) -> Tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(p) for p in str(value).split(",") if p.strip())


def _check_endpoint(value: str) -> str:
    Endpoint.parse(value)
    return value


class CaSettings(BaseModel):
    endpoint: str = "127.0.0.1:7700"
    admin_endpoint: str = "127.0.0.1:7701"
    root_key_seed: Optional[str] = None
    nonce_ttl_seconds: float = Field(default=60.0, gt=0)
    cert_validity_hours: float = Field(default=24.0, gt=0)
    known_good: Optional[Path] = None

    _endpoint = field_validator("endpoint", "admin_endpoint")(_check_endpoint)


class AgentSettings(BaseModel):
    endpoint: str = "127.0.0.1:7710"
    pcr_selection: Tuple[int, ...] = (DEFAULT_MEASUREMENT_PCR,)
    measurement_pcr: int = Field(default=DEFAULT_MEASUREMENT_PCR, ge=0, lt=PCR_COUNT)

    @field_validator("endpoint")
    @classmethod
    def local_only(cls, value: str) -> str:
        if not Endpoint.parse(value).is_local_only():
            raise ValueError(f"agent endpoint {value} must be loopback or unix:")
        return value

    @field_validator("pcr_selection", mode="before")
    @classmethod
    def split_selection(cls, value):
        selection = _int_list(value)
        if not selection:
            raise ValueError("PCR selection is empty")
        for index in selection:
            if not 0 <= index < PCR_COUNT:
                raise ValueError(f"PCR index {index} out of range")
        return selection

    @model_validator(mode="after")
    def measurement_pcr_selected(self):
        if self.measurement_pcr not in self.pcr_selection:
            raise ValueError(f"measurement PCR {self.measurement_pcr} is not in the PCR selection")
        return self


class BenchSettings(BaseModel):
    sizes: Tuple[int, ...] = parse_sizes(DEFAULT_SIZES)
    rate: float = Field(default=500.0, gt=0)
    count: int = Field(default=1000, gt=0)
    cutoff_ms: float = Field(default=2.5, gt=0)
    keygen_runs: int = Field(default=100, gt=0)
    trace_ecalls: bool = False
    cpu_rates: Tuple[float, ...] = (500.0, 1000.0, 2000.0)
    report_dir: Path = Path("reports")

    @field_validator("sizes", mode="before")
    @classmethod
    def split_sizes(cls, value):
        return parse_sizes(value)

    @field_validator("cpu_rates", mode="before")
    @classmethod
    def split_rates(cls, value):
        if isinstance(value, (list, tuple)):
            return tuple(float(v) for v in value)
        return tuple(float(p) for p in str(value).split(",") if p.strip())


class ScenarioConfig(BaseModel):
    ca: CaSettings = CaSettings()
    agent: AgentSettings = AgentSettings()
    bench: BenchSettings = BenchSettings()
    tamper: str = "none"
    cipher_policy: str = "default"
    log_level: str = "INFO"
    log_file: Optional[str] = None
    seed: Optional[str] = None

    @field_validator("tamper")
    @classmethod
    def known_tamper(cls, value: str) -> str:
        if value not in TAMPER_CHOICES:
            raise ValueError(f"tamper must be one of {', '.join(TAMPER_CHOICES)}")
        return value

    @field_validator("cipher_policy")
    @classmethod
    def known_policy(cls, value: str) -> str:
        if value not in CIPHER_POLICIES:
            raise ValueError(f"cipher policy must be one of {', '.join(CIPHER_POLICIES)}")
        return value

    @field_validator("log_level")
    @classmethod
    def upper_level(cls, value: str) -> str:
        return value.upper()

    @model_validator(mode="after")
    def files_exist(self):
        if self.ca.known_good is not None and not self.ca.known_good.is_file():
            raise ValueError(f"known-good allowlist {self.ca.known_good} does not exist")
        return self


# flat key -> (section or None, field)
KEYS: Dict[str, Tuple[Optional[str], str]] = {
    "CA_ENDPOINT": ("ca", "endpoint"),
    "CA_ADMIN_ENDPOINT": ("ca", "admin_endpoint"),
    "CA_ROOT_KEY_SEED": ("ca", "root_key_seed"),
    "CA_NONCE_TTL_SECONDS": ("ca", "nonce_ttl_seconds"),
    "CA_CERT_VALIDITY_HOURS": ("ca", "cert_validity_hours"),
    "KNOWN_GOOD": ("ca", "known_good"),
    "AGENT_ENDPOINT": ("agent", "endpoint"),
    "AGENT_PCR_SELECTION": ("agent", "pcr_selection"),
    "MEASUREMENT_PCR": ("agent", "measurement_pcr"),
    "BENCH_SIZES": ("bench", "sizes"),
    "BENCH_RATE": ("bench", "rate"),
    "BENCH_COUNT": ("bench", "count"),
    "BENCH_CUTOFF_MS": ("bench", "cutoff_ms"),
    "BENCH_KEYGEN_RUNS": ("bench", "keygen_runs"),
    "BENCH_TRACE_ECALLS": ("bench", "trace_ecalls"),
    "BENCH_CPU_RATES": ("bench", "cpu_rates"),
    "REPORT_DIR": ("bench", "report_dir"),
    "TAMPER": (None, "tamper"),
    "CIPHER_POLICY": (None, "cipher_policy"),
    "LOG_LEVEL": (None, "log_level"),
    "LOG_FILE": (None, "log_file"),
    "TRUSTPLANE_SEED": (None, "seed"),
}


def _nest(flat: Mapping[str, object]) -> dict:
    nested: dict = {"ca": {}, "agent": {}, "bench": {}}
    for key, value in flat.items():
        section, name = KEYS[key]
        if section is None:
            nested[name] = value
        else:
            nested[section][name] = value
    return nested


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, object]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> ScenarioConfig:
    """
    Merge file, environment and flag values into a validated ScenarioConfig.

    Args:
        path: Optional KEY=VALUE file
        overrides: Flag values keyed like the file (None values are ignored)
        environ: Environment to read (defaults to os.environ after load_dotenv)

    Raises:
        ConfigError: unknown keys in the file, missing files, invalid values
    """
    flat: Dict[str, object] = {}

    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} not found")
        file_values = dotenv_values(path)
        unknown = sorted(set(file_values) - set(KEYS))
        if unknown:
            raise ConfigError(f"unknown keys in {path}: {', '.join(unknown)}")
        flat.update({k: v for k, v in file_values.items() if v not in (None, "")})

    if environ is None:
        load_dotenv()
        environ = os.environ
    flat.update({k: environ[k] for k in KEYS if environ.get(k)})

    if overrides:
        unknown = sorted(set(overrides) - set(KEYS))
        if unknown:
            raise ConfigError(f"unknown override keys: {', '.join(unknown)}")
        flat.update({k: v for k, v in overrides.items() if v is not None})

    try:
        return ScenarioConfig.model_validate(_nest(flat))
    except ValidationError as e:
        raise ConfigError(str(e)) from e
