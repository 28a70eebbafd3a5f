"""
Run Config - Load, merge and validate clustering run configurations.

A run config is a JSON object. Validation happens in two layers:
1. Structure: JSON Schema (schemas/run_config.schema.json, draft 2020-12)
2. Semantics: parameter domains and cross-field rules

Named presets from registry/parameter_presets_v0_1.yaml can be pulled in
with "preset": "<name>"; keys given explicitly in the config win.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import yaml
from dotenv import load_dotenv
from jsonschema import Draft202012Validator

from dynoclust.core import DMeansConfig, ParameterDomainError, from_reparam
from dynoclust.kernels import KernelSpec

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parent.parent.parent
SCHEMA_DIR = REPO_ROOT / "schemas"
PRESETS_PATH = REPO_ROOT / "registry" / "parameter_presets_v0_1.yaml"
SEED_ENV_VAR = "DYNOCLUST_SEED"

ALGORITHMS = ("dmeans", "kdmeans", "sdmeans")

DEFAULTS = {
    "restarts": 1,
    "max_iters": 100,
    "budget": 32,
    "eigensolver": "eigh",
}


class ConfigValidationError(ValueError):
    """Config failed validation; `errors` lists every violation."""

    def __init__(self, errors: List[str]):
        super().__init__("Invalid run config:\n  - " + "\n  - ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration."""
    algorithm: str
    params: DMeansConfig
    kernel: Optional[KernelSpec] = None
    raw: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        """Resolved config as written to run outputs."""
        out = {
            "algorithm": self.algorithm,
            "lambda": self.params.lambda_,
            "q": self.params.q_penalty,
            "tau": "inf" if math.isinf(self.params.tau) else self.params.tau,
            "restarts": self.params.restarts,
            "max_iters": self.params.max_iters,
            "seed": self.params.seed,
            "budget": self.params.budget,
            "eigensolver": self.params.eigensolver,
        }
        if self.params.t_q is not None:
            out["t_q"] = self.params.t_q
            out["k_tau"] = self.params.k_tau
        if self.kernel is not None:
            out["kernel"] = self.kernel.to_dict()
        return out


def load_schema(name: str) -> Dict:
    with open(SCHEMA_DIR / name) as f:
        return json.load(f)


def load_presets(path: Path = PRESETS_PATH) -> Dict[str, Dict]:
    """
    Read the named parameter presets.

    Raises:
        ConfigValidationError: If the registry is not valid YAML
    """
    try:
        with open(path) as f:
            registry = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigValidationError([f"preset registry {path} is not valid YAML: {e}"])
    return {p["name"]: p["config"] for p in (registry or {}).get("presets", [])}


def resolve_seed(flag_seed: Optional[int], config_seed: Optional[int]) -> int:
    """
    Seed precedence: --seed flag, then DYNOCLUST_SEED, then config, then 0.

    Raises:
        ConfigValidationError: If the environment value is not an integer
    """
    if flag_seed is not None:
        return int(flag_seed)
    env_seed = os.getenv(SEED_ENV_VAR)
    if env_seed not in (None, ""):
        try:
            return int(env_seed)
        except ValueError:
            raise ConfigValidationError([f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}"])
    if config_seed is not None:
        return int(config_seed)
    return 0


def schema_errors(data, schema_name: str = "run_config.schema.json") -> List[str]:
    """Every violation of a schema under schemas/, as 'location: message' strings."""
    validator = Draft202012Validator(load_schema(schema_name))
    errors = []
    for error in sorted(validator.iter_errors(data), key=lambda e: list(e.path)):
        location = "/".join(str(p) for p in error.path) or "<root>"
        errors.append(f"{location}: {error.message}")
    return errors


def _semantic_errors(data: Dict) -> List[str]:
    errors = []
    has_q = "q" in data or "tau" in data
    has_reparam = "t_q" in data or "k_tau" in data
    if has_q and has_reparam:
        errors.append("give either (q, tau) or (t_q, k_tau), not both")
    elif has_q and not ("q" in data and "tau" in data):
        errors.append("q and tau must be given together")
    elif has_reparam and not ("t_q" in data and "k_tau" in data):
        errors.append("t_q and k_tau must be given together")
    elif not has_q and not has_reparam:
        errors.append("missing parameters: give (q, tau) or (t_q, k_tau)")

    if data.get("lambda", 1.0) <= 0:
        errors.append(f"lambda must be > 0, got {data.get('lambda')}")
    if "t_q" in data and data["t_q"] <= 1:
        errors.append(f"t_q must be > 1, got {data['t_q']}")
    if "k_tau" in data and data["k_tau"] < 1:
        errors.append(f"k_tau must be >= 1, got {data['k_tau']}")

    algorithm = data.get("algorithm")
    if algorithm == "dmeans" and "kernel" in data:
        errors.append("dmeans takes no kernel")
    if algorithm in ("kdmeans", "sdmeans") and "kernel" not in data:
        errors.append(f"{algorithm} requires a kernel")
    return errors


def build_run_config(data: Dict, seed: Optional[int] = None) -> RunConfig:
    """
    Validate a config mapping and build the RunConfig.

    Args:
        data: Parsed config object (may reference a preset)
        seed: --seed flag value, if any

    Raises:
        ConfigValidationError: With every structural and semantic violation
    """
    if not isinstance(data, dict):
        raise ConfigValidationError(["config must be a JSON object"])
    data = dict(data)
    preset_name = data.pop("preset", None)
    if preset_name is not None:
        presets = load_presets()
        if preset_name not in presets:
            raise ConfigValidationError([f"unknown preset {preset_name!r}; known: {sorted(presets)}"])
        data = {**presets[preset_name], **data}
        logger.info(f"Using preset {preset_name!r}")

    errors = schema_errors(data)
    if not errors:
        errors = _semantic_errors(data)
    if errors:
        raise ConfigValidationError(errors)

    knobs = {key: data.get(key, default) for key, default in DEFAULTS.items()}
    knobs["seed"] = resolve_seed(seed, data.get("seed"))
    try:
        if "t_q" in data:
            params = from_reparam(data["lambda"], data["t_q"], data["k_tau"], **knobs)
        else:
            tau = math.inf if data["tau"] == "inf" else float(data["tau"])
            params = DMeansConfig(lambda_=data["lambda"], q_penalty=data["q"], tau=tau, **knobs)
        kernel = KernelSpec.from_dict(data["kernel"]) if "kernel" in data else None
    except ParameterDomainError as e:
        raise ConfigValidationError([str(e)])

    return RunConfig(algorithm=data["algorithm"], params=params, kernel=kernel, raw=data)


def load_run_config(source: Union[str, Path, Dict], seed: Optional[int] = None) -> RunConfig:
    """
    Load and validate a run config from a JSON file or a mapping.

    Raises:
        FileNotFoundError: If the config file does not exist
        ConfigValidationError: If the file is not valid JSON or fails validation
    """
    if isinstance(source, dict):
        return build_run_config(source, seed)
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"No such config file: {path}")
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigValidationError([f"{path}: invalid JSON ({e.msg} at line {e.lineno})"])
    return build_run_config(data, seed)
