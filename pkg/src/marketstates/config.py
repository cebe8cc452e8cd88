"""Run configuration: a YAML tree with dotted-name overrides."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .ingest import PriceSchema
from .matrix_core import KINDS

OUTPUT_ENV = "MARKETSTATES_OUTPUT_DIR"

DEFAULTS = {
    "paths": {"prices": None, "sectors": None, "events": None, "output": "out"},
    "schema": {"ticker": "ticker", "date": "date", "close": "adj_close", "delimiter": ","},
    "epoch_length": 42,
    "kinds": list(KINDS),
    "k": {"standard": 4, "reduced_cov": 4, "reduced_corr": 5, "demeaned": 5},
    "k_max": 10,
    "restarts": 100,
    "seed": None,
    "use_pca": True,
    "sliding": True,
    "robustness": {
        "enabled": False,
        "kinds": ["standard", "reduced_cov", "reduced_corr"],
        "sizes": [50, 100, 150, 200, 250],
        "n_rep": 50,
        "restarts": 20,
    },
}


@dataclass
class RunConfig:
    prices: Path | None
    sectors: Path | None
    events: Path | None
    output: Path
    schema: PriceSchema
    epoch_length: int
    kinds: list[str]
    k: dict[str, int]
    k_max: int
    restarts: int
    seed: int
    use_pca: bool = True
    sliding: bool = True
    robustness: dict = field(default_factory=dict)
    tree: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.tree, sort_keys=True, default=str).encode()).hexdigest()

    def check_epochs(self, n_ep: int) -> None:
        if self.k_max > n_ep:
            raise ConfigError(f"k_max={self.k_max} exceeds the {n_ep} available epochs")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (extra or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def apply_override(tree: dict, dotted: str, raw: str) -> None:
    """Set ``tree[a][b][c] = value`` for ``dotted='a.b.c'``; value is parsed as YAML."""
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    try:
        node[keys[-1]] = yaml.safe_load(raw) if isinstance(raw, str) else raw
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {dotted}: {exc}") from None


def load_tree(path=None, overrides=()) -> tuple[dict, Path]:
    base_dir = Path.cwd()
    user = {}
    if path is not None:
        path = Path(path)
        try:
            user = yaml.safe_load(path.read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"config {path} must be a mapping")
        base_dir = path.resolve().parent
    tree = _merge(DEFAULTS, user)
    for dotted, raw in overrides:
        apply_override(tree, dotted, raw)
    if os.environ.get(OUTPUT_ENV):
        tree["paths"]["output"] = os.environ[OUTPUT_ENV]
    return tree, base_dir


def _int(tree, key, lo=None):
    value = tree.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{key} must be >= {lo}, got {value}")
    return value


def build(tree: dict, base_dir: Path) -> RunConfig:
    def resolve(p):
        if p in (None, ""):
            return None
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    if tree.get("seed") is None:
        raise ConfigError("seed is mandatory")
    seed = _int(tree, "seed", 0)
    T = _int(tree, "epoch_length", 3)
    k_max = _int(tree, "k_max", 1)
    restarts = _int(tree, "restarts", 1)
    kinds = list(tree.get("kinds") or [])
    bad = [k for k in kinds if k not in KINDS]
    if bad or not kinds:
        raise ConfigError(f"kinds must be a non-empty subset of {KINDS}, got {kinds}")
    ks = {}
    for kind in kinds:
        value = (tree.get("k") or {}).get(kind)
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigError(f"k.{kind} must be a positive integer, got {value!r}")
        if value > k_max:
            raise ConfigError(f"k.{kind}={value} exceeds k_max={k_max}")
        ks[kind] = value
    rob = dict(tree.get("robustness") or {})
    if rob.get("enabled"):
        if not rob.get("sizes") or any(not isinstance(s, int) or s < 2 for s in rob["sizes"]):
            raise ConfigError("robustness.sizes must be integers >= 2")
        _int(rob, "n_rep", 1)
        _int(rob, "restarts", 1)
        bad = [k for k in rob.get("kinds", []) if k not in kinds]
        if bad:
            raise ConfigError(f"robustness.kinds {bad} are not among the configured kinds")
    paths = tree.get("paths") or {}
    try:
        schema = PriceSchema(**{k: str(v) for k, v in (tree.get("schema") or {}).items()})
    except TypeError as exc:
        raise ConfigError(f"bad schema block: {exc}") from None
    return RunConfig(
        prices=resolve(paths.get("prices")),
        sectors=resolve(paths.get("sectors")),
        events=resolve(paths.get("events")),
        output=Path(paths.get("output") or "out"),
        schema=schema,
        epoch_length=T,
        kinds=kinds,
        k=ks,
        k_max=k_max,
        restarts=restarts,
        seed=seed,
        use_pca=bool(tree.get("use_pca", True)),
        sliding=bool(tree.get("sliding", True)),
        robustness=rob,
        tree=tree,
    )


def load_config(path=None, overrides=()) -> RunConfig:
    tree, base = load_tree(path, overrides)
    return build(tree, base)
