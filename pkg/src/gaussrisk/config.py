"""Problem configuration: a single JSON document per run."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .approx import BIVARIATE_TAGS, MULTIVARIATE_TAGS, REGIME_TOL, CovSpec
from .errors import ConfigError
from .oracle import DEFAULT_N, IS, PLAIN
from .qp import L_TOL

KEYS = {"mu", "sd", "corr", "weights", "c", "shift", "grid_p", "grid_u",
        "n", "seed", "method", "tolerances", "force_regime"}
TOLERANCE_KEYS = {"l_tol": L_TOL, "regime_tol": REGIME_TOL}


@dataclass(frozen=True)
class Level:
    kind: str  # "p" or "u"
    value: float


@dataclass(frozen=True)
class ProblemConfig:
    spec: CovSpec
    weights: tuple[float, ...] | None = None
    c: tuple[float, ...] | None = None
    shift: float = 0.0
    grid_p: tuple[float, ...] = ()
    grid_u: tuple[float, ...] = ()
    n: int = DEFAULT_N
    seed: int = 0
    method: str = IS
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCE_KEYS))
    force_regime: str | None = None

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def levels(self) -> list[Level]:
        return [Level("p", p) for p in self.grid_p] + [Level("u", u) for u in self.grid_u]

    @property
    def weight_vector(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.d - 1)
        return np.asarray(self.weights, dtype=float)

    def to_dict(self) -> dict:
        out = {
            "mu": [float(x) for x in self.spec.mu],
            "sd": [float(x) for x in self.spec.sd],
            "corr": [[float(x) for x in row] for row in self.spec.corr],
            "shift": self.shift,
            "grid_p": list(self.grid_p),
            "grid_u": list(self.grid_u),
            "n": self.n,
            "seed": self.seed,
            "method": self.method,
            "tolerances": dict(self.tolerances),
            "force_regime": self.force_regime,
        }
        if self.c is not None:
            out["c"] = list(self.c)
        else:
            out["weights"] = [float(x) for x in self.weight_vector]
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def sha256(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def with_overrides(self, **kw) -> "ProblemConfig":
        data = self.to_dict()
        data.update({k: v for k, v in kw.items() if v is not None})
        return from_dict(data)


def _floats(data: dict, key: str, *, ndim: int = 1) -> np.ndarray:
    try:
        a = np.array(data[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field {key!r} must be numeric") from exc
    if a.ndim != ndim:
        raise ConfigError(f"field {key!r} must be {'a list' if ndim == 1 else 'a square matrix'}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"field {key!r} has non-finite entries")
    return a


def _integer(data: dict, key: str, default: int, minimum: int) -> int:
    v = data.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"field {key!r} must be an integer >= {minimum}")
    return v


def from_dict(data: dict) -> ProblemConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - KEYS
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(sorted(unknown))}")
    for key in ("corr", "sd"):
        if key not in data:
            raise ConfigError(f"missing field {key!r}")

    corr = _floats(data, "corr", ndim=2)
    d = corr.shape[0]
    if corr.shape != (d, d):
        raise ConfigError(f"field 'corr' must be square, got shape {corr.shape}")
    if not np.allclose(corr, corr.T, rtol=0.0, atol=1e-12):
        raise ConfigError("field 'corr' is not symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        raise ConfigError("field 'corr' must have a unit diagonal")
    sd = _floats(data, "sd")
    mu = _floats(data, "mu") if "mu" in data else np.zeros(d)
    for key, v in (("sd", sd), ("mu", mu)):
        if v.shape != (d,):
            raise ConfigError(f"field {key!r} must have {d} entries to match 'corr'")
    if np.any(sd <= 0):
        raise ConfigError("field 'sd' must be positive")
    spec = CovSpec(mu, sd, corr)

    if "weights" in data and "c" in data:
        raise ConfigError("fields 'weights' and 'c' are mutually exclusive")
    weights = c = None
    if "c" in data:
        cv = _floats(data, "c")
        if cv.shape != (d,):
            raise ConfigError(f"field 'c' must have {d} entries")
        c = tuple(float(x) for x in cv)
    elif "weights" in data:
        w = _floats(data, "weights")
        if w.shape != (d - 1,):
            raise ConfigError(f"field 'weights' must have {d - 1} entries")
        weights = tuple(float(x) for x in w)

    grid_p = tuple(float(x) for x in _floats(data, "grid_p")) if "grid_p" in data else ()
    grid_u = tuple(float(x) for x in _floats(data, "grid_u")) if "grid_u" in data else ()
    if not grid_p and not grid_u:
        raise ConfigError("fields 'grid_p'/'grid_u' define an empty grid")
    if any(not 0.0 < p < 1.0 for p in grid_p):
        raise ConfigError("field 'grid_p' values must lie in (0, 1)")
    if any(not u > 0.0 for u in grid_u):
        raise ConfigError("field 'grid_u' values must be positive")

    shift = data.get("shift", 0.0)
    if isinstance(shift, bool) or not isinstance(shift, (int, float)) or not math.isfinite(shift):
        raise ConfigError("field 'shift' must be a finite number")

    method = data.get("method", IS)
    if method not in (PLAIN, IS):
        raise ConfigError(f"field 'method' must be {PLAIN!r} or {IS!r}")

    tol = dict(TOLERANCE_KEYS)
    given = data.get("tolerances") or {}
    if not isinstance(given, dict) or set(given) - set(TOLERANCE_KEYS):
        raise ConfigError(f"field 'tolerances' accepts only {sorted(TOLERANCE_KEYS)}")
    for k, v in given.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"field 'tolerances.{k}' must be a positive number")
        tol[k] = float(v)

    force = data.get("force_regime")
    if force is not None and force not in BIVARIATE_TAGS + MULTIVARIATE_TAGS:
        raise ConfigError(f"field 'force_regime' must be one of {BIVARIATE_TAGS + MULTIVARIATE_TAGS}")

    return ProblemConfig(
        spec=spec,
        weights=weights,
        c=c,
        shift=float(shift),
        grid_p=grid_p,
        grid_u=grid_u,
        n=_integer(data, "n", DEFAULT_N, 1),
        seed=_integer(data, "seed", 0, 0),
        method=method,
        tolerances=tol,
        force_regime=force,
    )


def loads(text: str) -> ProblemConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return from_dict(data)


def load(path) -> ProblemConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)
