"""Experiment configuration: flat ``section.key = value`` text files.

Values are JSON literals (numbers, ``"strings"``, ``[lists]``). Numeric fields
also accept quoted arithmetic such as ``"pi/4"``, and vector fields accept a
comma-separated string. ``#`` starts a comment.
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
import operator
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .estimators import StepSchedule
from .signal_model import (
    ArxSystem,
    Constant,
    GaussianNoise,
    NoNoise,
    PeriodicTable,
    SignalGenerator,
    Sinusoid,
    UniformNoise,
    Zero,
    make_arx,
)

DETERMINISTIC_KINDS = ("sinusoid", "periodic", "constant", "zero")
STOCHASTIC_KINDS = ("gaussian", "uniform", "none")

# key -> (kind, default); "required" marks keys without a default
SCHEMA = {
    "system.m": ("int", None),
    "system.n": ("int", None),
    "system.a": ("vector", ()),
    "system.b": ("vector", "required"),
    "system.noise_std": ("float", 1.0),
    "input.kind": ("str", "zero+gaussian"),
    "input.amplitude": ("float", 1.0),
    "input.frequency": ("float", 0.0),
    "input.phase": ("float", 0.0),
    "input.table": ("vector", ()),
    "input.constant": ("float", 0.0),
    "input.variance": ("float", 1.0),
    "input.low": ("float", -1.0),
    "input.high": ("float", 1.0),
    "estimator.alpha": ("float", 0.95),
    "estimator.beta": ("vector", (1.0,)),
    "estimator.theta_hat_0": ("vector", None),
    "estimator.theta_rls_0": ("vector", None),
    "estimator.p0_scale": ("float", 0.1),
    "run.horizon": ("int", "required"),
    "run.runs": ("int", 500),
    "run.seed": ("int", 0),
    "run.grid": ("intvector", None),
    "run.output_dir": ("str", "out"),
    "analysis.burn_in": ("int", 1000),
    "analysis.crlb_horizon": ("int", 1_000_000),
}

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}


def _arith(text: str) -> float:
    """Evaluate a small arithmetic expression over numbers and ``pi``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError(text)

    return ev(ast.parse(text.strip(), mode="eval"))


def _coerce(kind: str, value, key: str, line: int | None):
    try:
        if kind == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
        if kind in ("float", "int"):
            if isinstance(value, bool):
                raise ValueError
            x = _arith(value) if isinstance(value, str) else float(value)
            if kind == "int":
                if x != int(x):
                    raise ValueError
                return int(x)
            return x
        if kind in ("vector", "intvector"):
            if isinstance(value, str):
                items = [v for v in value.split(",") if v.strip()]
            elif isinstance(value, list):
                items = value
            else:
                items = [value]
            sub = "int" if kind == "intvector" else "float"
            return tuple(_coerce(sub, v, key, line) for v in items)
    except (ValueError, SyntaxError, TypeError, ZeroDivisionError):
        pass
    raise ParseError(f"cannot interpret {value!r} as {kind}", line=line, key=key)


def parse_config_text(text: str) -> tuple[dict, dict]:
    """Parse config text into ``{key: raw value}`` and ``{key: line number}``."""
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=lineno)
        key, _, rest = line.partition("=")
        key = key.strip()
        rest = rest.strip()
        if key not in SCHEMA:
            raise ParseError("unknown key", line=lineno, key=key)
        if key in values:
            raise ParseError("duplicate key", line=lineno, key=key)
        # trailing comment after the value
        try:
            value = json.loads(rest)
        except json.JSONDecodeError:
            stripped = rest.split("#", 1)[0].strip()
            try:
                value = json.loads(stripped)
            except json.JSONDecodeError:
                raise ParseError(f"value {rest!r} is not a number, quoted string or list", line=lineno, key=key)
        values[key] = value
        lines[key] = lineno
    return values, lines


@dataclass(frozen=True)
class ExperimentConfig:
    a: tuple
    b: tuple
    noise_std: float
    input_kind: str
    amplitude: float
    frequency: float
    phase: float
    table: tuple
    constant: float
    variance: float
    low: float
    high: float
    alpha: float
    beta: tuple
    theta_hat_0: tuple
    theta_rls_0: tuple
    p0_scale: float
    horizon: int
    runs: int
    seed: int
    grid: tuple
    output_dir: str
    burn_in: int = 1000
    crlb_horizon: int = 1_000_000

    @property
    def m(self) -> int:
        return len(self.a)

    @property
    def n(self) -> int:
        return len(self.b)

    @property
    def dim(self) -> int:
        return self.m + self.n

    def system(self) -> ArxSystem:
        return make_arx(self.m, self.n, self.a, self.b, self.noise_std)

    def generator(self) -> SignalGenerator:
        det_kind, stoch_kind = split_kind(self.input_kind)
        det = {
            "sinusoid": lambda: Sinusoid(self.amplitude, self.frequency, self.phase),
            "periodic": lambda: PeriodicTable(self.table),
            "constant": lambda: Constant(self.constant),
            "zero": Zero,
        }[det_kind]()
        stoch = {
            "gaussian": lambda: GaussianNoise(self.variance),
            "uniform": lambda: UniformNoise(self.low, self.high),
            "none": NoNoise,
        }[stoch_kind]()
        return SignalGenerator(det, stoch, self.seed)

    def schedule(self) -> StepSchedule:
        return StepSchedule(self.alpha, self.beta)

    def P0(self) -> np.ndarray:
        return self.p0_scale * np.eye(self.dim)

    def seeds(self) -> list[int]:
        return [self.seed + t for t in range(self.runs)]

    def config_hash(self) -> str:
        """Hash of everything that shapes a single run; seed, run count and paths excluded."""
        d = asdict(self)
        for k in ("runs", "seed", "output_dir", "burn_in", "crlb_horizon"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        cfg = replace(self, **{k: v for k, v in kw.items() if v is not None})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        self.system()
        self.generator()
        self.schedule()
        if len(self.theta_hat_0) != self.dim or len(self.theta_rls_0) != self.dim:
            raise ValidationError(f"initial estimates must have length m+n={self.dim}")
        if not self.p0_scale > 0:
            raise ValidationError("estimator.p0_scale must be positive (P0 positive definite)")
        if self.horizon < 1:
            raise ValidationError("run.horizon must be >= 1")
        if self.runs < 1:
            raise ValidationError("run.runs must be >= 1")
        if not self.grid or min(self.grid) < 1 or max(self.grid) > self.horizon:
            raise ValidationError(f"run.grid must be a non-empty subset of [1, {self.horizon}]")
        if list(self.grid) != sorted(set(self.grid)):
            raise ValidationError("run.grid must be strictly increasing")
        if self.burn_in < 0 or self.crlb_horizon <= self.burn_in + self.dim:
            raise ValidationError("analysis.crlb_horizon must exceed analysis.burn_in")

    def echo(self) -> str:
        """Fully resolved configuration in the input format."""
        out = []
        for key in SCHEMA:
            value = getattr(self, _ATTR[key])
            if isinstance(value, tuple):
                value = list(value)
            out.append(f"{key} = {json.dumps(value)}")
        return "\n".join(out) + "\n"


_ATTR = {
    "system.m": "m",
    "system.n": "n",
    "system.a": "a",
    "system.b": "b",
    "system.noise_std": "noise_std",
    "input.kind": "input_kind",
    "input.amplitude": "amplitude",
    "input.frequency": "frequency",
    "input.phase": "phase",
    "input.table": "table",
    "input.constant": "constant",
    "input.variance": "variance",
    "input.low": "low",
    "input.high": "high",
    "estimator.alpha": "alpha",
    "estimator.beta": "beta",
    "estimator.theta_hat_0": "theta_hat_0",
    "estimator.theta_rls_0": "theta_rls_0",
    "estimator.p0_scale": "p0_scale",
    "run.horizon": "horizon",
    "run.runs": "runs",
    "run.seed": "seed",
    "run.grid": "grid",
    "run.output_dir": "output_dir",
    "analysis.burn_in": "burn_in",
    "analysis.crlb_horizon": "crlb_horizon",
}


def split_kind(kind: str) -> tuple[str, str]:
    parts = [p.strip() for p in kind.split("+")]
    if len(parts) == 1:
        p = parts[0]
        parts = [p, "none"] if p in DETERMINISTIC_KINDS else ["zero", p]
    if len(parts) != 2 or parts[0] not in DETERMINISTIC_KINDS or parts[1] not in STOCHASTIC_KINDS:
        raise ValidationError(
            f"input.kind {kind!r} must be '<{'|'.join(DETERMINISTIC_KINDS)}>+<{'|'.join(STOCHASTIC_KINDS)}>'"
        )
    return parts[0], parts[1]


def default_grid(K: int) -> tuple:
    if K <= 10:
        return tuple(range(1, K + 1))
    pts = np.unique(np.round(np.logspace(1, math.log10(K), 41)).astype(int))
    return tuple(int(p) for p in pts[pts <= K])


def config_from_mapping(values: dict, lines: dict | None = None) -> ExperimentConfig:
    lines = lines or {}
    for key in values:
        if key not in SCHEMA:
            raise ParseError("unknown key", line=lines.get(key), key=key)
    resolved = {}
    for key, (kind, default) in SCHEMA.items():
        if key in values:
            resolved[key] = _coerce(kind, values[key], key, lines.get(key))
        elif default == "required":
            raise ValidationError(f"missing required key {key!r}")
        else:
            resolved[key] = default

    a, b = resolved["system.a"], resolved["system.b"]
    for key, vec in (("system.m", a), ("system.n", b)):
        if resolved[key] is not None and resolved[key] != len(vec):
            raise ValidationError(f"{key} = {resolved[key]} does not match {len(vec)} coefficients (DimensionMismatch)")
    D = len(a) + len(b)
    zeros = (0.0,) * D
    K = resolved["run.horizon"]
    cfg = ExperimentConfig(
        a=a,
        b=b,
        noise_std=resolved["system.noise_std"],
        input_kind=resolved["input.kind"],
        amplitude=resolved["input.amplitude"],
        frequency=resolved["input.frequency"],
        phase=resolved["input.phase"],
        table=resolved["input.table"],
        constant=resolved["input.constant"],
        variance=resolved["input.variance"],
        low=resolved["input.low"],
        high=resolved["input.high"],
        alpha=resolved["estimator.alpha"],
        beta=resolved["estimator.beta"],
        theta_hat_0=resolved["estimator.theta_hat_0"] if resolved["estimator.theta_hat_0"] is not None else zeros,
        theta_rls_0=resolved["estimator.theta_rls_0"] if resolved["estimator.theta_rls_0"] is not None else zeros,
        p0_scale=resolved["estimator.p0_scale"],
        horizon=K,
        runs=resolved["run.runs"],
        seed=resolved["run.seed"],
        grid=resolved["run.grid"] if resolved["run.grid"] is not None else default_grid(max(K, 1)),
        output_dir=resolved["run.output_dir"],
        burn_in=resolved["analysis.burn_in"],
        crlb_horizon=resolved["analysis.crlb_horizon"],
    )
    try:
        cfg.validate()
    except ValidationError as exc:
        raise type(exc)(f"invalid configuration: {exc}") from exc
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    values, lines = parse_config_text(text)
    return config_from_mapping(values, lines)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}")
    return parse_config(text)
