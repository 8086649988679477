"""Experiment configuration: a line-oriented ``[section]`` / ``key = value`` format.

Coefficients and payoffs may be written in a small arithmetic language with
``+ - * / ^``, the functions ``exp sin cos abs min max`` and the variables
``t``, ``x1..xd`` and ``u1..ud``. Expressions are checked against a whitelist
of syntax nodes and evaluated with numpy; nothing else is executed.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field

import numpy as np

from .paths import CoefficientSet
from .scenario import MODES, ScenarioFamily
from .uncertainty import JumpMeasure, UncertaintySet


class ConfigError(ValueError):
    """Syntax or content error with a 1-based line and column."""

    def __init__(self, message, line=None, column=None):
        self.line, self.column = line, column
        where = "" if line is None else f"line {line}" + ("" if column is None else f", column {column}") + ": "
        super().__init__(where + message)


_FUNCS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}


class Expr:
    """A compiled expression; call with keyword arrays ``t=..., x1=..., u1=...``."""

    def __init__(self, text: str, dim: int = 1, line=None, column=1):
        self.text = text
        # '^' is power; map it before parsing and keep a column map for errors
        src, cols = [], []
        for k, ch in enumerate(text):
            if ch == "^":
                src.append("**")
                cols += [k, k]
            else:
                src.append(ch)
                cols.append(k)
        src = "".join(src)
        names = {"t"} | {f"x{i + 1}" for i in range(dim)} | {f"u{i + 1}" for i in range(dim)}

        def fail(msg, offset):
            col = None
            if offset is not None:
                col = column + cols[min(max(offset, 0), len(cols) - 1)] if cols else column
            raise ConfigError(f"invalid expression {text!r}: {msg}", line, col)

        try:
            tree = ast.parse(src, mode="eval")
        except SyntaxError as exc:
            fail(exc.msg, None if exc.offset is None else exc.offset - 1)
        self.variables = set()

        def check(node):
            if isinstance(node, ast.Expression):
                return check(node.body)
            if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
                return check(node.left) or check(node.right)
            if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
                return check(node.operand)
            if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                    and not isinstance(node.value, bool):
                return None
            if isinstance(node, ast.Name):
                if node.id not in names:
                    fail(f"unknown variable {node.id!r}", node.col_offset)
                self.variables.add(node.id)
                return None
            if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS \
                    and not node.keywords:
                want = 2 if node.func.id in ("min", "max") else 1
                if len(node.args) != want:
                    fail(f"{node.func.id} takes {want} argument(s)", node.col_offset)
                for a in node.args:
                    check(a)
                return None
            fail(f"unsupported syntax {type(node).__name__}", getattr(node, "col_offset", None))

        check(tree)
        self._tree = tree.body

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        return _FUNCS[node.func.id](*(self._eval(a, env) for a in node.args))

    def __call__(self, **env):
        missing = self.variables - env.keys()
        if missing:
            raise ValueError(f"expression {self.text!r} needs {sorted(missing)}")
        with np.errstate(all="ignore"):
            return np.asarray(self._eval(self._tree, env), float)

    def __repr__(self):
        return f"Expr({self.text!r})"


def expr_env(t, x, u=None):
    env = {"t": t}
    for i in range(x.shape[1]):
        env[f"x{i + 1}"] = x[:, i]
        if u is not None:
            env[f"u{i + 1}"] = u[:, i]
    return env


def state_fn(expr: Expr):
    """``(t, x (n, d)) -> (n,)``."""
    return lambda t, x: np.broadcast_to(expr(**expr_env(t, x)), x.shape[:1])


def jump_fn(expr: Expr):
    """``(t, x, u) -> (n,)``."""
    return lambda t, x, u: np.broadcast_to(expr(**expr_env(t, x, u)), x.shape[:1])


# keys per section and how their values are parsed
_SCHEMA = {
    "uncertainty": {"nu": "repeat", "Q": "repeat", "ellipticity_floor": "float", "dim": "int", "q": "float"},
    "coefficients": {"preset": "word", "b": "exprs", "sigma": "exprs", "f": "exprs", "h": "exprs",
                     "kappa": "float", "mean": "float", "vol": "float"},
    "scenarios": {"mode": "word", "control_intervals": "int", "bins": "int", "state_low": "float",
                  "state_high": "float", "cap": "int", "allow_truncation": "bool", "k": "int", "m": "int"},
    "numerics": {"T": "float", "dt": "float", "n_paths": "int", "seed": "int", "y0": "float", "threads": "int"},
    "functional": {"alpha": "float", "beta": "float", "gamma": "float", "preset": "word", "g1": "exprs",
                   "g2": "exprs", "g3": "exprs", "V": "expr", "bump_g1": "float", "bump_g2": "float",
                   "bump_g3": "float", "threshold": "float"},
    "payoff": {"expr": "expr"},
    "grid": {"x_min": "float", "x_max": "float", "nodes": "int", "steps": "int"},
    "decomposition": {"gamma": "expr", "phi": "exprs", "psi": "exprs", "k": "expr", "expect": "word"},
    "output": {"dir": "str", "write_paths": "int"},
}

_DEFAULTS = {
    "numerics": {"T": 1.0, "dt": 2.0 ** -8, "n_paths": 1024, "seed": 0, "y0": 0.0, "threads": 1},
    "scenarios": {"mode": "single", "control_intervals": 1, "bins": 2, "state_low": -1.0, "state_high": 1.0,
                  "cap": 100000, "allow_truncation": False, "k": 0, "m": 0},
    "coefficients": {"preset": "pure-driver"},
    "uncertainty": {"ellipticity_floor": 0.0, "q": 0.5},
    "functional": {"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "preset": "none", "bump_g1": 0.0,
                   "bump_g2": 0.0, "bump_g3": 0.0, "threshold": 0.02},
    "grid": {"x_min": -8.0, "x_max": 8.0, "nodes": 1025},
    "decomposition": {"expect": "any"},
    "output": {"dir": "glevy-out", "write_paths": 4},
}

_KIND_NAMES = {"float": "a number", "int": "an integer"}


@dataclass
class ExperimentConfig:
    """Parsed configuration; raw values per section plus the line each came from."""

    sections: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)

    def get(self, section, key, default=None):
        sec = self.sections.get(section, {})
        if key in sec:
            return sec[key]
        return _DEFAULTS.get(section, {}).get(key, default)

    def has(self, section, key=None):
        if key is None:
            return section in self.sections
        return key in self.sections.get(section, {})

    @property
    def dim(self) -> int:
        return int(self.get("uncertainty", "dim", 1))

    def set(self, section, key, value):
        self.sections.setdefault(section, {})[key] = value

    def build_uncertainty(self) -> UncertaintySet:
        d = self.dim
        jumps = []
        for text, line in self.get("uncertainty", "nu", []):
            jumps.append(_parse_measure(text, d, line))
        vols = []
        for text, line in self.get("uncertainty", "Q", []):
            vals = _floats(text, line)
            if len(vals) != d * d:
                raise ConfigError(f"Q needs {d * d} entries, got {len(vals)}", line)
            vols.append(np.array(vals).reshape(d, d))
        if not vols:
            vols = [np.eye(d)]
        return UncertaintySet.build(jumps, vols, ellipticity_floor=self.get("uncertainty", "ellipticity_floor"),
                                    dim=d)

    def build_family(self) -> ScenarioFamily:
        g = lambda k: self.get("scenarios", k)
        return ScenarioFamily(g("mode"), control_intervals=g("control_intervals"), bins=g("bins"),
                              state_box=(g("state_low"), g("state_high")), cap=g("cap"),
                              allow_truncation=g("allow_truncation"), single_pair=(g("k"), g("m")))

    def coefficient_preset(self) -> str:
        preset = self.get("coefficients", "preset")
        if any(self.has("coefficients", k) for k in ("b", "sigma", "f", "h")) and not self.has("coefficients", "preset"):
            return "expressions"
        return preset

    def build_coefficients(self) -> CoefficientSet:
        """Coefficient set from a preset or from expressions (presets other than the manufactured ones)."""
        from . import presets

        preset = self.coefficient_preset()
        d = self.dim
        if preset == "pure-driver":
            return presets.pure_driver(d)
        if preset == "ou":
            return presets.ou(self.get("coefficients", "kappa", 1.0), self.get("coefficients", "mean", 0.0),
                              self.get("coefficients", "vol", 1.0))
        if preset == "manufactured-1d":
            return presets.manufactured_1d(*self.functional_constants(), U=self.build_uncertainty())[2]
        if preset == "special-case-1d":
            return presets.special_case_1d(U=self.build_uncertainty())[2]
        return expression_coefficients(self.sections.get("coefficients", {}), d)

    def functional_constants(self):
        return tuple(float(self.get("functional", k)) for k in ("alpha", "beta", "gamma"))


def expression_coefficients(sec: dict, d: int) -> CoefficientSet:
    def vec(key, size):
        exprs = sec.get(key)
        if exprs is None:
            return None
        if len(exprs) != size:
            raise ConfigError(f"{key} needs {size} ';'-separated expression(s), got {len(exprs)}")
        return exprs

    b, sig, f = vec("b", d), vec("sigma", d * d), vec("f", d)
    h_exprs = sec.get("h")
    h = {}
    if h_exprs is not None:
        pairs = [(i, j) for i in range(d) for j in range(i, d)]
        if len(h_exprs) != len(pairs) * d:
            raise ConfigError(f"h needs {len(pairs) * d} expressions (d entries for each i <= j pair)")
        for n, (i, j) in enumerate(pairs):
            parts = h_exprs[n * d:(n + 1) * d]
            h[(i, j)] = (lambda ps: lambda t, x: np.stack([np.broadcast_to(e(**expr_env(t, x)), x.shape[:1])
                                                         for e in ps], axis=1))(parts)

    def stack(exprs, with_u=False):
        if exprs is None:
            return None
        if with_u:
            return lambda t, x, u: np.stack([np.broadcast_to(e(**expr_env(t, x, u)), x.shape[:1]) for e in exprs], 1)
        return lambda t, x: np.stack([np.broadcast_to(e(**expr_env(t, x)), x.shape[:1]) for e in exprs], 1)

    sigma = None
    if sig is not None:
        flat = stack(sig)
        sigma = lambda t, x: flat(t, x).reshape(len(x), d, d)
    return CoefficientSet(dim=d, b=stack(b), h=h, sigma=sigma, f=stack(f, with_u=True))


def _floats(text, line):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}", line) from exc


def _parse_measure(text, d, line) -> JumpMeasure:
    text = text.strip()
    if text == "zero":
        return JumpMeasure.zero(d)
    if text.startswith("density"):
        # density <expr in u1> on <lo> <hi>
        body = text[len("density"):]
        if " on " not in body:
            raise ConfigError("density measures are written 'density <expr> on <lo> <hi>'", line)
        expr_text, support = body.rsplit(" on ", 1)
        lo, hi = _floats(support, line)
        e = Expr(expr_text.strip(), 1, line)
        return JumpMeasure.density(lambda u: e(t=0.0, x1=0.0 * u, u1=u), (lo, hi))
    atoms, weights = [], []
    for item in text.split(","):
        if "@" not in item:
            raise ConfigError(f"atoms are written 'position @ weight', got {item.strip()!r}", line)
        pos, w = item.split("@")
        vals = _floats(pos.replace("(", " ").replace(")", " "), line)
        if len(vals) != d:
            raise ConfigError(f"atom {pos.strip()!r} has {len(vals)} components, expected {d}", line)
        atoms.append(vals)
        weights.append(_floats(w, line)[0])
    try:
        return JumpMeasure.atomic(atoms, weights, dim=d)
    except ValueError as exc:
        raise ConfigError(str(exc), line) from exc


def _convert(kind, raw, line, col, key, dim):
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
    except ValueError:
        raise ConfigError(f"{key} expects {_KIND_NAMES[kind]}, got {raw!r}", line, col) from None
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key} expects true or false, got {raw!r}", line, col)
    if kind in ("word", "str"):
        return raw
    if kind == "expr":
        return Expr(raw, dim, line, col)
    if kind == "exprs":
        out, offset = [], 0
        for part in raw.split(";"):
            lead = len(part) - len(part.lstrip())
            out.append(Expr(part.strip(), dim, line, col + offset + lead))
            offset += len(part) + 1
        return out
    raise AssertionError(kind)


def parse_config(text: str) -> ExperimentConfig:
    """Parse a configuration; raises :class:`ConfigError` with line and column on failure."""
    cfg = ExperimentConfig()
    pending = []
    section = None
    for n, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        indent = len(line) - len(line.lstrip()) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", n, indent)
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", n, indent + 1)
            cfg.sections.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", n, indent)
        if section is None:
            raise ConfigError("key outside of any section", n, indent)
        key, value = stripped.split("=", 1)
        key = key.strip()
        vcol = indent + stripped.index("=") + 1 + (len(value) - len(value.lstrip()))
        value = value.strip()
        kind = _SCHEMA[section].get(key)
        if kind is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]", n, indent)
        if not value:
            raise ConfigError(f"missing value for {key!r}", n, vcol)
        if kind == "repeat":
            cfg.sections[section].setdefault(key, []).append((value, n))
            continue
        if key in cfg.sections[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", n, indent)
        cfg.lines[(section, key)] = n
        pending.append((section, key, kind, value, n, vcol))
        cfg.sections[section][key] = None
    if "uncertainty" in cfg.sections and "dim" in cfg.sections["uncertainty"]:
        # dim must be known before expressions are compiled
        item = next(p for p in pending if p[:2] == ("uncertainty", "dim"))
        cfg.sections["uncertainty"]["dim"] = _convert("int", item[3], item[4], item[5], "dim", 1)
    dim = cfg.dim
    if dim < 1:
        raise ConfigError("dim must be at least 1", cfg.lines.get(("uncertainty", "dim")))
    for section, key, kind, value, n, vcol in pending:
        cfg.sections[section][key] = _convert(kind, value, n, vcol, key, dim)
    _check_words(cfg)
    return cfg


def _check_words(cfg: ExperimentConfig):
    from .presets import COEFFICIENT_PRESETS

    allowed = {
        ("coefficients", "preset"): COEFFICIENT_PRESETS,
        ("functional", "preset"): ("none", "manufactured", "special-case"),
        ("scenarios", "mode"): MODES,
        ("decomposition", "expect"): ("zero", "nonzero", "any"),
    }
    for (sec, key), options in allowed.items():
        if cfg.has(sec, key) and cfg.sections[sec][key] not in options:
            raise ConfigError(f"{key} must be one of {', '.join(options)}; got {cfg.sections[sec][key]!r}",
                              cfg.lines.get((sec, key)))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
