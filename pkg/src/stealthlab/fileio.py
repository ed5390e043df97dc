"""Text formats: matrix files, model files and serialized attack plans.

Matrix file::

    2 2
    1.0 0.0
    0.0 1.0

Model file (INI, matrix paths relative to the model file)::

    [model]
    name = example1
    A = A.txt
    B = B.txt
    C = C.txt
    Sigma_w = Sigma_w.txt
    Sigma_v = Sigma_v.txt

Plan file: a ``[plan]`` section of ``key = value`` lines followed by
``[matrix NAME]`` sections, each holding a matrix in the format above.
"""
from __future__ import annotations

import configparser
import io
from pathlib import Path

import numpy as np

from .attacks import AttackPlanA1, AttackPlanA2, NoAttack, build_delayed_right_inverse
from .errors import ParseError
from .kalman import KalmanDesign, error_dynamics
from .model import StateSpaceModel

MODEL_KEYS = ("A", "B", "C", "Sigma_w", "Sigma_v")


def format_float(x: float) -> str:
    """Shortest round-tripping decimal, independent of locale."""
    return repr(float(x))


def format_matrix(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [f"{M.shape[0]} {M.shape[1]}"]
    lines += [" ".join(format_float(x) for x in row) for row in M]
    return "\n".join(lines) + "\n"


def _parse_matrix_lines(lines, path=None, first_line=1):
    """Parse ``lines`` (no trailing section content) into a matrix."""
    rows = [(i, ln) for i, ln in enumerate(lines, start=first_line) if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise ParseError("empty matrix", path, first_line)
    lineno, header = rows[0]
    parts = header.split()
    if len(parts) != 2:
        raise ParseError(f"expected 'rows cols', got {header.strip()!r}", path, lineno, 1)
    try:
        r, c = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"expected integer dimensions, got {header.strip()!r}", path, lineno, 1) from None
    if r < 1 or c < 1:
        raise ParseError("matrix dimensions must be positive", path, lineno, 1)
    body = rows[1:]
    if len(body) != r:
        where = body[r][0] if len(body) > r else (body[-1][0] if body else lineno)
        raise ParseError(f"expected {r} rows, found {len(body)}", path, where)
    M = np.empty((r, c))
    for i, (ln_no, text) in enumerate(body):
        fields = text.split()
        if len(fields) != c:
            raise ParseError(f"expected {c} values, found {len(fields)}", path, ln_no, 1)
        col = 1
        for j, tok in enumerate(fields):
            col = text.index(tok, col - 1) + 1
            try:
                M[i, j] = float(tok)
            except ValueError:
                raise ParseError(f"not a number: {tok!r}", path, ln_no, col) from None
            if not np.isfinite(M[i, j]):
                raise ParseError(f"non-finite value {tok!r}", path, ln_no, col)
            col += len(tok)
    return M


def parse_matrix(text: str, path=None) -> np.ndarray:
    return _parse_matrix_lines(text.splitlines(), path)


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read matrix file: {exc.strerror}", path) from None
    return parse_matrix(text, path)


def write_matrix(path, M) -> None:
    Path(path).write_text(format_matrix(M))


def read_model(path) -> StateSpaceModel:
    """Load a model file; matrix paths are resolved next to it."""
    path = Path(path)
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read model file: {exc.strerror}", path) from None
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ParseError(str(exc).splitlines()[0], path, getattr(exc, "lineno", None)) from None
    if not cp.has_section("model"):
        raise ParseError("missing [model] section", path)
    sec = cp["model"]
    missing = [k for k in MODEL_KEYS if k not in sec]
    if missing:
        raise ParseError(f"missing keys: {', '.join(missing)}", path)
    mats = {k: read_matrix(path.parent / sec[k].strip()) for k in MODEL_KEYS}
    return StateSpaceModel(name=sec.get("name", path.stem), **mats)


def write_model(directory, m: StateSpaceModel, name: str | None = None) -> Path:
    """Write ``model.ini`` plus one matrix file per field into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["[model]", f"name = {name or m.name or 'model'}"]
    for k, M in m.matrices().items():
        write_matrix(directory / f"{k}.txt", M)
        lines.append(f"{k} = {k}.txt")
    out = directory / "model.ini"
    out.write_text("\n".join(lines) + "\n")
    return out


# --- plans -----------------------------------------------------------------

def format_plan(plan) -> str:
    buf = io.StringIO()
    buf.write("[plan]\n")
    if isinstance(plan, NoAttack) or plan is None:
        buf.write("attack = none\n")
        if plan is not None and plan.seed is not None:
            buf.write(f"seed = {plan.seed}\n")
        return buf.getvalue()
    if isinstance(plan, AttackPlanA1):
        scalars = {"attack": "a1", "eps": plan.eps, "seed": plan.seed}
        scalars.update(delay=plan.inverse.delay, preview=plan.inverse.preview)
        mats = {"zeta_covariance": plan.zeta_covariance}
    elif isinstance(plan, AttackPlanA2):
        scalars = {"attack": "a2", "eps": plan.eps, "seed": plan.seed}
        scalars.update(alpha=plan.alpha, predicted_eps=plan.predicted_eps,
                       predicted_pw=plan.predicted_pw, shaping_error=plan.shaping_error,
                       eta_schedule=",".join(format_float(e) for e in plan.eta_schedule))
        mats = {"L": plan.L, "Sigma_zeta": plan.Sigma_zeta, "S": plan.S, "Sigma_e": plan.Sigma_e}
    else:
        raise TypeError(f"cannot serialize {type(plan).__name__}")
    for k, v in scalars.items():
        if isinstance(v, float):
            v = format_float(v)
        buf.write(f"{k} = {'' if v is None else v}\n")
    for k, M in mats.items():
        buf.write(f"\n[matrix {k}]\n")
        buf.write(format_matrix(M))
    return buf.getvalue()


def write_plan(path, plan) -> None:
    Path(path).write_text(format_plan(plan))


def _split_sections(text, path):
    sections = []
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = (s[1:-1].strip(), lineno, [])
            sections.append(current)
        elif current is None:
            if s and not s.startswith("#"):
                raise ParseError("content before the first section header", path, lineno, 1)
        else:
            current[2].append(line)
    return sections


def parse_plan(text: str, m: StateSpaceModel, kd: KalmanDesign, path=None):
    """Rebuild a plan; the A1 right inverse is reconstructed from the model."""
    sections = _split_sections(text, path)
    if not sections or sections[0][0] != "plan":
        raise ParseError("plan file must start with a [plan] section", path, 1)
    _, start, lines = sections[0]
    kv = {}
    for i, line in enumerate(lines, start=start + 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ParseError(f"expected 'key = value', got {s!r}", path, i, 1)
        k, v = (p.strip() for p in s.split("=", 1))
        kv[k] = v
    mats = {}
    for name, lineno, body in sections[1:]:
        if not name.startswith("matrix "):
            raise ParseError(f"unknown section [{name}]", path, lineno, 1)
        mats[name[len("matrix "):].strip()] = _parse_matrix_lines(body, path, lineno + 1)

    def need(key, conv=float, table=kv):
        if key not in table:
            raise ParseError(f"missing {key!r}", path)
        try:
            return conv(table[key]) if table is kv else table[key]
        except ValueError:
            raise ParseError(f"bad value for {key!r}: {table[key]!r}", path) from None

    kind = kv.get("attack")
    seed = int(kv["seed"]) if kv.get("seed") else None
    if kind == "none":
        return NoAttack(seed=seed)
    if kind == "a1":
        eps = need("eps")
        Zc = need("zeta_covariance", table=mats)
        inv = build_delayed_right_inverse(error_dynamics(m, kd), m.B, m.C)
        return AttackPlanA1(eps=eps, zeta_covariance=Zc, inverse=inv, seed=seed)
    if kind == "a2":
        etas = tuple(float(e) for e in need("eta_schedule", str).split(","))
        return AttackPlanA2(
            eps=need("eps"), L=need("L", table=mats), Sigma_zeta=need("Sigma_zeta", table=mats),
            alpha=need("alpha"), S=need("S", table=mats), Sigma_e=need("Sigma_e", table=mats),
            predicted_eps=need("predicted_eps"), predicted_pw=need("predicted_pw"),
            eta_schedule=etas, shaping_error=float(kv.get("shaping_error", "nan")), seed=seed,
        )
    raise ParseError(f"unknown attack kind {kind!r}", path)


def read_plan(path, m: StateSpaceModel, kd: KalmanDesign):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read plan file: {exc.strerror}", path) from None
    return parse_plan(text, m, kd, path)
