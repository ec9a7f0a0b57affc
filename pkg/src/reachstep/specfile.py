"""System definition files: JSON documents validated against ``system-spec.v1``."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .dynamics import ControlAffineSystem
from .symbolic import Const, Expr, ExpressionSyntaxError, Polynomial, free_vars, parse, substitute, to_polynomial
from .sos import SemialgebraicSpec, SynthesisConfig

__all__ = ["SpecError", "SystemSpec", "load_spec", "load_schema", "fixture_path", "FIXTURES"]

FIXTURES = ("example1", "dubins", "arm")
SCHEMA_NAME = "system-spec.v1.json"


class SpecError(ValueError):
    """Invalid system file; ``location`` is a JSON pointer into the document."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location or '/'}: {message}")
        self.location = location or "/"


def load_schema() -> dict:
    return json.loads(resources.files("reachstep").joinpath("schemas", SCHEMA_NAME).read_text())


def fixture_path(name: str) -> Path:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    return Path(str(resources.files("reachstep").joinpath("fixtures", f"{name}.json")))


@dataclass(frozen=True)
class SystemSpec:
    name: str
    description: str
    system: ControlAffineSystem
    safe: SemialgebraicSpec
    synthesis: SynthesisConfig
    mu: tuple[tuple[float, ...], ...] | float | None = None
    lambda_override: float | None = None
    sim: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    levelset_slice: dict | None = None
    sha256: str = ""
    source: str = ""

    @property
    def psi(self) -> Polynomial:
        return self.safe.psi

    @property
    def phi(self) -> Polynomial:
        return self.safe.phi

    @property
    def output_box(self):
        return self.safe.box

    def surrogate(self) -> ControlAffineSystem:
        """Single integrator y' = v over the output box."""
        return ControlAffineSystem.single_integrator(self.system.output_names, self.output_box)


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def _expr(text: str, consts: dict[str, Expr], location: str) -> Expr:
    try:
        e = parse(text)
    except ExpressionSyntaxError as exc:
        raise SpecError(f"cannot parse expression ({exc})", location) from None
    return substitute(e, consts) if consts else e


def _derive_output_box(sys: ControlAffineSystem, samples: int = 20000):
    x = sys.sample_box(samples, np.random.default_rng(0))
    _, _, h = sys.evaluate_fields(x)
    lo, hi = h.min(axis=0), h.max(axis=0)
    pad = 0.05 * np.maximum(hi - lo, 1e-6)
    return tuple((float(a), float(b)) for a, b in zip(lo - pad, hi + pad))


def load_spec(source: str | os.PathLike | dict) -> SystemSpec:
    """Parse and validate a system file (path or already-decoded document)."""
    if isinstance(source, dict):
        doc = source
        raw = json.dumps(source, sort_keys=True).encode()
        origin = "<dict>"
    else:
        path = Path(source)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise SpecError(f"cannot read {path}: {exc.strerror}") from None
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SpecError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        origin = str(path)

    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SpecError(err.message, _pointer(err.absolute_path))

    consts = {k: Const(float(v)) for k, v in doc.get("constants", {}).items()}
    names = [sv["name"] for sv in doc["state_vars"]]
    clash = set(consts) & set(names)
    if clash:
        raise SpecError(f"constants shadow state variables {sorted(clash)}", "/constants")
    box = []
    for i, sv in enumerate(doc["state_vars"]):
        if not (np.isfinite(sv["lo"]) and np.isfinite(sv["hi"]) and sv["lo"] < sv["hi"]):
            raise SpecError("box bounds must be finite with lo < hi", f"/state_vars/{i}")
        box.append((sv["lo"], sv["hi"]))
    n, m = len(names), doc["inputs"]
    if len(doc["f"]) != n:
        raise SpecError(f"expected {n} drift entries, got {len(doc['f'])}", "/f")
    if len(doc["g"]) != n:
        raise SpecError(f"expected {n} rows, got {len(doc['g'])}", "/g")
    for k, row in enumerate(doc["g"]):
        if len(row) != m:
            raise SpecError(f"expected {m} columns, got {len(row)}", f"/g/{k}")
    if len(doc["outputs"]) != m:
        raise SpecError(f"expected {m} outputs (one per input), got {len(doc['outputs'])}", "/outputs")

    f = [_expr(t, consts, f"/f/{k}") for k, t in enumerate(doc["f"])]
    g = [[_expr(t, consts, f"/g/{k}/{j}") for j, t in enumerate(row)] for k, row in enumerate(doc["g"])]
    h = [_expr(t, consts, f"/outputs/{i}") for i, t in enumerate(doc["outputs"])]
    for loc, e in [*((f"/f/{k}", e) for k, e in enumerate(f)),
                   *((f"/g/{k}/{j}", e) for k, row in enumerate(g) for j, e in enumerate(row)),
                   *((f"/outputs/{i}", e) for i, e in enumerate(h))]:
        unknown = free_vars(e) - set(names)
        if unknown:
            raise SpecError(f"unknown identifiers {sorted(unknown)}", loc)

    out_names = tuple(doc.get("output_names") or (f"y{i + 1}" for i in range(m)))
    if len(out_names) != m:
        raise SpecError(f"expected {m} output names", "/output_names")
    if set(out_names) & (set(names) | set(consts)):
        raise SpecError("output names clash with state variables or constants", "/output_names")
    try:
        sys = ControlAffineSystem(tuple(names), tuple(f), tuple(tuple(r) for r in g), tuple(h), tuple(box), out_names)
    except ValueError as exc:
        raise SpecError(str(exc)) from None

    sets = {}
    for key in ("psi", "phi"):
        e = _expr(doc[key], consts, f"/{key}")
        unknown = free_vars(e) - set(out_names)
        if unknown:
            raise SpecError(f"unknown identifiers {sorted(unknown)} (expected output names {list(out_names)})", f"/{key}")
        p = to_polynomial(e, out_names)
        if not isinstance(p, Polynomial):
            raise SpecError("must be a polynomial in the outputs", f"/{key}")
        sets[key] = p

    if "output_box" in doc:
        obox = doc["output_box"]
        if len(obox) != m:
            raise SpecError(f"expected {m} intervals", "/output_box")
        for i, (lo, hi) in enumerate(obox):
            if not lo < hi:
                raise SpecError("interval needs lo < hi", f"/output_box/{i}")
        obox = tuple(tuple(map(float, iv)) for iv in obox)
    else:
        obox = _derive_output_box(sys)
    try:
        safe = SemialgebraicSpec(sets["psi"], sets["phi"], obox)
    except ValueError as exc:
        raise SpecError(str(exc), "/psi") from None

    try:
        synthesis = SynthesisConfig(**doc.get("synthesis", {}))
    except (TypeError, ValueError) as exc:
        raise SpecError(str(exc), "/synthesis") from None

    gains = doc.get("gains", {})
    mu: Any = gains.get("mu")
    if isinstance(mu, list):
        mu = tuple(tuple(float(v) for v in row) for row in mu)

    return SystemSpec(
        name=doc.get("name", Path(origin).stem),
        description=doc.get("description", ""),
        system=sys,
        safe=safe,
        synthesis=synthesis,
        mu=mu,
        lambda_override=gains.get("lambda"),
        sim=dict(doc.get("sim", {})),
        verify=dict(doc.get("verify", {})),
        levelset_slice=doc.get("levelset_slice"),
        sha256=hashlib.sha256(raw).hexdigest(),
        source=origin,
    )
