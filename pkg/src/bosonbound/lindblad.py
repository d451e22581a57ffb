"""Lindblad generators on bosonic modes and the shipped benchmark models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

from .algebra import (
    IMAG,
    ModeMismatchError,
    OperatorPolynomial,
    annihilation,
    commutator,
    creation,
    identity,
    multiply,
)

__all__ = [
    "Jump",
    "LindbladSpec",
    "adjoint_action",
    "parse_parameters",
    "build_cat_model",
    "build_perfect_cat_model",
    "build_memory_buffer_model",
    "build_pure_loss_model",
    "build_model",
    "MODELS",
    "spec_to_json",
    "spec_from_json",
]


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        # decimal text of the float, so 0.2 means 1/5
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class Jump:
    """Dissipation channel ``rate * D[operator]``.

    The rate is kept apart from the operator so that ``sqrt(rate)`` never has
    to be formed in exact arithmetic; ``rate * D[c] == D[sqrt(rate) c]``.
    """

    operator: OperatorPolynomial
    rate: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "rate", _exact(self.rate))
        if self.rate < 0:
            raise ValueError(f"negative dissipation rate {self.rate}")


@dataclass(frozen=True)
class LindbladSpec:
    mode_count: int
    hamiltonian: OperatorPolynomial
    jumps: tuple[Jump, ...] = ()
    parameters: Mapping[str, Fraction] = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        jumps = tuple(self.jumps)
        object.__setattr__(self, "jumps", tuple(j for j in jumps if j.rate and not j.operator.is_zero()))
        object.__setattr__(self, "parameters", dict(self.parameters))
        if self.mode_count < 1:
            raise ValueError("mode_count must be positive")
        if self.hamiltonian.mode_count != self.mode_count:
            raise ModeMismatchError("Hamiltonian acts on the wrong number of modes")
        for j in self.jumps:
            if j.operator.mode_count != self.mode_count:
                raise ModeMismatchError("jump operator acts on the wrong number of modes")
        if not self.hamiltonian.is_hermitian():
            raise ValueError("Hamiltonian is not Hermitian")

    @property
    def generator_degree(self) -> int:
        """max(deg H, 2 * max_k deg c_k), at least 0."""
        degs = [self.hamiltonian.degree] + [2 * j.operator.degree for j in self.jumps]
        d = max(degs)
        return 0 if d == -math.inf else int(d)

    def __hash__(self):
        return hash((self.mode_count, self.hamiltonian, self.jumps, self.name))


def adjoint_action(spec: LindbladSpec, o: OperatorPolynomial) -> OperatorPolynomial:
    """Heisenberg-picture generator: ``i[H, o] + sum_k rate_k (c^+ o c - {c^+ c, o}/2)``."""
    if o.mode_count != spec.mode_count:
        raise ModeMismatchError(f"operator on {o.mode_count} modes, model has {spec.mode_count}")
    out = commutator(spec.hamiltonian, o).scale(IMAG)
    half = Fraction(1, 2)
    for j in spec.jumps:
        c = j.operator
        cd = c.adjoint()
        cdc = multiply(cd, c)
        term = multiply(multiply(cd, o), c) - (multiply(cdc, o) + multiply(o, cdc)).scale(half)
        out = out + term.scale(j.rate)
    return out


# --------------------------------------------------------------------------
# shipped models
# --------------------------------------------------------------------------


def parse_parameters(params: Mapping[str, object] | None) -> dict[str, Fraction]:
    """Coerce parameter values to exact rationals (strings and floats via decimal text)."""
    out = {}
    for k, v in (params or {}).items():
        try:
            out[k] = _exact(v)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"parameter {k}={v!r} is not a finite real number") from exc
    return out


def _require(params, names, model):
    missing = [n for n in names if n not in params]
    if missing:
        raise ValueError(f"{model} model needs parameters {missing}")
    for n in names:
        if n.startswith("kappa") and params[n] < 0:
            raise ValueError(f"rate {n} must be non-negative, got {params[n]}")


CAT_DEFAULTS = {"omega": Fraction(1), "kappa1": Fraction(1, 5), "kappa2": Fraction(2), "alpha": Fraction(1)}
PERFECT_CAT_DEFAULTS = {"omega": Fraction(0), "kappa1": Fraction(0), "kappa2": Fraction(2), "alpha": Fraction(1)}
MEMORY_BUFFER_DEFAULTS = {
    "g2": Fraction(1, 4),
    "eps_d": Fraction(1),
    "kappa_a": Fraction(97, 50),
    "kappa_b": Fraction(97, 5),
}
PURE_LOSS_DEFAULTS = {"kappa": Fraction(1)}


def build_cat_model(params: Mapping[str, object]) -> LindbladSpec:
    """One mode: ``H = omega n``, jumps ``kappa1 D[a]`` and ``kappa2 D[a^2 - alpha^2]``."""
    p = parse_parameters(params)
    _require(p, ("omega", "kappa1", "kappa2", "alpha"), "cat")
    if p["alpha"] < 0:
        raise ValueError("alpha must be real and non-negative")
    a, ad = annihilation(), creation()
    H = multiply(ad, a).scale(p["omega"])
    c2 = multiply(a, a) - identity(1).scale(p["alpha"] ** 2)
    return LindbladSpec(1, H, (Jump(a, p["kappa1"]), Jump(c2, p["kappa2"])), p, "cat")


def build_perfect_cat_model(params: Mapping[str, object] | None = None) -> LindbladSpec:
    p = dict(PERFECT_CAT_DEFAULTS)
    p.update(parse_parameters(params))
    spec = build_cat_model(p)
    return LindbladSpec(spec.mode_count, spec.hamiltonian, spec.jumps, spec.parameters, "perfect_cat")


def build_memory_buffer_model(params: Mapping[str, object]) -> LindbladSpec:
    """Memory ``a`` and buffer ``b``: ``H = g2 (a^2 b^+ + a^+2 b) + eps_d (b^+ + b)``."""
    p = parse_parameters(params)
    _require(p, ("g2", "eps_d", "kappa_a", "kappa_b"), "memory_buffer")
    a, ad = annihilation(0, 2), creation(0, 2)
    b, bd = annihilation(1, 2), creation(1, 2)
    H = (multiply(multiply(a, a), bd) + multiply(multiply(ad, ad), b)).scale(p["g2"]) + (bd + b).scale(p["eps_d"])
    return LindbladSpec(2, H, (Jump(a, p["kappa_a"]), Jump(b, p["kappa_b"])), p, "memory_buffer")


def build_pure_loss_model(params: Mapping[str, object] | None = None) -> LindbladSpec:
    p = dict(PURE_LOSS_DEFAULTS)
    p.update(parse_parameters(params))
    _require(p, ("kappa",), "pure_loss")
    return LindbladSpec(1, OperatorPolynomial.zero(1), (Jump(annihilation(), p["kappa"]),), p, "pure_loss")


MODELS: dict[str, tuple[Callable[[Mapping], LindbladSpec], dict[str, Fraction]]] = {
    "cat": (build_cat_model, CAT_DEFAULTS),
    "perfect_cat": (build_perfect_cat_model, PERFECT_CAT_DEFAULTS),
    "memory_buffer": (build_memory_buffer_model, MEMORY_BUFFER_DEFAULTS),
    "pure_loss": (build_pure_loss_model, PURE_LOSS_DEFAULTS),
}


def build_model(name: str, overrides: Mapping[str, object] | None = None) -> LindbladSpec:
    try:
        builder, defaults = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    params = dict(defaults)
    over = parse_parameters(overrides)
    unknown = set(over) - set(defaults)
    if unknown:
        raise ValueError(f"model {name!r} has no parameters {sorted(unknown)}")
    params.update(over)
    spec = builder(params)
    return LindbladSpec(spec.mode_count, spec.hamiltonian, spec.jumps, spec.parameters, name)


def memory_buffer_kappa2(params: Mapping[str, object]) -> Fraction:
    """Effective two-photon rate ``4 g2^2 / kappa_b`` after eliminating the buffer."""
    p = parse_parameters(params)
    return 4 * p["g2"] ** 2 / p["kappa_b"]


# --------------------------------------------------------------------------
# JSON model schema
# --------------------------------------------------------------------------


def spec_to_json(spec: LindbladSpec) -> dict:
    return {
        "modes": spec.mode_count,
        "hamiltonian": spec.hamiltonian.to_literal(),
        "jumps": [{"rate": str(j.rate), "operator": j.operator.to_literal()} for j in spec.jumps],
        "named_parameters": {k: str(v) for k, v in spec.parameters.items()},
        "name": spec.name,
    }


def spec_from_json(doc: Mapping) -> LindbladSpec:
    """Inverse of :func:`spec_to_json`.

    A jump may be a bare polynomial literal (already including any
    ``sqrt(rate)`` factor) or ``{"rate": r, "operator": literal}``.
    """
    n = int(doc["modes"])
    H = OperatorPolynomial.from_literal(doc.get("hamiltonian", []), n)
    jumps = []
    for entry in doc.get("jumps", []):
        if isinstance(entry, Mapping):
            jumps.append(Jump(OperatorPolynomial.from_literal(entry["operator"], n), _exact(entry.get("rate", 1))))
        else:
            jumps.append(Jump(OperatorPolynomial.from_literal(entry, n)))
    return LindbladSpec(n, H, tuple(jumps), parse_parameters(doc.get("named_parameters", {})), doc.get("name", "custom"))
