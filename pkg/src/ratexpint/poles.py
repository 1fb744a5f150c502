"""Pole sets for the rational Krylov engine.

Poles are stored in the convention used by the shifted solves: the engine
approximates e^z on the negative real semi-axis, so well-conditioned pole
sets have positive real parts and every finite pole xi turns into one
shifted system (xi I + alpha A). Files declaring the opposite sign
convention are flipped on load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

INF_POLE = complex(math.inf, 0.0)

_CONVENTIONS = ("positive-real", "negative-real")
_KINDS = ("repeated-real", "complex-file")

#: Matching tolerance when verifying conjugate closure of a loaded set.
CONJUGATE_MATCH_TOL = 1e-12


class PoleFileError(ValueError):
    pass


def is_infinite(xi: complex) -> bool:
    return math.isinf(xi.real) or math.isinf(xi.imag)


@dataclass(frozen=True)
class PoleSet:
    """Ordered pole list with provenance metadata.

    Complex file sets are conjugate-closed with pairs adjacent; repeated-real
    sets hold one finite value. No pole may be zero.
    """

    poles: tuple
    kind: str
    interval: Optional[tuple[float, float]] = None
    conjugate_closed: bool = True
    convention: str = "positive-real"
    source: Optional[str] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown pole-set kind {self.kind!r}")
        if self.convention not in _CONVENTIONS:
            raise ValueError(f"unknown sign convention {self.convention!r}")
        for xi in self.poles:
            if xi == 0:
                raise ValueError("pole sets must not contain 0")
            if is_infinite(xi):
                raise ValueError("infinite poles are implicit; do not list them")
        if self.kind == "repeated-real" and len({p for p in self.poles}) > 1:
            raise ValueError("repeated-real sets must repeat a single value")

    def __len__(self):
        return len(self.poles)

    def __iter__(self):
        return iter(self.poles)

    def pair_partner_index(self, idx: int) -> Optional[int]:
        """Index of the adjacent conjugate partner of poles[idx], if it has one."""
        xi = self.poles[idx]
        if xi.imag == 0:
            return None
        if idx + 1 < len(self.poles) and _is_conjugate(xi, self.poles[idx + 1]):
            return idx + 1
        if idx > 0 and _is_conjugate(xi, self.poles[idx - 1]):
            return idx - 1
        return None


def _is_conjugate(a: complex, b: complex, tol: float = CONJUGATE_MATCH_TOL) -> bool:
    scale = max(abs(a), abs(b), 1.0)
    return abs(a - b.conjugate()) <= tol * scale


def repeated_real(value: float, count: int) -> PoleSet:
    """Shift-and-invert pole set: one real value repeated `count` times."""
    if value == 0:
        raise ValueError("the repeated pole must be nonzero")
    if count < 1:
        raise ValueError("need at least one pole")
    return PoleSet(poles=tuple(complex(value, 0.0) for _ in range(count)),
                   kind="repeated-real", conjugate_closed=True)


def check_conjugate_closure(poles: Sequence[complex], tol: float = CONJUGATE_MATCH_TOL) -> bool:
    """True iff every strictly complex pole has an adjacent conjugate partner."""
    i = 0
    poles = list(poles)
    while i < len(poles):
        xi = poles[i]
        if xi.imag == 0:
            i += 1
            continue
        if i + 1 < len(poles) and _is_conjugate(xi, poles[i + 1]):
            i += 2
            continue
        return False
    return True


def load_poles(path, allow_open: bool = False) -> PoleSet:
    """Load a pole file.

    Format: one ``re im`` float pair per line; ``# key=value`` header lines for
    ``kind``, ``interval`` (two comma-separated floats), ``convention``.
    Sets that are not conjugate-closed are rejected unless ``allow_open``.
    """
    meta = {"kind": "complex-file", "convention": "positive-real"}
    interval = None
    poles: list[complex] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            parts = line.split()
            if len(parts) != 2:
                raise PoleFileError(f"{path}:{lineno}: expected 're im', got {line!r}")
            try:
                re, im = float(parts[0]), float(parts[1])
            except ValueError as exc:
                raise PoleFileError(f"{path}:{lineno}: {exc}") from exc
            if not (math.isfinite(re) and math.isfinite(im)):
                raise PoleFileError(f"{path}:{lineno}: poles must be finite")
            poles.append(complex(re, im))
    if not poles:
        raise PoleFileError(f"{path}: no poles found")
    if "interval" in meta:
        try:
            lo, hi = (float(v) for v in meta["interval"].split(","))
            interval = (lo, hi)
        except ValueError as exc:
            raise PoleFileError(f"{path}: bad interval header {meta['interval']!r}") from exc
    convention = meta.get("convention", "positive-real")
    if convention not in _CONVENTIONS:
        raise PoleFileError(f"{path}: unknown convention {convention!r}")
    if convention == "negative-real":
        poles = [-xi for xi in poles]
        convention = "positive-real"
    closed = check_conjugate_closure(poles)
    if not closed and not allow_open:
        raise PoleFileError(
            f"{path}: pole list is not conjugate-closed with adjacent pairs; "
            "pass allow_open=True only if this is intentional")
    kind = meta.get("kind", "complex-file")
    if kind not in _KINDS:
        kind = "complex-file"
    return PoleSet(poles=tuple(poles), kind=kind, interval=interval,
                   conjugate_closed=closed, convention=convention, source=str(path))


def save_poles(ps: PoleSet, path) -> None:
    """Write a pole file that round-trips bit-exactly (repr float formatting)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# kind={ps.kind}\n")
        if ps.interval is not None:
            fh.write(f"# interval={ps.interval[0]!r},{ps.interval[1]!r}\n")
        fh.write(f"# convention={ps.convention}\n")
        for xi in ps.poles:
            fh.write(f"{xi.real!r} {xi.imag!r}\n")


def builtin_pole_set(name: str) -> PoleSet:
    """Load one of the packaged pole fixtures (``cf12``, ``cf16_shifted``)."""
    from importlib import resources

    resource = resources.files("ratexpint").joinpath(f"data/poles/{name}.poles")
    if not resource.is_file():
        available = [p.name[:-6] for p in resources.files("ratexpint").joinpath("data/poles").iterdir()
                     if p.name.endswith(".poles")]
        raise FileNotFoundError(
            f"no packaged pole set {name!r}; available: {', '.join(sorted(available))}")
    with resources.as_file(resource) as path:
        return load_poles(path)


def validate(ps: PoleSet, lam_max: float, scale: float = 1.0) -> list[str]:
    """Diagnostics only: warn about poles close to the negated operator spectrum.

    The augmented operator's spectrum sits in [-lam_max * scale, 0]; a pole
    within 1e-8 * lam_max of that segment makes the shifted system nearly
    singular.
    """
    warnings = []
    segment_lo = -abs(lam_max) * abs(scale)
    threshold = 1e-8 * abs(lam_max)
    for idx, xi in enumerate(ps.poles):
        re = min(max(xi.real, segment_lo), 0.0)
        dist = abs(xi - complex(re, 0.0))
        if dist <= threshold:
            warnings.append(
                f"pole {idx} = {xi} lies within {dist:.3e} of the spectrum segment "
                f"[{segment_lo:.3e}, 0] (threshold {threshold:.3e})")
    return warnings
