"""Problem data for jump-linear quadratic control.

A :class:`MjlsModel` bundles the per-mode system and weight matrices together
with the Markov chain that drives the mode switching:

    x(k+1) = A[i] x(k) + B[i] u(k)    while the chain is in mode i,

with stage cost x'Q[i]x + u'R[i]u.  The chain moves from mode i to mode j
with probability transition[i, j] (rows index the current mode), starts from
``initial_distribution`` and the state starts from ``x0``.

Everything downstream (Riccati recursions, stability tests, simulation,
brute-force verification) consumes a validated model.  Validation never
raises; it returns a report listing each invariant with its measured
residual.  Mode indices are 0-based throughout the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, NotPsd

__all__ = [
    "MjlsModel",
    "Policy",
    "ValidationCheck",
    "ValidationReport",
    "validate",
    "mode_average",
    "factor_state_weight",
    "load_model",
    "save_model",
]

# Tolerances used by validation; see ValidationReport for how they are applied.
ROW_SUM_TOL = 1e-12
SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10
FACTOR_TOL = 1e-10


def _as_matrix(value, name):
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise InvalidInput(f"{name} must be a matrix, got ndim={arr.ndim}")
    return arr


def _as_vector(value, name):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.ndim != 1:
        raise InvalidInput(f"{name} must be a vector")
    return arr


def sym(matrix):
    """Explicitly symmetrize ``matrix`` (used to stop asymmetry drift)."""
    return 0.5 * (matrix + matrix.T)


def min_eigenvalue(matrix):
    """Smallest eigenvalue of the symmetric part of ``matrix``."""
    return float(np.linalg.eigvalsh(sym(matrix))[0])


def spectral_norm_sym(matrix):
    """Two-norm of a symmetric matrix (largest eigenvalue magnitude)."""
    eig = np.linalg.eigvalsh(sym(matrix))
    return float(max(abs(eig[0]), abs(eig[-1]))) if eig.size else 0.0


@dataclass
class ValidationCheck:
    name: str
    ok: bool
    residual: float
    detail: str = ""

    def __str__(self):
        status = "pass" if self.ok else "FAIL"
        line = f"{status}  {self.name}  residual={self.residual:.3e}"
        return line + (f"  ({self.detail})" if self.detail else "")


@dataclass
class ValidationReport:
    checks: list[ValidationCheck]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def failures(self) -> list[ValidationCheck]:
        return [c for c in self.checks if not c.ok]

    def __str__(self):
        return "\n".join(str(c) for c in self.checks)


@dataclass(eq=False)
class MjlsModel:
    """Markov jump linear system with quadratic stage weights.

    Parameters
    ----------
    A, B, Q, R : sequences of per-mode matrices
        System matrices (n x n, n x m) and weights (n x n, m x m).
    transition : (L, L) array
        Row-stochastic matrix; entry [i, j] is the probability of jumping
        from mode i to mode j.
    initial_distribution : (L,) array
        Distribution of the initial mode.
    x0 : (n,) array
        Known initial state.
    C : optional sequence of per-mode factors with C[i]'C[i] = Q[i]
        Output maps used by the exact-observability test; computed on demand
        from Q when absent.
    """

    A: list
    B: list
    Q: list
    R: list
    transition: np.ndarray
    initial_distribution: np.ndarray
    x0: np.ndarray
    C: list | None = None
    _validation: ValidationReport | None = field(
        default=None, init=False, repr=False)

    def __post_init__(self):
        lists = {"A": self.A, "B": self.B, "Q": self.Q, "R": self.R}
        lengths = {name: len(seq) for name, seq in lists.items()}
        if len(set(lengths.values())) != 1 or lengths["A"] == 0:
            raise InvalidInput(f"per-mode matrix lists disagree: {lengths}")
        for name, seq in lists.items():
            setattr(self, name,
                    [_as_matrix(mat, f"{name}[{i}]") for i, mat in enumerate(seq)])
        if self.C is not None:
            if len(self.C) != lengths["A"]:
                raise InvalidInput("C list length does not match mode count")
            self.C = [None if mat is None else _as_matrix(mat, f"C[{i}]")
                      for i, mat in enumerate(self.C)]
        self.transition = _as_matrix(self.transition, "transition")
        self.initial_distribution = _as_vector(
            self.initial_distribution, "initial_distribution")
        self.x0 = _as_vector(self.x0, "x0")
        for arr in self._all_arrays():
            arr.flags.writeable = False

    def _all_arrays(self):
        for seq in (self.A, self.B, self.Q, self.R, self.C or []):
            for mat in seq:
                if mat is not None:
                    yield mat
        yield self.transition
        yield self.initial_distribution
        yield self.x0

    @property
    def mode_count(self) -> int:
        return len(self.A)

    @property
    def state_dim(self) -> int:
        return self.A[0].shape[0]

    @property
    def input_dim(self) -> int:
        return self.B[0].shape[1]

    def validate(self) -> ValidationReport:
        """Run every model invariant; cached after the first call."""
        if self._validation is None:
            self._validation = validate(self)
        return self._validation

    def ensure_valid(self):
        """Raise :class:`InvalidInput` unless every invariant passes."""
        report = self.validate()
        if not report.ok:
            lines = "; ".join(str(c) for c in report.failures)
            raise InvalidInput(f"model failed validation: {lines}")

    def state_weight_factors(self) -> list:
        """Per-mode C with C'C = Q, using supplied factors where available."""
        factors = []
        for i in range(self.mode_count):
            given = None if self.C is None else self.C[i]
            factors.append(given if given is not None
                           else factor_state_weight(self.Q[i]))
        return factors

    def to_dict(self) -> dict:
        modes = []
        for i in range(self.mode_count):
            entry = {
                "A": self.A[i].tolist(),
                "B": self.B[i].tolist(),
                "Q": self.Q[i].tolist(),
                "R": self.R[i].tolist(),
            }
            if self.C is not None and self.C[i] is not None:
                entry["C"] = self.C[i].tolist()
            modes.append(entry)
        return {
            "modes": modes,
            "transition": self.transition.tolist(),
            "initial_distribution": self.initial_distribution.tolist(),
            "x0": self.x0.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MjlsModel":
        try:
            modes = data["modes"]
            if not isinstance(modes, list) or not modes:
                raise InvalidInput("'modes' must be a non-empty list")
            C = [mode.get("C") for mode in modes]
            return cls(
                A=[mode["A"] for mode in modes],
                B=[mode["B"] for mode in modes],
                Q=[mode["Q"] for mode in modes],
                R=[mode["R"] for mode in modes],
                transition=data["transition"],
                initial_distribution=data["initial_distribution"],
                x0=data["x0"],
                C=C if any(c is not None for c in C) else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInput(f"malformed model data: {exc}") from exc


@dataclass(eq=False)
class Policy:
    """Mode-indexed linear state feedback u(k) = F[i] x(k).

    Stationary policies hold one m x n gain per mode; staged policies hold a
    gain table indexed as gains[k][i] for stages k = 0..horizon.
    """

    gains: list
    staged: bool = False

    def __post_init__(self):
        stages = self.gains if self.staged else [self.gains]
        converted = []
        for k, per_mode in enumerate(stages):
            mats = [_as_matrix(g, f"gain[{k}][{i}]")
                    for i, g in enumerate(per_mode)]
            for mat in mats:
                if not np.all(np.isfinite(mat)):
                    raise InvalidInput("policy gains must be finite")
                if mat.shape != mats[0].shape:
                    raise InvalidInput("policy gains must share one shape")
            converted.append(mats)
        self.gains = converted if self.staged else converted[0]

    @classmethod
    def stationary(cls, gains) -> "Policy":
        return cls(gains=gains, staged=False)

    @classmethod
    def from_stages(cls, staged_gains) -> "Policy":
        return cls(gains=staged_gains, staged=True)

    @property
    def horizon(self) -> int | None:
        return len(self.gains) - 1 if self.staged else None

    @property
    def mode_count(self) -> int:
        return len(self.gains[0]) if self.staged else len(self.gains)

    def gain(self, k: int, i: int) -> np.ndarray:
        """Feedback gain applied at stage k in mode i."""
        if self.staged:
            if not 0 <= k < len(self.gains):
                raise InvalidInput(
                    f"stage {k} outside staged policy horizon {self.horizon}")
            return self.gains[k][i]
        return self.gains[i]


def validate(model: MjlsModel) -> ValidationReport:
    """Check every model invariant and report measured residuals.

    Validation never aborts: each invariant contributes one entry whether it
    passes or fails, so a failing report lists everything that is wrong.
    """
    checks = []
    L, n, m = model.mode_count, model.state_dim, model.input_dim

    mismatches = []
    expected = {"A": (n, n), "B": (n, m), "Q": (n, n), "R": (m, m)}
    for name in ("A", "B", "Q", "R"):
        for i, mat in enumerate(getattr(model, name)):
            if mat.shape != expected[name]:
                mismatches.append(f"{name}[{i}]{mat.shape}")
    if model.C is not None:
        for i, mat in enumerate(model.C):
            if mat is not None and mat.shape[1] != n:
                mismatches.append(f"C[{i}]{mat.shape}")
    if model.transition.shape != (L, L):
        mismatches.append(f"transition{model.transition.shape}")
    if model.initial_distribution.shape != (L,):
        mismatches.append(f"initial_distribution{model.initial_distribution.shape}")
    if model.x0.shape != (n,):
        mismatches.append(f"x0{model.x0.shape}")
    checks.append(ValidationCheck(
        "dimensions", not mismatches, float(len(mismatches)),
        ", ".join(mismatches)))

    nonfinite = sum(int(np.sum(~np.isfinite(arr)))
                    for arr in model._all_arrays())
    checks.append(ValidationCheck(
        "finite entries", nonfinite == 0, float(nonfinite)))

    if model.transition.shape == (L, L):
        row_residual = float(np.max(np.abs(model.transition.sum(axis=1) - 1.0)))
        checks.append(ValidationCheck(
            "transition row-stochastic", row_residual <= ROW_SUM_TOL,
            row_residual))
        neg = float(min(0.0, model.transition.min(initial=0.0)))
        checks.append(ValidationCheck(
            "transition nonnegative", neg == 0.0, -neg))

    pi0 = model.initial_distribution
    if pi0.shape == (L,):
        sum_residual = float(abs(pi0.sum() - 1.0))
        checks.append(ValidationCheck(
            "initial distribution sums to one", sum_residual <= ROW_SUM_TOL,
            sum_residual))
        neg = float(min(0.0, pi0.min(initial=0.0)))
        checks.append(ValidationCheck(
            "initial distribution nonnegative", neg == 0.0, -neg))

    for name in ("Q", "R"):
        mats = getattr(model, name)
        asym = max((float(np.max(np.abs(mat - mat.T)))
                    for mat in mats if mat.shape[0] == mat.shape[1]),
                   default=0.0)
        checks.append(ValidationCheck(
            f"{name} symmetric", asym <= SYMMETRY_TOL, asym))
        worst = 0.0
        for mat in mats:
            if mat.shape[0] != mat.shape[1] or not np.all(np.isfinite(mat)):
                continue
            floor = -PSD_TOL * spectral_norm_sym(mat)
            worst = max(worst, max(0.0, floor - min_eigenvalue(mat)))
        checks.append(ValidationCheck(
            f"{name} positive semi-definite", worst == 0.0, worst))

    if model.C is not None:
        worst = 0.0
        for i, mat in enumerate(model.C):
            if mat is None or mat.shape[1] != n or model.Q[i].shape != (n, n):
                continue
            err = float(np.linalg.norm(mat.T @ mat - model.Q[i], "fro"))
            worst = max(worst, err / (1.0 + float(np.linalg.norm(model.Q[i], "fro"))))
        checks.append(ValidationCheck(
            "C'C matches Q", worst <= FACTOR_TOL, worst))

    return ValidationReport(checks)


def mode_average(P, i: int, transition) -> np.ndarray:
    """Transition-weighted average sum_j transition[i, j] * P[j].

    This is the conditional expectation of the next-stage matrix given that
    the chain currently sits in mode ``i``.  The result is explicitly
    symmetrized.
    """
    transition = np.asarray(transition, dtype=float)
    L = transition.shape[0]
    if transition.shape != (L, L) or len(P) != L:
        raise InvalidInput(
            f"transition {transition.shape} incompatible with {len(P)} matrices")
    if not 0 <= i < L:
        raise InvalidInput(f"mode index {i} outside 0..{L - 1}")
    mats = [np.asarray(mat, dtype=float) for mat in P]
    shape = mats[0].shape
    if any(mat.shape != shape for mat in mats) or shape[0] != shape[1]:
        raise InvalidInput("matrices must be square and share one shape")
    out = np.zeros(shape)
    for j in range(L):
        if transition[i, j] != 0.0:
            out += transition[i, j] * mats[j]
    return sym(out)


def factor_state_weight(Q, tol: float = PSD_TOL) -> np.ndarray:
    """Factor a symmetric PSD matrix as Q = C'C.

    Eigenvalues within ``tol`` of zero on the negative side are clamped to
    zero; anything more negative raises :class:`NotPsd`.
    """
    Q = _as_matrix(Q, "Q")
    if Q.shape[0] != Q.shape[1]:
        raise InvalidInput("Q must be square")
    eigval, eigvec = np.linalg.eigh(sym(Q))
    floor = -tol * max(abs(float(eigval[0])), abs(float(eigval[-1])), 0.0)
    if eigval[0] < floor:
        raise NotPsd(
            f"matrix is indefinite: min eigenvalue {eigval[0]:.3e}")
    clamped = np.clip(eigval, 0.0, None)
    return np.sqrt(clamped)[:, None] * eigvec.T


def load_model(path) -> MjlsModel:
    """Read a model from a JSON file (see README for the schema)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InvalidInput(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"model file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidInput("model file must contain a JSON object")
    return MjlsModel.from_dict(data)


def save_model(model: MjlsModel, path):
    """Write a model to a JSON file."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
