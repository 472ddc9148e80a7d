"""One-hidden-layer networks with element-wise, exponential and softmax heads.

The element-wise forward is ``A @ sigma(W x + b)``; the softmax forward is the
normalized form ``sum_i a_i e^{w_i.x+b_i} / sum_j e^{w_j.x+b_j}``, evaluated
with a log-sum-exp shift so overflow cannot occur for representable inputs.
All norms are uniform (max over components, max over grid points).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, EmptyGridError
from .grids import as_points


# --------------------------------------------------------------------------
# activations


@dataclass(frozen=True)
class Activation:
    """Activation tag; ``custom`` wraps an element-wise scalar function.

    A custom function must be defined on all of the reals; local boundedness
    and piecewise continuity are the caller's responsibility.
    """

    kind: str
    fn: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    _KINDS = ("relu", "exp", "softmax", "custom")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom activation needs a function handle")

    @property
    def is_elementwise(self) -> bool:
        return self.kind != "softmax"

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "exp":
            return np.exp(z)
        if self.kind == "custom":
            return np.asarray(self.fn(z), dtype=float)
        raise ValueError("softmax is not an element-wise map; use the forward routines")


RELU = Activation("relu")
EXP = Activation("exp")
SOFTMAX = Activation("softmax")


def custom_activation(fn: Callable[[np.ndarray], np.ndarray]) -> Activation:
    return Activation("custom", fn)


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class FnnParams:
    """One-hidden-layer network (A, W, b, activation).

    Immutable after construction and safe to share across threads.
    """

    A: np.ndarray
    W: np.ndarray
    b: np.ndarray
    activation: Activation

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if W.shape[0] != A.shape[1] or b.shape[0] != W.shape[0]:
            raise DimensionError(
                f"inconsistent shapes: A {A.shape}, W {W.shape}, b {b.shape}"
            )
        if W.shape[0] < 1:
            raise DimensionError("need at least one hidden neuron")
        for name, arr in (("A", A), ("W", W), ("b", b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_y(self) -> int:
        return self.A.shape[0]

    def to_json_dict(self) -> dict:
        if self.activation.kind == "custom":
            raise TypeError("custom activations are not serializable")
        return {
            "A": self.A.tolist(),
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "activation": self.activation.kind,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "FnnParams":
        return FnnParams(
            np.array(doc["A"], dtype=float),
            np.array(doc["W"], dtype=float),
            np.array(doc["b"], dtype=float),
            Activation(doc["activation"]),
        )


# --------------------------------------------------------------------------
# forward passes


def fnn_forward_batch(params: FnnParams, points) -> np.ndarray:
    """Evaluate the network at an (N, d_in) batch; returns (N, d_y)."""
    x = as_points(points, params.d_in)
    z = x @ params.W.T + params.b  # (N, k)
    if params.activation.is_elementwise:
        return params.activation(z) @ params.A.T
    shift = np.max(z, axis=1, keepdims=True)
    e = np.exp(z - shift)
    return (e @ params.A.T) / np.sum(e, axis=1, keepdims=True)


def fnn_forward(params: FnnParams, x) -> np.ndarray:
    """Evaluate the network at a single input vector; returns (d_y,)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (params.d_in,):
        raise DimensionError(f"input has shape {x.shape}, expected ({params.d_in},)")
    return fnn_forward_batch(params, x[None, :])[0]


# --------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitResult:
    params: FnnParams
    sup_error: float
    ridge_used: float
    rank_deficient: bool


def _adam_refine(W, b, A, x, f, activation, steps, lr=2e-2):
    """Fixed-iteration full-batch Adam on the mean-squared residual."""
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    ms = [np.zeros_like(W), np.zeros_like(b), np.zeros_like(A)]
    vs = [np.zeros_like(W), np.zeros_like(b), np.zeros_like(A)]
    n = x.shape[0]
    for t in range(1, steps + 1):
        z = x @ W.T + b
        if activation.kind == "relu":
            phi, dphi = np.maximum(z, 0.0), (z > 0).astype(float)
        else:  # exp
            phi = np.exp(z)
            dphi = phi
        r = phi @ A.T - f  # (n, d_y)
        g_phi = (r @ A) * dphi / n  # (n, k)
        grads = [g_phi.T @ x, g_phi.sum(axis=0), (r.T @ phi) / n]
        for p, g, m, v in zip((W, b, A), grads, ms, vs):
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            p -= lr * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
    return W, b, A


def fit_fnn(samples, k: int, activation: Activation, seed: int, *,
            ridge: float = 0.0, refine_steps: int = 0,
            feature_scale: float = 3.0) -> FitResult:
    """Fit a one-hidden-layer network to samples; deterministic given seed.

    Random-feature hidden layer plus linear least squares for A, optionally
    followed by a fixed-iteration Adam refinement of all parameters.  The
    samples' bounding box is affinely normalized to [-1, 1]^d; rows of W are
    drawn from the fixed symmetric distribution
    uniform(-feature_scale, feature_scale) in normalized coordinates and b is
    set so each activation kink plane passes through a Latin-hypercube anchor
    of the box (the joint (W, b) law is fixed and sign-symmetric).  The affine
    map is composed back into the returned parameters.  A rank-deficient
    least-squares system is re-solved with a ridge term of 1e-8 and flagged
    in the result.
    """
    if activation.kind not in ("relu", "exp"):
        raise ValueError("fit_fnn supports relu and exp activations")
    if isinstance(samples, tuple) and len(samples) == 2:
        x, f = samples
    else:
        x = [s[0] for s in samples]
        f = [s[1] for s in samples]
    x = as_points(x)
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if x.shape[0] != f.shape[0]:
        raise DimensionError("sample inputs and values disagree in length")
    if x.shape[0] < k:
        raise ValueError(f"need at least k={k} samples, got {x.shape[0]}")

    lo, hi = x.min(axis=0), x.max(axis=0)
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    half = np.where(half < 1e-12, 1.0, half)
    z = (x - center) / half

    rng = np.random.default_rng(seed)
    d = x.shape[1]
    W = rng.uniform(-feature_scale, feature_scale, size=(k, d))
    # activation kink planes pass through Latin-hypercube anchors, so the
    # features stay independent over the normalized box instead of collapsing
    # to the affine span when kinks miss the data; the anchor box is slightly
    # wider than the data so some features act affinely on it
    perms = np.stack([rng.permutation(k) for _ in range(d)], axis=1)
    anchors = -1.25 + 2.5 * (perms + rng.uniform(0.0, 1.0, size=(k, d))) / k
    b = -np.einsum("ij,ij->i", W, anchors)

    def solve_A(W, b, lam):
        phi = activation(z @ W.T + b)
        if lam == 0.0:
            A, _, rank, _ = np.linalg.lstsq(phi, f, rcond=None)
            return A.T, rank < k
        gram = phi.T @ phi + lam * np.eye(k)
        return np.linalg.solve(gram, phi.T @ f).T, False

    ridge_used = ridge
    A, deficient = solve_A(W, b, ridge)
    if deficient:
        ridge_used = max(ridge, 1e-8)
        A, _ = solve_A(W, b, ridge_used)

    if refine_steps > 0:
        W, b, A = _adam_refine(W.copy(), b.copy(), A.copy(), z, f,
                               activation, refine_steps)
        A, post_deficient = solve_A(W, b, ridge_used)
        deficient = deficient or post_deficient

    W_orig = W / half
    b_orig = b - W @ (center / half)
    params = FnnParams(A, W_orig, b_orig, activation)
    resid = fnn_forward_batch(params, x) - f
    return FitResult(params, float(np.max(np.abs(resid))), ridge_used, deficient)


# --------------------------------------------------------------------------
# perturbation utilities


def perturbation_gap(p1: FnnParams, p2: FnnParams, domain_grid) -> float:
    """Max over the grid of the uniform-norm output gap between two networks."""
    if (p1.k, p1.d_in, p1.d_y) != (p2.k, p2.d_in, p2.d_y):
        raise DimensionError("parameter sets differ in shape")
    if p1.activation.kind != p2.activation.kind:
        raise ValueError("parameter sets differ in activation")
    pts = as_points(domain_grid, p1.d_in)
    if pts.shape[0] == 0:
        raise EmptyGridError("empty grid")
    gap = fnn_forward_batch(p1, pts) - fnn_forward_batch(p2, pts)
    return float(np.max(np.abs(gap)))


def perturbation_delta(params: FnnParams, domain_grid, epsilon: float,
                       margin: float = 1.1) -> tuple[float, float, float]:
    """Perturbation radius delta < eps/(2 M1 k) from grid-measured constants.

    Returns (delta, M, M1) where M bounds ||x|| on the grid and M1 bounds both
    the output-weight columns and the hidden activations (with a multiplicative
    margin so mildly perturbed networks stay below it).  For unbounded
    activations on large grids M1 can be huge and delta correspondingly tiny;
    the value is reported, not guaranteed feasible.
    """
    pts = as_points(domain_grid, params.d_in)
    M = float(np.max(np.abs(pts))) if pts.size else 0.0
    z = pts @ params.W.T + params.b
    act = params.activation(z) if params.activation.is_elementwise else np.exp(z)
    M1 = margin * max(float(np.max(np.abs(params.A))), float(np.max(np.abs(act)))) + 1e-12
    delta = epsilon / (2.0 * M1 * params.k)
    return delta, M, M1
