"""Finite-vocabulary context construction for a fixed sparse-mode Transformer.

Pipeline per output component: fit a one-hidden-layer network to the target,
express each coefficient with sqrt2/unit token counts (integer witnesses),
scan positional encodings for positions whose mapped rows land within a
per-neuron tolerance of the network's weight rows, and assign y tokens
(sqrt2 for q positions, signed units for l positions, zero elsewhere).
The three error stages (fit, coefficient perturbation, token realization) are
measured on the audit grid and each must stay within its budget; the finished
context is audited against the target on a 10x refined grid.

For relu the fitted network is first re-parameterized by positive homogeneity
into unit-coefficient copies with rows bounded by the vocabulary extent, which
makes the coefficient witnesses exact and keeps token counts (and therefore
the position-scan depth) tractable; non-homogeneous activations take the
literal integer-witness route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product as iter_product

import numpy as np

from ._linalg import inf_operator_norm, solve_refined
from .errors import BudgetError, DimensionError, PositionScanExhausted
from .fnn import EXP, RELU, Activation, FitResult, FnnParams, fit_fnn, fnn_forward_batch
from .grids import Grid
from .kronecker import SQRT2, TokenDecomposition, coefficient_decompose
from .transformer import TransformerParams
from .vocab_pe import PeScheme, Vocabulary, pe_block

_TOKEN_SAFETY = 1.25


# --------------------------------------------------------------------------
# report types


@dataclass(frozen=True)
class StageBudgets:
    """Error budgets for the fit / coefficient-perturbation / token stages."""

    fit: float
    perturb: float
    tokens: float

    def __post_init__(self):
        if min(self.fit, self.perturb, self.tokens) <= 0:
            raise ValueError("budgets must be positive")

    @property
    def total(self) -> float:
        return self.fit + self.perturb + self.tokens

    @staticmethod
    def thirds(epsilon: float) -> "StageBudgets":
        return StageBudgets(epsilon / 3.0, epsilon / 3.0, epsilon / 3.0)

    def to_json_dict(self) -> dict:
        return {"fit": self.fit, "perturb": self.perturb, "tokens": self.tokens}


@dataclass(frozen=True)
class Caps:
    j_cap: int = 60_000_000
    q_cap: int = 1_000_000


@dataclass
class NeuronPlan:
    """One token group: a target row and its integer coefficient witness.

    ``token_error_bound`` is the group's term of the stage-3 inequality chain,
    (sqrt2 q + l) * L_sigma * tol * max||x~||_1; the groups' bounds sum to at
    most the token budget.
    """

    index: int
    component: int
    target_row: np.ndarray
    witness: TokenDecomposition
    tol: float = 0.0
    token_error_bound: float = 0.0
    positions_sqrt2: list = field(default_factory=list)
    positions_unit: list = field(default_factory=list)

    @property
    def coefficient(self) -> float:
        return self.witness.value

    @property
    def demand(self) -> int:
        return self.witness.token_count

    def to_json_dict(self) -> dict:
        return {
            "index": self.index,
            "component": self.component,
            "target_row": self.target_row.tolist(),
            "witness": self.witness.to_json_dict(),
            "tol": self.tol,
            "token_error_bound": self.token_error_bound,
            "positions_sqrt2": [int(j) for j in self.positions_sqrt2],
            "positions_unit": [int(j) for j in self.positions_unit],
        }


@dataclass(frozen=True)
class TokenAssignment:
    position: int
    vocab_index: int
    role: str  # sqrt2 | plus_unit | minus_unit
    neuron: int
    component: int
    y_value: float

    def to_json_dict(self) -> dict:
        return {"position": self.position, "vocab_index": self.vocab_index,
                "role": self.role, "neuron": self.neuron,
                "component": self.component, "y_value": self.y_value}


@dataclass(frozen=True)
class ConstructionReport:
    """Constructed context with provenance, budget accounting, and audit.

    The context is stored sparsely: every position up to n that is not listed
    in ``tokens`` is nulled (vocabulary index 0, y = 0).  ``dense_context``
    materializes the full (X, Y) pair for small n.
    """

    mode: str
    epsilon: float
    budgets: StageBudgets
    measured: dict
    achieved_sup_error: float
    n: int
    seed: int
    tokens: tuple
    per_neuron: tuple
    d_x: int
    d_y: int
    scale: float
    lambda_: float | None
    vocab: Vocabulary
    scheme: PeScheme
    fit_sup_error: float

    def __post_init__(self):
        seen = set()
        for t in self.tokens:
            if t.position in seen:
                raise ValueError(f"position {t.position} assigned twice")
            seen.add(t.position)

    @property
    def nulled_count(self) -> int:
        return self.n - len(self.tokens)

    @property
    def max_q_plus_l(self) -> int:
        return max((p.witness.token_count for p in self.per_neuron), default=0)

    def index_sets_disjoint(self) -> bool:
        all_pos = [j for p in self.per_neuron
                   for j in list(p.positions_sqrt2) + list(p.positions_unit)]
        return len(all_pos) == len(set(all_pos))

    def dense_context(self, limit: int = 200_000) -> tuple[np.ndarray, np.ndarray]:
        """Materialize (X, Y) with nulled positions filled in (x token 0, y 0)."""
        if self.n > limit:
            raise MemoryError(f"n = {self.n} exceeds materialization limit {limit}")
        X = np.tile(self.vocab.v_x[0][:, None], (1, self.n))
        Y = np.zeros((self.d_y, self.n))
        for t in self.tokens:
            X[:, t.position - 1] = self.vocab.v_x[t.vocab_index]
            Y[t.component, t.position - 1] = t.y_value
        return X, Y

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "epsilon": self.epsilon,
            "budgets": self.budgets.to_json_dict(),
            "measured": dict(self.measured),
            "achieved_sup_error": self.achieved_sup_error,
            "n": self.n,
            "nulled_count": self.nulled_count,
            "seed": self.seed,
            "d_x": self.d_x,
            "d_y": self.d_y,
            "scale": self.scale,
            "lambda": self.lambda_,
            "fit_sup_error": self.fit_sup_error,
            "max_q_plus_l": self.max_q_plus_l,
            "per_neuron": [p.to_json_dict() for p in self.per_neuron],
            "tokens": [t.to_json_dict() for t in self.tokens],
            "vocab": self.vocab.to_json_dict(),
            "scheme": self.scheme.to_json_dict(),
        }

    def write_tokens_csv(self, fh, nulled_limit: int = 100_000):
        """Token CSV; nulled rows are included only when n <= nulled_limit."""
        fh.write("position,vocab_index,role,neuron,component,y_value\n")
        by_pos = {t.position: t for t in self.tokens}
        if self.n <= nulled_limit:
            for j in range(1, self.n + 1):
                t = by_pos.get(j)
                if t is None:
                    fh.write(f"{j},0,nulled,-1,-1,0\n")
                else:
                    fh.write(f"{j},{t.vocab_index},{t.role},{t.neuron},"
                             f"{t.component},{t.y_value:.17g}\n")
        else:
            for t in sorted(self.tokens, key=lambda t: t.position):
                fh.write(f"{t.position},{t.vocab_index},{t.role},{t.neuron},"
                         f"{t.component},{t.y_value:.17g}\n")


# --------------------------------------------------------------------------
# position scanning


class _NeighborOffsets(dict):
    def __missing__(self, d):
        self[d] = np.array(list(iter_product((0.0, -1.0, 1.0), repeat=d)))
        return self[d]


_NEIGHBOR_OFFSETS = _NeighborOffsets()


@dataclass
class ScanTarget:
    row: np.ndarray
    tol: float
    demand: int


@dataclass(frozen=True)
class ScanHit:
    position: int
    vocab_index: int


def _scan_engine(targets: list[ScanTarget], vocab: Vocabulary, scheme: PeScheme,
                 tp: TransformerParams, start_j: int, j_cap: int,
                 block: int = 1 << 15) -> list[list[ScanHit]]:
    """FCFS multi-target scan over strictly increasing position index.

    At each position every vocabulary entry is tried in index order and the
    hit with the lowest (vocab index, target index) wins; a position holds at
    most one token.  Deterministic.
    """
    d = tp.d_x
    cmap = tp.C.T @ tp.B                       # row(v, j) = cmap @ (v + P_j)
    rows = np.array([t.row for t in targets])  # (T, d)
    tols = np.array([t.tol for t in targets])
    demand = np.array([t.demand for t in targets], dtype=np.int64)
    collected: list[list[ScanHit]] = [[] for _ in targets]
    best_dist = np.full(len(targets), np.inf)

    grid_spec = vocab.x_grid_spec
    fast = False
    if grid_spec is not None:
        lo = np.array(grid_spec[0], dtype=float)
        hi = np.array(grid_spec[1], dtype=float)
        per_dim = int(grid_spec[2])
        h = (hi - lo) / max(per_dim - 1, 1)
        inv_norm = inf_operator_norm(np.linalg.inv(cmap))
        fast = per_dim > 1 and bool(np.all(tols * inv_norm <= 0.45 * np.min(h)))
        if fast:
            u_targets = solve_refined(cmap, rows.T, "C^T B").T  # token-space targets
    j = start_j
    while j <= j_cap and np.any(demand > 0):
        count = min(block, j_cap - j + 1)
        pe = pe_block(scheme, j, count)                       # (count, d)
        hits_j, hits_v, hits_t, hits_d = [], [], [], []
        if fast:
            base = pe @ cmap.T                                # (count, d)
            open_idx = np.nonzero(demand > 0)[0]
            for ti in open_idx:
                cand = u_targets[ti] - pe                     # wanted vocab value
                nearest = np.rint((cand - lo) / h)
                # tiny offsets are unreachable (encodings never vanish), so
                # the adjacent cells must be tried as well
                for off in _NEIGHBOR_OFFSETS[d]:
                    cells = nearest + off
                    inside = np.all((cells >= 0) & (cells <= per_dim - 1), axis=1)
                    if not np.any(inside):
                        continue
                    v = lo + cells * h
                    dist = np.max(np.abs(v @ cmap.T + base - rows[ti]), axis=1)
                    dist[~inside] = np.inf
                    best_dist[ti] = min(best_dist[ti], float(np.min(dist)))
                    sel = np.nonzero(dist < tols[ti])[0]
                    if sel.size:
                        flat = np.ravel_multi_index(
                            cells[sel].astype(np.int64).T, (per_dim,) * d)
                        hits_j.append(sel + j)
                        hits_v.append(flat)
                        hits_t.append(np.full(sel.size, ti, dtype=np.int64))
        else:
            open_idx = np.nonzero(demand > 0)[0]
            for vi, v in enumerate(vocab.v_x):
                rv = (v + pe) @ cmap.T                        # (count, d)
                for ti in open_idx:
                    dist = np.max(np.abs(rv - rows[ti]), axis=1)
                    best_dist[ti] = min(best_dist[ti], float(np.min(dist)))
                    sel = np.nonzero(dist < tols[ti])[0]
                    if sel.size:
                        hits_j.append(sel + j)
                        hits_v.append(np.full(sel.size, vi, dtype=np.int64))
                        hits_t.append(np.full(sel.size, ti, dtype=np.int64))
        if hits_j:
            hj = np.concatenate(hits_j)
            hv = np.concatenate(hits_v)
            ht = np.concatenate(hits_t)
            order = np.lexsort((ht, hv, hj))
            used_pos = set()
            for idx in order:
                ti = int(ht[idx])
                pos = int(hj[idx])
                if demand[ti] <= 0 or pos in used_pos:
                    continue
                used_pos.add(pos)
                demand[ti] -= 1
                collected[ti].append(ScanHit(pos, int(hv[idx])))
        j += count
    if np.any(demand > 0):
        unmet = [{"target_index": i, "remaining": int(demand[i]),
                  "best_distance": float(best_dist[i]), "tol": float(tols[i])}
                 for i in range(len(targets)) if demand[i] > 0]
        raise PositionScanExhausted(j_cap, unmet)
    return collected


def scan_valid_position(target_row, vocab: Vocabulary, scheme: PeScheme,
                        tp: TransformerParams, tol: float, start_j: int = 1,
                        j_cap: int = 1_000_000) -> ScanHit:
    """First position j >= start_j where some x token maps within tol of the row.

    Positions skipped on the way are nulled by the calling construction; the
    scan order is strictly increasing j with vocabulary entries tried in index
    order at each position.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    row = np.atleast_1d(np.asarray(target_row, dtype=float))
    hits = _scan_engine([ScanTarget(row, float(tol), 1)], vocab, scheme, tp,
                        start_j, j_cap)
    return hits[0][0]


# --------------------------------------------------------------------------
# construction


@dataclass(frozen=True)
class FitOptions:
    k: int = 16
    refine_steps: int = 600
    feature_scale: float = 3.0
    ridge: float = 0.0


def _as_matrix_target(target, d_y: int):
    def f(points):
        vals = np.asarray(target(points), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[1] != d_y:
            raise DimensionError(f"target returns {vals.shape[1]} components, expected {d_y}")
        return vals
    return f


def _activation_lipschitz(activation: Activation, z_lo: float, z_hi: float) -> float:
    """Bound on the activation slope over [z_lo, z_hi] (with headroom)."""
    if activation.kind == "relu":
        return 1.0
    if activation.kind == "exp":
        # beyond the float range the derived tolerance is zero anyway; the
        # scan then fails with covering evidence instead of overflowing here
        return math.exp(min(z_hi, 700.0))
    z = np.linspace(z_lo, z_hi, 4097)
    dz = np.diff(activation(z)) / np.diff(z)
    return float(np.max(np.abs(dz))) * 1.1 + 1e-12


def _token_rows(tokens, vocab, scheme, cmap) -> np.ndarray:
    """Mapped rows of assigned tokens, recomputed exactly from (i, j)."""
    rows = np.empty((len(tokens), cmap.shape[0]))
    for idx, t in enumerate(tokens):
        pe = pe_block(scheme, t.position, 1)[0]
        rows[idx] = cmap @ (vocab.v_x[t.vocab_index] + pe)
    return rows


def _token_sum(token_rows, tokens, x_tilde, activation, d_y) -> np.ndarray:
    """sum_j y_j sigma(row_j . x~) per component; (N, d_y)."""
    out = np.zeros((x_tilde.shape[0], d_y))
    if not tokens:
        return out
    scores = x_tilde @ token_rows.T                     # (N, T)
    act = activation(scores)
    for idx, t in enumerate(tokens):
        out[:, t.component] += t.y_value * act[:, idx]
    return out


def _plans_eval(plans, x_tilde, activation, d_y) -> np.ndarray:
    """Perturbed network sum_p coeff_p sigma(row_p . x~) per component."""
    out = np.zeros((x_tilde.shape[0], d_y))
    for p in plans:
        out[:, p.component] += p.coefficient * activation(x_tilde @ p.target_row)
    return out


def _construct(target, grid: Grid, vocab: Vocabulary, scheme: PeScheme,
               tp: TransformerParams, epsilon: float, *,
               activation: Activation, budgets: StageBudgets | None, seed: int,
               fit: FitOptions | None, fnn_list, caps: Caps | None,
               coefficient_mode: str, mode: str,
               lambda_policy: str | None) -> ConstructionReport:
    if not tp.is_sparse_mode or np.any(tp.F != 0.0):
        raise ValueError("construction requires strict sparse mode (general "
                         "blocks absent and F = 0); nulled positions cannot "
                         "cancel F-terms")
    if not activation.is_elementwise:
        raise ValueError("softmax-activation construction is out of scope")
    if vocab.d_x != tp.d_x or scheme.d_x != tp.d_x or vocab.d_y != tp.d_y:
        raise DimensionError("vocabulary/scheme dimensions disagree with parameters")
    if grid.dim != tp.d_x - 1:
        raise DimensionError(f"grid dimension {grid.dim} != d_x - 1 = {tp.d_x - 1}")
    d_y = tp.d_y
    budgets = budgets or StageBudgets.thirds(epsilon)
    if budgets.total > epsilon * (1 + 1e-12):
        raise ValueError("stage budgets exceed epsilon")
    caps = caps or Caps()
    fit = fit or FitOptions()

    if fnn_list is not None and len(fnn_list) != d_y:
        raise DimensionError(f"need one override network per output, got "
                             f"{len(fnn_list)} for d_y = {d_y}")
    pts = grid.points()
    audit_pts = grid.refined(10).points()
    x_tilde = np.hstack([pts, np.ones((pts.shape[0], 1))])
    x_tilde_audit = np.hstack([audit_pts, np.ones((audit_pts.shape[0], 1))])
    m_hat = grid.max_x_tilde_l1()

    f = _as_matrix_target(target, d_y)
    f_vals = f(pts)
    f_audit = f(audit_pts)
    u_norm = inf_operator_norm(tp.U)
    g_vals = solve_refined(tp.U, f_vals.T, "U").T   # token-sum target

    # stage 1: fit (or adopt) one network per output component
    fits: list[FitResult] = []
    for comp in range(d_y):
        if fnn_list is not None and fnn_list[comp] is not None:
            params = fnn_list[comp]
            if params.d_in != grid.dim or params.d_y != 1:
                raise DimensionError("override network has wrong dimensions")
            err = float(np.max(np.abs(
                fnn_forward_batch(params, pts)[:, 0] - g_vals[:, comp])))
            fits.append(FitResult(params, err, 0.0, False))
        else:
            fits.append(fit_fnn((pts, g_vals[:, comp]), fit.k, activation,
                                seed + comp, ridge=fit.ridge,
                                refine_steps=fit.refine_steps,
                                feature_scale=fit.feature_scale))
    fnn_eval = np.column_stack([
        fnn_forward_batch(fr.params, pts)[:, 0] for fr in fits])
    fit_measured = float(np.max(np.abs((tp.U @ fnn_eval.T).T - f_vals)))
    if fit_measured >= budgets.fit:
        raise BudgetError("fit", fit_measured, budgets.fit)

    # stage 2: integer coefficient witnesses (exact unit split for relu)
    comp_scale = math.sqrt(d_y)
    perturb_inner = budgets.perturb / (u_norm * comp_scale)
    use_homog = (coefficient_mode == "homogeneous"
                 or (coefficient_mode == "auto" and activation.kind == "relu"
                     and mode == "dense"))
    if use_homog and activation.kind != "relu":
        raise ValueError("homogeneous coefficient mode needs relu")

    lam = 1.0
    if mode == "rescaled":
        max_row = max(float(np.max(np.abs(
            np.hstack([fr.params.W, fr.params.b[:, None]])))) for fr in fits)
        if lambda_policy == "pow2":
            lam = float(2 ** max(0, math.ceil(math.log2(max(max_row, 1.0)))))
        elif lambda_policy == "int":
            lam = float(max(1, math.ceil(max_row)))
        else:  # max_row
            lam = max(1.0, max_row)

    plans: list[NeuronPlan] = []
    idx = 0
    r_extent = vocab.x_extent
    cmap_inv_norm = inf_operator_norm(np.linalg.inv(tp.C.T @ tp.B))
    for comp, fr in enumerate(fits):
        params = fr.params
        rows = np.hstack([params.W, params.b[:, None]])   # (k, d_x)
        coeffs = params.A[0]
        k = params.k
        for i in range(k):
            a_i = float(coeffs[i])
            row_i = rows[i]
            if mode == "rescaled":
                row_i = row_i / lam
                a_i = a_i * lam
            m1_i = float(np.max(np.abs(activation(x_tilde @ row_i))))
            if abs(a_i) * max(m1_i, 1e-300) <= 0.001 * perturb_inner / max(k, 1):
                continue  # negligible neuron, absorbed by the perturb budget
            if use_homog:
                # split into unit-coefficient copies with rows inside the
                # vocabulary's reach (token space)
                token_norm = cmap_inv_norm * float(np.max(np.abs(abs(a_i) * row_i)))
                copies = max(1, math.ceil(token_norm / max(r_extent, 1e-12)))
                sign = 1 if a_i >= 0 else -1
                wit = TokenDecomposition(float(sign), 0, 1, sign, 0.0)
                for _ in range(copies):
                    plans.append(NeuronPlan(idx, comp, (abs(a_i) / copies) * row_i, wit))
                    idx += 1
            else:
                delta_i = perturb_inner / (k * max(m1_i, 1e-12))
                wit = coefficient_decompose(a_i, delta_i, caps.q_cap)
                plans.append(NeuronPlan(idx, comp, row_i.copy(), wit))
                idx += 1

    perturbed = _plans_eval(plans, x_tilde, activation, d_y)
    perturb_measured = float(np.max(np.abs(tp.U @ (perturbed - fnn_eval).T)))
    if perturb_measured >= budgets.perturb:
        raise BudgetError("perturb", perturb_measured, budgets.perturb)

    # stage 3: per-plan tolerances and the position scan
    tokens_inner = budgets.tokens / (u_norm * comp_scale)
    weight_mass = sum(SQRT2 * p.witness.count_sqrt2 + p.witness.count_unit
                      for p in plans)
    if plans:
        z_vals = np.array([x_tilde @ p.target_row for p in plans])
        lip = _activation_lipschitz(
            activation, float(np.min(z_vals)) - 0.5, float(np.max(z_vals)) + 0.5)
        for p in plans:
            p.tol = tokens_inner / (_TOKEN_SAFETY * m_hat * lip * weight_mass)
            p.token_error_bound = ((SQRT2 * p.witness.count_sqrt2
                                    + p.witness.count_unit)
                                   * lip * p.tol * m_hat)
        scan_targets = [ScanTarget(p.target_row, p.tol, p.demand) for p in plans]
        collected = _scan_engine(scan_targets, vocab, scheme, tp, 1, caps.j_cap)
    else:
        collected = []

    tokens: list[TokenAssignment] = []
    for p, hits in zip(plans, collected):
        hits = sorted(hits, key=lambda h: h.position)
        q = p.witness.count_sqrt2
        for h in hits[:q]:
            p.positions_sqrt2.append(h.position)
            tokens.append(TokenAssignment(h.position, h.vocab_index, "sqrt2",
                                          p.index, p.component, SQRT2))
        for h in hits[q:]:
            p.positions_unit.append(h.position)
            role = "plus_unit" if p.witness.unit_sign > 0 else "minus_unit"
            tokens.append(TokenAssignment(h.position, h.vocab_index, role,
                                          p.index, p.component,
                                          float(p.witness.unit_sign)))
    tokens.sort(key=lambda t: t.position)

    # token legality (bit-exact vocabulary membership of y values)
    for t in tokens:
        y_vec = np.zeros(d_y)
        y_vec[t.component] = t.y_value
        if vocab.y_index_of(y_vec) is None:
            raise ValueError(f"y token {y_vec} not in V_y")

    cmap = tp.C.T @ tp.B
    trows = _token_rows(tokens, vocab, scheme, cmap)
    token_vals = _token_sum(trows, tokens, x_tilde, activation, d_y)
    tokens_measured = float(np.max(np.abs(tp.U @ (token_vals - perturbed).T))) \
        if plans else 0.0
    if tokens_measured >= budgets.tokens:
        raise BudgetError("tokens", tokens_measured, budgets.tokens)

    # final audit on the refined grid
    audit_vals = _token_sum(trows, tokens, x_tilde_audit, activation, d_y)
    achieved = float(np.max(np.abs((tp.U @ audit_vals.T).T - f_audit)))
    if achieved >= epsilon:
        raise BudgetError("total", achieved, epsilon)

    n = max((t.position for t in tokens), default=0)
    measured = {"fit": fit_measured, "perturb": perturb_measured,
                "tokens": tokens_measured,
                "base_grid_total": float(np.max(np.abs((tp.U @ token_vals.T).T - f_vals)))}
    return ConstructionReport(
        mode=mode, epsilon=epsilon, budgets=budgets, measured=measured,
        achieved_sup_error=achieved, n=n, seed=seed, tokens=tuple(tokens),
        per_neuron=tuple(plans), d_x=tp.d_x, d_y=d_y, scale=1.0,
        lambda_=lam if mode == "rescaled" else None,
        vocab=vocab, scheme=scheme,
        fit_sup_error=max(fr.sup_error for fr in fits) if fits else 0.0)


def construct_context(target, grid: Grid, vocab: Vocabulary, scheme: PeScheme,
                      tp: TransformerParams, epsilon: float, *,
                      activation: Activation = RELU,
                      budgets: StageBudgets | None = None, seed: int = 0,
                      fit: FitOptions | None = None, fnn: FnnParams | None = None,
                      caps: Caps | None = None,
                      coefficient_mode: str = "auto") -> ConstructionReport:
    """Build a context whose readout approximates a scalar target within epsilon.

    ``target`` is a callable on (N, d_x - 1) query batches; ``grid`` is the
    audit grid standing in for the compact domain.  ``fnn`` optionally replaces
    the stage-1 fit (its sup error on the grid is still measured against the
    fit budget).  Raises on budget violations, Kronecker cap exhaustion, and
    position-scan exhaustion.
    """
    if tp.d_y != 1:
        raise DimensionError("construct_context is scalar; use construct_context_multi_output")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return _construct(target, grid, vocab, scheme, tp, epsilon,
                      activation=activation, budgets=budgets, seed=seed,
                      fit=fit, fnn_list=[fnn] if fnn is not None else None,
                      caps=caps, coefficient_mode=coefficient_mode,
                      mode="dense", lambda_policy=None)


def construct_context_multi_output(target, grid: Grid, vocab: Vocabulary,
                                   scheme: PeScheme, tp: TransformerParams,
                                   epsilon: float, *,
                                   activation: Activation = RELU,
                                   budgets: StageBudgets | None = None,
                                   seed: int = 0, fit: FitOptions | None = None,
                                   fnn: list | None = None,
                                   caps: Caps | None = None,
                                   coefficient_mode: str = "auto") -> ConstructionReport:
    """Component-wise construction for d_y >= 2 with disjoint position sets.

    Each component gets budget epsilon/sqrt(d_y); every y token carries its
    value in exactly one output coordinate, and index sets are disjoint across
    components because positions are consumed by a single shared scan.
    """
    if tp.d_y < 2:
        raise DimensionError("multi-output construction needs d_y >= 2")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return _construct(target, grid, vocab, scheme, tp, epsilon,
                      activation=activation, budgets=budgets, seed=seed,
                      fit=fit, fnn_list=fnn, caps=caps,
                      coefficient_mode=coefficient_mode,
                      mode="dense", lambda_policy=None)


def construct_relu_rescaled(target, grid: Grid, vocab: Vocabulary,
                            scheme: PeScheme, tp: TransformerParams,
                            epsilon: float, *, lambda_policy: str = "max_row",
                            budgets: StageBudgets | None = None, seed: int = 0,
                            fit: FitOptions | None = None,
                            fnn: FnnParams | None = None,
                            caps: Caps | None = None) -> ConstructionReport:
    """Relu construction with weight rows rescaled into [-1, 1]^{d_x}.

    The fitted rows are divided by lambda (chosen by policy from the max row
    norm) and the coefficient targets become lambda * a_i, decomposed with
    integer witnesses; the positive-homogeneity identity makes the rescaled
    algebra exact.  Reports lambda.
    """
    if tp.d_y != 1:
        raise DimensionError("rescaled construction is scalar")
    if lambda_policy not in ("max_row", "pow2", "int"):
        raise ValueError("lambda_policy must be max_row | pow2 | int")
    return _construct(target, grid, vocab, scheme, tp, epsilon,
                      activation=RELU, budgets=budgets, seed=seed, fit=fit,
                      fnn_list=[fnn] if fnn is not None else None, caps=caps,
                      coefficient_mode="kronecker", mode="rescaled",
                      lambda_policy=lambda_policy)


# --------------------------------------------------------------------------
# exponential finite-difference networks (dense-in-a-ball route)


def build_exp_fd_network(poly_coeffs: dict, w_star, delta: float,
                         lam: float) -> FnnParams:
    """Exp network with zero biases approximating P(x) e^{w*.x}.

    Each monomial coefficient c_alpha contributes the forward-difference
    stencil sum_{beta <= alpha} (-1)^{|alpha - beta|} C(alpha, beta)
    h(w* + lam beta) / lam^{|alpha|}; rows coincide across stencils and are
    merged, so all weight rows lie in the ball B(w*, |alpha|_max * lam) inside
    B(w*, delta).  The grid error against P(x) e^{w*.x} is O(lam).
    """
    w_star = np.atleast_1d(np.asarray(w_star, dtype=float))
    d = w_star.shape[0]
    if not poly_coeffs:
        raise ValueError("empty polynomial")
    alphas = [tuple(int(t) for t in a) for a in poly_coeffs]
    if any(len(a) != d or min(a) < 0 for a in alphas):
        raise DimensionError("multi-indices must be non-negative and match w_star")
    alpha_max = max(sum(a) for a in alphas)
    if lam <= 0 or lam * max(alpha_max, 1) >= delta:
        raise ValueError(f"need 0 < lam < delta/|alpha|_max = {delta / max(alpha_max, 1):g}")

    weights: dict[tuple, float] = {}
    for alpha, c in poly_coeffs.items():
        alpha = tuple(int(t) for t in alpha)
        order = sum(alpha)
        for beta in iter_product(*(range(t + 1) for t in alpha)):
            w = float(c) * lam ** (-order)
            for at, bt in zip(alpha, beta):
                w *= (-1.0) ** (at - bt) * math.comb(at, bt)
            weights[beta] = weights.get(beta, 0.0) + w

    betas = sorted(weights)
    W = np.array([w_star + lam * np.array(b, dtype=float) for b in betas])
    if float(np.max(np.abs(W - w_star))) >= delta:
        raise ValueError("stencil rows left the ball B(w_star, delta)")
    A = np.array([[weights[b] for b in betas]])
    return FnnParams(A, W, np.zeros(len(betas)), EXP)


@dataclass(frozen=True)
class PolyFit:
    coeffs: dict
    residual: float
    degree: int

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(pts.shape[0])
        for alpha, c in self.coeffs.items():
            term = np.full(pts.shape[0], c)
            for t, power in enumerate(alpha):
                if power:
                    term = term * pts[:, t] ** power
            out += term
        return out


def _leg2mono(degree: int) -> np.ndarray:
    """Columns: monomial coefficients of Legendre P_0..P_degree."""
    m = np.zeros((degree + 1, degree + 1))
    for p in range(degree + 1):
        c = np.polynomial.legendre.leg2poly(np.eye(degree + 1)[p])
        m[:c.size, p] = c
    return m


def _affine_subst(degree: int, center: float, half: float) -> np.ndarray:
    """Matrix taking z-monomials to x-monomials under z = (x - center)/half."""
    s = np.zeros((degree + 1, degree + 1))
    for p in range(degree + 1):
        for mth in range(p + 1):
            s[mth, p] = math.comb(p, mth) * (-center) ** (p - mth) / half ** p
    return s


def fit_polynomial(points, damped_values, degree: int) -> PolyFit:
    """Least-squares total-degree polynomial fit of samples of f(x) e^{-w*.x}.

    The design matrix uses a tensor-Legendre basis on the affinely normalized
    box (well conditioned); the returned coefficients are raw monomials in the
    original coordinates.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.asarray(damped_values, dtype=float).ravel()
    if pts.shape[0] != vals.shape[0]:
        raise DimensionError("points and values disagree in length")
    d = pts.shape[1]
    alphas = [a for a in iter_product(*([range(degree + 1)] * d)) if sum(a) <= degree]
    if pts.shape[0] < len(alphas):
        raise ValueError(f"need at least {len(alphas)} samples for degree {degree}")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2.0
    half = np.maximum((hi - lo) / 2.0, 1e-12)
    z = (pts - center) / half

    legs = [np.polynomial.legendre.legvander(z[:, t], degree) for t in range(d)]
    design = np.column_stack([
        np.prod([legs[t][:, a[t]] for t in range(d)], axis=0) for a in alphas])
    c_leg, *_ = np.linalg.lstsq(design, vals, rcond=None)

    tensor = np.zeros((degree + 1,) * d)
    for a, c in zip(alphas, c_leg):
        tensor[a] = c
    for t in range(d):
        # convert axis t: Legendre -> z-monomials, then z -> x monomials
        mono = _affine_subst(degree, center[t], half[t]) @ _leg2mono(degree)
        tensor = np.moveaxis(np.tensordot(mono, tensor, axes=(1, t)), 0, t)

    coeffs = {a: float(tensor[a])
              for a in iter_product(*([range(degree + 1)] * d)) if tensor[a] != 0.0}
    fitted = PolyFit(coeffs, 0.0, degree)
    residual = float(np.max(np.abs(fitted(pts) - vals)))
    return PolyFit(coeffs, residual, degree)
