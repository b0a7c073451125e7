"""Synthetic networks from the best-response dynamic and the Monte Carlo harness."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.special import expit

from .inference import ApeTarget, ape_corrected, ape_plugin, ape_value, std_errors
from .model import ModelError, ModelSpec, Params, Variant, pack_effects
from .netgraph import Covariates, Network, network_stats
from .solver import EC, MLE, PL, NonConvergence, NonExistence, SolverOptions, fit_ec, fit_mle, fit_pl

log = logging.getLogger(__name__)

Z95 = 1.959963984540054

# (rho_L, rho_H, varpi0, varpi1)
DESIGNS = {
    "A1": (Fraction(-1, 2), Fraction(-1, 2), 1, 1),
    "A2": (Fraction(-1), Fraction(-1), 1, 1),
    "A3": (Fraction(-2), Fraction(-2), 1, 1),
    "B1": (Fraction(-2, 3), Fraction(-1, 6), Fraction(1, 4), Fraction(3, 4)),
    "B2": (Fraction(-7, 6), Fraction(-2, 3), Fraction(1, 4), Fraction(3, 4)),
    "B3": (Fraction(-13, 6), Fraction(-5, 3), Fraction(1, 4), Fraction(3, 4)),
}


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class McDesign:
    design_id: str
    variant: Variant = Variant.RECIPROCAL
    n: int = 100
    rho_L: float = -0.5
    rho_H: float = -0.5
    varpi0: float = 1.0
    varpi1: float = 1.0
    beta0: float = 1.0
    rho0: float = 1.0
    rounds: int = 1000
    seed: int = 0
    schedule: str = "alternating"

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.n < 3:
            raise DesignError("n must be at least 3")
        if self.varpi0 <= 0 or self.varpi1 <= 0:
            raise DesignError("Beta shape parameters must be positive")
        if self.rounds < 1:
            raise DesignError("rounds must be positive")
        if self.schedule not in ("alternating", "random"):
            raise DesignError(f"unknown update schedule {self.schedule!r}")
        if not all(math.isfinite(v) for v in (self.rho_L, self.rho_H, self.beta0, self.rho0)):
            raise DesignError("design parameters must be finite")

    @classmethod
    def named(cls, design_id: str, **kw) -> "McDesign":
        try:
            rl, rh, w0, w1 = DESIGNS[design_id]
        except KeyError:
            raise DesignError(f"unknown design {design_id!r}; choose from {sorted(DESIGNS)}") from None
        return cls(design_id, rho_L=float(rl), rho_H=float(rh), varpi0=float(w0),
                   varpi1=float(w1), **kw)


@dataclass(frozen=True)
class Dgp:
    """One draw of covariates and heterogeneity.

    ``cov`` carries the target regressors plus one constant column, which
    absorbs the last node's effects once they are normalized to zero.
    """

    cov: Covariates
    alpha: np.ndarray
    gamma: np.ndarray
    beta0: float
    rho0: float
    variant: Variant

    def __iter__(self):
        return iter((self.cov, self.alpha, self.gamma))

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec.for_covariates(self.variant, self.cov)

    def indices(self):
        """``(B, C)`` grids for directed variants, ``(A, None)`` for undirected."""
        Z = self.cov.Z[:, :, 0] if self.cov.dim_rho else None
        if self.variant is Variant.UNDIRECTED:
            return Z * self.rho0 + self.alpha[:, None] + self.alpha[None, :], None
        X = self.cov.X[:, :, 0]
        B = X * self.beta0 + self.alpha[:, None] + self.gamma[None, :]
        C = Z * self.rho0 if self.variant is Variant.RECIPROCAL else np.zeros_like(B)
        return B, C

    def true_params(self) -> Params:
        spec = self.spec
        if self.variant is Variant.UNDIRECTED:
            rho = [self.rho0, 2 * self.alpha[-1]]
            return Params([], rho, pack_effects(spec, self.alpha, self.alpha))
        beta = [self.beta0, self.alpha[-1] + self.gamma[-1]]
        rho = [self.rho0] if self.variant is Variant.RECIPROCAL else []
        return Params(beta, rho, pack_effects(spec, self.alpha, self.gamma))


def _streams(seed: int, rep: int):
    make = lambda k: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep, k)))
    return make(0), make(1)


def draw_dgp(design: McDesign, rep: int, rng: np.random.Generator | None = None) -> Dgp:
    """Covariates and fixed effects for replication ``rep``.

    ``X_ij`` is uniform on {0, 1} per ordered pair, ``Z_ij = z_i z_j`` with
    ``z_i`` uniform on {-1, 1}, and each node's effect is a level set by
    ``z_i`` plus centred Beta noise.  The reciprocal design uses ``X`` on the
    link index and ``Z`` on the mutual index; the design without mutual
    utility and the undirected design use ``Z`` on their single index.
    """
    if rng is None:
        rng = _streams(design.seed, rep)[0]
    n = design.n
    off = 1.0 - np.eye(n)
    X = rng.integers(0, 2, size=(n, n)).astype(float) * off
    zt = rng.choice(np.array([-1.0, 1.0]), size=n)
    Z = np.outer(zt, zt) * off
    level = np.where(zt < 0, design.rho_L, design.rho_H)
    centre = design.varpi0 / (design.varpi0 + design.varpi1)
    alpha = level + rng.beta(design.varpi0, design.varpi1, size=n) - centre
    gamma = level + rng.beta(design.varpi0, design.varpi1, size=n) - centre
    v = design.variant
    none = np.zeros((n, n, 0))
    if v is Variant.RECIPROCAL:
        cov = Covariates(np.stack([X, off], axis=-1), Z[:, :, None], ["x", "const"], ["z"])
    elif v is Variant.DIRECTED:
        # the design without mutual utility loads Z_ij on the directed index
        cov = Covariates(np.stack([Z, off], axis=-1), none, ["z", "const"], [])
    else:
        # the undirected index has no X block, so its constant lives in Z
        cov = Covariates(none, np.stack([Z, off], axis=-1), [], ["z", "const"])
    return Dgp(cov, alpha, gamma, design.beta0, design.rho0, v)


def best_response_chain(B1, B2, C, rounds: int, rng: np.random.Generator,
                        schedule: str = "alternating", g0=None):
    """Run the per-dyad best-response dynamic and return the final links.

    Each update redraws a logistic shock, so ``g_ij`` becomes 1 with
    probability ``expit(B1 + g_ji * C)``.  Arrays are flattened dyad lists.
    """
    B1, B2, C = (np.asarray(a, float) for a in (B1, B2, C))
    p1 = (expit(B1), expit(B1 + C))
    p2 = (expit(B2), expit(B2 + C))
    gij = np.zeros(B1.shape, bool) if g0 is None else np.asarray(g0[0], bool).copy()
    gji = np.zeros(B1.shape, bool) if g0 is None else np.asarray(g0[1], bool).copy()
    for _ in range(rounds):
        u = rng.random((2,) + B1.shape)
        if schedule == "alternating":
            gij = u[0] < np.where(gji, p1[1], p1[0])
            gji = u[1] < np.where(gij, p2[1], p2[0])
        else:
            first = rng.random(B1.shape) < 0.5
            new_ij = u[0] < np.where(gji, p1[1], p1[0])
            gij = np.where(first, new_ij, gij)
            gji = u[1] < np.where(gij, p2[1], p2[0])
            late = u[0] < np.where(gji, p1[1], p1[0])
            gij = np.where(first, gij, late)
    return gij, gji


def simulate_network(dgp: Dgp, variant=None, rounds: int = 1000,
                     stream: np.random.Generator | None = None,
                     schedule: str = "alternating") -> Network:
    variant = Variant(variant) if variant is not None else dgp.variant
    rng = stream if stream is not None else np.random.default_rng()
    if variant is not dgp.variant:
        dgp = replace(dgp, variant=variant)
    n = dgp.cov.n
    iu = np.triu_indices(n, 1)
    G = np.zeros((n, n), np.int8)
    idx, C = dgp.indices()
    if variant is Variant.UNDIRECTED:
        eps = rng.logistic(size=iu[0].size)
        link = idx[iu] >= eps
        G[iu] = link
        G[iu[1], iu[0]] = link
        return Network(G)
    B1, B2 = idx[iu], idx.T[iu]
    if variant is Variant.DIRECTED:
        eps = rng.logistic(size=(2, iu[0].size))
        G[iu] = B1 >= eps[0]
        G[iu[1], iu[0]] = B2 >= eps[1]
        return Network(G)
    gij, gji = best_response_chain(B1, B2, C[iu], rounds, rng, schedule)
    G[iu] = gij
    G[iu[1], iu[0]] = gji
    return Network(G)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class McSummary:
    design: McDesign
    reps: int
    params: dict  # estimator -> parameter -> {bias, sd, coverage, count}
    apes: dict  # estimator -> target -> {bias, sd, coverage, count}
    mle_success_rate: float
    pl_success_rate: float
    mean_stats: dict
    failures: list = field(default_factory=list)
    records: list = field(default_factory=list)


DEFAULT_APES = (ApeTarget("x", "X", "binary"), ApeTarget("z", "Z", "continuous"))


def _targets_for(cov: Covariates, targets):
    """Resolve targets by name against the covariates actually drawn."""
    out = []
    for t in targets:
        if t.name in cov.x_names[:1]:
            out.append(replace(t, family="X"))
        elif t.name in cov.z_names[:1]:
            out.append(replace(t, family="Z"))
    return out


def _param_names(cov: Covariates, spec: ModelSpec):
    out = [f"beta_{cov.x_names[0]}"] if spec.dim_beta else []
    return out + ([f"rho_{cov.z_names[0]}"] if spec.dim_rho else [])


def _param_slots(spec: ModelSpec):
    # first column of each block is the target regressor
    return [0] * (spec.dim_beta > 0) + [spec.dim_beta] * (spec.dim_rho > 0)


def run_replication(design: McDesign, rep: int, estimators=(MLE, EC, PL),
                    ape_targets=DEFAULT_APES, options: SolverOptions | None = None) -> dict:
    """Draw, simulate and fit one replication; failures are recorded, not raised."""
    d_rng, s_rng = _streams(design.seed, rep)
    dgp = draw_dgp(design, rep, d_rng)
    net = simulate_network(dgp, design.variant, design.rounds, s_rng, design.schedule)
    spec = dgp.spec
    truth = dgp.true_params()
    targets = _targets_for(dgp.cov, ape_targets)
    names, slots = _param_names(dgp.cov, spec), _param_slots(spec)
    rec = {"rep": rep, "stats": network_stats(net),
           "truth": {nm: float(truth.theta[s]) for nm, s in zip(names, slots)},
           "true_ape": {t.name: ape_value(dgp.cov, spec, truth, t) for t in targets},
           "fits": {}}
    opts = options or SolverOptions()
    mle = None
    for est in estimators:
        out = {"status": "ok"}
        try:
            if est == MLE:
                mle = fit = fit_mle(net, dgp.cov, spec, opts)
            elif est == PL:
                fit = fit_pl(net, dgp.cov, spec, opts)
            elif est == EC:
                if mle is None:
                    mle = fit_mle(net, dgp.cov, spec, opts)
                fit = fit_ec(net, dgp.cov, spec, opts, mle=mle)
            else:
                raise ValueError(f"unknown estimator {est!r}")
            se = std_errors(fit)
            out["converged"] = bool(fit.converged)
            out["theta"] = {nm: float(fit.theta_hat[s]) for nm, s in zip(names, slots)}
            out["se"] = {nm: float(se[s]) for nm, s in zip(names, slots)}
            out["ape"] = {}
            # APEs are reported for the plug-in MLE and the corrected PL only
            for t in targets:
                if est == MLE:
                    val, _ = ape_plugin(fit, target=t)
                    res = ape_corrected(fit, target=t)
                    out["ape"][t.name] = (val, res.std_error)
                elif est == PL:
                    res = ape_corrected(fit, target=t)
                    out["ape"][t.name] = (res.delta_corrected, res.std_error)
        except NonExistence as exc:
            out = {"status": "n.a.", "reason": "NonExistence", "nodes": list(exc.nodes)}
        except (NonConvergence, ModelError, np.linalg.LinAlgError, ArithmeticError) as exc:
            out = {"status": "failed", "reason": f"{type(exc).__name__}: {exc}"}
        rec["fits"][est] = out
    return rec


def _job(args):
    return run_replication(*args)


def summarize(design: McDesign, records: list, estimators) -> McSummary:
    reps = len(records)
    params, apes, failures = {}, {}, []
    for est in estimators:
        fits = [(r, r["fits"].get(est)) for r in records]
        ok = [(r, f) for r, f in fits if f and f["status"] == "ok"]
        for r, f in fits:
            if f and f["status"] != "ok":
                failures.append({"rep": r["rep"], "estimator": est, **f})
        params[est] = {}
        apes[est] = {}
        if not ok:
            continue
        for nm in ok[0][1]["theta"]:
            err = np.array([f["theta"][nm] - r["truth"][nm] for r, f in ok])
            se = np.array([f["se"][nm] for r, f in ok])
            est_vals = np.array([f["theta"][nm] for r, f in ok])
            params[est][nm] = {"bias": float(np.median(err)), "sd": float(np.std(est_vals, ddof=1)) if len(ok) > 1 else 0.0,
                               "coverage": float(np.mean(np.abs(err) <= Z95 * se)),
                               "mean_se": float(np.mean(se)), "count": len(ok)}
        for nm in ok[0][1]["ape"]:
            err = np.array([f["ape"][nm][0] - r["true_ape"][nm] for r, f in ok])
            se = np.array([f["ape"][nm][1] for r, f in ok])
            vals = np.array([f["ape"][nm][0] for r, f in ok])
            apes[est][nm] = {"bias": float(np.median(err)), "sd": float(np.std(vals, ddof=1)) if len(ok) > 1 else 0.0,
                             "coverage": float(np.mean(np.abs(err) <= Z95 * se)),
                             "count": len(ok)}

    def rate(est):
        got = [r["fits"][est]["status"] == "ok" for r in records if est in r["fits"]]
        return float(np.mean(got)) if got else float("nan")

    keys = ("density", "reciprocity_share", "transitivity")
    mean_stats = {}
    for k in keys:
        vals = [r["stats"][k] for r in records if r["stats"].get(k) is not None]
        mean_stats[k] = float(np.mean(vals)) if vals else float("nan")
    return McSummary(design, reps, params, apes, rate(MLE), rate(PL), mean_stats, failures, records)


def run_mc(design: McDesign, n: int | None = None, reps: int = 1000, estimators=(MLE, EC, PL),
           ape_targets=DEFAULT_APES, options: SolverOptions | None = None,
           threads: int = 1, stats_only: bool = False) -> McSummary:
    """Replicate draw-simulate-fit ``reps`` times and aggregate.

    Results depend only on ``(design, n, reps, seed)``: every replication has
    its own stream and aggregation happens after collection, so ``threads``
    changes wall time only.
    """
    if reps < 1:
        raise DesignError("reps must be at least 1")
    if n is not None:
        design = replace(design, n=n)
    estimators = tuple(estimators) if not stats_only else ()
    jobs = [(design, r, estimators, tuple(ape_targets), options) for r in range(reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_job, jobs, chunksize=max(1, reps // (4 * threads))))
    else:
        records = [_job(j) for j in jobs]
    return summarize(design, records, estimators)
