"""Standard errors and average partial effects with trace bias correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DyadFrame, LambdaOperator, ModelError, ModelSpec, Params, hessian_frame
from .netgraph import Covariates, Network
from .solver import FitResult, HybridInverse, exact_inverse_apply


class ApeError(ValueError):
    pass


@dataclass(frozen=True)
class ApeTarget:
    """A regressor whose average partial effect is wanted.

    ``family`` is ``"X"`` (directed link covariate) or ``"Z"`` (symmetric
    dyad covariate).  ``outcome="mutual"`` targets the mutual-link
    probability instead of the single link; this is an extension.
    """

    name: str
    family: str
    kind: str = "continuous"
    outcome: str = "link"

    def __post_init__(self):
        if self.family not in ("X", "Z"):
            raise ApeError(f"family must be 'X' or 'Z', got {self.family!r}")
        if self.kind not in ("continuous", "binary"):
            raise ApeError(f"kind must be 'continuous' or 'binary', got {self.kind!r}")
        if self.outcome not in ("link", "mutual"):
            raise ApeError(f"outcome must be 'link' or 'mutual', got {self.outcome!r}")

    @classmethod
    def parse(cls, text: str, cov: Covariates) -> "ApeTarget":
        """Parse ``name:kind`` and locate the column among X then Z names."""
        name, _, kind = text.partition(":")
        kind = kind or "continuous"
        if name in cov.x_names:
            return cls(name, "X", kind)
        if name in cov.z_names:
            return cls(name, "Z", kind)
        raise ApeError(f"unknown regressor {name!r}")


@dataclass(frozen=True)
class ApeResult:
    delta_plugin: float
    trace_correction: float
    delta_corrected: float
    variance: float
    std_error: float


# ---------------------------------------------------------------------------
# covariance of theta


def information(H, hybrid: bool = False) -> np.ndarray:
    """Concentrated information ``-(H_tt + H_tl A H_lt)`` (unscaled).

    ``A`` is the exact ``(-H_ll)^{-1}`` by default.  ``hybrid=True`` uses
    ``S`` instead; ``S`` overstates the inverse along the all-ones direction,
    so a regressor that moves every link together (a constant) can get a
    non-positive entry that way.
    """
    apply = HybridInverse(H.neg_ll).apply if hybrid else exact_inverse_apply(H.neg_ll)
    J = -(H.H_tt + H.H_tl @ apply(H.H_tl.T))
    return 0.5 * (J + J.T)


def _fit_params(fit: FitResult) -> Params:
    theta = fit.theta_mle if fit.theta_mle is not None else fit.theta_hat
    return Params.from_theta(fit.spec, theta, fit.lambda_hat)


def theta_covariance(fit: FitResult, H=None, hybrid: bool = False) -> np.ndarray:
    """Covariance of theta-hat, the inverse of the concentrated information.

    Equals ``I_n^{-1}/N`` with ``I_n = -(H_tt + H_tl A H_lt)/N`` at the fitted
    parameters (the underlying MLE for EC fits); see :func:`information`.
    """
    if H is None:
        H = hessian_frame(DyadFrame(fit.cov, fit.spec, _fit_params(fit)))
    J = information(H, hybrid=hybrid)
    try:
        cov = np.linalg.inv(J)
    except np.linalg.LinAlgError:
        raise ModelError("estimated information matrix is singular") from None
    return 0.5 * (cov + cov.T)


def std_errors(fit: FitResult, hybrid: bool = False) -> np.ndarray:
    d = np.diag(theta_covariance(fit, hybrid=hybrid))
    return np.sqrt(np.where(d > 0, d, np.nan))


# ---------------------------------------------------------------------------
# APE pieces


def _column(target: ApeTarget, cov: Covariates, spec: ModelSpec) -> int:
    names = cov.x_names if target.family == "X" else cov.z_names
    dim = spec.dim_beta if target.family == "X" else spec.dim_rho
    if target.name not in names or names.index(target.name) >= dim:
        raise ApeError(f"regressor {target.name!r} is not in the fitted {target.family} block")
    if target.family == "X" and not spec.directed:
        raise ApeError("the undirected model has no X regressors")
    return names.index(target.name)


class _ApeGrid:
    """Dyad-level APE values and their derivatives in the frame variables.

    Frame variables are ``(B_ij, B_ji, C)`` for directed variants and the
    single link index for the undirected one.  ``D[a]`` holds first
    derivatives and ``DD[(a, b)]`` second derivatives for ``a, b`` among the
    fixed-effect carrying variables.  ``explicit`` is the derivative with
    respect to the target's own coefficient not already captured by the
    chain rule.
    """

    def __init__(self, cov: Covariates, spec: ModelSpec, params: Params, target: ApeTarget):
        k = _column(target, cov, spec)
        fr = DyadFrame(cov, spec, params)
        self.fr, self.spec, self.n = fr, spec, fr.n
        directed = spec.directed
        if target.outcome == "mutual" and not directed:
            raise ApeError("mutual-link APE needs a directed variant")
        o = 2 if target.outcome == "mutual" else 0
        if target.family == "X":
            W, coef, slot = fr.X[:, :, k], params.beta[k], 0
        else:
            W, coef, slot = fr.Z[:, :, k], params.rho[k], (2 if directed else 0)
        self.W, self.k, self.family = W, k, target.family
        nv = 3 if directed else 1
        lam_vars = (0, 1) if directed else (0,)
        self.lam_vars = lam_vars

        if target.kind == "continuous":
            m = fr.mom
            c = self._cum(m, directed)
            self.table = coef * c(o, slot)
            self.D = [coef * c(o, slot, b) for b in range(nv)]
            self.DD = {(a, b): coef * c(o, slot, a, b) for a in lam_vars for b in lam_vars if a <= b}
            self.explicit = c(o, slot)
        else:
            off = fr.offdiag
            if not np.all(np.isin(W[off], (0.0, 1.0))):
                raise ApeError(f"binary target {target.name!r} has values outside {{0, 1}}")
            self.table = 0.0
            self.D = [0.0] * nv
            self.DD = {(a, b): 0.0 for a in lam_vars for b in lam_vars if a <= b}
            self.explicit = 0.0
            for w, sgn in ((1.0, 1.0), (0.0, -1.0)):
                m = self._counterfactual(fr, coef, W, w, slot, directed)
                c = self._cum(m, directed)
                mean = m.mean[o] if directed else m.p
                self.table = self.table + sgn * mean
                for b in range(nv):
                    self.D[b] = self.D[b] + sgn * c(o, b)
                for key in self.DD:
                    self.DD[key] = self.DD[key] + sgn * c(o, *key)
                self.explicit = self.explicit + sgn * c(o, slot) * (w - W)
        self.table = fr.mask(self.table)
        self.D = [fr.mask(d) for d in self.D]
        self.DD = {key: fr.mask(v) for key, v in self.DD.items()}
        self.explicit = fr.mask(self.explicit)

    @staticmethod
    def _cum(m, directed):
        if directed:
            return lambda *idx: m.cum(*idx) if len(idx) > 1 else m.mean[idx[0]]
        return lambda *idx: m.cum(len(idx)) if len(idx) > 1 else m.p

    @staticmethod
    def _counterfactual(fr, coef, W, w, slot, directed):
        from .kernel import BernoulliMoments, DyadMoments

        shift = coef * (w - W)
        if not directed:
            return BernoulliMoments(fr.A + shift)
        B1 = fr.B + (shift if slot == 0 else 0.0)
        C = fr.C + (shift if slot == 2 else 0.0)
        return DyadMoments(B1, fr.B.T, C)

    # -- aggregated derivatives (APE is the mean over ordered pairs) --------

    @property
    def N(self):
        return self.n * (self.n - 1)

    def value(self) -> float:
        return float(self.table.sum() / self.N)

    def gradient(self):
        """``(d Delta / d theta, d Delta / d lam)``."""
        fr, D = self.fr, self.D
        if self.spec.directed:
            GB = D[0] + D[1].T
            GC = D[2] + D[2].T
            g_theta, g_lam = fr.chain(GB, GC)
        else:
            g_theta, g_lam = fr.chain(D[0] + D[0].T)
        ex = float(self.explicit.sum())
        idx = self.k if self.family == "X" else self.spec.dim_beta + self.k
        g_theta = g_theta.copy()
        g_theta[idx] += ex
        return g_theta / self.N, g_lam / self.N

    def lambda_operator(self) -> LambdaOperator:
        """``d^2 Delta / d lam d lam'`` as a structured operator."""
        DD = self.DD
        if self.spec.directed:
            h11 = DD[(0, 0)] + DD[(1, 1)].T
            h12 = DD[(0, 1)] + DD[(0, 1)].T
            return LambdaOperator(h11 / self.N, h12 / self.N)
        return LambdaOperator((DD[(0, 0)] + DD[(0, 0)].T) / self.N)


def ape_plugin(fit: FitResult, net: Network | None = None, cov: Covariates | None = None,
               spec: ModelSpec | None = None, target: ApeTarget | None = None,
               params: Params | None = None):
    """Plug-in APE and the dyad-level table ``Delta_ij`` (zero diagonal).

    ``params`` overrides the fitted values, e.g. to evaluate the true APE.
    """
    cov = cov if cov is not None else fit.cov
    spec = spec if spec is not None else fit.spec
    grid = _ApeGrid(cov, spec, params if params is not None else fit.params, target)
    return grid.value(), np.array(grid.table)


def ape_value(cov: Covariates, spec: ModelSpec, params: Params, target: ApeTarget) -> float:
    return _ApeGrid(cov, spec, params, target).value()


def _operator_trace(op: LambdaOperator, S: HybridInverse) -> float:
    """``tr(op @ S)`` using the block diagonal plus the rank-two aggregate part."""
    diag_blocks = op.blocks()
    t = float(np.einsum("nab,nba->", diag_blocks, S.blocks_inv))
    HU = np.column_stack([op.matvec(u) for u in S.U.T])
    t += float(np.trace(S.core_inv @ (S.U.T @ HU)))
    return t


def ape_corrected(fit: FitResult, net: Network | None = None, cov: Covariates | None = None,
                  spec: ModelSpec | None = None, target: ApeTarget | None = None,
                  dense: bool = False) -> ApeResult:
    """Plug-in APE minus half the trace of its fixed-effect Hessian against ``S``.

    The variance combines the common-parameter uncertainty, propagated along
    the concentrated fixed effects, with the direct fixed-effect uncertainty.
    It uses the exact ``(-H_ll)^{-1}``: the APE gradient in the fixed effects
    points mostly along all-ones, where ``S`` overstates the inverse.
    ``dense=True`` also takes the trace against the exact inverse and
    materializes the operators; it exists as a check on the structured path.
    """
    cov = cov if cov is not None else fit.cov
    spec = spec if spec is not None else fit.spec
    grid = _ApeGrid(cov, spec, fit.params, target)
    delta = grid.value()
    op = grid.lambda_operator()
    fr = DyadFrame(cov, spec, _fit_params(fit))
    Hp = hessian_frame(fr)
    if dense:
        Sd = np.linalg.inv(Hp.neg_ll.dense())
        tr = float(np.trace(op.dense() @ Sd))
        apply = lambda f: Sd @ f
    else:
        tr = _operator_trace(op, HybridInverse(Hp.neg_ll))
        apply = exact_inverse_apply(Hp.neg_ll)
    corr = 0.5 * tr
    var = ape_variance(fit, Hp, grid.gradient(), apply)
    N = grid.N
    return ApeResult(delta, corr, delta - corr, var, float(np.sqrt(var / N)))


def ape_variance(fit: FitResult, H, grads, apply=None) -> float:
    """``N`` times the delta-method variance of the APE.

    ``grads = (d Delta / d theta, d Delta / d lam)``; ``apply`` maps a vector
    through ``(-H_ll)^{-1}`` (defaults to the exact inverse).
    """
    g_theta, g_lam = grads
    if apply is None:
        apply = exact_inverse_apply(H.neg_ll)
    n = fit.net.n
    N = n * (n - 1)
    Sg = apply(g_lam)
    a = g_theta + H.H_tl @ Sg
    J = information(H)
    if a.size:
        quad = float(a @ np.linalg.solve(J, a))
    else:
        quad = 0.0
    v = N * (quad + float(g_lam @ Sg))
    return max(v, 0.0)
