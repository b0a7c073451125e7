"""MLE, penalized-likelihood and corrected estimators.

Estimation is nested: an inner damped Newton loop solves for the fixed
effects at given common parameters, and an outer BFGS loop climbs the
concentrated objective, whose gradient is the partial theta-derivative at the
inner solution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, cg

from .model import (
    Covariates,
    DyadFrame,
    HessianParts,
    LambdaOperator,
    ModelSpec,
    Network,
    Params,
    hessian_frame,
    log_likelihood_frame,
    score_frame,
    _check_inputs,
)
from .netgraph import TrimTrace, trim_iteratively
from .penalty import BoundaryError, penalty_frame, penalty_grad_frame, penalty_hess_lambda_frame

log = logging.getLogger(__name__)

MLE, PL, EC = "MLE", "PL", "EC"

_ROUNDOFF = 1e-13
_STEP_TOL = 1e-4


class NonExistence(RuntimeError):
    """The unpenalized maximum likelihood estimate does not exist."""

    def __init__(self, nodes=(), message=None):
        self.nodes = tuple(int(i) for i in nodes)
        super().__init__(message or f"MLE does not exist: estimates diverge for nodes {self.nodes}")


class NonConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    tol: float | None = None  # outer sup-norm tolerance; None means 1e-6 * n(n-1)
    inner_tol: float = 1e-8  # scaled by max(1, n)
    max_iter: int = 200
    max_inner: int = 200
    diverge_threshold: float = 30.0
    trim: bool = False
    dense_limit: int = 1000  # largest lambda size solved densely
    armijo: float = 1e-4
    inner_warm_start: bool = True


# ---------------------------------------------------------------------------
# hybrid inverse


class HybridInverse:
    """Block-diagonal inverse plus a low-rank correction along aggregate directions.

    ``S f = D^{-1} f + U (U' A U)^{-1} U' f`` with ``A = -H_lam_lam`` and
    ``D`` its node blocks.
    """

    def __init__(self, neg_ll: LambdaOperator):
        self.op = neg_ll
        blocks = neg_ll.blocks()
        try:
            self.blocks_inv = np.linalg.inv(blocks)
        except np.linalg.LinAlgError:
            raise BoundaryError(np.flatnonzero(np.abs(np.linalg.det(blocks)) < 1e-300)) from None
        self.k = neg_ll.k
        self.U = neg_ll.basis()
        AU = np.column_stack([neg_ll.matvec(u) for u in self.U.T])
        self.core = self.U.T @ AU
        self.core_inv = np.linalg.inv(self.core)

    def apply(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, float)
        mat = f.ndim == 2
        F = f if mat else f[:, None]
        m = self.blocks_inv.shape[0]
        Fb = F.reshape(m, self.k, -1)
        out = np.einsum("nab,nbc->nac", self.blocks_inv, Fb).reshape(F.shape)
        out = out + self.U @ (self.core_inv @ (self.U.T @ F))
        return out if mat else out[:, 0]

    def dense(self) -> np.ndarray:
        return linalg.block_diag(*self.blocks_inv) + self.U @ self.core_inv @ self.U.T


def hybrid_inverse_apply(H: HessianParts, f) -> np.ndarray:
    return HybridInverse(H.neg_ll).apply(f)


# ---------------------------------------------------------------------------
# inner problem


@dataclass
class InnerResult:
    lam: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    frame: DyadFrame


def _objective(net, fr, penalized):
    val = log_likelihood_frame(net, fr)
    if penalized:
        try:
            val += penalty_frame(fr).eta
        except BoundaryError:
            return -np.inf
    return val


def _lam_grad(net, fr, penalized):
    g = score_frame(net, fr)[1]
    if penalized:
        g = g + penalty_grad_frame(fr)[1]
    return g


def _newton_direction(net, fr, g, penalized, opts):
    Hp = hessian_frame(fr)
    size = Hp.neg_ll.size
    if size > opts.dense_limit:
        hyb = HybridInverse(Hp.neg_ll)
        A = LinearOperator((size, size), matvec=Hp.neg_ll.matvec)
        M = LinearOperator((size, size), matvec=hyb.apply)
        d, _ = cg(A, g, M=M, rtol=1e-10, maxiter=200)
        return d
    A = Hp.neg_ll.dense()
    if penalized:
        A = A - penalty_hess_lambda_frame(fr)
    scale = max(1.0, float(np.max(np.abs(np.diag(A)))))
    shift = 0.0
    for _ in range(60):
        try:
            c = linalg.cho_factor(A + shift * np.eye(size), check_finite=False)
            return linalg.cho_solve(c, g, check_finite=False)
        except linalg.LinAlgError:
            shift = max(2.0 * shift, 1e-10 * scale)
    raise NonConvergence("could not build a positive definite Newton matrix")


def _inner(net, cov, spec, theta, lam0, penalized, opts) -> InnerResult:
    n = net.n
    tol = opts.inner_tol * max(1.0, n)
    lam = np.array(lam0, float)
    fr = DyadFrame(cov, spec, Params.from_theta(spec, theta, lam))
    f = _objective(net, fr, penalized)
    if not np.isfinite(f):
        lam = np.zeros_like(lam)
        fr = DyadFrame(cov, spec, Params.from_theta(spec, theta, lam))
        f = _objective(net, fr, penalized)
    gnorm = np.inf
    for it in range(opts.max_inner + 1):
        g = _lam_grad(net, fr, penalized)
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= tol and (penalized or not g.size):
            return InnerResult(lam, f, gnorm, it, True, fr)
        if it == opts.max_inner:
            break
        d = _newton_direction(net, fr, g, penalized, opts)
        # along a recession direction the gradient vanishes like exp(lambda) while
        # the Newton step stays of order one, so the step decides convergence
        if gnorm <= tol and float(np.max(np.abs(d))) <= _STEP_TOL:
            return InnerResult(lam, f, gnorm, it, True, fr)
        slope = float(g @ d)
        if slope <= 0:  # fall back to steepest ascent
            d, slope = g, float(g @ g)
        t = 1.0
        # below roundoff of f the Armijo test is noise; trust the Newton step
        tiny = slope <= _ROUNDOFF * max(1.0, abs(f))
        while True:
            trial = lam + t * d
            fr_t = DyadFrame(cov, spec, Params.from_theta(spec, theta, trial))
            f_t = _objective(net, fr_t, penalized)
            if f_t >= f + opts.armijo * t * slope or (tiny and np.isfinite(f_t)):
                break
            t *= 0.5
            if t < 1e-12:
                # no further ascent possible at machine precision
                return InnerResult(lam, f, gnorm, it, gnorm <= 1e3 * tol, fr)
        improved = f_t >= f - _ROUNDOFF * max(1.0, abs(f))
        lam, fr, f = trial, fr_t, f_t
        if not penalized and improved:
            big = np.flatnonzero(np.abs(lam) > opts.diverge_threshold)
            if big.size:
                k = 2 if spec.directed else 1
                raise NonExistence(sorted(set((big // k).tolist())))
    return InnerResult(lam, f, gnorm, opts.max_inner, False, fr)


def inner_newton_lambda(net: Network, cov: Covariates, spec: ModelSpec, theta, lambda0,
                        penalized: bool, options: SolverOptions | None = None):
    """Maximize the (penalized) log-likelihood over the fixed effects at fixed theta.

    Returns ``(lambda_hat, diagnostics)``.  Raises :class:`NonExistence` when an
    unpenalized solve runs off to infinity.
    """
    _check_inputs(net, cov, spec)
    res = _inner(net, cov, spec, np.asarray(theta, float), lambda0, penalized, options or SolverOptions())
    diag = {"objective": res.objective, "grad_norm": res.grad_norm,
            "iterations": res.iterations, "converged": res.converged}
    return res.lam, diag


# ---------------------------------------------------------------------------
# outer problem


@dataclass
class FitResult:
    spec: ModelSpec
    estimator: str
    theta_hat: np.ndarray
    lambda_hat: np.ndarray
    loglik: float
    penalized_obj: float | None
    converged: bool
    trace: list = field(default_factory=list)
    existence: dict = field(default_factory=dict)
    net: Network | None = None
    cov: Covariates | None = None
    info_hat: np.ndarray | None = None  # EC only
    bias_hat: np.ndarray | None = None  # EC only
    theta_mle: np.ndarray | None = None  # EC only: the MLE it corrects

    @property
    def params(self) -> Params:
        return Params.from_theta(self.spec, self.theta_hat, self.lambda_hat)

    @property
    def n(self) -> int:
        return self.net.n


def _theta_grad(net, fr, penalized):
    g = score_frame(net, fr)[0]
    if penalized:
        g = g + penalty_grad_frame(fr)[0]
    return g


def _concentrated_curvature(fr):
    """Concentrated information ``-(H_tt + H_tl A^{-1} H_lt)`` of the log-likelihood."""
    Hp = hessian_frame(fr)
    if Hp.H_tt.size == 0:
        return Hp.H_tt
    if Hp.neg_ll.size <= 2000:
        sol = linalg.solve(Hp.neg_ll.dense(), Hp.H_tl.T, assume_a="pos")
    else:
        sol = HybridInverse(Hp.neg_ll).apply(Hp.H_tl.T)
    return -(Hp.H_tt + Hp.H_tl @ sol)


def _nested_fit(net, cov, spec, penalized, opts, theta0=None, lam0=None):
    n = net.n
    N = n * (n - 1)
    tol = opts.tol if opts.tol is not None else 1e-6 * N
    k = spec.dim_theta
    theta = np.zeros(k) if theta0 is None else np.array(theta0, float)
    lam = np.zeros(spec.n_lambda(n)) if lam0 is None else np.array(lam0, float)
    zeros = np.zeros_like(lam)

    def solve(th, start):
        return _inner(net, cov, spec, th, start if opts.inner_warm_start else zeros, penalized, opts)

    inner = solve(theta, lam)
    trace = []
    if k == 0:
        trace.append({"iter": 0, "objective": inner.objective, "grad_norm": 0.0, "step": 0.0})
        return theta, inner, True, trace

    g = _theta_grad(net, inner.frame, penalized)
    Hinv = None
    converged = False
    for it in range(opts.max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        trace.append({"iter": it, "objective": inner.objective, "grad_norm": gnorm,
                      "inner_grad_norm": inner.grad_norm})
        if gnorm <= tol and inner.converged:
            converged = True
            break
        if it == opts.max_iter:
            break
        if Hinv is None:
            J = _concentrated_curvature(inner.frame)
            try:
                Hinv = np.linalg.inv(J)
                if np.any(np.linalg.eigvalsh((Hinv + Hinv.T) / 2) <= 0):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                Hinv = np.eye(k) / max(1.0, float(np.max(np.abs(np.diag(J)))))
        d = Hinv @ g
        slope = float(g @ d)
        if slope <= 0:
            Hinv = None
            d = g / max(1.0, gnorm)
            slope = float(g @ d)
        t = 1.0
        tiny = slope <= _ROUNDOFF * max(1.0, abs(inner.objective))
        while True:
            th_t = theta + t * d
            inner_t = solve(th_t, inner.lam)
            if (inner_t.objective >= inner.objective + opts.armijo * t * slope
                    or (tiny and np.isfinite(inner_t.objective))):
                break
            t *= 0.5
            if t < 1e-10:
                break
        if t < 1e-10:
            # cannot improve further; accept current point if nearly stationary
            trace[-1]["stalled"] = True
            converged = gnorm <= 1e2 * tol and inner.converged
            break
        g_t = _theta_grad(net, inner_t.frame, penalized)
        s = th_t - theta
        y = g - g_t  # ascent problem: curvature of the negated objective
        theta, inner, g_old, g = th_t, inner_t, g, g_t
        trace[-1]["step"] = t
        if not penalized and np.any(np.abs(theta) > opts.diverge_threshold):
            raise NonExistence((), "MLE does not exist: common parameters diverge")
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            rho_ = 1.0 / sy
            V = np.eye(k) - rho_ * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho_ * np.outer(s, s)
    return theta, inner, converged, trace


def _finish(net, cov, spec, estimator, theta, inner, converged, trace, existence):
    fr = inner.frame
    ll = log_likelihood_frame(net, fr)
    pen = None
    if estimator == PL:
        pen = ll + penalty_frame(fr).eta
    return FitResult(spec, estimator, theta, inner.lam, ll, pen, converged, trace,
                     existence, net, cov)


def fit_mle(net: Network, cov: Covariates, spec: ModelSpec,
            options: SolverOptions | None = None) -> FitResult:
    """Fixed-effects maximum likelihood.

    Raises :class:`NonExistence` if the estimates diverge, unless
    ``options.trim`` is set, in which case the fit is redone on the
    iteratively trimmed subnetwork and the trim trace is recorded.
    """
    opts = options or SolverOptions()
    _check_inputs(net, cov, spec)
    try:
        theta, inner, conv, trace = _nested_fit(net, cov, spec, False, opts)
        return _finish(net, cov, spec, MLE, theta, inner, conv, trace,
                       {"exists": True, "diverged": (), "trimmed_sample": None})
    except NonExistence as exc:
        if not opts.trim:
            raise
        diverged = exc.nodes
    sub, trim = trim_iteratively(net)
    log.info("MLE diverged; refitting on trimmed sample of %d nodes", sub.n)
    if sub.n < 3:
        raise NonExistence(diverged, "MLE does not exist and trimming leaves fewer than 3 nodes")
    subcov = cov.subset(trim.surviving)
    theta, inner, conv, trace = _nested_fit(sub, subcov, spec, False, replace(opts, trim=False))
    return _finish(sub, subcov, spec, MLE, theta, inner, conv, trace,
                   {"exists": False, "diverged": diverged, "trimmed_sample": trim})


def fit_pl(net: Network, cov: Covariates, spec: ModelSpec,
           options: SolverOptions | None = None) -> FitResult:
    """Penalized likelihood on the full observed network; never trims."""
    opts = replace(options or SolverOptions(), trim=False)
    _check_inputs(net, cov, spec)
    theta, inner, conv, trace = _nested_fit(net, cov, spec, True, opts)
    return _finish(net, cov, spec, PL, theta, inner, conv, trace,
                   {"exists": True, "diverged": (), "trimmed_sample": None})


_DENSE_INFO_LIMIT = 4000


def exact_inverse_apply(op: LambdaOperator):
    """``(-H_ll)^{-1}`` action by Cholesky, or by S-preconditioned CG when large."""
    if op.size <= _DENSE_INFO_LIMIT:
        c = linalg.cho_factor(op.dense())
        return lambda f: linalg.cho_solve(c, f)
    hyb = HybridInverse(op)
    A = LinearOperator((op.size, op.size), matvec=op.matvec)
    M = LinearOperator((op.size, op.size), matvec=hyb.apply)

    def apply(f):
        f = np.asarray(f, float)
        cols = f.reshape(op.size, -1)
        out = np.column_stack([cg(A, c, M=M, rtol=1e-12, maxiter=500)[0] for c in cols.T])
        return out.reshape(f.shape)
    return apply


def bias_terms(fit: FitResult):
    """Information and leading-bias estimates at an MLE fit.

    Returns ``(I_n, B_n, shift)`` with ``shift = -(1/(n-1)) I_n^{-1} B_n`` the
    correction added to the MLE.
    """
    net, cov, spec = fit.net, fit.cov, fit.spec
    n = net.n
    fr = DyadFrame(cov, spec, fit.params)
    Hp = hessian_frame(fr)
    # exact Schur complement: S overstates the inverse along all-ones and can
    # make the information indefinite when a regressor is constant
    inv = exact_inverse_apply(Hp.neg_ll)
    info = -(Hp.H_tt + Hp.H_tl @ inv(Hp.H_tl.T)) / (n - 1) ** 2
    info = 0.5 * (info + info.T)
    d_theta, d_lam = penalty_grad_frame(fr)
    lam_part = inv(d_lam)
    # total derivative of the penalty along the concentrated path
    conc = d_theta + Hp.H_tl @ lam_part
    bias = -conc / (n - 1)
    shift = -np.linalg.solve(info, bias) / (n - 1)
    return info, bias, shift


def fit_ec(net: Network, cov: Covariates, spec: ModelSpec,
           options: SolverOptions | None = None, mle: FitResult | None = None) -> FitResult:
    """Analytically bias-corrected MLE; unavailable when the MLE does not exist."""
    opts = replace(options or SolverOptions(), trim=False)
    if mle is None:
        mle = fit_mle(net, cov, spec, opts)
    elif not mle.existence.get("exists", False):
        raise NonExistence(mle.existence.get("diverged", ()))
    info, bias, shift = bias_terms(mle)
    return replace(mle, estimator=EC, theta_hat=mle.theta_hat + shift,
                   info_hat=info, bias_hat=bias, theta_mle=mle.theta_hat,
                   trace=list(mle.trace))
