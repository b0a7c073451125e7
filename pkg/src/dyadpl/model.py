"""Stationary dyadic likelihood, score and Hessian blocks.

Fixed effects are stored node-ordered, ``lam = (a_1, g_1, ..., a_{n-1}, g_{n-1})``
for the directed variants and ``lam = (a_1, ..., a_{n-1})`` for the undirected
one; the last node's effects are pinned at zero.

Internally every quantity is laid out on an ``(n, n)`` grid of ordered pairs.
Entry ``[i, j]`` of a grid is read in the frame of the pair ``(i, j)``: the
first dyad index is ``B_ij``, the second ``B_ji``.  Each unordered dyad then
appears twice, once per frame, and symmetric quantities (``C``, ``p11``,
``cov(g_ij, g_ji)``) agree across the two frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .kernel import BernoulliMoments, DyadMoments
from .netgraph import Covariates, Network


class Variant(str, Enum):
    RECIPROCAL = "reciprocal"
    DIRECTED = "directed"  # no reciprocity: rho fixed at 0
    UNDIRECTED = "undirected"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant
    dim_beta: int
    dim_rho: int

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is Variant.DIRECTED and self.dim_rho != 0:
            raise ModelError("the directed model without reciprocity has dim_rho = 0")
        if self.variant is Variant.UNDIRECTED and self.dim_beta != 0:
            raise ModelError("the undirected model has dim_beta = 0")

    @property
    def directed(self) -> bool:
        return self.variant is not Variant.UNDIRECTED

    @property
    def dim_theta(self) -> int:
        return self.dim_beta + self.dim_rho

    def n_lambda(self, n: int) -> int:
        return 2 * n - 2 if self.directed else n - 1

    @classmethod
    def for_covariates(cls, variant, cov: Covariates) -> "ModelSpec":
        variant = Variant(variant)
        kb = 0 if variant is Variant.UNDIRECTED else cov.dim_beta
        kr = 0 if variant is Variant.DIRECTED else cov.dim_rho
        return cls(variant, kb, kr)


@dataclass(frozen=True)
class Params:
    beta: np.ndarray
    rho: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        for name in ("beta", "rho", "lam"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            if not np.all(np.isfinite(v)):
                raise ModelError(f"{name} has non-finite entries")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.beta, self.rho])

    @classmethod
    def from_theta(cls, spec: ModelSpec, theta, lam) -> "Params":
        theta = np.asarray(theta, float)
        return cls(theta[:spec.dim_beta], theta[spec.dim_beta:], lam)

    @classmethod
    def zeros(cls, spec: ModelSpec, n: int) -> "Params":
        return cls(np.zeros(spec.dim_beta), np.zeros(spec.dim_rho), np.zeros(spec.n_lambda(n)))

    def check(self, spec: ModelSpec, n: int) -> None:
        if self.beta.size != spec.dim_beta or self.rho.size != spec.dim_rho:
            raise ModelError("parameter dimensions do not match the model spec")
        if self.lam.size != spec.n_lambda(n):
            raise ModelError(f"lambda has length {self.lam.size}, expected {spec.n_lambda(n)}")


def node_effects(spec: ModelSpec, lam, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Full-length sender and receiver effects with node ``n`` set to zero."""
    lam = np.asarray(lam, float)
    alpha = np.zeros(n)
    gamma = np.zeros(n)
    if spec.directed:
        alpha[:-1] = lam[0::2]
        gamma[:-1] = lam[1::2]
    else:
        alpha[:-1] = lam
        gamma[:-1] = lam
    return alpha, gamma


def pack_effects(spec: ModelSpec, alpha, gamma) -> np.ndarray:
    """Inverse of :func:`node_effects` after renormalising node ``n`` to zero."""
    alpha = np.asarray(alpha, float)
    gamma = np.asarray(gamma, float)
    if spec.directed:
        lam = np.empty(2 * (alpha.size - 1))
        lam[0::2] = alpha[:-1] - alpha[-1]
        lam[1::2] = gamma[:-1] - gamma[-1]
        return lam
    return alpha[:-1] - alpha[-1]


@dataclass(frozen=True)
class DyadIndices:
    B_ij: float
    B_ji: float
    C_ij: float


def dyad_indices(params: Params, cov: Covariates, spec: ModelSpec, i: int, j: int) -> DyadIndices:
    """Utility indices of one dyad.

    For the undirected variant the single link index is returned in ``C_ij``
    and ``B_ij = B_ji = 0``.
    """
    n = cov.n
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise ModelError(f"invalid dyad ({i}, {j}) for n={n}")
    params.check(spec, n)
    alpha, gamma = node_effects(spec, params.lam, n)
    c = float(cov.Z[i, j, :spec.dim_rho] @ params.rho) if spec.dim_rho else 0.0
    if not spec.directed:
        return DyadIndices(0.0, 0.0, c + alpha[i] + alpha[j])
    xb_ij = float(cov.X[i, j, :spec.dim_beta] @ params.beta) if spec.dim_beta else 0.0
    xb_ji = float(cov.X[j, i, :spec.dim_beta] @ params.beta) if spec.dim_beta else 0.0
    return DyadIndices(xb_ij + alpha[i] + gamma[j], xb_ji + alpha[j] + gamma[i], c)


# ---------------------------------------------------------------------------
# fixed-effect Hessian operator


class LambdaOperator:
    """Symmetric matrix over the fixed effects built from dyad second derivatives.

    A dyad-additive function of the indices has, on the ordered-pair grid,
    second derivatives ``h11[i, j] = d^2/dB_ij^2`` and
    ``h12[i, j] = d^2/dB_ij dB_ji``.  Its Hessian in ``lam`` is never stored;
    this object applies it, extracts its node blocks, or densifies it for
    small ``n``.  With ``h12 = None`` the single-effect (undirected) layout is
    used and ``h11`` holds the second derivative in the symmetric link index.
    """

    def __init__(self, h11: np.ndarray, h12: np.ndarray | None = None):
        self.h11 = h11
        self.h12 = h12
        self.n = h11.shape[0]
        self.k = 1 if h12 is None else 2
        self.size = self.k * (self.n - 1)

    def blocks(self) -> np.ndarray:
        """Node blocks ``(n-1, k, k)`` on the diagonal."""
        h11, h12, m = self.h11, self.h12, self.n - 1
        if h12 is None:
            return h11.sum(axis=1)[:m, None, None]
        out = np.empty((m, 2, 2))
        out[:, 0, 0] = h11.sum(axis=1)[:m]
        out[:, 1, 1] = h11.sum(axis=0)[:m]
        out[:, 0, 1] = out[:, 1, 0] = h12.sum(axis=1)[:m]
        return out

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, float)
        h11, h12 = self.h11, self.h12
        if h12 is None:
            a = np.append(v, 0.0)
            out = h11.sum(axis=1) * a + h11 @ a
            return out[:-1]
        a = np.zeros(self.n)
        g = np.zeros(self.n)
        a[:-1] = v[0::2]
        g[:-1] = v[1::2]
        c12 = h12.sum(axis=1)
        oa = h11.sum(axis=1) * a + h12 @ a + h11 @ g + c12 * g
        og = h11.T @ a + c12 * a + h11.sum(axis=0) * g + h12 @ g
        out = np.empty(self.size)
        out[0::2] = oa[:-1]
        out[1::2] = og[:-1]
        return out

    def dense(self) -> np.ndarray:
        h11, h12, n = self.h11, self.h12, self.n
        if h12 is None:
            M = h11 + np.diag(h11.sum(axis=1))
            return M[:-1, :-1].copy()
        M = np.empty((2 * n, 2 * n))
        c12 = h12.sum(axis=1)
        M[0::2, 0::2] = np.diag(h11.sum(axis=1)) + h12
        M[0::2, 1::2] = h11 + np.diag(c12)
        M[1::2, 0::2] = h11.T + np.diag(c12)
        M[1::2, 1::2] = np.diag(h11.sum(axis=0)) + h12
        return M[:-2, :-2].copy()

    def basis(self) -> np.ndarray:
        """Aggregate directions ``[u+, u-]`` (``[u+]`` with one effect per node)."""
        up = np.ones(self.size)
        if self.k == 1:
            return up[:, None]
        um = np.ones(self.size)
        um[1::2] = -1.0
        return np.column_stack([up, um])


# ---------------------------------------------------------------------------
# evaluation on the ordered-pair grid


class DyadFrame:
    """All dyad-level quantities at one parameter value."""

    def __init__(self, cov: Covariates, spec: ModelSpec, params: Params):
        n = cov.n
        if spec.dim_beta > cov.dim_beta or spec.dim_rho > cov.dim_rho:
            raise ModelError("model spec asks for more covariates than supplied")
        params.check(spec, n)
        self.cov, self.spec, self.params, self.n = cov, spec, params, n
        self.X = cov.X[:, :, :spec.dim_beta]
        self.Z = cov.Z[:, :, :spec.dim_rho]
        self.offdiag = ~np.eye(n, dtype=bool)
        alpha, gamma = node_effects(spec, params.lam, n)
        C = self.Z @ params.rho if spec.dim_rho else np.zeros((n, n))
        if spec.directed:
            XB = self.X @ params.beta if spec.dim_beta else np.zeros((n, n))
            self.B = XB + alpha[:, None] + gamma[None, :]
            self.C = C
            self.mom = DyadMoments(self.B, self.B.T, self.C)
        else:
            self.A = C + alpha[:, None] + alpha[None, :]
            self.mom = BernoulliMoments(self.A)

    def mask(self, M):
        return np.where(self.offdiag, M, 0.0)

    # -- first-order chain rule -------------------------------------------

    def chain(self, GB, GC=None):
        """Map grid derivatives to ``(d/dtheta, d/dlam)``.

        Directed: ``GB[i, j]`` is the derivative of a dyad-additive function
        with respect to ``B_ij`` and ``GC[i, j]`` its derivative with respect to
        the dyad's ``C`` (symmetric).  Undirected: ``GB`` is the derivative with
        respect to the symmetric link index and ``GC`` is ignored.
        """
        spec, n = self.spec, self.n
        GB = self.mask(GB)
        if spec.directed:
            gb = np.einsum("ij,ijk->k", GB, self.X)
            if spec.dim_rho:
                gr = 0.5 * np.einsum("ij,ijk->k", self.mask(GC), self.Z)
            else:
                gr = np.zeros(0)
            lam = np.empty(2 * n - 2)
            lam[0::2] = GB.sum(axis=1)[:-1]
            lam[1::2] = GB.sum(axis=0)[:-1]
            return np.concatenate([gb, gr]), lam
        gr = 0.5 * np.einsum("ij,ijk->k", GB, self.Z)
        return gr, GB.sum(axis=1)[:-1]

    # -- second-order chain rule ------------------------------------------

    def second(self, phi):
        """Hessian pieces of a dyad-additive function.

        ``phi[(a, b)]`` are grid second derivatives in the frame variables
        (0: ``B_ij``, 1: ``B_ji``, 2: ``C``); for the undirected layout pass a
        single grid under key ``(0, 0)``.  Returns ``(H_tt, H_tl, LambdaOperator)``.
        """
        spec, n, X, Z = self.spec, self.n, self.X, self.Z
        kb, kr = spec.dim_beta, spec.dim_rho
        get = lambda a, b: self.mask(phi[(min(a, b), max(a, b))])
        if not spec.directed:
            h = get(0, 0)
            tt = 0.5 * np.einsum("ij,ijk,ijl->kl", h, Z, Z)
            tl = np.einsum("ij,ijk->ki", h, Z)[:, :-1]
            return tt, tl, LambdaOperator(h)
        p00, p01 = get(0, 0), get(0, 1)
        p11 = get(1, 1)
        tt = np.zeros((kb + kr, kb + kr))
        tl = np.zeros((kb + kr, 2 * n - 2))
        Xt = X.transpose(1, 0, 2)
        if kb:
            tt[:kb, :kb] = (np.einsum("ij,ijk,ijl->kl", p00, X, X)
                            + np.einsum("ij,ijk,ijl->kl", p01, X, Xt))
            ta = np.einsum("ij,ijk->ki", p00, X) + np.einsum("ij,ijk->ki", p01, Xt)
            tg = np.einsum("ij,ijk->ki", p01, X) + np.einsum("ij,ijk->ki", p11, Xt)
            tl[:kb, 0::2] = ta[:, :-1]
            tl[:kb, 1::2] = tg[:, :-1]
        if kr:
            p02, p12, p22 = get(0, 2), get(1, 2), get(2, 2)
            tt[kb:, kb:] = 0.5 * np.einsum("ij,ijk,ijl->kl", p22, Z, Z)
            if kb:
                cross = np.einsum("ij,ijk,ijl->kl", p02, X, Z)
                tt[:kb, kb:] = cross
                tt[kb:, :kb] = cross.T
            tl[kb:, 0::2] = np.einsum("ij,ijk->ki", p02, Z)[:, :-1]
            tl[kb:, 1::2] = np.einsum("ij,ijk->ki", p12, Z)[:, :-1]
        return tt, tl, LambdaOperator(p00, p01)

    def cov_second(self):
        """``phi`` for minus the log-likelihood Hessian (model covariance)."""
        m = self.mom
        if not self.spec.directed:
            return {(0, 0): m.cum(2)}
        return {(a, b): m.cum(a, b) for a in range(3) for b in range(a, 3)}


def _check_inputs(net: Network, cov: Covariates, spec: ModelSpec):
    if net.n != cov.n:
        raise ModelError(f"network has {net.n} nodes, covariates {cov.n}")
    if not spec.directed and not net.is_symmetric():
        raise ModelError("the undirected model needs a symmetric adjacency matrix")


def log_likelihood_frame(net: Network, fr: DyadFrame) -> float:
    G = net.adjacency.astype(float)
    if fr.spec.directed:
        lin = fr.mask(G * fr.B).sum() + 0.5 * fr.mask(G * G.T * fr.C).sum()
    else:
        lin = 0.5 * fr.mask(G * fr.A).sum()
    return float(lin - 0.5 * fr.mask(fr.mom.logK).sum())


def score_frame(net: Network, fr: DyadFrame):
    G = net.adjacency.astype(float)
    m = fr.mom
    if fr.spec.directed:
        return fr.chain(G - m.p, G * G.T - m.p11)
    return fr.chain(G - m.p)


def log_likelihood(net: Network, cov: Covariates, spec: ModelSpec, params: Params) -> float:
    """Sum over unordered dyads of the log state probability."""
    _check_inputs(net, cov, spec)
    return log_likelihood_frame(net, DyadFrame(cov, spec, params))


def score(net: Network, cov: Covariates, spec: ModelSpec, params: Params):
    """``(d l / d theta, d l / d lam)``: observed minus expected statistics."""
    _check_inputs(net, cov, spec)
    return score_frame(net, DyadFrame(cov, spec, params))


@dataclass
class HessianParts:
    """Pieces of the log-likelihood Hessian.

    ``H_tt`` and ``H_tl`` are blocks of the Hessian itself; ``neg_ll`` is the
    operator for ``-H_lam_lam`` whose node blocks are the ``D_i`` matrices.
    """

    H_tt: np.ndarray
    H_tl: np.ndarray
    neg_ll: LambdaOperator

    @property
    def blocks(self) -> np.ndarray:
        return self.neg_ll.blocks()

    @property
    def dyad_cov(self):
        """Grids ``(var(g_ij), cov(g_ij, g_ji))`` giving the cross-node entries."""
        return self.neg_ll.h11, self.neg_ll.h12

    def dense_neg_ll(self) -> np.ndarray:
        return self.neg_ll.dense()


def hessian_frame(fr: DyadFrame) -> HessianParts:
    tt, tl, op = fr.second(fr.cov_second())
    return HessianParts(-tt, -tl, op)


def hessian_parts(net: Network, cov: Covariates, spec: ModelSpec, params: Params) -> HessianParts:
    _check_inputs(net, cov, spec)
    return hessian_frame(DyadFrame(cov, spec, params))
