"""Log-determinant penalty built from the node blocks of the fixed-effect information."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Covariates, DyadFrame, LambdaOperator, ModelSpec, Network, Params

DET_FLOOR = 1e-300

# perturbation basis for a symmetric 2x2 block: d(r), d(s), d(c)
_BASIS = np.array([[[1.0, 0.0], [0.0, 0.0]],
                   [[0.0, 0.0], [0.0, 1.0]],
                   [[0.0, 1.0], [1.0, 0.0]]])


class BoundaryError(ArithmeticError):
    """A node block is (numerically) singular: parameters at the boundary."""

    def __init__(self, nodes):
        self.nodes = tuple(int(i) for i in nodes)
        super().__init__(f"singular information block for nodes {self.nodes}")


@dataclass
class PenaltyBlocks:
    blocks: np.ndarray  # (n-1, k, k)
    eta: float


def _dets(blocks):
    if blocks.shape[1] == 1:
        det = blocks[:, 0, 0].copy()
    else:
        det = blocks[:, 0, 0] * blocks[:, 1, 1] - blocks[:, 0, 1] ** 2
    bad = np.flatnonzero(~(det > DET_FLOOR))
    if bad.size:
        raise BoundaryError(bad)
    return det


def penalty_frame(fr: DyadFrame) -> PenaltyBlocks:
    blocks = _blocks(fr)
    det = _dets(blocks)
    return PenaltyBlocks(blocks, float(0.5 * np.log(det).sum()))


def _blocks(fr: DyadFrame) -> np.ndarray:
    m = fr.mom
    if fr.spec.directed:
        return LambdaOperator(fr.mask(m.cum(0, 0)), fr.mask(m.cum(0, 1))).blocks()
    return LambdaOperator(fr.mask(m.cum(2))).blocks()


class _Weights:
    """First-order weights of eta on the dyad covariances at one point."""

    def __init__(self, fr: DyadFrame):
        self.fr = fr
        self.blocks = _blocks(fr)
        det = _dets(self.blocks)
        self.det = det
        n = fr.n
        if fr.spec.directed:
            r, s, c = self.blocks[:, 0, 0], self.blocks[:, 1, 1], self.blocks[:, 0, 1]
            self.wr = np.append(0.5 * s / det, 0.0)
            self.ws = np.append(0.5 * r / det, 0.0)
            self.wc = np.append(-c / det, 0.0)
            # eta ~ sum_ij u[i,j] var(g_ij) + sum_{i<j} kap[i,j] cov(g_ij, g_ji)
            self.u = self.wr[:, None] + self.ws[None, :]
            self.kap = self.wc[:, None] + self.wc[None, :]
        else:
            self.w = np.append(0.5 / det, 0.0)
            self.u = self.w[:, None] + self.w[None, :]
        self.n = n

    def grid_grad(self):
        m, u = self.fr.mom, self.u
        if not self.fr.spec.directed:
            return u * m.cum(3), None
        ut, k = u.T, self.kap
        GB = u * m.cum(0, 0, 0) + ut * m.cum(0, 1, 1) + k * m.cum(0, 0, 1)
        GC = u * m.cum(0, 0, 2) + ut * m.cum(1, 1, 2) + k * m.cum(0, 1, 2)
        return GB, GC


def penalty_eta(net: Network, cov: Covariates, spec: ModelSpec, params: Params) -> PenaltyBlocks:
    """Half the summed log-determinants of the node information blocks.

    Only model probabilities enter, so the adjacency matrix is accepted for
    interface symmetry and otherwise ignored.
    """
    return penalty_frame(DyadFrame(cov, spec, params))


def penalty_grad_frame(fr: DyadFrame):
    GB, GC = _Weights(fr).grid_grad()
    return fr.chain(GB, GC)


def penalty_grad(net: Network, cov: Covariates, spec: ModelSpec, params: Params):
    """``(d eta / d theta, d eta / d lam)``."""
    return penalty_grad_frame(DyadFrame(cov, spec, params))


def _rowsum_jacobian(fr, psi1, psi2):
    """Jacobian of ``R_i = sum_j psi[i, j]`` in ``(alpha_k, gamma_k)``.

    ``psi1``/``psi2`` are the grid derivatives of ``psi`` in the frame's first
    and second index.  Returns ``(Ja, Jg)``, each ``(n, n)`` with row ``i`` and
    column ``k``.
    """
    psi1, psi2 = fr.mask(psi1), fr.mask(psi2)
    Ja = np.diag(psi1.sum(axis=1)) + psi2
    Jg = psi1 + np.diag(psi2.sum(axis=1))
    return Ja, Jg


def penalty_hess_lambda_frame(fr: DyadFrame) -> np.ndarray:
    w = _Weights(fr)
    m, n = fr.mom, fr.n
    if not fr.spec.directed:
        t1 = LambdaOperator(fr.mask(w.u * m.cum(4))).dense()
        k3 = fr.mask(m.cum(3))
        J = (np.diag(k3.sum(axis=1)) + k3)[:-1, :-1]
        Js = J / w.det[:, None]
        return t1 - 0.5 * Js.T @ Js
    ut, k = w.u.T, w.kap
    phi = {}
    for a, b in ((0, 0), (0, 1)):
        phi[(a, b)] = w.u * m.cum(0, 0, a, b) + ut * m.cum(1, 1, a, b) + k * m.cum(0, 1, a, b)
    t1 = LambdaOperator(fr.mask(phi[(0, 0)]), fr.mask(phi[(0, 1)])).dense()

    # d(r_i, s_i, c_i)/d lam, rows i < n-1, interleaved columns
    parts = [
        _rowsum_jacobian(fr, m.cum(0, 0, 0), m.cum(0, 0, 1)),  # r_i = sum_j var(g_ij)
        _rowsum_jacobian(fr, m.cum(0, 1, 1), m.cum(1, 1, 1)),  # s_i = sum_j var(g_ji)
        _rowsum_jacobian(fr, m.cum(0, 0, 1), m.cum(0, 1, 1)),  # c_i = sum_j cov
    ]
    J = np.empty((n - 1, 3, 2 * n - 2))
    for p, (Ja, Jg) in enumerate(parts):
        J[:, p, 0::2] = Ja[:-1, :-1]
        J[:, p, 1::2] = Jg[:-1, :-1]
    E = np.linalg.inv(w.blocks)
    M = np.einsum("nab,pbc,ncd,qda->npq", E, _BASIS, E, _BASIS)
    MJ = np.einsum("npq,nql->npl", M, J)
    t2 = J.reshape(-1, J.shape[2]).T @ MJ.reshape(-1, J.shape[2])
    return t1 - 0.5 * t2


def penalty_hess_lambda(net: Network, cov: Covariates, spec: ModelSpec, params: Params) -> np.ndarray:
    """Dense ``d^2 eta / d lam d lam'``."""
    return penalty_hess_lambda_frame(DyadFrame(cov, spec, params))
