"""Viscous, convective and damping operators, and checks of their identities.

Dual vectors are plain arrays of length n paired with states by the
Euclidean dot product, so <F(y), z> is ``apply_F(...) @ z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .reports import CheckReport, ge_check, le_check
from .state_space import SpaceSpec, check_state, norm_H, norm_Lp, norm_V, velocity


@dataclass(frozen=True)
class CbfParams:
    """Physical constants.

    ``alpha = 0`` and ``beta = 0`` are accepted for limit experiments and
    show up in :meth:`flags`. ``convection=False`` drops the trilinear term,
    which together with ``beta = 0`` gives the linear subcase.
    """

    mu: float
    alpha: float
    beta: float
    r: float
    convection: bool = True

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if not self.r >= 1:
            raise ValueError(f"r must be >= 1, got {self.r}")

    def flags(self) -> list[str]:
        out = []
        if self.alpha == 0:
            out.append("alpha=0")
        if self.beta == 0:
            out.append("beta=0")
        if not self.convection:
            out.append("no-convection")
        return out

    def with_alpha(self, alpha: float) -> "CbfParams":
        return CbfParams(self.mu, alpha, self.beta, self.r, self.convection)

    def as_dict(self) -> dict:
        return {"mu": self.mu, "alpha": self.alpha, "beta": self.beta, "r": self.r,
                "convection": self.convection}


@dataclass(frozen=True)
class OperatorSet:
    """Operators on a :class:`SpaceSpec`.

    ``curl_map`` (n_q x n) gives the scalar curl of a state at the
    quadrature nodes; gram_V must equal curl_map^T W curl_map.
    """

    space: SpaceSpec
    curl_map: sp.csr_matrix
    _parts: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def A(self) -> sp.csr_matrix:
        return self.space.gram_V

    @property
    def mass(self) -> sp.csr_matrix:
        return self.space.gram_H

    def split_eval(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        if "Ex" not in self._parts:
            nq = self.space.n_q
            E = self.space.eval_map
            self._parts["Ex"] = E[:nq].tocsr()
            self._parts["Ey"] = E[nq:].tocsr()
            self._parts["ExT"] = self._parts["Ex"].T.tocsr()
            self._parts["EyT"] = self._parts["Ey"].T.tocsr()
        p = self._parts
        return p["Ex"], p["Ey"]

    def _transposes(self):
        self.split_eval()
        return self._parts["ExT"], self._parts["EyT"]

    def pull_back(self, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
        """Dual vector w -> sum_q W_q (v1 w1 + v2 w2)."""
        ExT, EyT = self._transposes()
        w = self.space.quad_weights
        return ExT @ (w * v1) + EyT @ (w * v2)

    def curl(self, y: np.ndarray) -> np.ndarray:
        return self.curl_map @ y


def _dims(ops: OperatorSet, *ys):
    return [check_state(ops.space, y) for y in ys]


def apply_A(ops: OperatorSet, y: np.ndarray) -> np.ndarray:
    (y,) = _dims(ops, y)
    return ops.A @ y


def mass_action(ops: OperatorSet, y: np.ndarray) -> np.ndarray:
    (y,) = _dims(ops, y)
    return ops.mass @ y


def b_form(ops: OperatorSet, y, z, w) -> float:
    """b(y, z, w) = sum_q W_q curl(y) (z1 w2 - z2 w1)."""
    y, z, w = _dims(ops, y, z, w)
    om = ops.curl(y)
    zq = velocity(ops.space, z)
    wq = velocity(ops.space, w)
    return float(np.sum(ops.space.quad_weights * om * (zq[0] * wq[1] - zq[1] * wq[0])))


def apply_B(ops: OperatorSet, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Dual vector w -> b(y, z, w)."""
    y, z = _dims(ops, y, z)
    om = ops.curl(y)
    zq = velocity(ops.space, z)
    return ops.pull_back(-om * zq[1], om * zq[0])


def B_jacobian(ops: OperatorSet, y: np.ndarray) -> sp.csr_matrix:
    """Matrix of d -> B(d, y) + B(y, d)."""
    (y,) = _dims(ops, y)
    Ex, Ey = ops.split_eval()
    ExT, EyT = ops._transposes()
    w = ops.space.quad_weights
    om = ops.curl(y)
    yq = velocity(ops.space, y)
    # B(d, y): curl(d) (y1 e2 - y2 e1)
    J1 = EyT @ sp.diags(w * yq[0]) @ ops.curl_map - ExT @ sp.diags(w * yq[1]) @ ops.curl_map
    # B(y, d): curl(y) (d1 e2 - d2 e1)
    J2 = EyT @ sp.diags(w * om) @ Ex - ExT @ sp.diags(w * om) @ Ey
    return (J1 + J2).tocsr()


def _check_r(r: float) -> None:
    if not r >= 1:
        raise ValueError(f"r must be >= 1, got {r}")


def apply_C(ops: OperatorSet, y: np.ndarray, r: float) -> np.ndarray:
    """Dual vector w -> sum_q W_q |y|^(r-1) y . w."""
    _check_r(r)
    (y,) = _dims(ops, y)
    yq = velocity(ops.space, y)
    if r == 1:
        return ops.pull_back(yq[0], yq[1])
    mag = np.hypot(yq[0], yq[1])
    a = mag ** (r - 1)
    return ops.pull_back(a * yq[0], a * yq[1])


def _gateaux_coeffs(mag: np.ndarray, r: float) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise C'(y) = a I + c y y^T."""
    if r == 1:
        return np.ones_like(mag), np.zeros_like(mag)
    a = mag ** (r - 1)
    if r >= 3:
        c = (r - 1) * mag ** (r - 3)
    else:
        # the derivative vanishes where y = 0 when 1 < r < 3
        safe = np.where(mag > 0, mag, 1.0)
        c = np.where(mag > 0, (r - 1) * safe ** (r - 3), 0.0)
    return a, c


def gateaux_C(ops: OperatorSet, y: np.ndarray, z: np.ndarray, r: float) -> np.ndarray:
    """Dual vector of C'(y) z."""
    _check_r(r)
    y, z = _dims(ops, y, z)
    yq = velocity(ops.space, y)
    zq = velocity(ops.space, z)
    a, c = _gateaux_coeffs(np.hypot(yq[0], yq[1]), r)
    dot = yq[0] * zq[0] + yq[1] * zq[1]
    return ops.pull_back(a * zq[0] + c * dot * yq[0], a * zq[1] + c * dot * yq[1])


def C_jacobian(ops: OperatorSet, y: np.ndarray, r: float) -> sp.csr_matrix:
    _check_r(r)
    (y,) = _dims(ops, y)
    Ex, Ey = ops.split_eval()
    ExT, EyT = ops._transposes()
    w = ops.space.quad_weights
    yq = velocity(ops.space, y)
    a, c = _gateaux_coeffs(np.hypot(yq[0], yq[1]), r)
    k11 = w * (a + c * yq[0] ** 2)
    k22 = w * (a + c * yq[1] ** 2)
    k12 = w * (c * yq[0] * yq[1])
    D = sp.diags
    return (ExT @ D(k11) @ Ex + ExT @ D(k12) @ Ey + EyT @ D(k12) @ Ex + EyT @ D(k22) @ Ey).tocsr()


def apply_F(ops: OperatorSet, p: CbfParams, y: np.ndarray) -> np.ndarray:
    """mu A y + B(y, y) + alpha M y + beta C(y)."""
    (y,) = _dims(ops, y)
    out = p.mu * (ops.A @ y)
    if p.alpha:
        out = out + p.alpha * (ops.mass @ y)
    if p.convection:
        out = out + apply_B(ops, y, y)
    if p.beta:
        out = out + p.beta * apply_C(ops, y, p.r)
    return out


def F_jacobian(ops: OperatorSet, p: CbfParams, y: np.ndarray) -> sp.csr_matrix:
    J = p.mu * ops.A
    if p.alpha:
        J = J + p.alpha * ops.mass
    if p.convection:
        J = J + B_jacobian(ops, y)
    if p.beta:
        J = J + p.beta * C_jacobian(ops, y, p.r)
    return sp.csr_matrix(J)


def rho_constant(p: CbfParams) -> float:
    """((r-3)/(r-1)) (2 / (beta mu (r-1)))^(2/(r-3)), defined for r > 3."""
    return rho_formula(p.r, p.beta, p.mu)


def rho_formula(r: float, beta: float, mu: float) -> float:
    if not r > 3:
        raise ValueError(f"rho is only defined for r > 3, got r = {r}")
    if not beta > 0 or not mu > 0:
        raise ValueError("rho needs beta > 0 and mu > 0")
    return (r - 3) / (r - 1) * (2 / (beta * mu * (r - 1))) ** (2 / (r - 3))


# --- checks -------------------------------------------------------------------

def weighted_gap_sq(ops: OperatorSet, weight_state, d: np.ndarray, r: float) -> float:
    """|| |u|^((r-1)/2) d ||_H^2 with u the velocity of weight_state."""
    u = velocity(ops.space, weight_state)
    dq = velocity(ops.space, d)
    mag = np.hypot(u[0], u[1])
    return float(np.sum(ops.space.quad_weights * mag ** (r - 1) * (dq[0] ** 2 + dq[1] ** 2)))


def verify_monotonicity_C(ops: OperatorSet, y, z, r: float) -> CheckReport:
    """Both lower bounds for <C(y) - C(z), y - z>."""
    _check_r(r)
    y, z = _dims(ops, y, z)
    d = y - z
    lhs = float((apply_C(ops, y, r) - apply_C(ops, z, r)) @ d)
    bound1 = 0.5 * weighted_gap_sq(ops, y, d, r) + 0.5 * weighted_gap_sq(ops, z, d, r)
    bound2 = 2.0 ** (1 - r) * norm_Lp(ops.space, d, r + 1) ** (r + 1)
    return ge_check("monotonicity_C", "damping-monotonicity", lhs, [bound1, bound2], r=r)


def verify_local_monotonicity_F(ops: OperatorSet, p: CbfParams, y, z) -> CheckReport:
    """Local monotonicity for r > 3, global monotonicity for r = 3 with 2 beta mu >= 1."""
    y, z = _dims(ops, y, z)
    d = y - z
    pairing = float((apply_F(ops, p, y) - apply_F(ops, p, z)) @ d)
    params = p.as_dict()
    if p.r > 3 and p.beta > 0:
        rho = rho_constant(p)
        hd = norm_H(ops.space, d) ** 2
        lhs = pairing + rho / (2 * p.mu) * hd
        rhs = 0.5 * p.mu * norm_V(ops.space, d) ** 2 + p.alpha * hd
        rep = ge_check("local_monotonicity_F", "local-monotonicity", lhs, [rhs], **params)
        rep.extra["rho"] = rho
        return rep
    if p.r == 3 and 2 * p.beta * p.mu >= 1:
        return ge_check("global_monotonicity_F", "critical-monotonicity", pairing, [0.0], **params)
    raise ValueError("local monotonicity is covered only for r > 3, or r = 3 with 2*beta*mu >= 1")


def coercivity_gap(ops: OperatorSet, p: CbfParams, y) -> tuple[float, float]:
    """(<F(y), y>, mu ||y||_V^2 + alpha ||y||_H^2 + beta ||y||_{r+1}^{r+1})."""
    (y,) = _dims(ops, y)
    lhs = float(apply_F(ops, p, y) @ y)
    rhs = (p.mu * norm_V(ops.space, y) ** 2 + p.alpha * norm_H(ops.space, y) ** 2
           + p.beta * norm_Lp(ops.space, y, p.r + 1) ** (p.r + 1))
    return lhs, rhs


def verify_coercivity(ops: OperatorSet, p: CbfParams, y, rtol: float = 1e-12) -> CheckReport:
    """<F(y), y> against the sum of the three dissipation terms."""
    lhs, rhs = coercivity_gap(ops, p, y)
    err = abs(lhs - rhs)
    scale = max(abs(rhs), np.finfo(float).tiny)
    rep = le_check("coercivity", "coercivity", err / scale, rtol, rtol=0.0, **p.as_dict())
    rep.extra.update(pairing=lhs, dissipation=rhs)
    return rep


def verify_skew_symmetry(ops: OperatorSet, y, z, rtol: float = 1e-13) -> CheckReport:
    """|b(y, z, z)| relative to sum_q W_q |curl y| |z|^2."""
    y, z = _dims(ops, y, z)
    val = abs(b_form(ops, y, z, z))
    zq = velocity(ops.space, z)
    scale = float(np.sum(ops.space.quad_weights * np.abs(ops.curl(y)) * (zq[0] ** 2 + zq[1] ** 2)))
    rep = le_check("skew_symmetry", "skew-symmetry", val, rtol * scale, rtol=0.0)
    rep.extra["scale"] = scale
    return rep


FD_STEPS = (1e-3, 1e-4, 1e-5)
FD_EXACT_RTOL = 1e-8


def gateaux_fd_errors(ops: OperatorSet, y, z, r: float, steps=FD_STEPS) -> np.ndarray:
    """Relative errors of forward differences of C against the closed-form derivative."""
    y, z = _dims(ops, y, z)
    exact = gateaux_C(ops, y, z, r)
    base = apply_C(ops, y, r)
    nrm = max(float(np.linalg.norm(exact)), np.finfo(float).tiny)
    return np.array([np.linalg.norm((apply_C(ops, y + h * z, r) - base) / h - exact) / nrm for h in steps])


def verify_gateaux(ops: OperatorSet, y, z, r: float, steps=FD_STEPS, min_order: float = 0.9) -> CheckReport:
    """Observed order of the forward-difference error in the step size.

    The order is the smallest slope between consecutive steps. When every
    error is already at rounding level (r = 1, where C is linear) there is
    no slope to observe and the check passes on the error size instead.
    """
    steps = tuple(float(h) for h in steps)
    errs = gateaux_fd_errors(ops, y, z, r, steps)
    if np.all(errs <= FD_EXACT_RTOL):
        rep = le_check("gateaux", "gateaux-derivative", float(errs.max()), FD_EXACT_RTOL, rtol=0.0, r=r)
        rep.extra["order"] = "exact"
        return rep
    slopes = np.diff(np.log(errs)) / np.diff(np.log(steps))
    rep = ge_check("gateaux", "gateaux-derivative", float(slopes.min()), [min_order], rtol=0.0, r=r)
    rep.extra["errors"] = ",".join(f"{e:.3e}" for e in errs)
    return rep


@dataclass(frozen=True)
class ThresholdReport:
    """Derived constants and the mu-conditions they feed.

    ``stationary_uniqueness_mu`` is the right side of the uniqueness
    condition for the regime of ``r``. The conditions for r != 3 involve mu
    on both sides and are evaluated at the current mu.
    """

    rho: float
    mu_tilde: float
    stationary_uniqueness_mu: float
    rothe_wellposed: bool
    C_psi: float = 0.0
    trace_norm: float = 0.0
    m: float = 0.0
    mu_hat: float = 0.0
    mu_bar: float = float("nan")
    regime: str = ""
    stationary_unique: bool = False
    subcritical_uniqueness_mu: float = float("nan")
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def regime_of(r: float) -> str:
    if r > 3:
        return "supercritical"
    if r == 3:
        return "critical"
    return "subcritical"


def _subcritical_rhs(p: CbfParams, C_psi: float, lnorm: float, m: float, f_dual: float,
                     generic_C: float, d: int = 2) -> float:
    mu_t = p.mu - C_psi * lnorm**2
    if mu_t <= 0 or p.alpha <= 0:
        return math.inf
    X = (C_psi * lnorm + f_dual) / mu_t
    return (generic_C / p.alpha) ** ((4 - d) / (4 + d)) * X ** (8 / (4 + d)) + m * lnorm**2


def compute_thresholds(p: CbfParams, C_psi: float, lnorm: float, m: float,
                       f_dual: float = 0.0, generic_C: float = 1.0) -> ThresholdReport:
    """All threshold quantities from scalar inputs."""
    mu_tilde = p.mu - C_psi * lnorm**2
    mu_hat = p.mu - m * lnorm**2
    mlsq = m * lnorm**2
    regime = regime_of(p.r)
    rho = 0.0
    sub = _subcritical_rhs(p, C_psi, lnorm, m, f_dual, generic_C)
    if regime == "supercritical":
        rho = rho_constant(p) if p.beta > 0 else math.inf
        if mu_hat > 0 and p.beta > 0:
            rho_t = rho_formula(p.r, p.beta, mu_hat)
            first = rho_t / (2 * p.alpha) + mlsq if p.alpha > 0 else math.inf
        else:
            first = math.inf
        second = max(1 / (2 * p.beta) if p.beta > 0 else math.inf,
                     1 / (4 * p.alpha) + mlsq if p.alpha > 0 else math.inf)
        uniq = min(first, second)
    elif regime == "critical":
        uniq = 1 / (2 * p.beta) + C_psi * lnorm**2 if p.beta > 0 else math.inf
    else:
        uniq = sub
    mu_bar = p.mu - 1 / (2 * p.beta) - mlsq if p.beta > 0 else -math.inf
    return ThresholdReport(
        rho=rho,
        mu_tilde=mu_tilde,
        stationary_uniqueness_mu=uniq,
        rothe_wellposed=mu_tilde > 0,
        C_psi=C_psi,
        trace_norm=lnorm,
        m=m,
        mu_hat=mu_hat,
        mu_bar=mu_bar,
        regime=regime,
        stationary_unique=bool(p.mu > uniq),
        subcritical_uniqueness_mu=sub,
        flags=tuple(p.flags()),
    )
