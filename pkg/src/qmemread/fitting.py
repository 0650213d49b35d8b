"""Weighted least-squares estimation of the readout model parameters.

Any subset of {gamma_deph, i_sat, chi, scale_f} is fitted simultaneously
against wavepacket, saturation and spectrum datasets, the global-fit
methodology that pins the cooperativity from the joint intensity and
detuning dependence rather than from any single curve.

The optimizer is a damped (Levenberg-Marquardt) least-squares loop on
smoothly transformed parameters: log for the positive quantities, log of
(chi - 1) for the cooperativity, so bounds hold by construction.  The
objective is non-increasing across accepted steps; iteration stops when the
relative objective change falls below ``ftol`` (default 1e-8) or after
``max_iter`` (default 200) iterations.

tau and Gamma are held fixed by default; pass them through ``fit``'s
keyword arguments to change the fixed values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import (DEFAULT_GAMMA_NAT_MHZ, DEFAULT_TAU_US, IntensityModel,
                     ParamError, ReadoutParams, mhz_to_angular,
                     rabi_from_intensity)
from .wavepacket import pc_at, pc_integral_fixed

FREE_KEYS = ("gamma_deph", "i_sat", "chi", "scale_f")

# order-of-magnitude-neutral starting point (gamma_deph in rad/us)
DEFAULT_INIT = {"gamma_deph": mhz_to_angular(1.0), "i_sat": 10.0,
                "chi": 2.0, "scale_f": 1.0}

_DATASET_KINDS = ("wavepacket", "saturation", "spectrum")


class RankDeficiencyError(RuntimeError):
    """Normal equations singular; names the degenerate parameters."""

    def __init__(self, message, pairs):
        self.pairs = tuple(pairs)
        super().__init__(message)


@dataclass(frozen=True)
class Dataset:
    """One measured curve entering the joint fit.

    kind 'wavepacket' : x = t_ns, y = p_c per 1 ns bin, at fixed (delta_mhz, i_r)
    kind 'saturation' : x = I_r in mW/cm^2, y = P_c, at fixed delta_mhz
    kind 'spectrum'   : x = Delta in MHz, y = P_c, at fixed i_r

    ``sigma`` are the 1-sigma ordinate uncertainties (> 0); ``mask`` marks
    points included in the fit (used e.g. to exclude the resonance region of
    low-intensity spectra); ``horizon_us`` is the integration window for the
    P_c kinds.
    """

    kind: str
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    delta_mhz: float | None = None
    i_r: float | None = None
    mask: np.ndarray | None = None
    horizon_us: float = 0.160
    label: str = ""

    def __post_init__(self):
        if self.kind not in _DATASET_KINDS:
            raise ParamError(["kind"], f"unknown dataset kind {self.kind!r}")
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        if not (self.x.shape == self.y.shape == self.sigma.shape):
            raise ParamError(["x", "y", "sigma"], "arrays must have equal length")
        if np.any(self.sigma <= 0):
            raise ParamError(["sigma"], "uncertainties must be > 0")
        if self.kind in ("wavepacket", "saturation") and self.delta_mhz is None:
            raise ParamError(["delta_mhz"], f"{self.kind} needs delta_mhz")
        if self.kind in ("wavepacket", "spectrum") and self.i_r is None:
            raise ParamError(["i_r"], f"{self.kind} needs i_r")
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != self.x.shape:
                raise ParamError(["mask"], "mask length mismatch")
            object.__setattr__(self, "mask", m)


@dataclass
class FitResult:
    """Best-fit values, 1-sigma errors, covariance and diagnostics."""

    values: dict
    errors: dict
    cov: np.ndarray
    param_order: tuple
    red_chi2: float
    n_iter: int
    converged: bool
    message: str = ""
    cost_history: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "values": self.values, "errors": self.errors,
            "covariance": self.cov.tolist(), "param_order": list(self.param_order),
            "reduced_chi2": self.red_chi2, "n_iter": self.n_iter,
            "converged": self.converged, "message": self.message,
        }


def _params_for(theta, dataset, gamma_nat, tau):
    model = IntensityModel(i_sat=theta["i_sat"], gamma_nat=gamma_nat)
    if dataset.kind == "spectrum":
        omega = rabi_from_intensity(dataset.i_r, model)
        return ReadoutParams(omega=omega, delta=0.0, gamma_nat=gamma_nat,
                             chi=theta["chi"], gamma_deph=theta["gamma_deph"],
                             tau=tau, scale_f=theta["scale_f"]), model
    delta = mhz_to_angular(dataset.delta_mhz)
    omega = rabi_from_intensity(dataset.i_r, model) if dataset.i_r is not None else 0.0
    return ReadoutParams(omega=omega, delta=delta, gamma_nat=gamma_nat,
                         chi=theta["chi"], gamma_deph=theta["gamma_deph"],
                         tau=tau, scale_f=theta["scale_f"]), model


def model_eval(theta: dict, dataset: Dataset, gamma_nat, tau) -> np.ndarray:
    """Model ordinates for one dataset at parameter values ``theta``."""
    base, model = _params_for(theta, dataset, gamma_nat, tau)
    if dataset.kind == "wavepacket":
        return pc_at(dataset.x * 1e-3, base) / 1e3
    if dataset.kind == "saturation":
        out = np.empty_like(dataset.x)
        for i, i_r in enumerate(dataset.x):
            omega = rabi_from_intensity(float(i_r), model)
            out[i] = pc_integral_fixed(base.replace(omega=omega),
                                       t_end=dataset.horizon_us)
        return out
    out = np.empty_like(dataset.x)
    for i, dm in enumerate(dataset.x):
        out[i] = pc_integral_fixed(base.replace(delta=mhz_to_angular(float(dm))),
                                   t_end=dataset.horizon_us)
    return out


def residuals(theta: dict, datasets, gamma_nat=mhz_to_angular(DEFAULT_GAMMA_NAT_MHZ),
              tau=DEFAULT_TAU_US) -> np.ndarray:
    """Concatenated weighted residuals (model - data)/sigma over all datasets."""
    parts = []
    for ids, ds in enumerate(datasets):
        try:
            m = model_eval(theta, ds, gamma_nat, tau)
        except Exception as exc:
            raise RuntimeError(f"model evaluation failed on dataset {ids} "
                               f"({ds.label or ds.kind}): {exc}") from exc
        r = (m - ds.y) / ds.sigma
        if ds.mask is not None:
            r = r[ds.mask]
        parts.append(r)
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# smooth bound-preserving transforms: u is the unconstrained fit variable

def _to_u(key, value):
    if key == "chi":
        if value <= 1:
            raise ParamError([key], "chi must be > 1 to be fitted freely")
        return math.log(value - 1.0)
    if value <= 0:
        raise ParamError([key], f"{key} must be > 0 to be fitted freely")
    return math.log(value)


def _from_u(key, u):
    if key == "chi":
        return 1.0 + math.exp(u)
    return math.exp(u)


def _du_scale(key, value):
    """d(theta)/d(u) at theta = value, for covariance conversion."""
    return value - 1.0 if key == "chi" else value


def fit(datasets, free=FREE_KEYS, init=None, bounds=None,
        gamma_nat=mhz_to_angular(DEFAULT_GAMMA_NAT_MHZ), tau=DEFAULT_TAU_US,
        fixed=None, max_iter=200, ftol=1e-8) -> FitResult:
    """Damped least squares over the chosen free parameters.

    ``init``/``fixed`` are dicts over FREE_KEYS (internal units: gamma_deph
    in rad/us); missing entries fall back to DEFAULT_INIT.  ``bounds`` maps
    a key to a (lo, hi) box in natural units, applied on top of the built-in
    positivity/chi >= 1 transforms.  The objective is guaranteed
    non-increasing across accepted steps; non-convergence returns a flagged
    result carrying the best point found.

    Raises RankDeficiencyError when the normal equations are singular at the
    starting point, naming insensitive or fully degenerate parameter pairs.
    """
    if not datasets:
        raise ParamError(["datasets"], "need at least one dataset")
    free = tuple(free)
    for key in free:
        if key not in FREE_KEYS:
            raise ParamError([key], f"unknown free parameter {key!r}")
    theta = dict(DEFAULT_INIT)
    theta.update(fixed or {})
    theta.update(init or {})

    u = np.array([_to_u(k, theta[k]) for k in free])
    u_lo = np.full(len(free), -np.inf)
    u_hi = np.full(len(free), np.inf)
    for i, k in enumerate(free):
        if bounds and k in bounds:
            lo, hi = bounds[k]
            if lo is not None and lo > (1.0 if k == "chi" else 0.0):
                u_lo[i] = _to_u(k, lo)
            if hi is not None and math.isfinite(hi):
                u_hi[i] = _to_u(k, hi)
        if not (u_lo[i] <= u[i] <= u_hi[i]):
            raise ParamError([k], f"init for {k} outside bounds")

    def theta_of(u_vec):
        t = dict(theta)
        for k, val in zip(free, u_vec):
            t[k] = _from_u(k, val)
        return t

    def resid_of(u_vec):
        return residuals(theta_of(u_vec), datasets, gamma_nat=gamma_nat, tau=tau)

    r = resid_of(u)
    m = r.size
    if m <= len(free):
        raise ParamError(["datasets"], "fewer residuals than free parameters")
    cost = 0.5 * float(r @ r)
    history = [2.0 * cost]

    def jacobian(u_vec):
        J = np.empty((m, len(free)))
        for j in range(len(free)):
            h = 1e-6 * max(1.0, abs(u_vec[j]))
            up, um = u_vec.copy(), u_vec.copy()
            up[j] += h
            um[j] -= h
            J[:, j] = (resid_of(up) - resid_of(um)) / (2.0 * h)
        return J

    lam = 1e-3
    converged = False
    message = "max_iter reached"
    n_iter = 0
    J = jacobian(u)
    _check_rank(J, free)

    for n_iter in range(1, max_iter + 1):
        g = J.T @ r
        H = J.T @ J
        if cost == 0.0 or np.max(np.abs(g)) < 1e-300:
            converged, message = True, "objective at zero / zero gradient"
            break
        accepted = False
        for _ in range(60):
            M = H + lam * np.diag(np.maximum(np.diag(H), 1e-300))
            try:
                step = np.linalg.solve(M, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            u_try = np.clip(u + step, u_lo, u_hi)
            r_try = resid_of(u_try)
            cost_try = 0.5 * float(r_try @ r_try)
            if cost_try < cost:
                accepted = True
                break
            lam *= 4.0
            if lam > 1e14:
                break
        if not accepted:
            message = "no descent step found (stalled)"
            break
        drop = cost - cost_try
        u, r, cost = u_try, r_try, cost_try
        history.append(2.0 * cost)
        J = jacobian(u)
        if drop <= ftol * max(cost, 1e-300):
            converged, message = True, "relative objective change below ftol"
            break
        lam = max(lam / 3.0, 1e-12)

    theta_fit = theta_of(u)
    dof = max(m - len(free), 1)
    cov_u = np.linalg.pinv(J.T @ J)
    scale = np.array([_du_scale(k, theta_fit[k]) for k in free])
    cov_theta = cov_u * np.outer(scale, scale)
    values = {k: theta_fit[k] for k in free}
    errors = {k: float(math.sqrt(max(cov_theta[i, i], 0.0)))
              for i, k in enumerate(free)}
    return FitResult(values=values, errors=errors, cov=cov_theta,
                     param_order=free, red_chi2=2.0 * cost / (m - len(free))
                     if m > len(free) else math.nan,
                     n_iter=n_iter, converged=converged, message=message,
                     cost_history=history)


def _check_rank(J, free):
    norms = np.linalg.norm(J, axis=0)
    dead = [k for k, nrm in zip(free, norms) if nrm == 0.0]
    if dead:
        raise RankDeficiencyError(
            f"model is insensitive to parameter(s): {', '.join(dead)}",
            pairs=[(k, k) for k in dead])
    if len(free) > 1:
        Jn = J / norms
        corr = Jn.T @ Jn
        pairs = [(free[i], free[j])
                 for i in range(len(free)) for j in range(i + 1, len(free))
                 if abs(corr[i, j]) > 1.0 - 1e-12]
        if pairs:
            raise RankDeficiencyError(
                "degenerate parameter pair(s): "
                + ", ".join(f"({a}, {b})" for a, b in pairs), pairs=pairs)


def profile(param, grid, datasets, free=FREE_KEYS, **fit_kwargs):
    """Profile objective: minimum chi^2 at each fixed value of ``param``.

    The remaining free parameters are re-fitted at every grid point
    (warm-started from the previous solution).  Returns (grid, chi2) arrays.
    """
    if param not in FREE_KEYS:
        raise ParamError([param], f"unknown parameter {param!r}")
    others = tuple(k for k in free if k != param)
    grid = np.asarray(grid, dtype=float)
    chi2 = np.empty_like(grid)
    warm = dict(fit_kwargs.pop("init", None) or {})
    fixed = dict(fit_kwargs.pop("fixed", None) or {})
    for i, val in enumerate(grid):
        fixed_i = dict(fixed)
        fixed_i[param] = float(val)
        res = fit(datasets, free=others, init=warm, fixed=fixed_i, **fit_kwargs)
        chi2[i] = res.cost_history[-1]
        warm.update(res.values)
    return grid, chi2
