"""Brute-force numerical ground truth on tiny lattices.

Everything here is deterministic tensor-product Gauss-Legendre quadrature of
Z = int exp(-S) dphi and derived quantities (expectations, KL divergences,
variational gradients).  The canonical instance is the 2x2 periodic lattice
(V = 4, 8 nearest-neighbor links): the largest lattice where the full grid
is still cheap, used as the arbiter for every Monte Carlo estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .lattice import (CouplingSet, LatticeGeometry, TargetActionSpec,
                      action_S, action_target, action_gradient_theta)


class GridTooLargeError(ValueError):
    pass


class TruncationError(RuntimeError):
    pass


MAX_GRID_POINTS = 10 ** 8


@dataclass(frozen=True)
class QuadratureSpec:
    phi_max: float = 4.0
    points_per_site: int = 41

    def __post_init__(self):
        if self.points_per_site < 11:
            raise ValueError("points_per_site must be >= 11")
        if self.phi_max <= 0:
            raise ValueError("phi_max must be > 0")

    def nodes(self):
        """Gauss-Legendre nodes and weights scaled to [-phi_max, phi_max]."""
        x, w = np.polynomial.legendre.leggauss(self.points_per_site)
        return x * self.phi_max, w * self.phi_max


def _energy_fn(model, geometry):
    if isinstance(model, CouplingSet):
        return lambda cfgs: action_S(cfgs, model, geometry)
    if isinstance(model, TargetActionSpec):
        if model.is_complex:
            return lambda cfgs: action_target(cfgs, model, geometry)
        return lambda cfgs: np.real(action_target(cfgs, model, geometry))
    raise TypeError(f"unsupported model type {type(model).__name__}")


def _grid_blocks(geometry: LatticeGeometry, quad: QuadratureSpec):
    """Yield (configs (M, V), log_quadrature_weight (M,)) blocks covering the
    full tensor-product grid, chunked along the first site axis."""
    V = geometry.volume
    n = quad.points_per_site
    if n ** V > MAX_GRID_POINTS:
        raise GridTooLargeError(f"{n}^{V} grid points exceed the supported maximum")
    x, w = quad.nodes()
    logw = np.log(w)
    rest = np.stack(np.meshgrid(*([x] * (V - 1)), indexing="ij"), axis=-1).reshape(-1, V - 1) \
        if V > 1 else np.zeros((1, 0))
    rest_logw = np.stack(np.meshgrid(*([logw] * (V - 1)), indexing="ij"), axis=-1) \
        .reshape(-1, V - 1).sum(axis=1) if V > 1 else np.zeros(1)
    for i0 in range(n):
        cfgs = np.empty((len(rest), V))
        cfgs[:, 0] = x[i0]
        cfgs[:, 1:] = rest
        yield cfgs, logw[i0] + rest_logw


def _log_partition(model, geometry, quad):
    """log Z; complex when the model action is complex."""
    energy = _energy_fn(model, geometry)
    is_complex = isinstance(model, TargetActionSpec) and model.is_complex
    shift = -np.inf
    for cfgs, lw in _grid_blocks(geometry, quad):
        s = energy(cfgs)
        shift = max(shift, float(np.max(lw - np.real(s))))
    total = 0.0 + 0.0j if is_complex else 0.0
    for cfgs, lw in _grid_blocks(geometry, quad):
        s = energy(cfgs)
        total += np.sum(np.exp(lw - s - shift))
    return (np.log(total) if is_complex else float(np.log(total))) + shift


def exact_log_Z(model, geometry: LatticeGeometry,
                quad: QuadratureSpec = QuadratureSpec(),
                check_truncation: bool = False, truncation_tol: float = 1e-8):
    """Quadrature log partition function of exp(-S) (or exp(-A) for a target
    spec; complex when the g5 term is active).

    With ``check_truncation`` the integral is repeated on a domain enlarged
    by one unit (node count scaled to keep the density) and the two results
    must agree to ``truncation_tol``.
    """
    logz = _log_partition(model, geometry, quad)
    if check_truncation:
        scale = (quad.phi_max + 1.0) / quad.phi_max
        wide = QuadratureSpec(phi_max=quad.phi_max + 1.0,
                              points_per_site=int(np.ceil(quad.points_per_site * scale)))
        logz_wide = _log_partition(model, geometry, wide)
        if abs(logz_wide - logz) > truncation_tol:
            raise TruncationError(
                f"domain truncation not converged: |dlogZ| = {abs(logz_wide - logz):.3e}")
    return logz


def _weighted_sums(model, geometry, quad, per_config_functions):
    """Return (Z_shifted, [sum of f * exp(-S) dphi] for each f), sharing one
    exponent shift.  Weights are complex for a complex model."""
    energy = _energy_fn(model, geometry)
    shift = -np.inf
    for cfgs, lw in _grid_blocks(geometry, quad):
        shift = max(shift, float(np.max(lw - np.real(energy(cfgs)))))
    z = 0.0 + 0.0j
    sums = [None] * len(per_config_functions)
    for cfgs, lw in _grid_blocks(geometry, quad):
        wgt = np.exp(lw - energy(cfgs) - shift)
        z += np.sum(wgt)
        for k, f in enumerate(per_config_functions):
            vals = np.asarray(f(cfgs))
            contrib = (wgt[:, None] * vals).sum(axis=0) if vals.ndim == 2 \
                else np.sum(wgt * vals)
            sums[k] = contrib if sums[k] is None else sums[k] + contrib
    return z, sums


def exact_expectation(observable, model, geometry: LatticeGeometry,
                      quad: QuadratureSpec = QuadratureSpec()):
    """<O> under exp(-S)/Z; complex-weighted when the model is a complex
    target.  ``observable`` maps a (M, V) batch to (M,) values."""
    z, (num,) = _weighted_sums(model, geometry, quad, [observable])
    out = num / z
    if not (isinstance(model, TargetActionSpec) and model.is_complex):
        out = np.real(out)
        return float(out) if np.ndim(out) == 0 else out
    return complex(out) if np.ndim(out) == 0 else out


def exact_kl(source: CouplingSet, target: TargetActionSpec,
             geometry: LatticeGeometry,
             quad: QuadratureSpec = QuadratureSpec()) -> float:
    """KL(p_S || q_A) = <A - S>_p + log Z_A - log Z_S for real actions."""
    if target.is_complex:
        raise ValueError("KL divergence requires a real target action")
    diff = exact_expectation(
        lambda c: np.real(action_target(c, target, geometry)) - action_S(c, source, geometry),
        source, geometry, quad)
    return float(diff + exact_log_Z(target, geometry, quad)
                 - exact_log_Z(source, geometry, quad))


def exact_variational_free_energy(source: CouplingSet, target: TargetActionSpec,
                                  geometry: LatticeGeometry,
                                  quad: QuadratureSpec = QuadratureSpec()) -> float:
    """F_var(theta) = <A - S>_p + F_p with F_p = -log Z_p.  Equals the exact
    KL up to the theta-independent constant log Z_A."""
    if target.is_complex:
        raise ValueError("variational free energy requires a real target action")
    diff = exact_expectation(
        lambda c: np.real(action_target(c, target, geometry)) - action_S(c, source, geometry),
        source, geometry, quad)
    return float(diff - exact_log_Z(source, geometry, quad))


def exact_variational_gradient(source: CouplingSet, target: TargetActionSpec,
                               geometry: LatticeGeometry,
                               quad: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """dF_var/dtheta = <A><dS> - <A dS> + <S dS> - <S><dS>, every expectation
    taken exactly under p(phi; theta).  Layout matches CouplingSet.as_vector."""
    if target.is_complex:
        raise ValueError("variational gradient requires a real target action")

    def s_fn(c):
        return action_S(c, source, geometry)

    def a_fn(c):
        return np.real(action_target(c, target, geometry))

    def ds_fn(c):
        return action_gradient_theta(c, geometry)

    z, (e_s, e_a, e_ds, e_sds, e_ads) = _weighted_sums(
        source, geometry, quad,
        [s_fn, a_fn, ds_fn,
         lambda c: s_fn(c)[:, None] * ds_fn(c),
         lambda c: a_fn(c)[:, None] * ds_fn(c)])
    e_s, e_a = np.real(e_s / z), np.real(e_a / z)
    e_ds = np.real(e_ds / z)
    e_sds = np.real(e_sds / z)
    e_ads = np.real(e_ads / z)
    return e_a * e_ds - e_ads + e_sds - e_s * e_ds


def site_density_grid(c1: float, c2: float, c4: float, phi_max: float = 6.0,
                      n_points: int = 2001):
    """Normalized 1D density on a uniform grid for exp(-c1 x - c2 x^2 - c4 x^4);
    used as the quadrature oracle for single-site samplers."""
    x = np.linspace(-phi_max, phi_max, n_points)
    logp = -(c1 * x + c2 * x ** 2 + c4 * x ** 4)
    logp -= logsumexp(logp)
    dx = x[1] - x[0]
    return x, np.exp(logp) / dx  # density per unit length, grid mass sums to 1
