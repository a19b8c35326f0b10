"""Bipartite phi^4 neural network: visible and hidden layers coupled only
across the bipartition,

    S(phi, h) = -sum_ij w_ij phi_i h_j + sum_i r_i phi_i + sum_i a_i phi_i^2
                + sum_i b_i phi_i^4 + sum_j s_j h_j + sum_j m_j h_j^2
                + sum_j n_j h_j^4.

Because interactions are exclusively between the layers, each layer is
conditionally independent given the other, so block Gibbs sampling draws
every site of a layer at once from its exact 1D conditional
exp(-c1 x - c2 x^2 - c4 x^4).  Setting b = n = 0 recovers a
Gaussian-Gaussian restricted Boltzmann machine; binary hidden units in
{-1, +1} (with m, n dropped as additive constants) give the
Gaussian-Bernoulli machine, and the kappa fixed / lambda -> inf /
mu^2 -> -inf limit concentrates the field on +-1 (the Ising model).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mcmc import make_rng
from .variational import B_FLOOR, TrainingDivergedError


@dataclass
class BipartiteCouplings:
    w: np.ndarray                  # (n_visible, n_hidden)
    r: np.ndarray                  # visible linear
    a: np.ndarray                  # visible quadratic
    b: np.ndarray                  # visible quartic, >= 0
    s: np.ndarray                  # hidden linear
    m: np.ndarray                  # hidden quadratic
    n: np.ndarray                  # hidden quartic, >= 0
    hidden_kind: str = "continuous"   # or "binary" (values in {-1, +1})

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        for name in ("r", "a", "b", "s", "m", "n"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        nv, nh = self.w.shape
        if not (len(self.r) == len(self.a) == len(self.b) == nv):
            raise ValueError("visible parameter arrays must match w rows")
        if not (len(self.s) == len(self.m) == len(self.n) == nh):
            raise ValueError("hidden parameter arrays must match w columns")
        if self.hidden_kind not in ("continuous", "binary"):
            raise ValueError(f"unknown hidden_kind {self.hidden_kind!r}")
        if np.any(self.b < 0):
            raise ValueError("visible quartic couplings must be >= 0")
        if self.hidden_kind == "continuous" and np.any(self.n < 0):
            raise ValueError("hidden quartic couplings must be >= 0")

    @property
    def n_visible(self):
        return self.w.shape[0]

    @property
    def n_hidden(self):
        return self.w.shape[1]

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int, hidden_kind: str = "continuous",
              a: float = 0.5, m: float = 0.5) -> "BipartiteCouplings":
        return cls(w=np.zeros((n_visible, n_hidden)),
                   r=np.zeros(n_visible), a=np.full(n_visible, a),
                   b=np.zeros(n_visible), s=np.zeros(n_hidden),
                   m=np.full(n_hidden, m), n=np.zeros(n_hidden),
                   hidden_kind=hidden_kind)

    def copy(self) -> "BipartiteCouplings":
        return BipartiteCouplings(self.w.copy(), self.r.copy(), self.a.copy(),
                                  self.b.copy(), self.s.copy(), self.m.copy(),
                                  self.n.copy(), self.hidden_kind)


@dataclass
class LayerState:
    visible: np.ndarray
    hidden: np.ndarray

    def __post_init__(self):
        self.visible = np.asarray(self.visible, dtype=float)
        self.hidden = np.asarray(self.hidden, dtype=float)
        if not (np.all(np.isfinite(self.visible)) and np.all(np.isfinite(self.hidden))):
            raise ValueError("layer state contains non-finite values")


def bipartite_action(state: LayerState, couplings: BipartiteCouplings) -> float:
    """Exact evaluation of the bipartite action."""
    v, h = state.visible, state.hidden
    if v.shape[-1] != couplings.n_visible or h.shape[-1] != couplings.n_hidden:
        raise ValueError("layer state shapes do not match couplings")
    c = couplings
    out = (-np.einsum("...i,ij,...j->...", v, c.w, h)
           + (c.r * v + c.a * v ** 2 + c.b * v ** 4).sum(axis=-1)
           + (c.s * h + c.m * h ** 2 + c.n * h ** 4).sum(axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def bipartite_action_gradient(state: LayerState, couplings: BipartiteCouplings) -> dict:
    """dS/dtheta for each parameter family (same shapes as the couplings)."""
    v, h = state.visible, state.hidden
    return {"w": -np.outer(v, h), "r": v, "a": v ** 2, "b": v ** 4,
            "s": h, "m": h ** 2, "n": h ** 4}


# --- exact sampling of the 1D conditional exp(-c1 x - c2 x^2 - c4 x^4) ----

ENVELOPE_INFLATION = 1.2      # variance inflation of the mode-matched Gaussian
BOUND_SAFETY = 1.25           # safety factor on the grid-estimated envelope bound
FALLBACK_ACCEPTANCE = 0.05    # below this, fall back to per-site Metropolis
FALLBACK_METROPOLIS_STEPS = 20


def _cubic_real_roots(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Real roots of x^3 + p x + q = 0, vectorized; returns (n, 3) with NaN
    padding where fewer than three real roots exist."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    roots = np.full(p.shape + (3,), np.nan)
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    one = disc >= 0
    if np.any(one):
        sq = np.sqrt(disc[one])
        u = np.cbrt(-q[one] / 2.0 + sq)
        v = np.cbrt(-q[one] / 2.0 - sq)
        roots[one, 0] = u + v
    three = ~one
    if np.any(three):
        pp, qq = p[three], q[three]
        rad = np.sqrt(-pp / 3.0)
        arg = np.clip(3.0 * qq / (2.0 * pp) / rad, -1.0, 1.0)
        theta = np.arccos(arg)
        for k in range(3):
            roots[three, k] = 2.0 * rad * np.cos(theta / 3.0 - 2.0 * np.pi * k / 3.0)
    return roots


def _quartic_minima(c1, c2, c4):
    """Local minima (up to two) of U = c1 x + c2 x^2 + c4 x^4 for c4 > 0.
    Returns (locations (n, 2), curvatures (n, 2)) with NaN padding."""
    c1, c2, c4 = np.broadcast_arrays(np.asarray(c1, float), np.asarray(c2, float),
                                     np.asarray(c4, float))
    # U' = 4 c4 x^3 + 2 c2 x + c1 = 0  ->  x^3 + p x + q = 0
    p = c2 / (2.0 * c4)
    q = c1 / (4.0 * c4)
    roots = _cubic_real_roots(p, q)
    curv = 2.0 * c2[..., None] + 12.0 * c4[..., None] * roots ** 2
    is_min = np.isfinite(roots) & (curv > 0)
    locs = np.where(is_min, roots, np.nan)
    curvs = np.where(is_min, curv, np.nan)
    # keep at most two minima, ordered by energy
    u = np.where(is_min,
                 c1[..., None] * roots + c2[..., None] * roots ** 2
                 + c4[..., None] * roots ** 4, np.inf)
    order = np.argsort(u, axis=-1)
    locs = np.take_along_axis(locs, order, axis=-1)[..., :2]
    curvs = np.take_along_axis(curvs, order, axis=-1)[..., :2]
    return locs, curvs


def sample_quartic_array(c1, c2, c4, rng: np.random.Generator,
                         stats: dict | None = None) -> np.ndarray:
    """Vectorized exact draws from densities prop. to exp(-c1 x - c2 x^2 - c4 x^4).

    Pure Gaussian components (c4 = 0, c2 > 0) are drawn directly.  Quartic
    components use rejection sampling from a Gaussian mixture matched at the
    density's local minima of U (mode and curvature, variance inflated by
    1.2); the envelope bound is estimated on a dense grid with a safety
    factor.  Units whose acceptance collapses fall back to a short per-site
    Metropolis chain started at the mode.

    ``stats``, when given, receives ``acceptance`` (rejection acceptance
    rate) and ``n_fallback``.
    """
    c1, c2, c4 = np.broadcast_arrays(np.asarray(c1, float), np.asarray(c2, float),
                                     np.asarray(c4, float))
    shape = c1.shape
    c1f, c2f, c4f = c1.ravel(), c2.ravel(), c4.ravel()
    out = np.empty(c1f.shape)

    gaussian = c4f == 0
    if np.any(gaussian & (c2f <= 0)) or np.any(c4f < 0):
        raise ValueError("non-normalizable parameters: need c4 > 0, or c4 = 0 with c2 > 0")
    if np.any(gaussian):
        mu = -c1f[gaussian] / (2.0 * c2f[gaussian])
        sd = np.sqrt(1.0 / (2.0 * c2f[gaussian]))
        out[gaussian] = rng.normal(mu, sd)

    quartic = ~gaussian
    if stats is not None:
        stats.setdefault("acceptance", 1.0)
        stats.setdefault("n_fallback", 0)
    if np.any(quartic):
        out[quartic] = _rejection_quartic(c1f[quartic], c2f[quartic],
                                          c4f[quartic], rng, stats)
    return out.reshape(shape)


BROAD_COMPONENT_WEIGHT = 0.05   # wide mixture component covering the barrier


def _envelope(c1, c2, c4):
    """Mixture-envelope parameters for each (c1, c2, c4) row: component
    means / widths / log-weights, the reference energy and the grid-estimated
    rejection bound log M."""
    locs, curvs = _quartic_minima(c1, c2, c4)
    sig = np.sqrt(ENVELOPE_INFLATION / np.where(np.isfinite(curvs), curvs, 1.0))
    # near spinodal points the curvature vanishes; the quartic term then sets
    # the width, so cap the component scale at the pure-quartic std
    sig = np.minimum(sig, ENVELOPE_INFLATION * c4[:, None] ** -0.25)
    # just past the spinodal only one minimum survives but the density keeps
    # a fat shoulder where the other well was; cover it with a reflected
    # component (the mass weighting below discounts it by its energy)
    missing = ~np.isfinite(locs[:, 1])
    locs[missing, 1] = -locs[missing, 0]
    sig[missing, 1] = np.maximum(sig[missing, 0],
                                 ENVELOPE_INFLATION * c4[missing] ** -0.25)

    def u_of(x):
        return c1[:, None] * x + c2[:, None] * x ** 2 + c4[:, None] * x ** 4

    # mode components weighted by their approximate masses, plus one broad
    # component so the envelope also dominates between double-well modes
    u_min = np.where(np.isfinite(locs), u_of(locs), np.inf)
    u_ref = np.nanmin(u_min, axis=1, keepdims=True)
    log_mass = -(u_min - u_ref) + np.log(np.where(np.isfinite(sig), sig, 1.0))
    log_mass[~np.isfinite(locs)] = -np.inf
    mass = np.exp(log_mass - log_mass.max(axis=1, keepdims=True))
    mode_w = mass / mass.sum(axis=1, keepdims=True) * (1.0 - BROAD_COMPONENT_WEIGHT)

    span = np.nanmax(np.abs(locs), axis=1) + 10.0 * np.nanmax(sig, axis=1)
    center = np.nanmean(np.where(np.isfinite(locs), locs, np.nan), axis=1)
    comp_mu = np.column_stack([locs[:, 0], locs[:, 1], center])
    comp_sd = np.column_stack([sig[:, 0], sig[:, 1], span])
    with np.errstate(divide="ignore"):
        comp_lw = np.log(np.column_stack([mode_w,
                                          np.full(len(c1), BROAD_COMPONENT_WEIGHT)]))

    # grid estimate of the envelope bound log M = max log[exp(-U)/g]; the
    # discretization error of the coarse grid is covered by the safety factor
    grid = np.linspace(-1.0, 1.0, 65)[None, :] * span[:, None] + center[:, None]
    log_ratio = -u_of(grid) + u_ref - _log_mixture(grid, comp_mu, comp_sd, comp_lw)
    log_m = log_ratio.max(axis=1) + np.log(BOUND_SAFETY)
    return locs, sig, comp_mu, comp_sd, comp_lw, u_ref, log_m


def _rejection_quartic(c1, c2, c4, rng, stats=None, max_rounds: int = 200):
    n = len(c1)
    # the envelope depends only on the parameter triple, so duplicated rows
    # (constant-parameter batches) are computed once and scattered back
    uniq, inv = np.unique(np.column_stack([c1, c2, c4]), axis=0,
                          return_inverse=True)
    locs_u, sig_u, mu_u, sd_u, lw_u, uref_u, logm_u = \
        _envelope(uniq[:, 0], uniq[:, 1], uniq[:, 2])
    locs, sig = locs_u[inv], sig_u[inv]
    comp_mu, comp_sd, comp_lw = mu_u[inv], sd_u[inv], lw_u[inv]
    u_ref, log_m = uref_u[inv], logm_u[inv]

    out = np.empty(n)
    pending = np.arange(n)
    proposed = accepted = 0
    for _ in range(max_rounds):
        if len(pending) == 0:
            break
        k = pending
        u = rng.random(len(k))[:, None]
        cum = np.cumsum(np.exp(comp_lw[k]), axis=1)
        comp = (u > cum / cum[:, -1:]).sum(axis=1)
        comp = np.minimum(comp, 2)
        mu = np.take_along_axis(comp_mu[k], comp[:, None], axis=1)[:, 0]
        sd = np.take_along_axis(comp_sd[k], comp[:, None], axis=1)[:, 0]
        # NaN second mode never gets weight but guard the arithmetic anyway
        mu = np.where(np.isfinite(mu), mu, 0.0)
        x = rng.normal(mu, sd)
        log_acc = (-(c1[k] * x + c2[k] * x ** 2 + c4[k] * x ** 4) + u_ref[k, 0]
                   - _log_mixture(x[:, None], comp_mu[k], comp_sd[k], comp_lw[k])[:, 0]
                   - log_m[k])
        ok = np.log(rng.random(len(k))) < log_acc
        out[k[ok]] = x[ok]
        proposed += len(k)
        accepted += int(ok.sum())
        pending = k[~ok]
        # collapse guard: acceptance far below the fallback threshold
        if proposed > 40 * n and accepted < FALLBACK_ACCEPTANCE * proposed:
            break

    if len(pending):
        out[pending] = _metropolis_fallback(c1[pending], c2[pending], c4[pending],
                                            locs[pending, 0], sig[pending, 0], rng)
        if stats is not None:
            stats["n_fallback"] = stats.get("n_fallback", 0) + len(pending)
    if stats is not None and proposed:
        stats["acceptance"] = accepted / proposed
    return out


def _log_mixture(x, mu, sd, logw):
    """log density of a Gaussian mixture; NaN means carry -inf weight."""
    mu = np.atleast_2d(mu)
    sd = np.atleast_2d(sd)
    logw = np.atleast_2d(logw)
    n_comp = mu.shape[1]
    logs = np.full(x.shape + (n_comp,), -np.inf)
    for k in range(n_comp):
        valid = np.isfinite(mu[:, k]) & np.isfinite(logw[:, k])
        if np.any(valid):
            z = (x[valid] - mu[valid, k, None]) / sd[valid, k, None]
            logs[valid, :, k] = (logw[valid, k, None] - 0.5 * z ** 2
                                 - np.log(sd[valid, k, None] * np.sqrt(2 * np.pi)))
    top = logs.max(axis=-1)
    with np.errstate(invalid="ignore"):
        return top + np.log(np.exp(logs - top[..., None]).sum(axis=-1))


def _metropolis_fallback(c1, c2, c4, start, step, rng):
    x = np.where(np.isfinite(start), start, 0.0)
    width = np.where(np.isfinite(step), step, 1.0)
    for _ in range(FALLBACK_METROPOLIS_STEPS):
        prop = x + rng.uniform(-1, 1, len(x)) * width
        du = (c1 * (prop - x) + c2 * (prop ** 2 - x ** 2) + c4 * (prop ** 4 - x ** 4))
        acc = np.log(rng.random(len(x))) < -du
        x = np.where(acc, prop, x)
    return x


def sample_quartic_site(c1: float, c2: float, c4: float,
                        rng: np.random.Generator, stats: dict | None = None) -> float:
    """Single exact draw from exp(-c1 x - c2 x^2 - c4 x^4)."""
    return float(sample_quartic_array(np.array([c1]), np.array([c2]),
                                      np.array([c4]), rng, stats)[0])


# --- block Gibbs updates --------------------------------------------------

def gibbs_update_hidden(visible: np.ndarray, couplings: BipartiteCouplings,
                        rng: np.random.Generator) -> np.ndarray:
    """Draw the hidden layer from its exact conditional given the visible
    layer.  Continuous: quartic density with c1 = s_j - sum_i w_ij phi_i;
    binary: h_j = +1 with probability sigmoid(2 (sum_i w_ij phi_i - s_j))."""
    v = np.atleast_2d(np.asarray(visible, dtype=float))
    if v.shape[-1] != couplings.n_visible:
        raise ValueError("visible layer size mismatch")
    drive = v @ couplings.w                       # (batch, n_hidden)
    if couplings.hidden_kind == "binary":
        p_up = 1.0 / (1.0 + np.exp(-2.0 * (drive - couplings.s)))
        h = np.where(rng.random(drive.shape) < p_up, 1.0, -1.0)
    else:
        h = sample_quartic_array(couplings.s - drive,
                                 np.broadcast_to(couplings.m, drive.shape),
                                 np.broadcast_to(couplings.n, drive.shape), rng)
    return h[0] if np.ndim(visible) == 1 else h


def binary_hidden_prob_up(visible: np.ndarray, couplings: BipartiteCouplings) -> np.ndarray:
    """P(h_j = +1 | phi) for binary hidden units."""
    drive = np.atleast_2d(visible) @ couplings.w
    p = 1.0 / (1.0 + np.exp(-2.0 * (drive - couplings.s)))
    return p[0] if np.ndim(visible) == 1 else p


def gibbs_update_visible(hidden: np.ndarray, couplings: BipartiteCouplings,
                         rng: np.random.Generator) -> np.ndarray:
    """Draw the visible layer from its exact conditional given the hidden
    layer: quartic density with c1 = r_i - sum_j w_ij h_j, c2 = a_i, c4 = b_i."""
    h = np.atleast_2d(np.asarray(hidden, dtype=float))
    if h.shape[-1] != couplings.n_hidden:
        raise ValueError("hidden layer size mismatch")
    drive = h @ couplings.w.T                     # (batch, n_visible)
    v = sample_quartic_array(couplings.r - drive,
                             np.broadcast_to(couplings.a, drive.shape),
                             np.broadcast_to(couplings.b, drive.shape), rng)
    return v[0] if np.ndim(hidden) == 1 else v


# --- training -------------------------------------------------------------

@dataclass
class RBMHyperparams:
    epochs: int = 50
    learning_rate: float = 1e-3
    cd_steps: int = 1
    batch_size: int | None = None
    persistent: bool = False
    rng_seed: int = 0
    grad_ceiling: float = 1e8


@dataclass
class RBMReport:
    couplings: BipartiteCouplings
    loss_trace: np.ndarray          # reconstruction mean-squared error per epoch
    history: list = field(default_factory=list)


def _phase_moments(v: np.ndarray, h: np.ndarray):
    n = len(v)
    return {"w": -(v.T @ h) / n, "r": v.mean(axis=0), "a": (v ** 2).mean(axis=0),
            "b": (v ** 4).mean(axis=0), "s": h.mean(axis=0),
            "m": (h ** 2).mean(axis=0), "n": (h ** 4).mean(axis=0)}


def train_rbm(dataset: np.ndarray, couplings: BipartiteCouplings,
              hyper: RBMHyperparams, log_every: int = 0, log_fn=print) -> RBMReport:
    """CD-k (or PCD) maximum-likelihood training of the bipartite network.

    Positive phase samples the hidden layer given the data; the negative
    phase runs k alternating layer updates.  The update is plain gradient
    descent on each sufficient-statistic moment difference.
    """
    data = np.atleast_2d(np.asarray(dataset, dtype=float))
    if data.shape[1] != couplings.n_visible:
        raise ValueError("dataset width does not match the visible layer")
    c = couplings.copy()
    rng = make_rng(hyper.rng_seed)
    n = len(data)
    batch_size = hyper.batch_size or n
    chains = None
    loss_trace, history = [], []

    for epoch in range(hyper.epochs):
        if batch_size >= n:
            batch = data
        else:
            batch = data[rng.choice(n, size=batch_size, replace=False)]

        h_data = gibbs_update_hidden(batch, c, rng)
        pos = _phase_moments(batch, h_data)

        v_model = batch.copy() if (chains is None or not hyper.persistent) else chains
        h_model = h_data if (not hyper.persistent or chains is None) \
            else gibbs_update_hidden(v_model, c, rng)
        for _ in range(hyper.cd_steps):
            v_model = gibbs_update_visible(h_model, c, rng)
            h_model = gibbs_update_hidden(v_model, c, rng)
        if hyper.persistent:
            chains = v_model
        neg = _phase_moments(v_model, h_model)

        gnorm_sq = 0.0
        for name in pos:
            grad = pos[name] - neg[name]
            gnorm_sq += float(np.sum(grad ** 2))
            arr = getattr(c, name)
            arr -= hyper.learning_rate * grad
        if not np.isfinite(gnorm_sq) or gnorm_sq > hyper.grad_ceiling ** 2:
            raise TrainingDivergedError(f"gradient norm diverged at epoch {epoch}")
        np.clip(c.b, 0.0, None, out=c.b)
        if c.hidden_kind == "continuous":
            np.clip(c.n, 0.0, None, out=c.n)

        # reconstruction error as the loss proxy
        v_rec = gibbs_update_visible(h_data, c, rng)
        mse = float(np.mean((v_rec - batch) ** 2))
        loss_trace.append(mse)
        history.append({"epoch": epoch, "reconstruction_mse": mse,
                        "grad_norm": float(np.sqrt(gnorm_sq))})
        if log_every and epoch % log_every == 0:
            log_fn(f"epoch {epoch:5d}  reconstruction mse {mse:.5f}")

    return RBMReport(couplings=c, loss_trace=np.asarray(loss_trace),
                     history=history)


def extract_features(couplings: BipartiteCouplings, hidden_index: int,
                     image_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Column j of the coupling matrix, optionally reshaped to the visible
    image grid (the learned feature of hidden unit j)."""
    if not 0 <= hidden_index < couplings.n_hidden:
        raise IndexError(f"hidden index {hidden_index} out of range")
    col = couplings.w[:, hidden_index].copy()
    if image_shape is not None:
        col = col.reshape(image_shape)
    return col


def ising_limit_check(kappa: float, lambda_sequence, n_draws: int = 20000,
                      rng_seed: int = 0) -> np.ndarray:
    """Concentration of |phi| on 1 in the Ising limit.

    For each lambda the single-site double-well density with b = lambda/4
    and a = -lambda/2 (minima at +-1; mu^2 = -lambda - 4 kappa in the
    standard parameters) is sampled and the mean squared deviation of |phi|
    from 1 is returned; it must decrease along an increasing lambda sequence.
    """
    lams = np.asarray(list(lambda_sequence), dtype=float)
    if np.any(np.diff(lams) <= 0):
        raise ValueError("lambda sequence must be strictly increasing")
    rng = make_rng(rng_seed)
    out = np.empty(len(lams))
    for k, lam in enumerate(lams):
        x = sample_quartic_array(np.zeros(n_draws), np.full(n_draws, -lam / 2.0),
                                 np.full(n_draws, lam / 4.0), rng)
        out[k] = float(np.mean((np.abs(x) - 1.0) ** 2))
    return out
