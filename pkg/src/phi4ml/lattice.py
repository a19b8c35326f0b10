"""Square-lattice geometry, field configurations and the inhomogeneous phi^4 action.

The model lives on a periodic 2D square lattice with one real field value per
site.  The trainable action is

    S(phi; theta) = -sum_links w_ij phi_i phi_j + sum_i a_i phi_i^2
                    + sum_i b_i phi_i^4 + sum_i r_i phi_i

with per-link couplings w and per-site couplings a, b and the optional
symmetry-breaking term r.  Sums over <ij> run over lattice *links*, so for
L = 2 the wraparound links count twice (2V nearest-neighbor links per link
class in 2D periodic, independent of L).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateLatticeError(ValueError):
    """Raised for lattices whose link enumeration would contain self-pairs."""


@dataclass(frozen=True)
class LatticeGeometry:
    """Sites on a square lattice plus the deterministic link enumeration.

    ``links`` are nearest-neighbor site-index pairs, ``nnn_links`` the
    next-nearest (diagonal) pairs.  Both are enumerated site-major with a
    fixed offset order, so identical (L, periodic) always yields an
    identical ordering.
    """

    side_length: int
    dimensions: int
    periodic: bool
    links: np.ndarray        # (n_links, 2) int
    nnn_links: np.ndarray    # (n_nnn_links, 2) int

    @property
    def volume(self) -> int:
        return self.side_length ** self.dimensions

    @property
    def n_links(self) -> int:
        return len(self.links)


def build_square_lattice(L: int, periodic: bool = True) -> LatticeGeometry:
    """Build a 2D square lattice of side L with site-major link enumeration.

    Nearest-neighbor offsets are (+1, 0), (0, +1); next-nearest are
    (+1, +1), (+1, -1).  L = 1 with periodic boundaries is rejected because
    every wraparound link would be a self-pair.
    """
    if L < 1:
        raise ValueError(f"side length must be >= 1, got {L}")
    if periodic and L == 1:
        raise DegenerateLatticeError("degenerate lattice: L=1 periodic yields self-links")

    def site(x, y):
        return (x % L) * L + (y % L)

    nn_offsets = [(1, 0), (0, 1)]
    nnn_offsets = [(1, 1), (1, -1)]
    links, nnn_links = [], []
    for x in range(L):
        for y in range(L):
            for dx, dy in nn_offsets:
                if periodic or (0 <= x + dx < L and 0 <= y + dy < L):
                    links.append((site(x, y), site(x + dx, y + dy)))
            for dx, dy in nnn_offsets:
                if periodic or (0 <= x + dx < L and 0 <= y + dy < L):
                    nnn_links.append((site(x, y), site(x + dx, y + dy)))

    links = np.asarray(links, dtype=np.intp).reshape(-1, 2)
    nnn_links = np.asarray(nnn_links, dtype=np.intp).reshape(-1, 2)
    return LatticeGeometry(side_length=L, dimensions=2, periodic=periodic,
                           links=links, nnn_links=nnn_links)


@dataclass
class CouplingSet:
    """Variational parameter vector theta = {w per link, a, b, r per site}."""

    w: np.ndarray
    a: np.ndarray
    b: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        for name in ("w", "a", "b", "r"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in coupling array {name!r}")
        if not (len(self.a) == len(self.b) == len(self.r)):
            raise ValueError("per-site coupling arrays must share one length")

    @classmethod
    def homogeneous(cls, geometry: LatticeGeometry, w: float, a: float,
                    b: float, r: float = 0.0) -> "CouplingSet":
        V, n_links = geometry.volume, geometry.n_links
        return cls(w=np.full(n_links, w), a=np.full(V, a),
                   b=np.full(V, b), r=np.full(V, r))

    def validate_against(self, geometry: LatticeGeometry):
        if len(self.w) != geometry.n_links or len(self.a) != geometry.volume:
            raise ValueError("coupling arrays do not match geometry "
                             f"(|w|={len(self.w)}, |a|={len(self.a)}, "
                             f"links={geometry.n_links}, V={geometry.volume})")

    def as_vector(self) -> np.ndarray:
        """Flatten to the canonical gradient layout [w, a, b, r]."""
        return np.concatenate([self.w, self.a, self.b, self.r])

    @classmethod
    def from_vector(cls, vec: np.ndarray, geometry: LatticeGeometry) -> "CouplingSet":
        n, V = geometry.n_links, geometry.volume
        if len(vec) != n + 3 * V:
            raise ValueError("vector length does not match geometry layout")
        return cls(w=vec[:n].copy(), a=vec[n:n + V].copy(),
                   b=vec[n + V:n + 2 * V].copy(), r=vec[n + 2 * V:].copy())

    def homogenized(self) -> tuple[float, float, float, float]:
        """Mean of each coupling family, for comparing against homogeneous targets."""
        return (float(self.w.mean()), float(self.a.mean()),
                float(self.b.mean()), float(self.r.mean()))

    def copy(self) -> "CouplingSet":
        return CouplingSet(self.w.copy(), self.a.copy(), self.b.copy(), self.r.copy())


@dataclass(frozen=True)
class StandardCouplings:
    """Homogeneous phi^4 parameters (kappa, mu^2, lambda); lambda >= 0."""

    kappa: float
    mu_sq: float
    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0 for a normalizable distribution")


def map_standard_couplings(std: StandardCouplings, geometry: LatticeGeometry) -> CouplingSet:
    """Redefine (kappa, mu^2, lambda) as the homogeneous inhomogeneous-form couplings:
    w = kappa, a = (mu^2 + 4 kappa)/2, b = lambda/4, r = 0."""
    return CouplingSet.homogeneous(
        geometry,
        w=std.kappa,
        a=(std.mu_sq + 4.0 * std.kappa) / 2.0,
        b=std.lam / 4.0,
    )


# Sign map between the trainable action S and a five-term target action:
# S carries an explicit minus on the w term while the target is written with
# +g1 sum phi phi, so a converged homogeneous model satisfies
# w = -g1, a = g2, b = g3.
def couplings_from_target_g(g1: float, g2: float, g3: float,
                            geometry: LatticeGeometry) -> CouplingSet:
    return CouplingSet.homogeneous(geometry, w=-g1, a=g2, b=g3)


@dataclass(frozen=True)
class TargetActionSpec:
    """Fixed five-term target action.

    Term roles: g1 nearest-neighbor sum phi_i phi_j, g2 sum phi^2,
    g3 sum phi^4, g4 next-nearest-neighbor sum phi_i phi_j,
    g5 coefficient of the imaginary term i * sum phi^2.
    Inactive terms are treated as exactly zero.
    """

    g: tuple[float, float, float, float, float]
    active_terms: frozenset = field(default_factory=lambda: frozenset({1, 2, 3, 4, 5}))

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(float(x) for x in self.g))
        object.__setattr__(self, "active_terms", frozenset(self.active_terms))
        if len(self.g) != 5:
            raise ValueError("target action takes exactly five coefficients")
        if not self.active_terms <= {1, 2, 3, 4, 5}:
            raise ValueError("active_terms must be a subset of {1..5}")

    @property
    def effective_g(self) -> np.ndarray:
        """Coefficients with inactive terms zeroed."""
        return np.array([gk if k + 1 in self.active_terms else 0.0
                         for k, gk in enumerate(self.g)])

    @property
    def is_complex(self) -> bool:
        return 5 in self.active_terms and self.g[4] != 0.0

    def truncated(self, active: set[int]) -> "TargetActionSpec":
        return TargetActionSpec(self.g, frozenset(active))


def action_terms(config: np.ndarray, geometry: LatticeGeometry) -> np.ndarray:
    """The five coefficient-free term sums
    (sum_nn phi phi, sum phi^2, sum phi^4, sum_nnn phi phi, sum phi^2)."""
    phi = np.asarray(config, dtype=float)
    if phi.shape[-1] != geometry.volume:
        raise ValueError("configuration length does not match geometry volume")
    phi2 = phi ** 2
    t1 = np.sum(phi[..., geometry.links[:, 0]] * phi[..., geometry.links[:, 1]], axis=-1)
    t2 = np.sum(phi2, axis=-1)
    t3 = np.sum(phi2 ** 2, axis=-1)
    t4 = np.sum(phi[..., geometry.nnn_links[:, 0]] * phi[..., geometry.nnn_links[:, 1]], axis=-1)
    return np.stack([t1, t2, t3, t4, t2], axis=-1)


def action_S(config: np.ndarray, couplings: CouplingSet,
             geometry: LatticeGeometry):
    """Evaluate S(phi; theta).  Accepts a single configuration (V,) or a
    batch (N, V); returns a scalar or an (N,) array accordingly."""
    phi = np.asarray(config, dtype=float)
    couplings.validate_against(geometry)
    if phi.shape[-1] != geometry.volume:
        raise ValueError("configuration length does not match geometry volume")
    phi2 = phi ** 2
    link_term = np.sum(couplings.w * phi[..., geometry.links[:, 0]]
                       * phi[..., geometry.links[:, 1]], axis=-1)
    site_term = np.sum(couplings.a * phi2 + couplings.b * phi2 ** 2
                       + couplings.r * phi, axis=-1)
    out = -link_term + site_term
    return float(out) if np.ndim(out) == 0 else out


def action_target(config: np.ndarray, target: TargetActionSpec,
                  geometry: LatticeGeometry):
    """Evaluate the five-term target action; complex when the g5 term is active."""
    t = action_terms(config, geometry)
    g = target.effective_g
    real = t[..., 0] * g[0] + t[..., 1] * g[1] + t[..., 2] * g[2] + t[..., 3] * g[3]
    out = real + 1j * g[4] * t[..., 4]
    return complex(out) if np.ndim(out) == 0 else out


def target_action_from_terms(terms: np.ndarray, target: TargetActionSpec):
    """Target action values from cached term sums (shape (..., 5))."""
    g = target.effective_g
    terms = np.asarray(terms, dtype=float)
    real = terms[..., :4] @ g[:4]
    if target.is_complex:
        return real + 1j * g[4] * terms[..., 4]
    return real


def action_gradient_theta(config: np.ndarray, geometry: LatticeGeometry) -> np.ndarray:
    """dS/dtheta in the canonical [w, a, b, r] layout.

    S is linear in theta, so the gradient depends on the configuration only:
    dS/dw_ij = -phi_i phi_j, dS/da_i = phi_i^2, dS/db_i = phi_i^4,
    dS/dr_i = phi_i.  Batched input (N, V) gives an (N, P) array.
    """
    phi = np.asarray(config, dtype=float)
    if phi.shape[-1] != geometry.volume:
        raise ValueError("configuration length does not match geometry volume")
    dw = -phi[..., geometry.links[:, 0]] * phi[..., geometry.links[:, 1]]
    phi2 = phi ** 2
    return np.concatenate([dw, phi2, phi2 ** 2, phi], axis=-1)


def local_action_delta(config: np.ndarray, site: int, new_value: float,
                       couplings: CouplingSet, geometry: LatticeGeometry) -> float:
    """S(config with phi_site -> new_value) - S(config), touching only the
    site and its incident links."""
    phi = np.asarray(config, dtype=float)
    V = geometry.volume
    if not 0 <= site < V:
        raise IndexError(f"site index {site} out of range for volume {V}")
    old = phi[site]
    # neighbor field weighted by the incident link couplings (both link slots)
    li, lj = geometry.links[:, 0], geometry.links[:, 1]
    nb = (np.sum(couplings.w[li == site] * phi[lj[li == site]])
          + np.sum(couplings.w[lj == site] * phi[li[lj == site]]))
    d = new_value - old
    return (-nb * d
            + couplings.a[site] * (new_value ** 2 - old ** 2)
            + couplings.b[site] * (new_value ** 4 - old ** 4)
            + couplings.r[site] * d)


def clique_log_potentials(config: np.ndarray, couplings: CouplingSet,
                          geometry: LatticeGeometry) -> np.ndarray:
    """Per-link log clique potentials of the Hammersley-Clifford factorization.

    log psi_c = w_ij phi_i phi_j - (1/4)(a_i phi_i^2 + a_j phi_j^2
                + b_i phi_i^4 + b_j phi_j^4) - (1/4)(r_i phi_i + r_j phi_j)

    The 1/4 split relies on every site having degree 4, which holds only on
    the periodic 2D lattice; the sign is fixed by sum_links log psi_c = -S.
    """
    if not geometry.periodic:
        raise ValueError("clique factorization requires the periodic lattice (site degree 4)")
    phi = np.asarray(config, dtype=float)
    couplings.validate_against(geometry)
    i, j = geometry.links[:, 0], geometry.links[:, 1]
    pi, pj = phi[i], phi[j]
    site_part = (couplings.a[i] * pi ** 2 + couplings.a[j] * pj ** 2
                 + couplings.b[i] * pi ** 4 + couplings.b[j] * pj ** 4
                 + couplings.r[i] * pi + couplings.r[j] * pj)
    return couplings.w * pi * pj - 0.25 * site_part
