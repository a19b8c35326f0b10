"""File formats: ensemble persistence, versioned text checkpoints, PGM
images and deterministic CSV emission.

All text formats use '.' decimals, full round-trip float precision
(shortest repr) and no locale dependence, so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .lattice import CouplingSet, LatticeGeometry, build_square_lattice
from .mcmc import SampleEnsemble
from .phi4nn import BipartiteCouplings


class FormatError(ValueError):
    pass


def fmt(x) -> str:
    """Shortest round-trip decimal representation of a float."""
    return repr(float(x))


def fmt_row(values) -> str:
    return " ".join(fmt(v) for v in values)


def couplings_digest(couplings: CouplingSet) -> str:
    return hashlib.sha256(couplings.as_vector().tobytes()).hexdigest()[:16]


# --- ensemble persistence -------------------------------------------------

ENSEMBLE_MAGIC = "PHI4ML-ENSEMBLE v1"


def save_ensemble(path, ensemble: SampleEnsemble, seed: int | None = None):
    """Columnar text format: header, then one row per sample holding
    S, the five term sums, and the V field values."""
    g = ensemble.geometry
    lines = [ENSEMBLE_MAGIC,
             f"L = {g.side_length}",
             f"periodic = {str(g.periodic).lower()}",
             f"couplings_digest = {couplings_digest(ensemble.couplings)}",
             f"seed = {seed if seed is not None else 'unknown'}",
             f"n_samples = {len(ensemble)}"]
    for s, t, c in zip(ensemble.per_sample_S, ensemble.per_sample_terms,
                       ensemble.configs):
        lines.append(fmt(s) + " " + fmt_row(t) + " " + fmt_row(c))
    Path(path).write_text("\n".join(lines) + "\n")


def load_ensemble(path, couplings: CouplingSet | None = None) -> SampleEnsemble:
    """Read an ensemble file back.  When ``couplings`` is given its digest
    must match the header; otherwise a zero provenance set is attached."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != ENSEMBLE_MAGIC:
        raise FormatError(f"{path}: not a {ENSEMBLE_MAGIC} file")
    header = {}
    k = 1
    while "=" in lines[k]:
        key, _, val = lines[k].partition("=")
        header[key.strip()] = val.strip()
        k += 1
    geometry = build_square_lattice(int(header["L"]),
                                    header.get("periodic", "true") == "true")
    n = int(header["n_samples"])
    rows = np.array([[float(x) for x in ln.split()] for ln in lines[k:k + n]])
    if rows.shape != (n, 6 + geometry.volume):
        raise FormatError(f"{path}: truncated or malformed sample rows")
    if couplings is not None:
        if couplings_digest(couplings) != header["couplings_digest"]:
            raise FormatError(f"{path}: couplings digest mismatch")
        prov = couplings.copy()
    else:
        prov = CouplingSet.homogeneous(geometry, 0.0, 0.0, 0.0)
    return SampleEnsemble(configs=rows[:, 6:], per_sample_S=rows[:, 0],
                          per_sample_terms=rows[:, 1:6], geometry=geometry,
                          couplings=prov)


# --- checkpoints ----------------------------------------------------------

CKPT_MAGIC = "PHI4ML-CKPT v1"


def _write_block(lines, name, arr):
    arr = np.asarray(arr, dtype=float).ravel()
    lines.append(f"{name} {len(arr)}")
    lines.append(fmt_row(arr) if len(arr) else "")


def save_checkpoint(path, couplings: CouplingSet, geometry: LatticeGeometry,
                    epoch: int = 0, rng_state: str | None = None):
    lines = [CKPT_MAGIC, "kind = lattice",
             f"L = {geometry.side_length}",
             f"periodic = {str(geometry.periodic).lower()}",
             f"epoch = {epoch}",
             f"rng_state = {rng_state if rng_state is not None else 'none'}"]
    for name in ("w", "a", "b", "r"):
        _write_block(lines, name, getattr(couplings, name))
    Path(path).write_text("\n".join(lines) + "\n")


def save_bipartite_checkpoint(path, couplings: BipartiteCouplings, epoch: int = 0):
    c = couplings
    lines = [CKPT_MAGIC, "kind = bipartite",
             f"n_visible = {c.n_visible}",
             f"n_hidden = {c.n_hidden}",
             f"hidden_kind = {c.hidden_kind}",
             f"epoch = {epoch}",
             "rng_state = none"]
    _write_block(lines, "w", c.w)
    for name in ("r", "a", "b", "s", "m", "n"):
        _write_block(lines, name, getattr(c, name))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Read either checkpoint kind.  Returns (object, header dict); the
    object is a (CouplingSet, LatticeGeometry) pair or a BipartiteCouplings."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a {CKPT_MAGIC} file")
    header, blocks = {}, {}
    k = 1
    while k < len(lines):
        if "=" in lines[k] and not lines[k].split()[0] in \
                ("w", "a", "b", "r", "s", "m", "n"):
            key, _, val = lines[k].partition("=")
            header[key.strip()] = val.strip()
            k += 1
        else:
            name, count = lines[k].split()
            vals = np.array([float(x) for x in lines[k + 1].split()]) \
                if int(count) else np.zeros(0)
            if len(vals) != int(count):
                raise FormatError(f"{path}: block {name} length mismatch")
            blocks[name] = vals
            k += 2
    if header.get("kind") == "bipartite":
        nv, nh = int(header["n_visible"]), int(header["n_hidden"])
        obj = BipartiteCouplings(w=blocks["w"].reshape(nv, nh), r=blocks["r"],
                                 a=blocks["a"], b=blocks["b"], s=blocks["s"],
                                 m=blocks["m"], n=blocks["n"],
                                 hidden_kind=header["hidden_kind"])
        return obj, header
    geometry = build_square_lattice(int(header["L"]),
                                    header.get("periodic", "true") == "true")
    couplings = CouplingSet(w=blocks["w"], a=blocks["a"], b=blocks["b"],
                            r=blocks["r"])
    couplings.validate_against(geometry)
    return (couplings, geometry), header


# --- PGM images -----------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Read a P2 (ASCII) or P5 (binary) PGM with maxval 255 into a
    (height, width) uint8 grid."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval with '#' comments allowed
    while len(tokens) < 4:
        if pos >= len(data):
            raise FormatError(f"{path}: truncated PGM header")
        if data[pos:pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
            continue
        if data[pos:pos + 1].isspace():
            pos += 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    magic = tokens[0].decode()
    if magic not in ("P2", "P5"):
        raise FormatError(f"{path}: unsupported PGM magic {magic!r}")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    if magic == "P5":
        pos += 1  # exactly one whitespace byte after maxval
        raster = data[pos:pos + width * height]
        if len(raster) != width * height:
            raise FormatError(f"{path}: truncated P5 raster")
        return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()
    values = data[pos:].split()
    if len(values) != width * height:
        raise FormatError(f"{path}: truncated P2 raster")
    grid = np.array([int(v) for v in values], dtype=np.int64)
    if grid.min() < 0 or grid.max() > 255:
        raise FormatError(f"{path}: P2 sample out of range")
    return grid.astype(np.uint8).reshape(height, width)


def write_pgm(path, grid: np.ndarray, binary: bool = True):
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.dtype != np.uint8:
        raise ValueError("PGM output requires a 2D uint8 grid")
    h, w = grid.shape
    if binary:
        header = f"P5\n{w} {h}\n255\n".encode()
        Path(path).write_bytes(header + grid.tobytes())
    else:
        body = "\n".join(" ".join(str(v) for v in row) for row in grid)
        Path(path).write_text(f"P2\n{w} {h}\n255\n{body}\n")


# --- CSV ------------------------------------------------------------------

def write_csv(path, header: list[str], rows):
    """Deterministic CSV: header row, comma separators, repr-precision floats."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            elif isinstance(v, str):
                cells.append(v)
            else:
                cells.append(fmt(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
