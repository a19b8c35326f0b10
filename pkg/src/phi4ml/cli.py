"""Command-line front end.

One verb per invocation; every parameter comes from a config file section
and/or repeated ``--set key=value`` flags.  Each run writes its artifacts
plus a fully-resolved config echo into the output directory, so identical
invocations reproduce byte-identical delimited files.  With ``plot = true``
matplotlib figures are rendered next to the CSVs.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 IO.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io, report
from .config import SCHEMAS, ConfigError, RunConfig, parse_config, \
    resolved_config_text
from .lattice import CouplingSet, TargetActionSpec, build_square_lattice
from .likelihood import (Dataset, LikelihoodHyperparams, equilibration_rollout,
                         field_to_pixels, moment_matched_init, pixels_to_field,
                         site_marginal_histogram, train_on_data)
from .mcmc import (SamplerConfig, estimate_observable, make_rng,
                   sample_ensemble)
from .oracle import (QuadratureSpec, exact_expectation, exact_kl, exact_log_Z,
                     exact_variational_gradient)
from .phi4nn import (BipartiteCouplings, RBMHyperparams, extract_features,
                     train_rbm)
from .reweight import (ReweightRequest, build_weight_function,
                       overlap_diagnostic, reweight_observable)
from .variational import (TrainingDivergedError, default_random_init,
                          estimate_kl, train_variational)

EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 2, 3, 4


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved-config.txt").write_text(resolved_config_text(cfg))
    return out


def _target_from(cfg: RunConfig) -> TargetActionSpec:
    g = (cfg["g1"], cfg["g2"], cfg["g3"], cfg["g4"], cfg["g5"])
    return TargetActionSpec(g=g, active_terms=frozenset(cfg["active_terms"]))


def _homogeneous_or_checkpoint(cfg: RunConfig):
    if cfg["checkpoint"]:
        (couplings, geometry), _ = io.load_checkpoint(cfg["checkpoint"])
        return couplings, geometry
    geometry = build_square_lattice(cfg["L"], cfg["periodic"])
    couplings = CouplingSet.homogeneous(geometry, w=cfg["w"], a=cfg["a"],
                                        b=cfg["b"], r=cfg["r"])
    return couplings, geometry


def _load_field_dataset(path: str):
    """CSV of configurations (one per row) or a PGM image as one sample.
    Returns (Dataset, image_shape or None)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    if p.suffix.lower() == ".pgm":
        grid = io.read_pgm(p)
        return Dataset(pixels_to_field(grid).reshape(1, -1), source=str(p)), grid.shape
    rows = np.loadtxt(p, delimiter=",", ndmin=2)
    return Dataset(rows, source=str(p)), None


# --- verb handlers --------------------------------------------------------

def _run_sample(cfg: RunConfig):
    out = _out_dir(cfg)
    couplings, geometry = _homogeneous_or_checkpoint(cfg)
    sampler = SamplerConfig(burn_in_sweeps=cfg["burn_in"],
                            thinning_sweeps=cfg["thinning"],
                            n_samples=cfg["n_samples"],
                            proposal_width=cfg["proposal_width"],
                            adapt_proposal=cfg["adapt"],
                            rng_seed=cfg["seed"], n_chains=cfg["n_chains"])
    ensemble = sample_ensemble(couplings, geometry, sampler)
    io.save_ensemble(out / "ensemble.txt", ensemble, seed=cfg["seed"])

    observables = [
        ("S", lambda c: ensemble.per_sample_S),
        ("m_avg", lambda c: c.mean(axis=-1)),
        ("m_sum", lambda c: c.sum(axis=-1)),
        ("abs_m_avg", lambda c: np.abs(c.mean(axis=-1))),
        ("phi2_avg", lambda c: (c ** 2).mean(axis=-1)),
    ]
    rows = []
    for name, fn in observables:
        est = estimate_observable(ensemble, fn)
        rows.append([name, est.mean, est.std_error, est.n_effective])
    io.write_csv(out / "observables.csv",
                 ["observable", "mean", "std_error", "n_effective"], rows)
    if cfg["plot"]:
        counts, density = site_marginal_histogram(ensemble.configs)
        report.render_marginal(out / "marginal.png", counts, density)
    return 0


def _run_train_variational(cfg: RunConfig):
    out = _out_dir(cfg)
    geometry = build_square_lattice(cfg["L"], cfg["periodic"])
    target = _target_from(cfg)
    if cfg["init"] == "random":
        initial = default_random_init(geometry, make_rng(cfg["seed"]))
    else:
        w0, a0, b0, r0 = (float(x) for x in cfg["init"].split(","))
        initial = CouplingSet.homogeneous(geometry, w=w0, a=a0, b=b0, r=r0)
    sampler = SamplerConfig(burn_in_sweeps=cfg["burn_in"], thinning_sweeps=0,
                            n_samples=cfg["samples_per_epoch"],
                            proposal_width=cfg["proposal_width"],
                            rng_seed=cfg["seed"],
                            n_chains=cfg["samples_per_epoch"])

    header = ["epoch", "estimated_kl", "gradient_norm",
              "mean_w", "mean_a", "mean_b"]
    if cfg["epochs"] == 0:
        ensemble = sample_ensemble(initial, geometry, SamplerConfig(
            burn_in_sweeps=cfg["burn_in"], thinning_sweeps=0,
            n_samples=cfg["samples_per_epoch"],
            proposal_width=cfg["proposal_width"], rng_seed=cfg["seed"],
            n_chains=cfg["samples_per_epoch"]))
        kl = estimate_kl(ensemble, target)
        w0, a0, b0, _ = initial.homogenized()
        io.write_csv(out / "kl_trace.csv", header, [[0, kl, 0.0, w0, a0, b0]])
        io.save_checkpoint(out / "checkpoint.txt", initial, geometry, epoch=0)
        return 0

    rep = train_variational(initial, target, geometry, sampler,
                            epochs=cfg["epochs"],
                            learning_rate=cfg["learning_rate"],
                            resample_every=cfg["resample_every"],
                            tie=cfg["tie"],
                            sweeps_per_epoch=cfg["sweeps_per_epoch"],
                            grad_ceiling=cfg["grad_ceiling"],
                            tail_average=cfg["tail_average"],
                            log_every=cfg["log_every"])
    rows = [[h["epoch"], h["kl"], h["grad_norm"], h["couplings_mean"][0],
             h["couplings_mean"][1], h["couplings_mean"][2]]
            for h in rep.history]
    io.write_csv(out / "kl_trace.csv", header, rows)
    io.save_checkpoint(out / "checkpoint.txt", rep.final_couplings, geometry,
                       epoch=cfg["epochs"])
    if rep.coupling_error is not None:
        io.write_csv(out / "coupling_error.csv", ["family", "abs_error"],
                     [[k, v] for k, v in rep.coupling_error.items()])
    if cfg["plot"]:
        report.render_trace(out / "kl_trace.png", rep.kl_trace, "estimated KL")
    return 0


def _run_train_data(cfg: RunConfig):
    out = _out_dir(cfg)
    dataset, image_shape = _load_field_dataset(cfg["dataset"])
    side = int(round(np.sqrt(dataset.samples.shape[1])))
    if side * side != dataset.samples.shape[1]:
        raise ConfigError("dataset configurations are not square lattices")
    geometry = build_square_lattice(side, cfg["periodic"])

    if cfg["init"] == "moment":
        initial = moment_matched_init(dataset, geometry,
                                      symmetric=cfg["freeze_r"])
    elif cfg["init"] == "random":
        initial = default_random_init(geometry, make_rng(cfg["seed"]))
    else:
        w0, a0, b0, r0 = (float(x) for x in cfg["init"].split(","))
        initial = CouplingSet.homogeneous(geometry, w=w0, a=a0, b=b0, r=r0)

    hyper = LikelihoodHyperparams(epochs=cfg["epochs"],
                                  learning_rate=cfg["learning_rate"],
                                  cd_steps=cfg["cd_steps"],
                                  n_chains=cfg["n_chains"],
                                  batch_size=cfg["batch_size"] or None,
                                  tie=cfg["tie"], freeze_r=cfg["freeze_r"],
                                  proposal_width=cfg["proposal_width"],
                                  burn_in_sweeps=cfg["burn_in"],
                                  rng_seed=cfg["seed"])
    rep = train_on_data(dataset, geometry, initial, hyper,
                        log_every=cfg["log_every"])
    io.write_csv(out / "loss_trace.csv", ["epoch", "moment_mismatch"],
                 [[k, v] for k, v in enumerate(rep.loss_trace)])
    io.save_checkpoint(out / "checkpoint.txt", rep.couplings, geometry,
                       epoch=cfg["epochs"])

    eval_cfg = SamplerConfig(burn_in_sweeps=2000, thinning_sweeps=2,
                             n_samples=cfg["eval_samples"],
                             rng_seed=cfg["seed"] + 1,
                             n_chains=max(cfg["n_chains"], 64))
    model_ens = sample_ensemble(rep.couplings, geometry, eval_cfg)
    lo = min(dataset.samples.min(), model_ens.configs.min())
    hi = max(dataset.samples.max(), model_ens.configs.max())
    centers, dens_data = site_marginal_histogram(dataset.samples,
                                                 value_range=(lo, hi))
    _, dens_model = site_marginal_histogram(model_ens.configs,
                                            value_range=(lo, hi))
    io.write_csv(out / "marginal.csv",
                 ["site_value", "density_data", "density_model"],
                 np.column_stack([centers, dens_data, dens_model]))

    if cfg["rollout_checkpoints"] and image_shape is not None:
        rng = make_rng(cfg["seed"] + 2)
        start = rng.uniform(-1.0, 1.0, geometry.volume)
        snaps = equilibration_rollout(rep.couplings, geometry, start,
                                      list(cfg["rollout_checkpoints"]),
                                      proposal_width=cfg["proposal_width"],
                                      rng_seed=cfg["seed"] + 3)
        for sweeps, snap in zip(cfg["rollout_checkpoints"], snaps):
            io.write_pgm(out / f"rollout_{sweeps:05d}.pgm",
                         field_to_pixels(snap.reshape(image_shape)))
    if cfg["plot"]:
        report.render_trace(out / "loss_trace.png", rep.loss_trace,
                            "moment mismatch")
        report.render_marginal(out / "marginal.png", centers, dens_data,
                               dens_model)
    return 0


def _observable_values(name: str, ensemble, request, g_prime):
    if name == "action":
        g = request.target_g(g_prime)
        t = ensemble.per_sample_terms
        return t[:, :4] @ g[:4] + 1j * g[4] * t[:, 4]
    if name == "action_real":
        g = request.target_g(g_prime)
        return ensemble.per_sample_terms[:, :4] @ g[:4]
    if name == "magnetization":
        return ensemble.configs.mean(axis=-1)
    if name == "abs_magnetization":
        return np.abs(ensemble.configs.mean(axis=-1))
    if name == "phi2":
        return (ensemble.configs ** 2).mean(axis=-1)
    raise ConfigError(f"unknown observable {name!r}")


def _run_reweight(cfg: RunConfig):
    out = _out_dir(cfg)
    ensemble = io.load_ensemble(cfg["ensemble"])
    request = ReweightRequest(varying_term_index=cfg["j"],
                              g=(cfg["g1"], cfg["g2"], cfg["g3"],
                                 cfg["g4"], cfg["g5"]),
                              include_complex=cfg["include_complex"])
    rows = []
    for gp in cfg["gprime"]:
        obs = _observable_values(cfg["observable"], ensemble, request, gp)
        est = reweight_observable(ensemble, obs, request, gp)
        mean = complex(est.mean)
        rows.append([gp, mean.real, mean.imag, est.std_error,
                     est.std_error_imag, est.n_effective,
                     int(est.low_overlap)])
    io.write_csv(out / "reweight.csv",
                 ["g_prime", "mean_re", "mean_im", "err_re", "err_im",
                  "n_effective", "low_overlap"], rows)
    if cfg["plot"]:
        arr = np.array([r[:4] for r in rows], dtype=float)
        report.render_reweight_curve(out / "reweight.png", arr[:, 0],
                                     arr[:, 1], arr[:, 3],
                                     cfg["observable"])
    return 0


def _run_weight_function(cfg: RunConfig):
    out = _out_dir(cfg)
    ensemble = io.load_ensemble(cfg["ensemble"])
    request = ReweightRequest(varying_term_index=cfg["j"],
                              g=(cfg["g1"], cfg["g2"], cfg["g3"],
                                 cfg["g4"], cfg["g5"]),
                              include_complex=cfg["include_complex"])
    ref_gp = cfg["reference_gprime"]
    if ref_gp is None:
        ref_gp = cfg["gprime"][0]
    reference = build_weight_function(ensemble, request, ref_gp,
                                      n_bins=cfg["bins"])
    wf_rows, overlap_rows, wfs = [], [], []
    for gp in cfg["gprime"]:
        wf = build_weight_function(ensemble, request, gp, n_bins=cfg["bins"])
        wfs.append(wf)
        for s, w in zip(wf.bin_centers, wf.weights):
            wf_rows.append([gp, s, w.real, w.imag])
        score, passed = overlap_diagnostic(reference, wf,
                                           threshold=cfg["threshold"])
        overlap_rows.append([gp, score, int(passed)])
    io.write_csv(out / "weight_functions.csv",
                 ["g_prime", "t_bin_center", "weight_re", "weight_im"], wf_rows)
    io.write_csv(out / "overlap.csv", ["g_prime", "overlap_score", "passed"],
                 overlap_rows)
    if cfg["plot"]:
        report.render_weight_functions(out / "weight_functions.png", wfs)
    return 0


def _nearest_resize(grid: np.ndarray, side: int) -> np.ndarray:
    h, w = grid.shape
    ri = (np.arange(side) * h) // side
    ci = (np.arange(side) * w) // side
    return grid[np.ix_(ri, ci)]


def _load_image_dataset(path: str, resize: int):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    if p.is_dir():
        files = sorted(p.glob("*.pgm"))
        if not files:
            raise FileNotFoundError(f"no .pgm files in {path}")
        grids = [io.read_pgm(f) for f in files]
    elif p.suffix.lower() == ".pgm":
        grids = [io.read_pgm(p)]
    else:
        rows = np.loadtxt(p, delimiter=",", ndmin=2)
        return rows, None
    if resize:
        grids = [_nearest_resize(g, resize) for g in grids]
    shape = grids[0].shape
    if any(g.shape != shape for g in grids):
        raise ConfigError("images in the dataset have mixed sizes "
                          "(use the resize key)")
    data = np.stack([pixels_to_field(g).ravel() for g in grids])
    return data, shape


def _run_rbm_train(cfg: RunConfig):
    out = _out_dir(cfg)
    data, _ = _load_image_dataset(cfg["dataset"], cfg["resize"])
    nv, nh = data.shape[1], cfg["n_hidden"]
    rng = make_rng(cfg["seed"])
    couplings = BipartiteCouplings(
        w=rng.normal(0.0, 0.01, size=(nv, nh)),
        r=np.zeros(nv), a=np.full(nv, 0.5), b=np.full(nv, 0.1),
        s=np.zeros(nh),
        m=np.ones(nh) if cfg["hidden_kind"] == "continuous" else np.zeros(nh),
        n=np.zeros(nh), hidden_kind=cfg["hidden_kind"])
    hyper = RBMHyperparams(epochs=cfg["epochs"],
                           learning_rate=cfg["learning_rate"],
                           cd_steps=cfg["cd_steps"],
                           batch_size=cfg["batch_size"] or None,
                           persistent=cfg["persistent"],
                           rng_seed=cfg["seed"])
    rep = train_rbm(data, couplings, hyper, log_every=cfg["log_every"])
    io.save_bipartite_checkpoint(out / "rbm_checkpoint.txt", rep.couplings,
                                 epoch=cfg["epochs"])
    io.write_csv(out / "trace.csv", ["epoch", "reconstruction_mse"],
                 [[k, v] for k, v in enumerate(rep.loss_trace)])
    if cfg["plot"]:
        report.render_trace(out / "trace.png", rep.loss_trace,
                            "reconstruction MSE")
    return 0


def _run_rbm_features(cfg: RunConfig):
    out = _out_dir(cfg)
    obj, header = io.load_checkpoint(cfg["checkpoint"])
    if header.get("kind") != "bipartite":
        raise ConfigError("rbm-features needs a bipartite checkpoint")
    rows, cols = cfg["rows"], cfg["cols"]
    if not rows or not cols:
        side = int(round(np.sqrt(obj.n_visible)))
        if side * side != obj.n_visible:
            raise ConfigError("visible layer is not square; set rows and cols")
        rows = cols = side
    feats = []
    for j in range(obj.n_hidden):
        feat = extract_features(obj, j, image_shape=(rows, cols))
        feats.append(feat)
        span = feat.max() - feat.min()
        scaled = (feat - feat.min()) / span if span > 0 else np.zeros_like(feat)
        io.write_pgm(out / f"feature_{j:03d}.pgm",
                     np.rint(scaled * 255).astype(np.uint8))
    if cfg["plot"]:
        report.render_feature_grid(out / "features.png", feats)
    return 0


def _run_oracle(cfg: RunConfig):
    out = _out_dir(cfg)
    geometry = build_square_lattice(cfg["L"], cfg["periodic"])
    quad = QuadratureSpec(phi_max=cfg["phi_max"],
                          points_per_site=cfg["points_per_site"])
    couplings = CouplingSet.homogeneous(geometry, w=cfg["w"], a=cfg["a"],
                                        b=cfg["b"], r=cfg["r"])
    target = _target_from(cfg)

    def row(name, value):
        value = complex(value)
        return [name, value.real, value.imag]

    rows = [row("log_Z_model", exact_log_Z(couplings, geometry, quad)),
            row("log_Z_target", exact_log_Z(target, geometry, quad))]
    for name, fn in [
            ("mean_phi2_sum", lambda c: (c ** 2).sum(axis=-1)),
            ("mean_m_avg", lambda c: c.mean(axis=-1)),
            ("mean_abs_m_avg", lambda c: np.abs(c.mean(axis=-1)))]:
        rows.append(row(name, exact_expectation(fn, couplings, geometry, quad)))
    if not target.is_complex:
        rows.append(row("kl_model_target",
                        exact_kl(couplings, target, geometry, quad)))
        grad = exact_variational_gradient(couplings, target, geometry, quad)
        nl, V = geometry.n_links, geometry.volume
        for name, val in zip(("w", "a", "b", "r"),
                             (grad[:nl].sum(), grad[nl:nl + V].sum(),
                              grad[nl + V:nl + 2 * V].sum(),
                              grad[nl + 2 * V:].sum())):
            rows.append(row(f"grad_sum_{name}", val))
    io.write_csv(out / "oracle.csv", ["name", "value_re", "value_im"], rows)
    return 0


_HANDLERS = {
    "sample": _run_sample,
    "train-variational": _run_train_variational,
    "train-data": _run_train_data,
    "reweight": _run_reweight,
    "weight-function": _run_weight_function,
    "rbm-train": _run_rbm_train,
    "rbm-features": _run_rbm_features,
    "oracle": _run_oracle,
}


def run(cfg: RunConfig) -> int:
    return _HANDLERS[cfg.verb](cfg)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="phi4ml",
        description="Lattice phi^4 Markov random fields: sampling, "
                    "variational and likelihood training, reweighting, "
                    "bipartite networks and quadrature oracles.")
    parser.add_argument("verb", nargs="?", choices=sorted(SCHEMAS),
                        help="operation to run")
    parser.add_argument("--config", default=None, help="config file path")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    args = parser.parse_args(argv)

    if args.verb is None:
        parser.print_usage(sys.stderr)
        print("verbs: " + ", ".join(sorted(SCHEMAS)), file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.verb, args.config, args.set)
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (io.FormatError, FileNotFoundError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
