import numpy as np
import pytest

from phi4ml.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, main
from phi4ml.io import load_checkpoint, load_ensemble, read_pgm, write_pgm


def run_cli(*args):
    return main(list(args))


SAMPLE_FAST = ["--set", "L=2", "--set", "burn_in=200", "--set", "thinning=1",
               "--set", "n_samples=200", "--set", "n_chains=20"]


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def test_no_verb_is_config_error(capsys):
    assert run_cli() == EXIT_CONFIG


def test_unknown_key_exit_code(capsys):
    assert run_cli("sample", "--set", "bogus=1") == EXIT_CONFIG


def test_sample_outputs_and_determinism(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    for out in (out1, out2):
        assert run_cli("sample", *SAMPLE_FAST, "--set", f"out={out}") == 0
    for name in ("ensemble.txt", "observables.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    ens = load_ensemble(out1 / "ensemble.txt")
    assert len(ens) == 200
    header, rows = read_csv(out1 / "observables.csv")
    assert header == ["observable", "mean", "std_error", "n_effective"]
    assert [r[0] for r in rows] == ["S", "m_avg", "m_sum", "abs_m_avg",
                                    "phi2_avg"]


def test_sample_different_seed_differs(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert run_cli("sample", *SAMPLE_FAST, "--set", f"out={out1}") == 0
    assert run_cli("sample", *SAMPLE_FAST, "--set", f"out={out2}",
                   "--set", "seed=9") == 0
    assert (out1 / "ensemble.txt").read_bytes() != \
        (out2 / "ensemble.txt").read_bytes()


def test_train_variational_epochs_zero(tmp_path):
    out = tmp_path / "t"
    assert run_cli("train-variational", "--set", "L=2", "--set", "epochs=0",
                   "--set", "samples_per_epoch=200", "--set", "burn_in=100",
                   "--set", f"out={out}") == 0
    header, rows = read_csv(out / "kl_trace.csv")
    assert len(rows) == 1 and rows[0][0] == "0"
    (couplings, geom), hdr = load_checkpoint(out / "checkpoint.txt")
    assert hdr["epoch"] == "0"
    assert geom.side_length == 2


def test_train_variational_short_run_and_plot(tmp_path):
    out = tmp_path / "t"
    assert run_cli("train-variational", "--set", "L=2", "--set", "epochs=20",
                   "--set", "samples_per_epoch=200", "--set", "burn_in=100",
                   "--set", "g1=-0.4", "--set", "g2=1.0", "--set", "g3=0.25",
                   "--set", "learning_rate=5e-3", "--set", "plot=true",
                   "--set", f"out={out}") == 0
    header, rows = read_csv(out / "kl_trace.csv")
    assert len(rows) == 20
    assert (out / "coupling_error.csv").exists()
    assert (out / "kl_trace.png").stat().st_size > 0


def test_train_variational_divergence_exit(tmp_path):
    out = tmp_path / "t"
    assert run_cli("train-variational", "--set", "L=2", "--set", "epochs=50",
                   "--set", "samples_per_epoch=100", "--set", "burn_in=50",
                   "--set", "grad_ceiling=1e-6",
                   "--set", f"out={out}") == EXIT_DIVERGED


def test_reweight_pipeline(tmp_path):
    src = tmp_path / "src"
    assert run_cli("sample", *SAMPLE_FAST, "--set", "w=0.3", "--set", "a=0.8",
                   "--set", "b=0.2", "--set", f"out={src}") == 0
    out = tmp_path / "rw"
    assert run_cli("reweight", "--set", f"ensemble={src / 'ensemble.txt'}",
                   "--set", "g1=-0.3", "--set", "g2=0.8", "--set", "g3=0.2",
                   "--set", "j=2", "--set", "gprime=0.8 0.9 1.0",
                   "--set", "observable=phi2", "--set", f"out={out}") == 0
    header, rows = read_csv(out / "reweight.csv")
    assert header[:3] == ["g_prime", "mean_re", "mean_im"]
    assert len(rows) == 3
    assert float(rows[0][2]) == 0.0     # real target: no imaginary part


def test_reweight_missing_ensemble_exit(tmp_path):
    assert run_cli("reweight", "--set", "ensemble=/nope.txt",
                   "--set", "gprime=0.5",
                   "--set", f"out={tmp_path / 'x'}") == EXIT_IO


def test_weight_function_outputs(tmp_path):
    src = tmp_path / "src"
    assert run_cli("sample", *SAMPLE_FAST, "--set", "w=0.3", "--set", "a=0.8",
                   "--set", "b=0.2", "--set", f"out={src}") == 0
    out = tmp_path / "wf"
    assert run_cli("weight-function",
                   "--set", f"ensemble={src / 'ensemble.txt'}",
                   "--set", "g1=-0.3", "--set", "g2=0.8", "--set", "g3=0.2",
                   "--set", "j=2", "--set", "gprime=0.8 1.0", "--set", "bins=16",
                   "--set", f"out={out}") == 0
    header, rows = read_csv(out / "overlap.csv")
    assert header == ["g_prime", "overlap_score", "passed"]
    first = [r for r in rows if r[0] == "0.8"][0]
    assert float(first[1]) == pytest.approx(1.0)


def test_train_data_csv_dataset(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.normal(0.0, 0.5, size=(300, 4))
    ds = tmp_path / "data.csv"
    np.savetxt(ds, data, delimiter=",")
    out = tmp_path / "td"
    assert run_cli("train-data", "--set", f"dataset={ds}",
                   "--set", "epochs=30", "--set", "n_chains=50",
                   "--set", "burn_in=100", "--set", "eval_samples=500",
                   "--set", f"out={out}") == 0
    assert (out / "checkpoint.txt").exists()
    header, rows = read_csv(out / "marginal.csv")
    assert header == ["site_value", "density_data", "density_model"]


def test_train_data_pgm_rollout(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, size=(4, 4), dtype=np.uint8)
    write_pgm(tmp_path / "img.pgm", img)
    out = tmp_path / "td"
    assert run_cli("train-data", "--set", f"dataset={tmp_path / 'img.pgm'}",
                   "--set", "epochs=10", "--set", "n_chains=20",
                   "--set", "burn_in=50", "--set", "eval_samples=200",
                   "--set", "rollout_checkpoints=0 2 5",
                   "--set", f"out={out}") == 0
    for sweeps in (0, 2, 5):
        snap = read_pgm(out / f"rollout_{sweeps:05d}.pgm")
        assert snap.shape == (4, 4)


def test_rbm_train_and_features(tmp_path):
    rng = np.random.default_rng(2)
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    for k in range(6):
        write_pgm(imgs / f"{k}.pgm",
                  rng.integers(0, 256, size=(4, 4), dtype=np.uint8))
    out = tmp_path / "rbm"
    assert run_cli("rbm-train", "--set", f"dataset={imgs}",
                   "--set", "n_hidden=3", "--set", "epochs=5",
                   "--set", f"out={out}") == 0
    feats = tmp_path / "feats"
    assert run_cli("rbm-features",
                   "--set", f"checkpoint={out / 'rbm_checkpoint.txt'}",
                   "--set", f"out={feats}") == 0
    for j in range(3):
        assert read_pgm(feats / f"feature_{j:03d}.pgm").shape == (4, 4)


def test_rbm_features_rejects_lattice_checkpoint(tmp_path):
    out = tmp_path / "t"
    assert run_cli("train-variational", "--set", "L=2", "--set", "epochs=0",
                   "--set", "samples_per_epoch=100", "--set", "burn_in=50",
                   "--set", f"out={out}") == 0
    assert run_cli("rbm-features",
                   "--set", f"checkpoint={out / 'checkpoint.txt'}",
                   "--set", f"out={tmp_path / 'f'}") == EXIT_CONFIG


def test_oracle_csv_matches_library(tmp_path, geom2, canon_couplings, quad):
    from phi4ml.oracle import exact_expectation, exact_log_Z
    out = tmp_path / "o"
    assert run_cli("oracle", "--set", "g1=-0.3", "--set", "g2=0.8",
                   "--set", "g3=0.2", "--set", f"out={out}") == 0
    header, rows = read_csv(out / "oracle.csv")
    vals = {r[0]: complex(float(r[1]), float(r[2])) for r in rows}
    assert vals["log_Z_model"].real == pytest.approx(
        exact_log_Z(canon_couplings, geom2, quad).real, abs=1e-8)
    assert vals["mean_phi2_sum"].real == pytest.approx(
        exact_expectation(lambda c: (c ** 2).sum(axis=-1), canon_couplings,
                          geom2, quad), abs=1e-8)
    # model equals the mapped target, so the tied gradient sums vanish
    for fam in ("w", "a", "b", "r"):
        assert abs(vals[f"grad_sum_{fam}"]) < 1e-8
    assert abs(vals["kl_model_target"]) < 1e-10
