import json
from pathlib import Path

import numpy as np
import pytest

from freqdefense import formats, harness
from freqdefense.cli import main
from freqdefense.errors import ConfigError, EstimationError
from freqdefense.micronet import desk_net_spec
from freqdefense.wiener import load_filter

ATTACKS = [
    {"kind": "mfgsm", "epsilon": 10, "iterations": 5, "target_class": 0},
    {"kind": "mopuri", "epsilon": 10, "iterations": 5},
]
DEFENSES = [
    {"kind": "identity"},
    {"kind": "wiener", "params": {"filter": "combined"}},
    {"kind": "median_blur"},
]


def write_config(tmp_path, **over):
    cfg = {"dataset_dir": "data", "output_dir": "out", "seed": 3,
           "net": desk_net_spec(mode="nearest", seed=1), "attacks": ATTACKS, "defenses": DEFENSES}
    cfg.update(over)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


@pytest.fixture
def workspace(tmp_path):
    harness.generate_dataset(tmp_path / "data", seed=3, n_train=4, n_val=2)
    return tmp_path, write_config(tmp_path)


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_gen_data_layout_and_determinism(tmp_path):
    harness.generate_dataset(tmp_path / "a", seed=5, n_train=3, n_val=2)
    harness.generate_dataset(tmp_path / "b", seed=5, n_train=3, n_val=2)
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    assert len(harness.list_images(tmp_path / "a" / "train")) == 3
    gt = formats.read_pnm(tmp_path / "a" / "val" / "img_0000_gt.pgm")
    assert gt.shape == (32, 32, 1) and gt.max() < 4


def test_config_validation(tmp_path, workspace):
    root, cfg_path = workspace
    cfg = harness.load_config(cfg_path)
    assert cfg.dataset_dir == root / "data" and cfg.attack_labels == ["mfgsm", "mopuri"]
    assert harness.load_config(cfg_path, seed=9, out="elsewhere").seed == 9
    bad = [
        {"bogus": 1},
        {"dataset_dir": "missing"},
        {"attacks": [{"kind": "pgd"}]},
        {"attacks": [ATTACKS[0], ATTACKS[0]]},
        {"defenses": [{"kind": "wiener", "params": {"filter": "nope"}}]},
        {"net": "no_such_net.json"},
        {"eval_splits": ["test"]},
    ]
    for over in bad:
        with pytest.raises(ConfigError):
            harness.load_config(write_config(root, **over))
    with pytest.raises(ConfigError):
        harness.load_config(root / "absent.json")


def test_split_overlap_is_rejected(workspace):
    root, cfg_path = workspace
    src = root / "data" / "train" / "img_0000.ppm"
    (root / "data" / "val" / "copy.ppm").write_bytes(src.read_bytes())
    with pytest.raises(ConfigError):
        harness.load_config(cfg_path)


def test_empty_dataset_reports_no_images(tmp_path):
    for s in ("train", "val"):
        (tmp_path / "data" / s).mkdir(parents=True)
    cfg = harness.load_config(write_config(tmp_path))
    with pytest.raises(EstimationError, match="no images"):
        harness.cmd_attack(cfg)
    assert main(["attack", "--config", str(tmp_path / "cfg.json")]) == 3


def test_attack_counts_and_determinism(workspace):
    root, cfg_path = workspace
    cfg = harness.load_config(cfg_path)
    written = harness.cmd_attack(cfg)
    assert len(written) == 6 * 2
    assert len(list((root / "out" / "attacked").rglob("*.ppm"))) == 12
    first = tree_bytes(root / "out")
    harness.cmd_attack(cfg)
    assert tree_bytes(root / "out") == first
    par = harness.load_config(cfg_path, out=str(root / "par"), jobs=2)
    harness.cmd_attack(par)
    assert tree_bytes(root / "par") == first
    r = formats.load_perturbation(written[0])
    assert np.max(np.abs(r)) <= 10 + 1e-9


def test_fit_filter_uses_train_split_only(workspace, monkeypatch):
    root, cfg_path = workspace
    cfg = harness.load_config(cfg_path)
    harness.cmd_attack(cfg)
    touched = []
    for name in ("read_pnm", "load_perturbation"):
        orig = getattr(formats, name)

        def spy(path, _orig=orig):
            touched.append(Path(path))
            return _orig(path)

        monkeypatch.setattr(formats, name, spy)
    filters = harness.cmd_fit_filter(cfg)
    assert touched and not any("val" in p.parts for p in touched)
    mean = (load_filter(harness.filter_path(cfg, "mfgsm")).gains
            + load_filter(harness.filter_path(cfg, "mopuri")).gains) / 2
    np.testing.assert_allclose(load_filter(harness.filter_path(cfg, "combined")).gains, mean, atol=1e-15)
    assert set(filters) == {"mfgsm", "mopuri", "combined"}


def test_single_attack_combined_equals_it(tmp_path):
    harness.generate_dataset(tmp_path / "data", seed=1, n_train=2, n_val=1)
    cfg = harness.load_config(write_config(tmp_path, attacks=ATTACKS[:1]))
    harness.cmd_attack(cfg)
    harness.cmd_fit_filter(cfg)
    a = harness.filter_path(cfg, "mfgsm").read_bytes()
    c = harness.filter_path(cfg, "combined").read_bytes()
    assert a[:6] == c[:6] and a[7:] == c[7:]  # only the provenance tag differs


def test_fit_filter_without_attacks_fails(workspace):
    _, cfg_path = workspace
    with pytest.raises(EstimationError):
        harness.cmd_fit_filter(harness.load_config(cfg_path))


def test_evaluate_grid_and_identity_rows(workspace):
    root, cfg_path = workspace
    cfg = harness.load_config(cfg_path)
    harness.cmd_attack(cfg)
    harness.cmd_fit_filter(cfg)
    rows = harness.cmd_evaluate(cfg)
    assert len(rows) == 2 * 3 * 4
    keys = {(r["image_id"], r["attack"], r["defense"]) for r in rows}
    assert len(keys) == len(rows)
    on_disk = harness.read_report(root / "out" / "report.csv")
    assert list(on_disk[0]) == list(harness.REPORT_COLUMNS)
    assert [r["mse"] for r in on_disk] == [r["mse"] for r in rows]
    by = {(r["image_id"], r["attack"], r["defense"]): r for r in rows}
    for (img, att, d), r in by.items():
        if d == "identity":
            none = by[(img, att, "none")]
            assert (r["mse"], r["ssim"], r["miou"]) == (none["mse"], none["ssim"], none["miou"])
        if att == "none" and d == "none":
            assert r["mse"] == 0 and r["miou"] == 1.0
    assert (root / "out" / "summary.csv").is_file()


def test_zero_perturbations_match_clean_rows(workspace):
    root, cfg_path = workspace
    cfg = harness.load_config(cfg_path)
    harness.cmd_attack(cfg)
    harness.cmd_fit_filter(cfg)
    for p in (root / "out" / "perturbations" / "val").glob("*.pert"):
        formats.save_perturbation(p, np.zeros((32, 32, 3)))
    by = {(r["image_id"], r["attack"], r["defense"]): r for r in harness.cmd_evaluate(cfg)}
    for (img, att, d), r in by.items():
        clean = by[(img, "none", d)]
        assert (r["mse"], r["ssim"], r["miou"]) == (clean["mse"], clean["ssim"], clean["miou"])


def test_spectra_outputs(workspace):
    root, cfg_path = workspace
    cfg = harness.load_config(cfg_path)
    harness.cmd_attack(cfg)
    rows = harness.cmd_spectra(cfg, sweep_modes=True)
    out = root / "out" / "spectra"
    for name in ("mfgsm", "mopuri", "mode_nearest", "mode_bilinear", "mode_bicubic", "mode_area"):
        assert (out / f"{name}.png").is_file() and (out / f"{name}.pgm").is_file()
    assert [r["mode"] for r in rows if r["source"] == "mode_sweep"] == ["nearest", "bilinear", "bicubic", "area"]
    assert (out / "peak_scores.csv").read_text().startswith("source,attack,mode,n,scale,score")


def test_cli_end_to_end(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["gen-data", "--config", str(cfg), "--n-train", "3", "--n-val", "2"]) == 0
    for cmd in (["attack"], ["fit-filter"], ["evaluate"], ["spectra", "--sweep-interp"]):
        assert main(cmd + ["--config", str(cfg)]) == 0, cmd
    assert len(harness.read_report(tmp_path / "out" / "report.csv")) == 2 * 3 * 4
    assert main(["evaluate"]) == 2
    (tmp_path / "broken.json").write_text("{")
    assert main(["attack", "--config", str(tmp_path / "broken.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
