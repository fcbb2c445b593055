"""Experiment pipeline: data generation, attacks, filter fitting, evaluation, spectra.

Stage 1 fits Wiener filters on the training split from (clean image,
perturbation) pairs; stage 2 applies filters and baseline defenses to the
validation split and reports fidelity and segmentation metrics.  Every
command is deterministic given the configuration and root seed.

Layout under the output directory::

    perturbations/<split>/<image>__<attack>.pert
    attacked/<split>/<image>__<attack>.ppm
    filters/<attack>.wflt, filters/combined.wflt
    report.csv, summary.csv
    spectra/<attack>.png|.pgm, spectra/mode_<mode>.png|.pgm, spectra/peak_scores.csv
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .attacks import AttackSpec, apply_perturbation, run_attack
from .baselines import DefenseSpec
from .data import substream, synthetic_scene
from .errors import ConfigError, EstimationError, FreqDefenseError, SpecError
from .metrics import ConfusionAccumulator, mse, ssim
from .micronet import RESAMPLE_MODES, MicroNet, desk_net_spec
from .spectra import average_amplitude_spectrum, harmonic_peak_score
from .tensor import dft3, fftshift_log_magnitude
from .wiener import filter_combined, filter_single_attack, load_filter, save_filter

log = logging.getLogger(__name__)

SPLITS = ("train", "val")
REPORT_COLUMNS = ("image_id", "attack", "defense", "mse", "ssim", "miou")
NONE = "none"

DEFAULT_ATTACKS = [
    {"kind": "mfgsm", "epsilon": 10, "target_class": 0},
    {"kind": "metzen_llm", "epsilon": 10, "target_class": 0},
    {"kind": "iterative_mirror", "epsilon": 10},
    {"kind": "mopuri", "epsilon": 10},
]

DEFAULT_DEFENSES = [
    {"kind": "wiener", "params": {"filter": "mfgsm"}},
    {"kind": "wiener", "params": {"filter": "combined"}},
    {"kind": "jpeg_dct", "params": {"quality": 90}},
    {"kind": "median_blur", "params": {"k": 3}},
    {"kind": "bit_depth", "params": {"bits": 5}},
    {"kind": "nl_means", "params": {"search": 13, "patch": 3, "strength": 2}},
    {"kind": "compose", "name": "wiener[combined]+nl_means",
     "params": {"steps": [{"kind": "wiener", "params": {"filter": "combined"}},
                          {"kind": "nl_means", "params": {}}]}},
]


# --------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    dataset_dir: Path
    output_dir: Path
    attacks: list
    defenses: list
    seed: int = 0
    net: dict = field(default_factory=dict)
    eval_splits: tuple = ("val",)
    miou_reference: str = "prediction"
    spectrum_scale: int = 2
    jobs: int = 1

    @property
    def attack_labels(self) -> list:
        return [a.label for a in self.attacks]

    def split_dir(self, split: str) -> Path:
        return self.dataset_dir / split

    def build_net(self) -> MicroNet:
        return MicroNet.from_spec(self.net)


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _net_spec(raw, base: Path, seed: int) -> dict:
    if raw is None:
        spec = desk_net_spec(mode="nearest")
        spec["seed"] = int(substream(seed, "net-init").integers(2**31))
        return spec
    if isinstance(raw, str):
        path = _resolve(base, raw)
        if not path.is_file():
            raise ConfigError(f"net spec {path} does not exist")
        return json.loads(path.read_text())
    if isinstance(raw, dict):
        return raw
    raise ConfigError("'net' must be a path, an inline spec or null")


def load_config(path=None, *, data: dict | None = None, seed: int | None = None,
                out: str | None = None, jobs: int | None = None,
                check_dataset: bool = True) -> ExperimentConfig:
    """Read and validate a JSON experiment configuration.

    Relative paths are resolved against the configuration file's directory.
    ``seed``, ``out`` and ``jobs`` override the file's values.
    """
    if data is None:
        if path is None:
            raise ConfigError("no configuration given")
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        base = path.parent
    else:
        base = Path(".")
    known = {"dataset_dir", "output_dir", "attacks", "defenses", "seed", "net", "eval_splits",
             "miou_reference", "spectrum_scale", "jobs"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    if "dataset_dir" not in data:
        raise ConfigError("config needs 'dataset_dir'")
    root_seed = int(seed if seed is not None else data.get("seed", 0))
    try:
        attacks = [AttackSpec.from_dict(a) for a in data.get("attacks", DEFAULT_ATTACKS)]
        defenses = [DefenseSpec.from_dict(d) for d in data.get("defenses", DEFAULT_DEFENSES)]
        net = _net_spec(data.get("net"), base, root_seed)
        MicroNet.from_spec(net)
    except (SpecError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid spec in config: {exc}") from exc
    labels = [a.label for a in attacks]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"attack labels must be unique: {labels}")
    if NONE in labels or "combined" in labels:
        raise ConfigError("'none' and 'combined' are reserved attack labels")
    dlabels = [d.label for d in defenses]
    if len(set(dlabels)) != len(dlabels) or NONE in dlabels:
        raise ConfigError(f"defense labels must be unique and not 'none': {dlabels}")
    known_filters = set(labels) | {"combined"}
    for d in defenses:
        missing = d.filter_names() - known_filters
        if missing:
            raise ConfigError(f"defense {d.label} uses unknown filters {sorted(missing)}")
    splits = tuple(data.get("eval_splits", ("val",)))
    if not splits or set(splits) - set(SPLITS):
        raise ConfigError(f"eval_splits must be drawn from {SPLITS}")
    ref = data.get("miou_reference", "prediction")
    if ref not in ("prediction", "ground_truth"):
        raise ConfigError("miou_reference must be 'prediction' or 'ground_truth'")
    cfg = ExperimentConfig(
        dataset_dir=_resolve(base, data["dataset_dir"]),
        output_dir=_resolve(Path("."), out) if out else _resolve(base, data.get("output_dir", "out")),
        attacks=attacks,
        defenses=defenses,
        seed=root_seed,
        net=net,
        eval_splits=splits,
        miou_reference=ref,
        spectrum_scale=int(data.get("spectrum_scale", 2)),
        jobs=int(jobs if jobs is not None else data.get("jobs", 1)),
    )
    if check_dataset:
        check_dataset_dirs(cfg)
    return cfg


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def check_dataset_dirs(cfg: ExperimentConfig) -> None:
    """Both split directories exist, are different and share no image."""
    dirs = [cfg.split_dir(s) for s in SPLITS]
    for d in dirs:
        if not d.is_dir():
            raise ConfigError(f"dataset split directory {d} does not exist")
    if dirs[0].resolve() == dirs[1].resolve():
        raise ConfigError("train and val splits point at the same directory")
    hashes = [{_digest(p) for p in list_images(d)} for d in dirs]
    if hashes[0] & hashes[1]:
        raise ConfigError("train and val splits share images")


# --------------------------------------------------------------------------
# dataset

def list_images(split_dir: Path) -> list:
    """Image files of a split, excluding ground-truth maps, sorted by name."""
    return sorted(p for p in Path(split_dir).glob("*.ppm") if not p.stem.endswith("_gt"))


def gt_path(image_path: Path) -> Path:
    return image_path.with_name(image_path.stem + "_gt.pgm")


def load_split(cfg: ExperimentConfig, split: str) -> list:
    """``(image_id, path)`` for each image of ``split``; raises when empty."""
    paths = list_images(cfg.split_dir(split))
    if not paths:
        raise EstimationError(f"no images in {cfg.split_dir(split)}")
    return [(p.stem, p) for p in paths]


def generate_dataset(out_dir, seed: int, n_train: int = 32, n_val: int = 8, size: int = 32,
                     num_classes: int = 4) -> dict:
    """Write seeded synthetic scenes as PPM plus ground-truth PGM class maps."""
    out_dir = Path(out_dir)
    counts = {}
    for split, n in (("train", n_train), ("val", n_val)):
        rng = substream(seed, f"data-gen/{split}")
        for i in range(n):
            img, gt = synthetic_scene(rng, size, num_classes)
            stem = out_dir / split / f"img_{i:04d}"
            formats.write_pnm(stem.with_suffix(".ppm"), img)
            formats.write_pnm(stem.with_name(stem.name + "_gt.pgm"), gt[:, :, None].astype(float))
        counts[split] = n
    return counts


# --------------------------------------------------------------------------
# parallel helpers

def _pmap(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def attack_seed(root_seed: int, image_id: str, attack: AttackSpec) -> int:
    rng = substream(root_seed, f"attack-init/{image_id}/{attack.label}")
    return int(rng.integers(2**31))


def pert_path(cfg: ExperimentConfig, split: str, image_id: str, label: str) -> Path:
    return cfg.output_dir / "perturbations" / split / f"{image_id}__{label}.pert"


def attacked_path(cfg: ExperimentConfig, split: str, image_id: str, label: str) -> Path:
    return cfg.output_dir / "attacked" / split / f"{image_id}__{label}.ppm"


def filter_path(cfg: ExperimentConfig, name: str) -> Path:
    return cfg.output_dir / "filters" / f"{name}.wflt"


# --------------------------------------------------------------------------
# commands

def _attack_task(task):
    net_spec, image_path, attack_dict, seed = task
    net = MicroNet.from_spec(net_spec)
    spec = AttackSpec.from_dict(attack_dict)
    if spec.kind == "mopuri":
        spec = replace(spec, seed=seed)
    x = formats.read_pnm(image_path)
    return run_attack(net, x, spec).r, x


def cmd_attack(cfg: ExperimentConfig, splits=SPLITS) -> list:
    """Attack every image of ``splits`` with every configured attack."""
    tasks, targets = [], []
    for split in splits:
        for image_id, path in load_split(cfg, split):
            for a in cfg.attacks:
                tasks.append((cfg.net, str(path), a.to_dict(), attack_seed(cfg.seed, image_id, a)))
                targets.append((split, image_id, a.label))
    written = []
    for (split, image_id, label), (r, x) in zip(targets, _pmap(_attack_task, tasks, cfg.jobs)):
        p = pert_path(cfg, split, image_id, label)
        formats.save_perturbation(p, r)
        formats.write_pnm(attacked_path(cfg, split, image_id, label), apply_perturbation(x, r))
        written.append(p)
    log.info("wrote %d perturbations", len(written))
    return written


def training_pairs(cfg: ExperimentConfig, label: str) -> list:
    pairs = []
    for image_id, path in load_split(cfg, "train"):
        p = pert_path(cfg, "train", image_id, label)
        if not p.is_file():
            raise EstimationError(f"missing perturbation {p}; run the attack command first")
        pairs.append((formats.read_pnm(path), formats.load_perturbation(p)))
    return pairs


def cmd_fit_filter(cfg: ExperimentConfig) -> dict:
    """Fit one filter per attack on the training split plus their combination."""
    filters = {}
    for a in cfg.attacks:
        G = filter_single_attack(training_pairs(cfg, a.label), a.label, a.epsilon)
        save_filter(filter_path(cfg, a.label), G)
        filters[a.label] = G
    G = filter_combined(filters.values())
    save_filter(filter_path(cfg, "combined"), G)
    filters["combined"] = G
    return filters


def load_filter_bank(cfg: ExperimentConfig, names=None) -> dict:
    names = set(names) if names is not None else set(cfg.attack_labels) | {"combined"}
    bank = {}
    for name in sorted(names):
        p = filter_path(cfg, name)
        if not p.is_file():
            raise EstimationError(f"missing filter {p}; run the fit-filter command first")
        bank[name] = load_filter(p)
    return bank


def _evaluate_image(task):
    cfg_blob, split, image_id, path = task
    cfg, bank = cfg_blob
    net = cfg.build_net()
    x = formats.read_pnm(path)
    if cfg.miou_reference == "ground_truth":
        ref = formats.read_pnm(gt_path(Path(path)))[:, :, 0].astype(np.int64)
    else:
        ref = net.predict(x)
    defenses = [(NONE, None)] + [(d.label, d.build(bank)) for d in cfg.defenses]
    rows = []
    for label in [NONE] + cfg.attack_labels:
        xa = x if label == NONE else apply_perturbation(
            x, formats.load_perturbation(pert_path(cfg, split, image_id, label)))
        for dlabel, fn in defenses:
            out = xa if fn is None else fn(xa)
            acc = ConfusionAccumulator(net.num_classes).update(net.predict(out), ref)
            rows.append({"image_id": f"{split}/{image_id}", "attack": label, "defense": dlabel,
                         "mse": mse(out, x), "ssim": ssim(out, x), "miou": acc.miou()})
    return rows


def _write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    formats.atomic_write_bytes(path, buf.getvalue().encode())


def cmd_evaluate(cfg: ExperimentConfig) -> list:
    """Score every (image, attack or none, defense or none) combination.

    Metrics compare the network input against the clean image; mIoU compares
    the prediction on it with the clean prediction (or ground truth).
    """
    needed = set().union(*(d.filter_names() for d in cfg.defenses)) if cfg.defenses else set()
    bank = load_filter_bank(cfg, needed)
    tasks = [((cfg, bank), split, image_id, str(path))
             for split in cfg.eval_splits for image_id, path in load_split(cfg, split)]
    rows = [row for chunk in _pmap(_evaluate_image, tasks, cfg.jobs) for row in chunk]
    _write_csv(cfg.output_dir / "report.csv", REPORT_COLUMNS, rows)

    groups: dict = {}
    for row in rows:
        split = row["image_id"].split("/", 1)[0]
        groups.setdefault((split, row["attack"], row["defense"]), []).append(row)
    summary = [{"split": k[0], "attack": k[1], "defense": k[2], "n": len(v),
                "mse": float(np.mean([r["mse"] for r in v])),
                "ssim": float(np.mean([r["ssim"] for r in v])),
                "miou": float(np.mean([r["miou"] for r in v]))} for k, v in groups.items()]
    _write_csv(cfg.output_dir / "summary.csv",
               ("split", "attack", "defense", "n", "mse", "ssim", "miou"), summary)
    return rows


def read_report(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("mse", "ssim", "miou"):
            r[k] = float(r[k])
    return rows


def export_spectrum(stem: Path, spectrum) -> None:
    """Write a log-scaled, centred spectrum as PNG and its first channel as PGM."""
    img = fftshift_log_magnitude(spectrum)
    formats.write_png(stem.with_suffix(".png"), img)
    formats.write_pnm(stem.with_suffix(".pgm"), img[:, :, :1])


def _sweep_task(task):
    net_spec, mode, image_path, attack_dict = task
    net = MicroNet.from_spec(net_spec).with_mode(mode)
    return run_attack(net, formats.read_pnm(image_path), AttackSpec.from_dict(attack_dict)).r


def cmd_spectra(cfg: ExperimentConfig, sweep_modes: bool = False) -> list:
    """Averaged perturbation spectra per attack (training split) and peak scores.

    With ``sweep_modes`` the first mFGSM attack is re-run on the training
    split through the same network under every interpolation mode.
    """
    out = cfg.output_dir / "spectra"
    s = cfg.spectrum_scale
    rows = []
    train = load_split(cfg, "train")
    for a in cfg.attacks:
        paths = [pert_path(cfg, "train", image_id, a.label) for image_id, _ in train]
        missing = [p for p in paths if not p.is_file()]
        if missing:
            raise EstimationError(f"missing perturbation {missing[0]}; run the attack command first")
        spec = average_amplitude_spectrum(formats.load_perturbation(p) for p in paths)
        export_spectrum(out / a.label, spec)
        rows.append({"source": "attack", "attack": a.label, "mode": cfg.net.get("interpolation_mode", "bilinear"),
                     "n": len(paths), "scale": s, "score": harmonic_peak_score(spec, s)})
    if sweep_modes:
        base = next((a for a in cfg.attacks if a.kind == "mfgsm"), None)
        if base is None:
            base = AttackSpec("mfgsm", epsilon=10, target_class=0)
        for mode in RESAMPLE_MODES:
            tasks = [(cfg.net, mode, str(p), base.to_dict()) for _, p in train]
            spec = average_amplitude_spectrum(_pmap(_sweep_task, tasks, cfg.jobs))
            export_spectrum(out / f"mode_{mode}", spec)
            rows.append({"source": "mode_sweep", "attack": base.label, "mode": mode,
                         "n": len(tasks), "scale": s, "score": harmonic_peak_score(spec, s)})
    _write_csv(out / "peak_scores.csv", ("source", "attack", "mode", "n", "scale", "score"), rows)
    return rows


def run_all(cfg: ExperimentConfig, sweep_modes: bool = True) -> dict:
    """attack -> fit-filter -> evaluate -> spectra."""
    cmd_attack(cfg)
    filters = cmd_fit_filter(cfg)
    rows = cmd_evaluate(cfg)
    scores = cmd_spectra(cfg, sweep_modes=sweep_modes)
    return {"filters": filters, "rows": rows, "scores": scores}


__all__ = [
    "ExperimentConfig", "load_config", "generate_dataset", "cmd_attack", "cmd_fit_filter",
    "cmd_evaluate", "cmd_spectra", "run_all", "read_report", "FreqDefenseError",
]
