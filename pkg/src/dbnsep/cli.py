"""Command line pipeline: synth -> train -> analyze -> reconstruct -> report.

Stages talk to each other only through files under ``--out-dir``::

    config.txt                       effective configuration (key = value)
    data/{faces,digits,mixed}.idx    8-bit IDX image sets
    data/pairs.csv                   mixed row -> face row, digit row, offset
    model.dbn                        trained network
    train_log.csv                    per layer, per epoch reconstruction error
    analysis/*.csv                   node statistics and selections
    reconstruct/metrics.csv          per-image MSE to the clean face
    reconstruct/montage_*.pgm        corrupted | plain | neutralized columns
    report.txt                       summary, config hash, check results

Configuration: ``--config FILE`` with ``key = value`` lines, then command
line flags, which win.
"""

import argparse
import csv
import hashlib
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import data as D
from . import dbn
from . import separation as S
from .errors import ConfigError, DbnsepError
from .numerics import derive_seed
from .rbm import TrainConfig

log = logging.getLogger("dbnsep")

# offsets into derive_seed for the pipeline's independent random consumers
_FACES_SEED, _CORRUPT_SEED, _TRAIN_SEED = 101, 102, 103

IMPROVEMENT_FRACTION = 0.6


@dataclass
class PipelineConfig:
    seed: int = 0
    layers: tuple = (128, 64, 32)
    learning_rate: float = 0.05
    epochs: int = 15
    batch_size: int = 64
    cd_k: int = 1
    momentum: float = 0.5
    weight_decay: float = 1e-4
    n_faces: int = 2000
    n_digits: int = 1000
    n_mixed: int = 1000
    var_threshold: float = S.DEFAULT_VARIANCE_THRESHOLD
    ra_threshold: float = S.DEFAULT_RELATIVE_ACTIVITY_THRESHOLD
    quantile: float = None
    signed_ra: bool = False
    n_samples: int = 8
    out_dir: str = "dbnsep-run"
    mnist_images: str = None
    mnist_labels: str = None

    def __post_init__(self):
        if not self.layers or min(self.layers) < 1:
            raise ConfigError(f"hidden layer sizes must be positive, got {self.layers}")
        if min(self.n_faces, self.n_digits) < 2 or self.n_mixed < 1:
            raise ConfigError("need at least 2 faces, 2 digits and 1 mixed image")
        if self.n_mixed > min(self.n_faces, self.n_digits):
            raise ConfigError(f"n_mixed={self.n_mixed} exceeds n_faces or n_digits")
        if self.quantile is not None and not 0 < self.quantile <= 1:
            raise ConfigError(f"quantile must lie in (0, 1], got {self.quantile}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        self.train_config()

    def train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
            cd_k=self.cd_k, momentum=self.momentum, weight_decay=self.weight_decay,
            seed=derive_seed(self.seed, _TRAIN_SEED),
        )

    @property
    def out(self):
        return Path(self.out_dir)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"

    def config_hash(self):
        """SHA-256 over every setting except output and input paths."""
        skip = {"out_dir", "mnist_images", "mnist_labels"}
        text = "".join(l + "\n" for l in self.to_text().splitlines() if l.split(" = ")[0] not in skip)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _parse_value(name, raw):
    kinds = {f.name: f.type for f in fields(PipelineConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    raw = raw.strip()
    if raw == "" or raw.lower() == "none":
        return None
    kind = kinds[name]
    try:
        if kind is tuple:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def read_config_file(path):
    values = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, raw = line.split("=", 1)
        key = key.strip().replace("-", "_")
        values[key] = _parse_value(key, raw)
    return values


# flag -> config field
_FLAGS = {
    "seed": ("--seed", int),
    "layers": ("--layers", str),
    "epochs": ("--epochs", int),
    "learning_rate": ("--lr", float),
    "batch_size": ("--batch", int),
    "cd_k": ("--cd-k", int),
    "momentum": ("--momentum", float),
    "weight_decay": ("--weight-decay", float),
    "n_faces": ("--n-faces", int),
    "n_digits": ("--n-digits", int),
    "n_mixed": ("--n-mixed", int),
    "var_threshold": ("--var-threshold", float),
    "ra_threshold": ("--ra-threshold", float),
    "quantile": ("--quantile", float),
    "n_samples": ("--samples", int),
    "out_dir": ("--out-dir", str),
    "mnist_images": ("--mnist-images", str),
    "mnist_labels": ("--mnist-labels", str),
}


def build_config(args):
    values = read_config_file(args.config) if args.config else {}
    for name, (flag, _) in _FLAGS.items():
        v = getattr(args, name)
        if v is not None:
            values[name] = _parse_value(name, v) if name == "layers" else v
    if args.signed_ra:
        values["signed_ra"] = True
    values = {k: v for k, v in values.items() if v is not None or k in ("quantile", "mnist_images", "mnist_labels")}
    return PipelineConfig(**values)


def _echo_config(cfg, directory):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.txt").write_text(cfg.to_text(), encoding="utf-8")


def _writer(f):
    return csv.writer(f, lineterminator="\n")


def _fmt(x):
    return repr(float(x))


# -- stages ------------------------------------------------------------------

def cmd_synth(cfg):
    out = cfg.out
    _echo_config(cfg, out)
    images_path, labels_path = cfg.mnist_images, cfg.mnist_labels
    if images_path is None:
        images_path, bundled_labels = D.bundled_mnist_paths()
        labels_path = labels_path or bundled_labels
    digits = D.load_idx(images_path, labels_path)
    if len(digits) < cfg.n_digits:
        raise ConfigError(f"{images_path} holds {len(digits)} digits, n_digits={cfg.n_digits}")
    digits = digits.subset(np.arange(cfg.n_digits))
    faces = D.synth_faces(cfg.n_faces, digits.height, digits.width, derive_seed(cfg.seed, _FACES_SEED))
    # quantize first so the in-memory sets equal what later stages read back
    faces.images = D.to_bytes(faces.images) / 255.0
    mixed = D.corrupt(faces, digits, cfg.n_mixed, derive_seed(cfg.seed, _CORRUPT_SEED))
    D.save_dataset(out / "data", faces, digits, mixed)
    log.info("wrote %d faces, %d digits, %d mixed images to %s", len(faces), len(digits), len(mixed), out / "data")
    return faces, digits, mixed


def cmd_train(cfg):
    out = cfg.out
    _echo_config(cfg, out)
    faces, digits, mixed = D.load_dataset(out / "data")
    x = np.vstack([faces.images, digits.images, mixed.images])
    sizes = [x.shape[1], *cfg.layers]
    logs = []
    start = time.perf_counter()
    model = dbn.greedy_train(x, sizes, cfg.train_config(), logs=logs)
    dbn.save_model(model, out / "model.dbn")
    with open(out / "train_log.csv", "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(["layer", "epoch", "recon_error"])
        for li, tl in enumerate(logs):
            for e, err in enumerate(tl.recon_error):
                w.writerow([li, e, _fmt(err)])
    for li, tl in enumerate(logs):
        if tl.recon_error:
            log.info("layer %d: recon error %.5f -> %.5f (%.1fs)", li, tl.recon_error[0],
                     tl.recon_error[-1], sum(tl.epoch_seconds))
    log.info("trained %s in %.1fs", "-".join(map(str, sizes)), time.perf_counter() - start)
    return model


def _select(cfg, stats):
    if cfg.quantile is not None:
        return S.select_by_quantile(stats, cfg.quantile)
    t = cfg.var_threshold if stats.kind == S.VARIANCE else cfg.ra_threshold
    return S.select_by_threshold(stats, t)


ANALYSIS_FILES = {
    ("variance", "face"): "variance_face.csv",
    ("variance", "digit"): "variance_digit.csv",
    ("relative_activity", "face"): "relative_activity_face.csv",
    ("relative_activity", "digit"): "relative_activity_digit.csv",
}


def cmd_analyze(cfg):
    out = cfg.out
    adir = out / "analysis"
    _echo_config(cfg, adir)
    faces, digits, mixed = D.load_dataset(out / "data")
    model = dbn.load_model(out / "model.dbn")
    stats = {
        ("variance", "face"): S.variance_analysis(model, faces),
        ("variance", "digit"): S.variance_analysis(model, digits),
        # pairing with clean digits isolates face content, and vice versa
        ("relative_activity", "face"): S.mean_relative_activity(model, mixed, digits, cfg.signed_ra),
        ("relative_activity", "digit"): S.mean_relative_activity(model, mixed, faces, cfg.signed_ra),
    }
    sels = {k: _select(cfg, st) for k, st in stats.items()}
    for k, name in ANALYSIS_FILES.items():
        S.write_statistics_csv(adir / name, stats[k], sels[k])

    var_face, ra_face = sels["variance", "face"], sels["relative_activity", "face"]
    jac = S.jaccard(var_face, ra_face)
    chance = S.chance_jaccard(model.n_top, len(var_face), len(ra_face))
    fixed = {
        k: S.select_by_threshold(st, cfg.var_threshold if k[0] == "variance" else cfg.ra_threshold)
        for k, st in stats.items()
    }
    summary = [
        ("n_top", model.n_top),
        ("selection_mode", "quantile" if cfg.quantile is not None else "threshold"),
        ("jaccard_face_nodes", _fmt(jac)),
        ("chance_jaccard_face_nodes", _fmt(chance)),
    ]
    for (method, aspect), sel in sels.items():
        other = sels[method, "digit" if aspect == "face" else "face"]
        summary.append((f"{method}_{aspect}_nodes", " ".join(map(str, sel.node_indices))))
        summary.append((f"{method}_{aspect}_threshold", _fmt(sel.threshold)))
        if aspect == "face":
            overlap = sorted(set(sel.node_indices) & set(other.node_indices))
            summary.append((f"{method}_face_digit_overlap", " ".join(map(str, overlap))))
        summary.append((f"{method}_{aspect}_count_at_default_threshold", len(fixed[method, aspect])))
    with open(adir / "selections.csv", "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(["key", "value"])
        w.writerows(summary)
    print(f"face-node Jaccard (variance vs relative activity): {jac:.3f}, chance {chance:.3f}")
    return stats, sels


def _load_selection(adir, method, aspect):
    return S.read_statistics_csv(adir / ANALYSIS_FILES[method, aspect], aspect)[1]


def cmd_reconstruct(cfg):
    out = cfg.out
    rdir = out / "reconstruct"
    _echo_config(cfg, rdir)
    faces, digits, mixed = D.load_dataset(out / "data")
    model = dbn.load_model(out / "model.dbn")
    nv = S.neutral_values(model, faces)
    clean = faces.images[mixed.pair_index[:, 0]]

    plain = dbn.reconstruct(model, mixed.images)
    mse_plain = np.mean((plain - clean) ** 2, axis=1)
    results = {}
    for method in ("variance", "relative_activity"):
        sel = _load_selection(out / "analysis", method, "digit")
        rec = S.selective_reconstruct(model, mixed.images, sel, nv)
        results[method] = (rec, np.mean((rec - clean) ** 2, axis=1))

    with open(rdir / "metrics.csv", "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(["mixed_row", "face_row", "digit_row", "mse_plain", "mse_variance", "mse_relative_activity"])
        for i in range(len(mixed)):
            w.writerow([i, *map(int, mixed.pair_index[i]), _fmt(mse_plain[i]),
                        _fmt(results["variance"][1][i]), _fmt(results["relative_activity"][1][i])])

    k = min(cfg.n_samples, len(mixed))
    summary = [("n_images", len(mixed)), ("mean_mse_plain", _fmt(mse_plain.mean()))]
    for method, (rec, mse) in results.items():
        tiles = []
        for i in range(k):
            tiles += [mixed.images[i], plain[i], rec[i]]
        D.montage(tiles, (k, 3), rdir / f"montage_{method}.pgm", (mixed.height, mixed.width))
        improved = float(np.mean(mse < mse_plain))
        summary += [
            (f"mean_mse_{method}", _fmt(mse.mean())),
            (f"mean_improvement_{method}", _fmt(mse_plain.mean() - mse.mean())),
            (f"fraction_improved_{method}", _fmt(improved)),
        ]
        print(f"{method}: mean MSE {mse_plain.mean():.5f} -> {mse.mean():.5f}, "
              f"{100 * improved:.1f}% of images improved")
    with open(rdir / "summary.csv", "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(["key", "value"])
        w.writerows(summary)
    return results


def _read_kv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return {r["key"]: r["value"] for r in csv.DictReader(f)}


def run_checks(out):
    """The pipeline's pass/fail checks, computed from stage CSVs: list of (name, ok, detail)."""
    sel = _read_kv(out / "analysis" / "selections.csv")
    rec = _read_kv(out / "reconstruct" / "summary.csv")
    checks = []
    base = float(rec["mean_mse_plain"])
    for method in ("variance", "relative_activity"):
        mse = float(rec[f"mean_mse_{method}"])
        frac = float(rec[f"fraction_improved_{method}"])
        ok = mse < base and frac >= IMPROVEMENT_FRACTION
        checks.append((f"improvement_{method}", ok,
                       f"mean MSE {base:.6f} -> {mse:.6f}, {100 * frac:.1f}% improved (need >= 60%)"))
    jac, chance = float(sel["jaccard_face_nodes"]), float(sel["chance_jaccard_face_nodes"])
    checks.append(("method_agreement", jac > chance, f"Jaccard {jac:.4f} vs chance {chance:.4f}"))
    return checks


def cmd_report(cfg):
    out = cfg.out
    checks = run_checks(out)
    lines = [
        "dbnsep run report",
        f"seed: {cfg.seed}",
        f"config_hash: {cfg.config_hash()}",
        f"layers: {'-'.join(map(str, cfg.layers))}",
        "",
    ]
    for section, path in (("analysis", out / "analysis" / "selections.csv"),
                          ("reconstruction", out / "reconstruct" / "summary.csv")):
        lines.append(f"[{section}]")
        lines += [f"{k}: {v}" for k, v in _read_kv(path).items()]
        lines.append("")
    log_path = out / "train_log.csv"
    if log_path.exists():
        with open(log_path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        lines.append("[training]")
        for layer in sorted({r["layer"] for r in rows}, key=int):
            errs = [float(r["recon_error"]) for r in rows if r["layer"] == layer]
            if errs:
                lines.append(f"layer {layer}: recon error {errs[0]:.6f} -> {errs[-1]:.6f}")
        lines.append("")
    lines.append("[checks]")
    for name, ok, detail in checks:
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return all(ok for _, ok, _ in checks)


def cmd_all(cfg):
    cmd_synth(cfg)
    cmd_train(cfg)
    cmd_analyze(cfg)
    cmd_reconstruct(cfg)
    return cmd_report(cfg)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "analyze": cmd_analyze,
    "reconstruct": cmd_reconstruct,
    "report": cmd_report,
    "all": cmd_all,
}


def make_parser():
    parser = argparse.ArgumentParser(prog="dbnsep", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", help="key = value configuration file")
    for name, (flag, kind) in _FLAGS.items():
        parser.add_argument(flag, dest=name, type=kind, default=None)
    parser.add_argument("--signed-ra", action="store_true", help="signed instead of absolute relative activity")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        result = COMMANDS[args.command](cfg)
    except (DbnsepError, OSError) as exc:
        print(f"dbnsep: error: {exc}", file=sys.stderr)
        return 2
    if args.command in ("report", "all") and not result:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
