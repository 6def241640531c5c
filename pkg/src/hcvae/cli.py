"""``hcvae`` command line: synth, train, finetune, score, eval, gradcheck, export-latent.

Failures print one line ``error: <ErrorClass>: <message>`` on stderr and exit
nonzero (2 configuration, 3 input data, 4 checkpoint, 5 numeric, 1 other).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import errors
from .audio import SpectrogramConfig, extract_features, mel_filterbank
from .conditioning import ConditionMode, build_taxonomy
from .corpus import Label, scan_dataset
from .evaluation import EvalConfig, evaluate_dataset, export_latent, score_clip, write_auc_csv, write_scores_csv
from .model import VaeConfig, elbo_gradcheck
from .synth import generate_dataset, load_spec
from .training import (
    TrainConfig,
    TrainingSet,
    finetune,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_csv,
)

# name -> (default, type); shared by flags and the JSON config file
_TRAIN_KEYS = {
    "mode": ("both", str),
    "beta": (1.0, float),
    "epochs": (100, int),
    "batch": (512, int),
    "lr": (0.001, float),
    "seed": (0, int),
    "hidden_dim": (128, int),
    "latent_dim": (8, int),
    "n_hidden": (4, int),
    "mel_bins": (128, int),
    "frame_size": (1024, int),
    "hop": (512, int),
    "stack": (5, int),
}

_EXIT_CODES = (
    (errors.NumericError, 5),
    ((errors.CheckpointError, errors.ModeMismatchError), 4),
    ((errors.WavError, errors.IngestionError, errors.UnknownLabelError, errors.InputTooShortError), 3),
    ((errors.ConfigurationError, errors.DimensionError), 2),
)


class GradcheckFailed(errors.NumericError):
    pass


def _add_train_flags(p, keys):
    for key in keys:
        default, typ = _TRAIN_KEYS[key]
        kwargs = {"type": typ, "default": None, "help": f"(default: {default})"}
        if key == "mode":
            kwargs["choices"] = [m.value for m in ConditionMode]
        p.add_argument("--" + key.replace("_", "-"), dest=key, **kwargs)
    p.add_argument("--config", type=Path, help="JSON file with any of the flag names as keys; flags win")
    p.add_argument("--loss-csv", type=Path, help="(default: <out>.loss.csv)")


def _settings(args, keys) -> tuple[dict, set]:
    """Defaults, overridden by the config file, overridden by flags.

    Also returns the keys that were set explicitly.
    """
    merged = {k: _TRAIN_KEYS[k][0] for k in keys}
    explicit = set()
    if args.config is not None:
        try:
            loaded = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise errors.ConfigurationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise errors.ConfigurationError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(keys))
        if unknown:
            raise errors.ConfigurationError(f"unknown config keys {unknown}")
        for k, v in loaded.items():
            merged[k] = _TRAIN_KEYS[k][1](v)
        explicit |= set(loaded)
    for k in keys:
        if getattr(args, k) is not None:
            merged[k] = getattr(args, k)
            explicit.add(k)
    return merged, explicit


def _spectrogram(s) -> SpectrogramConfig:
    return SpectrogramConfig(frame_size=s["frame_size"], hop=s["hop"], mel_bins=s["mel_bins"], stack=s["stack"])


def _require_id_level(root: Path) -> None:
    flat = [p for p in root.glob("*/*") if p.is_dir() and p.name in ("normal", "abnormal")]
    if flat:
        raise errors.ConfigurationError(
            f"mode needs machine-id labels but {root} has clips without an id_<NN> level (e.g. {flat[0]})"
        )


def _load_training_set(root: Path, spectrogram: SpectrogramConfig, mode: ConditionMode) -> TrainingSet:
    if mode.uses_id:
        _require_id_level(root)
    fb = mel_filterbank(spectrogram)
    clips = scan_dataset(root, labels=[Label.NORMAL])
    return TrainingSet.from_clips(
        (extract_features(c.path, spectrogram, fb), c.machine_type, c.machine_id) for c in clips
    )


def _finish_training(result, out: Path, loss_csv: Path | None) -> None:
    save_checkpoint(result.checkpoint, out)
    loss_csv = loss_csv or out.with_suffix(".loss.csv")
    write_loss_csv(result.trace, loss_csv)
    print(f"checkpoint={out} loss_csv={loss_csv} final_loss={result.trace[-1].loss!r}")


def cmd_synth(args):
    spec = load_spec(args.spec)
    paths = generate_dataset(spec, args.out_dir, args.train, args.test, args.anomalies)
    print(f"train={paths['train']} test={paths['test']}")


def cmd_train(args):
    s, explicit = _settings(args, list(_TRAIN_KEYS))
    init = load_checkpoint(args.init) if args.init else None
    if init is not None and "mode" not in explicit:
        s["mode"] = init.mode.value
    mode = ConditionMode(s["mode"])
    spectrogram = init.spectrogram if init and init.spectrogram else _spectrogram(s)
    data = _load_training_set(args.data_root, spectrogram, mode)
    cfg = TrainConfig(lr=s["lr"], batch_size=s["batch"], epochs=s["epochs"], beta=s["beta"],
                      seed=s["seed"], mode=mode)
    taxonomy = None
    if init is None:
        taxonomy = build_taxonomy(args.data_root, *args.extra_root)
    arch = VaeConfig(input_dim=spectrogram.feature_dim, hidden_dim=s["hidden_dim"],
                     n_hidden_enc=s["n_hidden"], n_hidden_dec=s["n_hidden"], latent_dim=s["latent_dim"])
    result = train(data, cfg, init=init, vae_config=arch, taxonomy=taxonomy, spectrogram=spectrogram)
    _finish_training(result, args.out, args.loss_csv)


def cmd_finetune(args):
    s, _ = _settings(args, ["beta", "epochs", "batch", "lr", "seed"])
    ckpt = load_checkpoint(args.checkpoint)
    spectrogram = ckpt.spectrogram or SpectrogramConfig()
    data = _load_training_set(args.data_root, spectrogram, ckpt.mode)
    cfg = TrainConfig(lr=s["lr"], batch_size=s["batch"], epochs=s["epochs"], beta=s["beta"],
                      seed=s["seed"], mode=ckpt.mode)
    _finish_training(finetune(ckpt, data, cfg), args.out, args.loss_csv)


def cmd_score(args):
    ckpt = load_checkpoint(args.checkpoint)
    rec = score_clip(ckpt, args.clip, args.type, args.id, aggregate=args.aggregate, expected_mode=args.mode)
    print(f"{rec.clip_id},{rec.machine_type},{rec.machine_id},{rec.score!r}")


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    report = evaluate_dataset(ckpt, args.test_root, EvalConfig(args.eta, args.aggregate), args.mode)
    write_auc_csv(report, args.report)
    if args.scores:
        write_scores_csv(report.records, args.scores)
    sys.stdout.write(args.report.read_text())


def cmd_gradcheck(args):
    errs = elbo_gradcheck(args.seed)
    ok = errs[64] < args.tol64 and errs[32] < args.tol32
    print(f"seed={args.seed} err64={errs[64]:.3e} err32={errs[32]:.3e} "
          f"tol64={args.tol64:g} tol32={args.tol32:g} {'ok' if ok else 'FAIL'}")
    if not ok:
        raise GradcheckFailed("gradient check above tolerance")


def cmd_export_latent(args):
    rows = export_latent(load_checkpoint(args.checkpoint), args.data_root, args.out)
    print(f"rows={rows} out={args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hcvae", description="Machine-sound anomaly detection with a conditional VAE.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus from a spec file")
    p.add_argument("spec", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--train", type=int, default=20, help="normal training clips per (type, id) (default: 20)")
    p.add_argument("--test", type=int, default=10, help="normal test clips per (type, id) (default: 10)")
    p.add_argument("--anomalies", type=int, default=10, help="anomalous test clips per (type, id) (default: 10)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on the normal clips under data_root")
    p.add_argument("data_root", type=Path)
    p.add_argument("out", type=Path)
    _add_train_flags(p, _TRAIN_KEYS)
    p.add_argument("--init", type=Path, help="warm-start from this checkpoint")
    p.add_argument("--extra-root", type=Path, action="append", default=[],
                   help="add this corpus's labels to the vocabulary (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="continue training a checkpoint on new data")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("data_root", type=Path)
    p.add_argument("out", type=Path)
    _add_train_flags(p, ["beta", "epochs", "batch", "lr", "seed"])
    p.set_defaults(func=cmd_finetune)

    mode_choices = [m.value for m in ConditionMode]
    p = sub.add_parser("score", help="anomaly score of one clip")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("clip", type=Path)
    p.add_argument("--type", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--aggregate", choices=["mean", "max"], default="mean", help="(default: mean)")
    p.add_argument("--mode", choices=mode_choices, help="reject checkpoints trained with another mode")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="score a test tree and write the AUC report")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("test_root", type=Path)
    p.add_argument("report", type=Path)
    p.add_argument("--eta", type=float, default=0.0, help="margin of the pairwise AUC (default: 0)")
    p.add_argument("--scores", type=Path, help="also write per-clip scores here")
    p.add_argument("--aggregate", choices=["mean", "max"], default="mean", help="(default: mean)")
    p.add_argument("--mode", choices=mode_choices, help="reject checkpoints trained with another mode")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the ELBO gradients")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")
    p.add_argument("--tol64", type=float, default=1e-5, help="(default: 1e-5)")
    p.add_argument("--tol32", type=float, default=1e-3, help="(default: 1e-3)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-latent", help="write posterior means of every feature vector")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("data_root", type=Path)
    p.add_argument("out", type=Path)
    p.set_defaults(func=cmd_export_latent)
    return parser


def _exit_code(exc) -> int:
    for kinds, code in _EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (errors.HcvaeError, OSError, ValueError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return _exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
