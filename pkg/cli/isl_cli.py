# insilico-labeling/cli/isl_cli.py
# Single entry point with subcommands: synth, manifest, train, predict, evaluate, routing.
#
# Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 internal error.

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional

from cli.run_config import RunConfig, dump_run_config, load_run_config
from inference.predictor import predict_image, write_prediction_set
from inference.routing import ModelRegistry, load_routing, default_routing, save_routing, uniform_routing
from ingest.image_io import read_image
from ingest.manifest import Manifest, build_manifest, find_inputs, load_manifest, save_manifest
from metrics import evaluate_dataset, write_reports
from shared.errors import EXIT_DATA, EXIT_OK, EXIT_USAGE, ConfigurationError, exit_code_for
from shared.organelle_types import MODALITY_ORDER, Modality, ORGANELLE_ORDER
from shared.settings import DATA_DIR, MANIFEST_FILENAME, MODELS_DIR, PREDICTIONS_DIR, REPORTS_DIR, configure_logging
from synth.generator import generate_dataset
from training.trainer import train

logger = logging.getLogger(__name__)

BACKBONE_ALIASES = {"pix2pix": "pix2pix_resnet9", "pix2pix_resnet9": "pix2pix_resnet9", "unetpp": "unetpp"}
RESOLVED_CONFIG_FILENAME = "run_config.yaml"


class _ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dataset_manifest(data_root: str) -> Manifest:
    """The saved manifest of `data_root` when present, otherwise a fresh scan."""
    saved = os.path.join(data_root, MANIFEST_FILENAME)
    if os.path.exists(saved):
        return load_manifest(saved, root=data_root)
    return build_manifest(data_root)


# --- Commands ---

def cmd_synth(args, cfg: RunConfig) -> int:
    manifest = generate_dataset(cfg.synth, args.out)
    print(f"Wrote {len(manifest)} synthetic samples to {args.out}")
    return EXIT_OK


def cmd_manifest(args, cfg: RunConfig) -> int:
    manifest = build_manifest(args.data_root)
    out = args.out or os.path.join(args.data_root, MANIFEST_FILENAME)
    save_manifest(manifest, out)
    print(f"Manifest with {len(manifest)} entries written to {out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    manifest = _dataset_manifest(args.data_root)
    os.makedirs(args.out, exist_ok=True)
    dump_run_config(cfg, os.path.join(args.out, RESOLVED_CONFIG_FILENAME))
    results = train(manifest, args.data_root, cfg.train, args.out, resume_from=args.resume)
    for result in results:
        print(f"{result.model_id}: {result.steps} steps, final checkpoint {result.final_checkpoint}")
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig) -> int:
    routing = load_routing(args.routing)
    registry = ModelRegistry(models_dir=args.checkpoints)
    # every routed pair must resolve before any output is written
    for modality in MODALITY_ORDER:
        for organelle in ORGANELLE_ORDER:
            registry.resolve(routing.route(modality, organelle), pair=(modality, organelle))

    inputs = find_inputs(args.images)
    if not inputs:
        raise FileNotFoundError(f"no input images (<id>_<BF|PC|DIC>.tif) found under {args.images}")
    tta = True if args.tta else cfg.inference.tta
    os.makedirs(args.out, exist_ok=True)
    for sample_id, modality, path in inputs:
        prediction = predict_image(read_image(path), modality, registry, routing, tta=tta,
                                   cfg=cfg.inference, sample_id=sample_id)
        write_prediction_set(prediction, args.out)
        logger.info(f"Predicted {sample_id} ({modality.value}) -> {args.out}")
    print(f"Wrote predictions for {len(inputs)} image(s) to {args.out}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    manifest = load_manifest(args.gt_manifest, root=args.data_root)
    n_jobs = args.n_jobs if args.n_jobs is not None else cfg.evaluation.n_jobs
    result = evaluate_dataset(args.pred_dir, manifest, n_jobs=n_jobs)
    paths = write_reports(result.reports, args.out)
    print(f"Metric table written to {paths['table']}")
    if not result.ok:
        for sample_id in result.unmatched_predictions:
            print(f"unmatched prediction (no ground truth): {sample_id}", file=sys.stderr)
        for sample_id in result.incomplete_predictions:
            print(f"incomplete prediction (missing organelle planes): {sample_id}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _parse_assignments(pairs: List[str]) -> Dict[Modality, str]:
    ids = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigurationError(f"expected MODALITY=model_id, got '{pair}'")
        modality, model_id = pair.split("=", 1)
        try:
            ids[Modality(modality)] = model_id
        except ValueError:
            raise ConfigurationError(f"unknown modality '{modality}' in '{pair}'") from None
    return ids


def cmd_routing(args, cfg: RunConfig) -> int:
    if args.uniform:
        table = uniform_routing(args.uniform)
    elif args.separate and args.unified:
        table = default_routing(_parse_assignments(args.separate), args.unified)
    else:
        raise ConfigurationError("routing needs --uniform MODEL_ID, or --separate ... together with --unified")
    save_routing(table, args.out)
    print(f"Routing table ({len(table.model_ids())} model(s)) written to {args.out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "manifest": cmd_manifest,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "routing": cmd_routing,
}


# --- Argument Parsing ---

def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="isl", description="In-silico fluorescence labeling toolkit.")
    parser.add_argument("--log-level", default=None, help="Logging level (default: $LOG_LEVEL or INFO).")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", default=None, help="YAML run configuration (see config/full.yaml).")
        return p

    p = with_config(sub.add_parser("synth", help="Generate a synthetic dataset."))
    p.add_argument("--out", default=DATA_DIR, help="Output dataset directory.")
    p.add_argument("--n-samples", type=int, default=None, help="Overrides synth.n_samples.")
    p.add_argument("--image-size", type=int, default=None, help="Overrides synth.image_size.")
    p.add_argument("--seed", type=int, default=None, help="Overrides synth.seed.")

    p = with_config(sub.add_parser("manifest", help="Scan a dataset tree and write its manifest."))
    p.add_argument("--data-root", default=DATA_DIR, help="Dataset root with one directory per study.")
    p.add_argument("--out", default=None, help=f"Manifest path (default: <data-root>/{MANIFEST_FILENAME}).")

    p = with_config(sub.add_parser("train", help="Train one or more models."))
    p.add_argument("--data-root", default=DATA_DIR, help="Dataset root.")
    p.add_argument("--out", default=MODELS_DIR, help="Checkpoint directory; runs land in <out>/<model_id>/.")
    p.add_argument("--strategy", choices=["separate", "unified", "dynamic"], default=None,
                   help="separate: one model per modality; unified: one model for all; dynamic: modality-conditioned.")
    p.add_argument("--backbone", choices=sorted(BACKBONE_ALIASES), default=None,
                   help="pix2pix (ResNet-9 generator, adversarial) or unetpp (no adversarial terms).")
    p.add_argument("--tier", choices=["full", "test"], default=None, help="Model size tier.")
    p.add_argument("--modality", choices=[m.value for m in MODALITY_ORDER], default=None,
                   help="Train only this modality (separate strategy only).")
    p.add_argument("--seed", type=int, default=None, help="Overrides train.seed.")
    p.add_argument("--epochs-constant", type=int, default=None, help="Epochs at the initial learning rate.")
    p.add_argument("--epochs-decay", type=int, default=None, help="Epochs of linear decay to zero.")
    p.add_argument("--steps-per-epoch", type=int, default=None, help="Balanced batches per epoch.")
    p.add_argument("--batch-size", type=int, default=None, help="Batch size (divisible by the non-empty organelle lists).")
    p.add_argument("--device", default=None, help="torch device, e.g. cpu or cuda:0.")
    p.add_argument("--resume", default=None, help="Checkpoint to resume a single run from.")

    p = with_config(sub.add_parser("predict", help="Predict organelle planes for input images."))
    p.add_argument("--checkpoints", required=True, help="Models directory holding <model_id>/final.pt.")
    p.add_argument("--routing", required=True, help="Routing table JSON (modality, organelle) -> model id.")
    p.add_argument("--images", required=True, help="An input TIFF or a directory searched recursively.")
    p.add_argument("--out", default=PREDICTIONS_DIR, help="Prediction output directory.")
    p.add_argument("--tta", action="store_true", help="Average over the four quarter-turn rotations.")
    p.add_argument("--overlap", type=float, default=None, help="Tile overlap fraction in [0, 1).")
    p.add_argument("--patch-size", type=int, default=None, help="Inference tile size.")
    p.add_argument("--device", default=None, help="torch device.")

    p = with_config(sub.add_parser("evaluate", help="Score predictions against ground truth."))
    p.add_argument("--pred-dir", required=True, help="Directory written by `predict`.")
    p.add_argument("--gt-manifest", required=True, help="Ground-truth manifest JSON.")
    p.add_argument("--data-root", default=None, help="Overrides the root stored in the manifest.")
    p.add_argument("--out", default=REPORTS_DIR, help="Report directory.")
    p.add_argument("--n-jobs", type=int, default=None, help="Parallel workers for per-image metrics.")

    p = with_config(sub.add_parser("routing", help="Write a routing table."))
    p.add_argument("--separate", nargs="+", default=None, metavar="MODALITY=ID",
                   help="Modality-specific model ids, e.g. BF=pix2pix_resnet9-separate-BF.")
    p.add_argument("--unified", default=None, help="Unified model id, e.g. unetpp-unified-all; receives (DIC, Actin).")
    p.add_argument("--uniform", default=None, help="Route every pair to this single model id.")
    p.add_argument("--out", required=True, help="Routing JSON path.")
    return parser


def config_overrides(args) -> Dict[str, object]:
    """Command-line flags as dotted RunConfig keys; unset flags are None and ignored."""
    get = lambda name: getattr(args, name, None)  # noqa: E731
    backbone = get("backbone")
    overrides = {
        "synth.n_samples": get("n_samples"),
        "synth.image_size": get("image_size"),
        "inference.overlap": get("overlap"),
        "inference.patch_size": get("patch_size"),
    }
    if args.command == "synth":
        overrides["synth.seed"] = get("seed")
    if args.command == "train":
        overrides.update({
            "train.strategy": get("strategy"),
            "train.backbone": BACKBONE_ALIASES[backbone] if backbone else None,
            "train.tier": get("tier"),
            "train.modality_filter": get("modality"),
            "train.seed": get("seed"),
            "train.epochs_constant": get("epochs_constant"),
            "train.epochs_decay": get("epochs_decay"),
            "train.steps_per_epoch": get("steps_per_epoch"),
            "train.batch_size": get("batch_size"),
            "train.device": get("device"),
        })
    if args.command == "predict":
        overrides["inference.device"] = get("device")
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        cfg = load_run_config(args.config, config_overrides(args))
        return COMMANDS[args.command](args, cfg)
    except Exception as e:
        code = exit_code_for(e)
        if code in (EXIT_USAGE, EXIT_DATA):
            print(f"error: {e}", file=sys.stderr)
        else:
            logger.error(f"Internal error in '{args.command}': {e}", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
