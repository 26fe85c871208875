"""
`train`: train a model from a preset or config file
"""

import argparse
import logging

from attnlab.cli.common import add_config_flag, add_seed_flag, positive_int
from attnlab.models.config import VariantTag
from attnlab.ml.composer import MAP_ALIASES, MAP_NAMES, preset_names
from attnlab.services.config_service import log_resolved_config, resolve_run_config
from attnlab.services.training_service import TrainingService

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train a causal LM on a byte corpus",
                                   description="Train a causal LM on a byte corpus")
    add_config_flag(parser)
    parser.add_argument("--preset", choices=preset_names(), help="Model size preset (default desk)")
    parser.add_argument("--variant", choices=[t.value for t in VariantTag],
                        help="Token-mixing variant for the non-standard layers")
    parser.add_argument("--layer-map", choices=list(MAP_NAMES) + list(MAP_ALIASES),
                        help="Which layers keep standard attention (default uniform)")
    parser.add_argument("--dtype", choices=["f32", "f64"], help="Parameter dtype")
    parser.add_argument("--approx-mode", choices=["split", "shared"], help="Normalization of approx layers")
    parser.add_argument("--corpus", metavar="PATH", help="Training text (bytes)")
    parser.add_argument("--steps", type=int, help="Optimizer steps")
    parser.add_argument("--batch-size", type=positive_int, help="Sequences per step")
    parser.add_argument("--seq-len", type=positive_int, help="Tokens per sequence")
    parser.add_argument("--lr", type=float, help="Peak learning rate")
    parser.add_argument("--warmup", type=int, help="Linear warmup steps")
    parser.add_argument("--eval-every", type=int, help="Validation interval in steps (0 disables)")
    parser.add_argument("--init", metavar="CHECKPOINT", help="Start from this checkpoint's weights")
    parser.add_argument("--out", metavar="DIR", help="Artifact directory (default ARTIFACTS_DIR)")
    add_seed_flag(parser, "Seed for initialization and batch sampling")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    run_cfg = resolve_run_config(
        config_path=args.config,
        preset=args.preset,
        variant=args.variant,
        layer_map=args.layer_map,
        model_overrides={"dtype": args.dtype, "approx_mode": args.approx_mode},
        train_overrides={
            "corpus_path": args.corpus,
            "max_steps": args.steps,
            "batch_size": args.batch_size,
            "seq_len": args.seq_len,
            "peak_lr": args.lr,
            "warmup_steps": args.warmup,
            "eval_every": args.eval_every,
            "seed": args.seed,
        },
    )
    log_resolved_config(run_cfg)
    result = TrainingService(run_cfg, args.out).run(args.init)
    print(f"steps: {result.steps}")
    if result.final_loss is not None:
        print(f"final_loss: {result.final_loss:.6f}")
    if result.final_val_loss is not None:
        print(f"final_val_loss: {result.final_val_loss:.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0
