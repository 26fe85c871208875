"""
`eval`: perplexity of a checkpoint across context lengths
"""

import argparse
import logging

from attnlab.cli.common import add_config_flag, add_seed_flag, comma_list, positive_int
from attnlab.services.config_service import checkpoint_run_config, log_resolved_config, resolve_run_config
from attnlab.services.evaluation_service import EvaluationService, load_model

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Evaluate perplexity of a checkpoint",
                                   description="Evaluate perplexity of a checkpoint at one or more context lengths")
    add_config_flag(parser)
    parser.add_argument("--checkpoint", required=True, metavar="PATH", help="Checkpoint to evaluate")
    parser.add_argument("--data", metavar="PATH", help="Evaluation text (default: the bundled text)")
    parser.add_argument("--context-lengths", type=comma_list(positive_int), default=[],
                        help="Comma-separated context lengths (default max_seq_len)")
    parser.add_argument("--whole-file", action="store_true",
                        help="Score the whole file instead of its held-out tail")
    parser.add_argument("--skip", action="store_true", help="Drop every non-standard layer first")
    parser.add_argument("--batch-size", type=positive_int, default=16, help="Sequences per forward")
    parser.add_argument("--out", metavar="PATH", help="Write perplexity records as JSONL")
    add_seed_flag(parser, "Recorded in the resolved config; evaluation is deterministic")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    requested = train_cfg = None
    if args.config:
        run_cfg = resolve_run_config(config_path=args.config, train_overrides={"seed": args.seed})
        requested, train_cfg = run_cfg.model, run_cfg.train
    model = load_model(args.checkpoint, requested, skip=args.skip)
    log_resolved_config(checkpoint_run_config(model.cfg, train_cfg, args.seed))
    service = EvaluationService(model, args.batch_size)
    results = service.perplexity(args.data, args.context_lengths, held_out=not args.whole_file)
    if args.out:
        service.write(results, args.out)
    for result in results:
        print(f"context {result.context_length}: nll {result.mean_nll:.6f} perplexity {result.perplexity:.4f}")
    return 0
