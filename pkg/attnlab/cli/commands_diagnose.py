"""
`diagnose`: attention indicators and pre-softmax statistics of a checkpoint
"""

import argparse
import logging

from attnlab.cli.common import add_config_flag, add_seed_flag, positive_int
from attnlab.core.config import settings
from attnlab.services.config_service import checkpoint_run_config, log_resolved_config, resolve_run_config
from attnlab.services.diagnostics_service import DiagnosticsService
from attnlab.services.evaluation_service import load_model

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("diagnose", help="Attention indicators for a checkpoint",
                                   description="Per-head attention indicators and pre-softmax statistics")
    add_config_flag(parser)
    parser.add_argument("--checkpoint", required=True, metavar="PATH", help="Checkpoint to inspect")
    parser.add_argument("--eval-file", metavar="PATH", help="Text for the evaluation batch (default: bundled text)")
    parser.add_argument("--batch-size", type=positive_int, default=4, help="Sequences in the evaluation batch")
    parser.add_argument("--seq-len", type=positive_int, help="Tokens per sequence (default max_seq_len)")
    parser.add_argument("--csv", action="store_true", help="Also write indicators.csv")
    parser.add_argument("--out", metavar="DIR", help="Report directory (default ARTIFACTS_DIR)")
    add_seed_flag(parser, "Recorded in the resolved config; the evaluation batch is the first windows of the file")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    requested = train_cfg = None
    if args.config:
        run_cfg = resolve_run_config(config_path=args.config, train_overrides={"seed": args.seed})
        requested, train_cfg = run_cfg.model, run_cfg.train
    model = load_model(args.checkpoint, requested)
    log_resolved_config(checkpoint_run_config(model.cfg, train_cfg, args.seed))
    service = DiagnosticsService(model)
    report = service.run(args.eval_file, args.batch_size, args.seq_len)
    service.write(report, args.out or settings.ARTIFACTS_DIR, csv=args.csv)
    print(f"indicator records: {len(report.heads)}")
    print(f"prelogit records: {len(report.prelogits)}")
    return 0
