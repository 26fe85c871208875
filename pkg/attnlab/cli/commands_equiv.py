"""
`equiv`: parallel versus recurrent agreement check
"""

import argparse
import logging

from attnlab.cli.common import add_config_flag, add_seed_flag, comma_list, positive_int, resolve_and_echo
from attnlab.core.io import write_records_jsonl
from attnlab.services.equivalence_service import RECURRENT_VARIANTS, equivalence_grid

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("equiv", help="Check parallel and recurrent forms agree",
                                   description="Compare the parallel form with the token-by-token "
                                               "recurrence on seeded random inputs. With --config, omitted "
                                               "head size, head count, dtype and mode come from the model section.")
    add_config_flag(parser)
    parser.add_argument("--variant", choices=list(RECURRENT_VARIANTS) + ["all"], default="all",
                        help="Variant to check")
    parser.add_argument("--L", type=comma_list(positive_int), default=[1, 2, 8, 32, 64],
                        help="Sequence length(s)")
    parser.add_argument("--d-head", type=comma_list(positive_int), help="Head size(s) (default 4)")
    parser.add_argument("--n-heads", type=positive_int, help="Number of heads (default 2)")
    parser.add_argument("--dtype", choices=["f32", "f64"], help="Computation dtype (default f64)")
    parser.add_argument("--mode", choices=["split", "shared", "both"],
                        help="Normalization of the approx variant (default both)")
    parser.add_argument("--out", metavar="PATH", help="Write results as JSONL")
    add_seed_flag(parser, "Seed for weights and inputs (default: the config's train.seed, 0)")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    run_cfg = resolve_and_echo(args)
    model = run_cfg.model if args.config else None
    d_heads = args.d_head or ([model.d_head] if model else [4])
    n_heads = args.n_heads or (model.n_heads if model else 2)
    dtype = args.dtype or (model.dtype if model else "f64")
    mode = args.mode or (model.approx_mode if model else "both")

    variants = RECURRENT_VARIANTS if args.variant == "all" else (args.variant,)
    modes = ("split", "shared") if mode == "both" else (mode,)
    results = equivalence_grid(variants, args.L, d_heads, n_heads, dtype, modes, run_cfg.train.seed)
    if args.out:
        write_records_jsonl(args.out, results)
    for r in results:
        label = f"{r.variant}/{r.mode}" if r.mode else r.variant
        print(f"{label} L={r.seq_len} d_head={r.d_head} {r.dtype}: max_rel_err={r.max_rel_err:.3e} "
              f"threshold={r.threshold:.0e} {'pass' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    if failed:
        logger.error(f"{len(failed)} of {len(results)} equivalence checks exceeded their threshold")
        return 2
    return 0
