"""
`cost`: analytical per-layer costs
"""

import argparse
import logging

from attnlab.cli.common import add_config_flag, add_seed_flag, comma_list, positive_int, resolve_and_echo
from attnlab.core.errors import UsageError
from attnlab.ml.cost_model import METRICS, STAGES, VARIANTS
from attnlab.services.cost_service import CostService

logger = logging.getLogger(__name__)


def _choices(allowed):
    def parse(text: str):
        values = comma_list(str)(text)
        unknown = [v for v in values if v not in allowed]
        if unknown:
            raise argparse.ArgumentTypeError(f"invalid choice {', '.join(unknown)} (choose from {', '.join(allowed)})")
        return values
    return parse


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "cost", help="Evaluate cost formulas",
        description="Evaluate per-layer cost formulas exactly. Every numeric flag takes a comma-separated "
                    "list; a single point prints its value, a grid prints (or writes) CSV. With --config, "
                    "omitted --variant/--L/--d/--h come from the model section.",
    )
    add_config_flag(parser)
    parser.add_argument("--variant", type=_choices(VARIANTS), help="Variant(s)")
    parser.add_argument("--metric", type=_choices(METRICS), default=["flops"], help="Metric(s)")
    parser.add_argument("--stage", type=_choices(STAGES), default=["prefill"], help="FLOPs stage(s)")
    parser.add_argument("--B", type=comma_list(positive_int), default=[1], help="Batch size")
    parser.add_argument("--L", type=comma_list(positive_int), help="Sequence length")
    parser.add_argument("--d", type=comma_list(positive_int), help="Hidden size")
    parser.add_argument("--h", type=comma_list(positive_int), help="Attention heads (default 1)")
    parser.add_argument("--t", type=comma_list(positive_int), default=[1], help="Tensor-parallel size")
    parser.add_argument("--delta", type=positive_int, help="Prefetch window (cache_size_prefetch)")
    parser.add_argument("--precomputed", action="store_true",
                        help="FLOPs with attention scores computed ahead (rnd_emb_qk, fixed_seq_qk)")
    parser.add_argument("--out", metavar="PATH", help="Write the table as CSV")
    add_seed_flag(parser, "Recorded in the resolved config; costs are deterministic")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    run_cfg = resolve_and_echo(args)
    variants, L, d, h = args.variant, args.L, args.d, args.h
    if args.config:
        model = run_cfg.model
        variants = variants or list(dict.fromkeys(tag.value for tag in model.variant_map.tags))
        L, d, h = L or [model.max_seq_len], d or [model.d_model], h or [model.n_heads]
    missing = [flag for flag, value in (("--variant", variants), ("--L", L), ("--d", d)) if not value]
    if missing:
        raise UsageError(f"cost: {', '.join(missing)} required without --config")

    service = CostService(precomputed=args.precomputed)
    frame = service.sweep(variants, args.metric, args.B, L, d, h or [1], args.t, args.stage, args.delta)
    if args.out:
        service.write(frame, args.out)
    if len(frame) == 1:
        print(frame["value"].iloc[0])
    elif not args.out:
        print(frame.to_csv(index=False, lineterminator="\n"), end="")
    return 0
