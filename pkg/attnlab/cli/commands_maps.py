"""
`maps`: standard-attention layer ids of the named layer maps
"""

import argparse

from attnlab.cli.common import add_config_flag, add_seed_flag, positive_int, resolve_and_echo
from attnlab.ml.composer import MAP_ALIASES, MAP_NAMES, format_layer_ids, standard_layer_ids

DEFAULT_LAYERS = 24


def register(subparsers) -> None:
    parser = subparsers.add_parser("maps", help="Show which layers keep standard attention",
                                   description="Print the 1-indexed standard-attention layers of a layer map")
    add_config_flag(parser)
    parser.add_argument("--name", choices=list(MAP_NAMES) + list(MAP_ALIASES),
                        help="Layer map (default: every map)")
    parser.add_argument("--layers", type=positive_int,
                        help=f"Number of layers (default: the config's n_layers, else {DEFAULT_LAYERS})")
    add_seed_flag(parser, "Recorded in the resolved config; maps are deterministic")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    layers = args.layers or (None if args.config else DEFAULT_LAYERS)
    run_cfg = resolve_and_echo(args, layer_map=args.name or "uniform", model_overrides={"n_layers": layers})
    n_layers = run_cfg.model.n_layers
    if args.name:
        print(format_layer_ids(standard_layer_ids(args.name, n_layers)))
        return 0
    for name in MAP_NAMES:
        print(f"{name}: {format_layer_ids(standard_layer_ids(name, n_layers))}")
    return 0
