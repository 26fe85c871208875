"""
Flag parsing helpers shared by the subcommands
"""

import argparse
from typing import Any, Callable, Dict, List, Optional, TypeVar

from attnlab.models.config import RunConfig
from attnlab.services.config_service import log_resolved_config, resolve_run_config

T = TypeVar("T")


def comma_list(cast: Callable[[str], T]) -> Callable[[str], List[T]]:
    """argparse type for "a,b,c" lists"""

    def parse(text: str) -> List[T]:
        items = [item.strip() for item in text.split(",") if item.strip()]
        if not items:
            raise argparse.ArgumentTypeError("expected a comma-separated list")
        try:
            return [cast(item) for item in items]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e))

    return parse


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="Run config JSON ({model: ..., train: ...}); flags override its values")


def add_seed_flag(parser: argparse.ArgumentParser, help_text: str = "Random seed") -> None:
    parser.add_argument("--seed", type=int, default=None, help=help_text)


def resolve_and_echo(args: argparse.Namespace, layer_map: Optional[str] = None,
                     model_overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Resolve --config and --seed the way `train` does and log the result"""

    run_cfg = resolve_run_config(config_path=args.config, layer_map=layer_map,
                                 model_overrides=model_overrides, train_overrides={"seed": args.seed})
    log_resolved_config(run_cfg)
    return run_cfg
