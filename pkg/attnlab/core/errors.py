"""
Exception hierarchy shared by the library and the CLI
"""

from typing import Optional


class AttnLabError(Exception):
    """Base class for every error raised by attnlab"""

    exit_code: int = 1


class UsageError(AttnLabError):
    """Bad command-line invocation"""


class ConfigError(AttnLabError):
    """Invalid or inconsistent configuration"""


class UnknownVariantError(ConfigError):
    """Variant tag, layer-map name, metric or stage not recognised"""


class ShapeError(AttnLabError):
    """Operand shapes do not fit the operation"""


class VocabularyError(AttnLabError):
    """Token or target id outside the vocabulary"""


class TapeError(AttnLabError):
    """Gradient tape misuse (non-scalar loss, broken ordering)"""


class CorpusError(AttnLabError):
    """Corpus could not be ingested"""


class CheckpointError(AttnLabError):
    """Checkpoint could not be read or written"""


class CheckpointFormatError(CheckpointError):
    """Magic bytes or layout not recognised"""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an unsupported format version"""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint ended before all declared content was read"""


class NumericalError(AttnLabError):
    """Base for numerical failures"""

    exit_code = 2


class NonFiniteError(NumericalError):
    """An operation produced NaN or Inf from finite inputs"""


class DenominatorError(NumericalError):
    """A linear-attention normalizer fell below the guard threshold"""

    def __init__(self, value: float, head: int, position: int,
                 layer: Optional[int] = None, term: str = ""):
        self.value = value
        self.head = head
        self.position = position
        self.layer = layer
        self.term = term
        where = f"layer {layer}, " if layer is not None else ""
        super().__init__(
            f"{term or 'denominator'} magnitude {abs(value):.3e} below guard "
            f"at {where}head {head}, position {position}"
        )


class NonFiniteLossError(NumericalError):
    """Training loss became NaN or Inf"""

    def __init__(self, step: int, last_good_checkpoint: Optional[str] = None):
        self.step = step
        self.last_good_checkpoint = last_good_checkpoint
        msg = f"non-finite loss at step {step}"
        if last_good_checkpoint:
            msg += f"; last good checkpoint kept at {last_good_checkpoint}"
        super().__init__(msg)


class IndicatorError(AttnLabError):
    """Attention matrix not valid for an indicator"""
