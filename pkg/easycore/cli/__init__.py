"""EasyCore — Command-line package. Registers every subcommand on import."""

from .commands import COMMANDS, command, dispatch

__all__ = ["COMMANDS", "command", "dispatch"]
