"""
Subcommands Package
Each module registers one subcommand and its handler
"""
from parafact.commands import check, classify, classify_a, examples, history, lattice, normalize, quotient

COMMANDS = [check, quotient, classify, classify_a, normalize, lattice, examples, history]

__all__ = ["COMMANDS"]
