from .ledger import (
    GENESIS_HASH,
    FileNodeStorage,
    LedgerBlock,
    LogEntry,
    NodeStorage,
    RootEntry,
    period_root,
    period_trie,
    verify_block,
)
from .node import NodePhase, Role, SloopConfig, SloopNode

__all__ = [
    "GENESIS_HASH",
    "FileNodeStorage",
    "LedgerBlock",
    "LogEntry",
    "NodePhase",
    "NodeStorage",
    "Role",
    "RootEntry",
    "SloopConfig",
    "SloopNode",
    "period_root",
    "period_trie",
    "verify_block",
]
