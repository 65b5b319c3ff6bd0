"""
Communication accounting.

Values travel as 8-byte floats and sparse indices as 4-byte integers.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from ..model.dual_encoder import ArchSpec

VALUE_BYTES = 8
INDEX_BYTES = 4


def block_bytes(arch: ArchSpec, *names: str) -> int:
    return sum(arch.block_size(name) for name in names) * VALUE_BYTES


def full_model_bytes(arch: ArchSpec) -> int:
    """Every parameter of the model"""
    return arch.total_size * VALUE_BYTES


def primary_round_bytes(arch: ArchSpec) -> Tuple[int, int]:
    """(up, down) for a client in a primary phase: full model down, enc1 and head up"""
    return block_bytes(arch, "enc1", "head"), full_model_bytes(arch)


def secondary_round_bytes(arch: ArchSpec) -> Tuple[int, int]:
    """(up, down) added when the client also trains the combined secondary encoder"""
    size = block_bytes(arch, "enc2")
    return size, size


@dataclass
class CommunicationLedger:
    """Per-round, per-client byte counters"""

    up: Dict[Tuple[int, int], int] = field(default_factory=dict)
    down: Dict[Tuple[int, int], int] = field(default_factory=dict)

    def record(self, round_idx: int, client_id: int, up: int, down: int) -> None:
        key = (round_idx, client_id)
        self.up[key] = self.up.get(key, 0) + up
        self.down[key] = self.down.get(key, 0) + down

    def round_totals(self, round_idx: int) -> Tuple[int, int]:
        up = sum(v for (t, _), v in self.up.items() if t == round_idx)
        down = sum(v for (t, _), v in self.down.items() if t == round_idx)
        return up, down

    def client_bytes(self, round_idx: int, client_id: int) -> Tuple[int, int]:
        key = (round_idx, client_id)
        return self.up.get(key, 0), self.down.get(key, 0)

    @property
    def total_up(self) -> int:
        return sum(self.up.values())

    @property
    def total_down(self) -> int:
        return sum(self.down.values())

    def rows(self) -> List[Dict[str, int]]:
        keys = sorted(set(self.up) | set(self.down))
        return [
            {"round": t, "client_id": i, "bytes_up": self.up.get((t, i), 0), "bytes_down": self.down.get((t, i), 0)}
            for t, i in keys
        ]
