"""Small internal helpers shared across modules."""

from __future__ import annotations

import numpy as np


def seed_int(seq: np.random.SeedSequence) -> int:
    """Signed-63-bit seed for torch.Generator.manual_seed from a SeedSequence."""
    return int(seq.generate_state(1, np.uint64)[0] & 0x7FFF_FFFF_FFFF_FFFF)
