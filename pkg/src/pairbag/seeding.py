"""Deterministic seed derivation for nested randomized stages.

Every randomized stage (splits, draws, shuffles, inits) gets its own seed
derived from a parent seed plus an integer path, so results never depend
on execution order or parallelism.
"""

import numpy as np

# Stream tags for top-level harness stages. Trial streams use
# derive_seed(master, TRIAL_STREAM, arm_id, k, m, trial_index).
SPLIT_STREAM = 1
SOURCE_STREAM = 2
PRETRAIN_STREAM = 3
TRIAL_STREAM = 4

# Stream tags for stages inside one trial, derived from the trial seed.
DRAW_STREAM = 5
PLAN_STREAM = 6
ASSIGN_STREAM = 7
TRAIN_STREAM = 8


def derive_seed(base_seed: int, *path: int) -> int:
    """Derive a child seed from a base seed and an integer path.

    Uses numpy's SeedSequence entropy mixing, which is stable across
    platforms and numpy releases. Distinct paths give independent streams.
    """
    words = [int(base_seed) & 0xFFFFFFFFFFFFFFFF]
    words.extend(int(p) & 0xFFFFFFFFFFFFFFFF for p in path)
    seq = np.random.SeedSequence(words)
    return int(seq.generate_state(1, np.uint64)[0])
