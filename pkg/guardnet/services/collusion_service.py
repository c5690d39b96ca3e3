"""Monte Carlo estimate of how often f colluders hold all three guards of one honest node."""
import logging
import random
from typing import Dict, List

import numpy as np

from guardnet.config import settings
from guardnet.exceptions import ParamError
from guardnet.schemas.network import Address
from guardnet.schemas.overlay import NeighborEntry
from guardnet.schemas.simulation import CollusionReport
from guardnet.services.ttp_service import compute_guard_name_ids
from guardnet.utils.ids import MAX_NUMERICAL_ID, full_space_ids, hash_name_id
from guardnet.utils.permutation import KeyedPermutation
from guardnet.utils.skipgraph import longest_prefix_owner

logger = logging.getLogger(__name__)

_FULL_SPACE_MAX_BITS = 12


def _overlay(n: int, rng: random.Random) -> List[NeighborEntry]:
    """n nodes sorted by id; a power-of-two n gets one node per name (m = log2 n)."""
    m = n.bit_length() - 1
    if n & (n - 1) == 0 and 1 <= m <= _FULL_SPACE_MAX_BITS:
        ids = full_space_ids(m)
    else:
        m = settings.NAME_ID_BITS
        chosen = set()
        while len(chosen) < n:
            chosen.add(rng.randint(0, MAX_NUMERICAL_ID))
        ids = list(chosen)
    return sorted(
        (NeighborEntry(numerical_id=num, name_id=hash_name_id(num, m), address=Address(host=f"mc-{i}", port=0))
         for i, num in enumerate(ids)),
        key=lambda entry: entry.numerical_id,
    )


def exact_probability(n: int, f: int) -> float:
    return f * (f - 1) * (f - 2) / (n * (n - 1) * (n - 2))


def collusion_mc(n: int, f: int, trials: int, rng: random.Random) -> CollusionReport:
    """
    Each trial draws a fresh permutation key and a uniform set of f colluders
    among the nodes other than the fixed honest node, and counts a hit when
    all of that node's guards are colluders.
    """
    if n < 3:
        raise ParamError(f"need at least 3 nodes, got {n}")
    if not 0 <= f < n:
        raise ParamError(f"colluder count must be in [0, {n}), got {f}")
    if trials <= 0:
        raise ParamError(f"trials must be positive, got {trials}")

    entries = _overlay(n, rng)
    m = len(entries[0].name_id)
    by_name: Dict[str, NeighborEntry] = {entry.name_id: entry for entry in entries}
    exact_names = len(by_name) == (1 << m)
    subject, left, right = entries[0], entries[-1], entries[1]
    others = [entry.numerical_id for entry in entries[1:]]

    hits = 0
    distinct: Dict[int, int] = {}
    for _ in range(trials):
        permutation = KeyedPermutation(rng.randbytes(32), m)
        names = compute_guard_name_ids(subject.name_id, left.name_id, right.name_id, permutation)
        guards = {
            (by_name[name] if exact_names else longest_prefix_owner(entries, name)).numerical_id
            for name in names
        }
        distinct[len(guards)] = distinct.get(len(guards), 0) + 1
        colluders = set(rng.sample(others, f))
        if guards <= colluders:
            hits += 1

    exact = exact_probability(n, f)
    estimate = hits / trials
    report = CollusionReport(
        n=n,
        f=f,
        trials=trials,
        hits=hits,
        estimate=estimate,
        sigma=float(np.sqrt(exact * (1.0 - exact) / trials)),
        exact=exact,
        bound=(f / n) ** 3,
        distinct_guards=dict(sorted(distinct.items())),
    )
    logger.info(f"Collusion n={n} f={f}: {hits}/{trials} = {estimate:.6f} (exact {exact:.6f})")
    return report
