import random
from typing import Callable, Dict, List, Optional, Sequence

import pytest

from guardnet.config import settings
from guardnet.schemas.network import Address, LatencyModel
from guardnet.schemas.simulation import AdversarySpec, SimConfig
from guardnet.services.ttp_service import TrustedThirdParty
from guardnet.workers.controller_worker import Deployment, spawn_deployment
from guardnet.workers.node_worker import NodeWorker

MASTER = bytes(range(32))
PERM_KEY = bytes(range(100, 132))

# ids and names of the small example overlay used across the tests:
# 45 routes a search for 25 through 30 to 20.
FIG1_IDS = [13, 20, 30, 45, 60]
FIG1_NAMES = {13: "000", 20: "011", 30: "110", 45: "100", 60: "010"}


@pytest.fixture(autouse=True)
def small_name_keys(monkeypatch):
    monkeypatch.setattr(settings, "NAME_KEY_BITS", 512)


def index_of(address: Address) -> int:
    return int(address.host.split("-")[1])


def make_config(tmp_path=None, **overrides) -> SimConfig:
    values = dict(
        node_count=8,
        seed=7,
        m=8,
        message_count=2,
        wait_time_max_s=2,
        latency=LatencyModel(base_us=1000, jitter_us=200),
    )
    if tmp_path is not None:
        values["output_dir"] = str(tmp_path / "results")
    values.update(overrides)
    return SimConfig(**values)


def make_ttp(m: int, ids: Optional[Sequence[int]] = None, names: Optional[Dict[int, str]] = None,
             seed: int = 1) -> TrustedThirdParty:
    return TrustedThirdParty(
        master=MASTER,
        perm_key=PERM_KEY,
        m=m,
        rng=random.Random(seed),
        id_fn=(lambda addr: ids[index_of(addr)]) if ids is not None else None,
        name_fn=names.__getitem__ if names is not None else None,
    )


def run(deployment: Deployment, coro):
    return deployment.sim.run_until_complete(coro)


def build_overlay(config: SimConfig, ttp: Optional[TrustedThirdParty] = None,
                  initialize: bool = True) -> Deployment:
    """Bootstrap (and optionally guard-initialize) a deployment without running the workload."""
    deployment = spawn_deployment(config, ttp)
    run(deployment, deployment.controller.bootstrap())
    if initialize:
        run(deployment, deployment.controller.initialize())
    return deployment


def node_by_id(deployment: Deployment, num: int) -> NodeWorker:
    return next(node for node in deployment.nodes if node.numerical_id == num)


@pytest.fixture
def fig1_overlay(tmp_path) -> Deployment:
    config = make_config(tmp_path, node_count=len(FIG1_IDS), m=3)
    return build_overlay(config, make_ttp(3, FIG1_IDS, FIG1_NAMES))


def build_sized_overlay(node_count: int, seed: int, m: int = 8) -> Deployment:
    """Guard-initialized overlay for module-scoped fixtures, which cannot use monkeypatch."""
    saved = settings.NAME_KEY_BITS
    settings.NAME_KEY_BITS = 512
    try:
        return build_overlay(make_config(node_count=node_count, m=m, seed=seed))
    finally:
        settings.NAME_KEY_BITS = saved


@pytest.fixture(scope="module")
def honest_overlay() -> Deployment:
    return build_sized_overlay(16, seed=11)


@pytest.fixture(scope="module")
def wide_overlay() -> Deployment:
    return build_sized_overlay(64, seed=12, m=10)


@pytest.fixture
def adversarial_overlay() -> Callable[..., Deployment]:
    """Overlay with adversaries already active (as after EXPERIMENT_REQUEST)."""
    def build(behaviors: List, node_count: int = 16, seed: int = 5, index: int = 3) -> Deployment:
        spec = AdversarySpec(node_index=index, behaviors=behaviors)
        deployment = build_overlay(make_config(node_count=node_count, m=8, seed=seed, adversaries=[spec]))
        deployment.nodes[index].inject_adversary(spec)
        return deployment
    return build
