# Actors on the simulated network: one per node, the TTP and the CONTROLLER.
from guardnet.workers.node_worker import NodeWorker
from guardnet.workers.ttp_worker import TtpWorker
from guardnet.workers.controller_worker import ControllerWorker, controller_run, spawn_deployment

__all__ = [
    "NodeWorker",
    "TtpWorker",
    "ControllerWorker",
    "controller_run",
    "spawn_deployment",
]
