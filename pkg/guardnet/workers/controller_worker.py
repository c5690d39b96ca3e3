"""
The CONTROLLER: drives bootstrap, guard initialization and the experiment,
then collects and merges every node's log.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from guardnet.config import settings
from guardnet.exceptions import GuardError, PhaseError, TransportTimeout
from guardnet.schemas.identity import PublicParams
from guardnet.schemas.network import Address, MessageKind
from guardnet.schemas.simulation import LogRecord, RunReport, SimConfig
from guardnet.services.metrics_service import compute_metrics, merge_logs, read_log, write_node_log
from guardnet.services.ttp_service import TrustedThirdParty
from guardnet.simulator import SimFuture, Simulator
from guardnet.transport import Envelope, Network, pack_body, unpack_body
from guardnet.utils.ids import rng_stream
from guardnet.workers.node_worker import NodeWorker
from guardnet.workers.ttp_worker import TtpWorker

logger = logging.getLogger(__name__)


def node_address(index: int) -> Address:
    return Address(host=f"node-{index:03d}", port=settings.NODE_PORT)


class ControllerWorker:
    def __init__(
        self,
        sim: Simulator,
        network: Network,
        config: SimConfig,
        nodes: List[NodeWorker],
        params: PublicParams,
    ):
        self.sim = sim
        self.network = network
        self.config = config
        self.nodes = nodes
        self.params = params
        self.endpoint = network.bind(config.controller)
        self.endpoint.on_message(self.handle)
        self.registered: Dict[Address, int] = {}
        self._waiters: Dict[Address, SimFuture] = {}

    async def handle(self, envelope: Envelope) -> Optional[bytes]:
        body = unpack_body(envelope.body) if envelope.body else {}
        if envelope.kind == MessageKind.NODE_REGISTER:
            self.registered[envelope.src] = int(body["numerical_id"])
            logger.debug(f"{envelope.src} registered with the controller")
            return b""
        if envelope.kind in (MessageKind.INIT_DONE, MessageKind.WORKLOAD_DONE):
            waiter = self._waiters.get(envelope.src)
            if waiter is not None:
                waiter.set_result(body)
            return None
        raise GuardError(f"controller does not handle {envelope.kind.name}")

    def _expect(self, address: Address) -> SimFuture:
        future = self.sim.create_future()
        self._waiters[address] = future
        return future

    def experiment_timeout_us(self) -> int:
        _, high_us = self.config.wait_bounds_us()
        per_pair = high_us + 2 * settings.SEARCH_TIMEOUT_US + settings.CONTROL_TIMEOUT_US
        return self.config.message_count * per_pair + settings.CONTROL_TIMEOUT_US

    # ── phases ───────────────────────────────────────────
    async def bootstrap(self) -> None:
        """Nodes register and join one at a time, each through the first node."""
        introducer = self.nodes[0].address
        for i, node in enumerate(self.nodes):
            task = self.sim.spawn(node.start(introducer if i else None), name=f"start:{node.address}", background=False)
            try:
                await task
            except GuardError as exc:
                raise PhaseError(str(node.address), "bootstrap", str(exc)) from exc
            if node.address not in self.registered:
                raise PhaseError(str(node.address), "bootstrap", "never registered with the controller")
        logger.info(f"Bootstrap done: {len(self.registered)} nodes joined")

    async def initialize(self) -> None:
        for node in self.nodes:
            done = self._expect(node.address)
            self.endpoint.send(node.address, MessageKind.INIT_START, b"")
            try:
                reply = await self.sim.wait_for(done, settings.CONTROL_TIMEOUT_US)
            except TransportTimeout as exc:
                raise PhaseError(str(node.address), "initialization", "timed out") from exc
            if not reply.get("ok"):
                raise PhaseError(str(node.address), "initialization", reply.get("error", ""))
        logger.info("Guard initialization done on every node")

    async def experiment(self) -> None:
        live_ids = sorted(self.registered.values())
        waiters = {node.address: self._expect(node.address) for node in self.nodes}
        body = pack_body({"live_ids": live_ids})
        for node in self.nodes:
            self.endpoint.send(node.address, MessageKind.EXPERIMENT_REQUEST, body)
        timeout_us = self.experiment_timeout_us()
        for address, waiter in waiters.items():
            try:
                await self.sim.wait_for(waiter, timeout_us)
            except TransportTimeout as exc:
                raise PhaseError(str(address), "experiment", "no WORKLOAD_DONE") from exc
        logger.info(f"Experiment done: {len(self.nodes)} nodes x {self.config.message_count} search pairs")

    async def collect(self) -> RunReport:
        out_dir = Path(self.config.output_dir)
        node_files: List[Path] = []
        chain_files: List[str] = []
        for node in self.nodes:
            try:
                reply = unpack_body(await self.endpoint.request(
                    node.address, MessageKind.LOG_UPLOAD, b"", timeout_us=settings.CONTROL_TIMEOUT_US,
                ))
            except GuardError as exc:
                raise PhaseError(str(node.address), "collection", str(exc)) from exc
            records = [LogRecord.from_row(row) for row in reply["records"]]
            node_files.append(write_node_log(out_dir / "nodes" / f"{node.address.host}.csv", records))
            for k, chain in enumerate(reply["chains"]):
                path = out_dir / "chains" / f"{node.address.host}-{k}.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(json.dumps(chain, indent=2, sort_keys=True), encoding="utf-8")
                chain_files.append(str(path))

        merged = merge_logs(node_files, out_dir / "merged.csv")
        params_file = out_dir / "params.json"
        params_file.write_text(self.params.to_json(), encoding="utf-8")
        if settings.EVENT_LOG_FILE:
            self.network.write_event_log(out_dir / settings.EVENT_LOG_FILE)
        sizes = self.network.drain_metrics()
        wire_bytes = sum(record.size_bytes for record in sizes)
        logger.info(f"Collected {len(node_files)} node logs; {len(sizes)} envelopes, {wire_bytes} bytes on the wire")
        return RunReport(
            merged_csv=str(merged),
            node_count=len(self.nodes),
            metrics=compute_metrics(read_log(merged)),
            chain_files=chain_files,
            params_file=str(params_file),
            envelopes=len(sizes),
            wire_bytes=wire_bytes,
        )

    async def run(self) -> RunReport:
        await self.bootstrap()
        await self.initialize()
        await self.experiment()
        return await self.collect()


@dataclass
class Deployment:
    sim: Simulator
    network: Network
    ttp: TrustedThirdParty
    ttp_worker: TtpWorker
    nodes: List[NodeWorker]
    controller: ControllerWorker


def spawn_deployment(config: SimConfig, ttp: Optional[TrustedThirdParty] = None) -> Deployment:
    """TTP, controller and `node_count` nodes on one simulator, every random stream derived from the seed."""
    sim = Simulator()
    network = Network(sim, config.latency, rng_stream(config.seed, "network"))
    ttp = ttp or TrustedThirdParty(
        master=rng_stream(config.seed, "master").randbytes(32),
        perm_key=rng_stream(config.seed, "permutation").randbytes(32),
        m=config.m,
        rng=rng_stream(config.seed, "ttp"),
    )
    ttp_address = Address(host=settings.TTP_HOST, port=settings.TTP_PORT)
    ttp_worker = TtpWorker(sim, network, ttp_address, ttp)
    adversaries = config.adversary_map()
    nodes = [
        NodeWorker(
            sim,
            network,
            node_address(i),
            f"phys-{i}".encode("ascii"),
            ttp_address,
            config.controller,
            config,
            index=i,
            adversary_spec=adversaries.get(i),
        )
        for i in range(config.node_count)
    ]
    controller = ControllerWorker(sim, network, config, nodes, ttp.publish_params())
    return Deployment(sim=sim, network=network, ttp=ttp, ttp_worker=ttp_worker, nodes=nodes, controller=controller)


def controller_run(config: SimConfig) -> RunReport:
    deployment = spawn_deployment(config)
    try:
        report = deployment.sim.run_until_complete(deployment.controller.run(), name="controller")
    except RuntimeError as exc:
        raise PhaseError("controller", "run", str(exc)) from exc
    logger.info(f"Run finished; merged log at {report.merged_csv}")
    return report
