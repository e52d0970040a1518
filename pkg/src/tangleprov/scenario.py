"""Scenario files: scripted multi-party runs on the simulated network.

A scenario is line-oriented text, shlex-tokenized so values may be quoted.
Setup lines come first, then timestamped events:

    seed 42
    difficulty 6
    security-level 3
    node <id> <full|light> <local|proxy|remote>
    edge <a> <b>
    latency per_hop fixed 10
    latency remote_pow lognormal 8.5 0.5
    channel <alias> node=<id> [key=<hex>] [level=N] [height=N] [aggregation=coarse]
    subscribe <subject> <channelAlias>

    at <ms> trade <channel> tid=.. buyer=.. [src=.. prev=..] [batch=..]
            [component=..] [make=..] [model=..] [quantity=N] [price=..]
            [vehicle=..] [qc=a;b] [cert=a;b] [warranty=N] [opt.KEY=VALUE ...]
    at <ms> receipt <buyerChannel> tid=.. status=OK|DAMAGED|LOST|PARTIAL
    at <ms> sensor <channel> sensor=<id> kind=.. unit=.. values=v1;v2;.. ts=<ms>
    at <ms> partition <node> [<node> ...]
    at <ms> heal
    at <ms> policy <ownerChannel> subject=<s> categories=A;B;C
    at <ms> catdata <ownerChannel> category=<c> data=<text>
    at <ms> revoke <ownerChannel> subject=<s> category=<c>
    at <ms> query subject=<s> target=<ownerChannel> category=<c> [expect=..]
    at <ms> trace subject=<s> channel=<alias> tid=<t> [scope=full|pointers]
            [out=<file>] [expect=<goldenfile>]
    at <ms> split <parentChannel> child=<alias> key=<hex> [subjects=a;b]
    at <ms> rotate-key <channel> key=<hex> [subjects=a;b]
    at <ms> snapshot [horizon=<ms>]
    assert-converged

Events run on the logical clock in (time, file order).  All randomness comes
from the scenario seed, so outputs are byte-identical across runs.
"""

from __future__ import annotations

import random
import shlex
from dataclasses import dataclass, field
from pathlib import Path

from . import accesspolicy as ap
from . import crypto, mam, provenance, supplychain as sc
from .errors import TangleprovError
from .keydist import PresharedKeyDistribution
from .simnet import Distribution, LatencyModel, Network
from .store import save_archive, save_graph
from .tangle import ArchiveStore


@dataclass
class ChannelDecl:
    alias: str
    node_id: str
    key: bytes
    level: int
    height: int
    aggregation: str = "fine"
    window: int = sc.DEFAULT_AGGREGATION_WINDOW


@dataclass
class Event:
    time: float
    kind: str
    target: str | None
    args: dict[str, str]
    order: int


@dataclass
class ScenarioConfig:
    seed: int = 0
    difficulty: int = 0
    alpha: float = 0.0
    security_level: int = 3
    nodes: list[tuple[str, str, str]] = field(default_factory=list)
    edges: list[tuple[str, str]] = field(default_factory=list)
    per_hop: Distribution | None = None
    remote_pow: Distribution | None = None
    channels: list[ChannelDecl] = field(default_factory=list)
    subscriptions: list[tuple[str, str]] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    assert_converged: bool = False


def _kv(tokens: list[str]) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ValueError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def parse_scenario(text: str) -> ScenarioConfig:
    config = ScenarioConfig()
    order = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            tokens = shlex.split(line)
            head = tokens[0]
            if head == "seed":
                config.seed = int(tokens[1])
            elif head == "difficulty":
                config.difficulty = int(tokens[1])
            elif head == "alpha":
                config.alpha = float(tokens[1])
            elif head == "security-level":
                config.security_level = int(tokens[1])
            elif head == "node":
                config.nodes.append((tokens[1], tokens[2], tokens[3]))
            elif head == "edge":
                config.edges.append((tokens[1], tokens[2]))
            elif head == "latency":
                dist = Distribution(tokens[2], tuple(float(x) for x in tokens[3:]))
                if tokens[1] == "per_hop":
                    config.per_hop = dist
                elif tokens[1] == "remote_pow":
                    config.remote_pow = dist
                else:
                    raise ValueError(f"unknown latency knob {tokens[1]!r}")
            elif head == "channel":
                args = _kv(tokens[2:])
                config.channels.append(
                    ChannelDecl(
                        alias=tokens[1],
                        node_id=args["node"],
                        key=bytes.fromhex(args["key"]) if "key" in args else b"",
                        level=int(args.get("level", config.security_level)),
                        height=int(args.get("height", mam.DEFAULT_EPOCH_HEIGHT)),
                        aggregation=args.get("aggregation", "fine"),
                        window=int(args.get("window", sc.DEFAULT_AGGREGATION_WINDOW)),
                    )
                )
            elif head == "subscribe":
                config.subscriptions.append((tokens[1], tokens[2]))
            elif head == "at":
                when = float(tokens[1])
                kind = tokens[2]
                rest = tokens[3:]
                target = None
                if rest and "=" not in rest[0]:
                    target = rest[0]
                    rest = rest[1:]
                if kind == "partition":
                    args = {"nodes": ";".join([target] + rest if target else rest)}
                    target = None
                else:
                    args = _kv(rest)
                config.events.append(Event(when, kind, target, args, order))
                order += 1
            elif head == "assert-converged":
                config.assert_converged = True
            else:
                raise ValueError(f"unknown directive {head!r}")
        except (IndexError, KeyError, ValueError) as exc:
            raise ValueError(f"scenario line {lineno}: {exc}") from exc
    return config


@dataclass
class ScenarioResult:
    failures: list[str]
    decisions: list[tuple[str, str, str, str]]
    traces: dict[str, bytes]
    pruned: int | None = None

    @property
    def ok(self) -> bool:
        return not self.failures


class ScenarioRunner:
    def __init__(self, config: ScenarioConfig, out_dir: str | Path | None = None,
                 base_dir: str | Path = ".", seed: int | None = None):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir else None
        self.base_dir = Path(base_dir)
        self.seed = config.seed if seed is None else seed

    def run(self) -> ScenarioResult:
        config = self.config
        self.network = net = Network(
            seed=self.seed,
            difficulty=config.difficulty,
            alpha=config.alpha,
            latency=LatencyModel(
                **{
                    k: v
                    for k, v in (
                        ("per_hop", config.per_hop),
                        ("remote_pow", config.remote_pow),
                    )
                    if v is not None
                }
            ),
        )
        for node_id, kind, pow_mode in config.nodes:
            net.add_node(node_id, kind=kind, pow_mode=pow_mode)
        for a, b in config.edges:
            net.add_edge(a, b)
        if not net.nodes:
            net.add_node("default")

        self.channel_rng = random.Random(self.seed ^ 0x5EED)
        self.keydist = PresharedKeyDistribution()
        self.manager = ap.PolicyManager(self.keydist, rng=random.Random(self.seed ^ 0xACE5))
        self.channels: dict[str, sc.EntityChannel] = {}
        self.channel_nodes: dict[str, str] = {}
        self.failures: list[str] = []
        self.decisions: list[tuple[str, str, str, str]] = []
        self.traces: dict[str, bytes] = {}
        self.metrics: list[str] = []
        self.partitions: list = []
        self.archive: ArchiveStore | None = None
        self.pruned: int | None = None
        self._read_node = next(iter(net.nodes))

        for decl in config.channels:
            self._make_channel(decl)
        for subject, alias in config.subscriptions:
            self._subscribe(subject, alias)

        for event in sorted(config.events, key=lambda e: (e.time, e.order)):
            net.clock.schedule_at(event.time, lambda e=event: self._dispatch(e))
        net.clock.run_until_idle()

        if config.assert_converged and not net.converged():
            self.failures.append("assert-converged: replicas diverged")
        self._write_outputs()
        return ScenarioResult(self.failures, self.decisions, self.traces, self.pruned)

    # -- setup helpers -------------------------------------------------------

    def _make_channel(self, decl: ChannelDecl, state: mam.ChannelState | None = None):
        if decl.node_id not in self.network.nodes:
            raise ValueError(f"channel {decl.alias}: unknown node {decl.node_id}")
        if state is None:
            seed = crypto.generate_seed(self.channel_rng.randbytes)
            key = decl.key or self.channel_rng.randbytes(16)
            state = mam.mam_init(seed, decl.level, height=decl.height, alias=decl.alias)
            state = mam.change_mode(state, mam.RESTRICTED, key)
        channel = sc.EntityChannel(
            state=state, aggregation=decl.aggregation, aggregation_window=decl.window
        )
        node = self.network.nodes[decl.node_id]
        channel.transport = self._transport_for(decl.alias, node)
        self.channels[decl.alias] = channel
        self.channel_nodes[decl.alias] = decl.node_id
        self.manager.register_owner(channel)
        return channel

    def _transport_for(self, alias: str, node):
        def send(draft, address):
            result, _ = self.network.publish(node, draft)
            self.metrics.append(
                f"{self.network.clock.now:.0f},{node.node_id},{alias},publish,"
                f"{result.modeled_ms:.0f},{len(result.tx_hashes)}"
            )
            return result.tx_hashes

        return send

    def _subscribe(self, subject: str, alias: str):
        channel = self.channels[alias]
        self.keydist.deliver(
            subject, channel.ident, channel.state.mode,
            channel.state.auth_key, channel.current_root,
        )

    def _graph_for(self, alias: str):
        return self.network.nodes[self.channel_nodes[alias]].graph

    def _read_graph(self):
        return self.network.nodes[self._read_node].graph

    # -- event dispatch --------------------------------------------------------

    def _dispatch(self, event: Event):
        handler = getattr(self, "_ev_" + event.kind.replace("-", "_"), None)
        if handler is None:
            self.failures.append(f"unknown event kind {event.kind!r}")
            return
        try:
            handler(event)
        except TangleprovError as exc:
            self.failures.append(f"at {event.time:.0f} {event.kind}: {exc}")

    def _ev_trade(self, event: Event):
        args = dict(event.args)
        alias = event.target
        channel = self.channels[alias]
        con = sc.ConsignmentInfo(
            batch_id=args.pop("batch", ""),
            component_id=args.pop("component", ""),
            make=args.pop("make", ""),
            model=args.pop("model", ""),
            quantity=int(args["quantity"]) if "quantity" in args else None,
            unit_price=args.pop("price", None),
            vehicle_id=args.pop("vehicle", None),
        )
        args.pop("quantity", None)
        optional = {
            k[len("opt."):]: v for k, v in args.items() if k.startswith("opt.")
        }
        aux = sc.AuxData(
            qc=tuple(x for x in args.pop("qc", "").split(";") if x),
            reg_cert=tuple(x for x in args.pop("cert", "").split(";") if x),
            optional_field=optional,
            warranty_months=int(args["warranty"]) if "warranty" in args else None,
        )
        payload = sc.TradePayload(
            t_data=sc.TradeData(args["tid"], alias, args["buyer"], con),
            a_data=aux,
            src_id=args.get("src", sc.NULL_ID),
            prev_tid=args.get("prev", sc.NULL_ID),
        )
        sc.publish_trade(channel, self._graph_for(alias), payload)

    def _ev_receipt(self, event: Event):
        alias = event.target
        channel = self.channels[alias]
        self._sync_seen(alias)
        sc.issue_receipt(
            channel, self._graph_for(alias), event.args["tid"], event.args["status"]
        )

    def _sync_seen(self, alias: str):
        """Refresh the buyer's seen-trades set from its subscribed channels."""
        keyring = self.keydist.keyring_for(alias)
        graph = self._graph_for(alias)
        for channel_id in keyring.channels():
            for record, _root in keyring.iter_messages(graph, channel_id):
                if isinstance(record, sc.TradePayload):
                    self.channels[alias].note_fetched(record.t_data.t_id)

    def _ev_sensor(self, event: Event):
        alias = event.target
        channel = self.channels[alias]
        values = [float(v) for v in event.args["values"].split(";") if v]
        readings = tuple(
            sc.SensorReading(event.args["kind"], v, event.args.get("unit", ""))
            for v in values
        )
        data = sc.SensorData(
            sensor_id=event.args["sensor"],
            channel_id=channel.ident,
            readings=readings,
            timestamp=int(float(event.args.get("ts", self.network.clock.now))),
        )
        sc.publish_sensor(channel, self._graph_for(alias), data)

    def _ev_partition(self, event: Event):
        nodes = [n for n in event.args["nodes"].split(";") if n]
        self.partitions.append(self.network.inject_partition(nodes))

    def _ev_heal(self, event: Event):
        if not self.partitions:
            self.failures.append(f"at {event.time:.0f}: heal with no active partition")
            return
        self.network.heal_partition(self.partitions.pop(0))

    def _ev_policy(self, event: Event):
        owner = self.channels[event.target]
        categories = {
            ap.DataCategory.from_name(c)
            for c in event.args["categories"].split(";") if c
        }
        self.manager.define_policy(
            owner, event.args["subject"], categories, self._graph_for(event.target)
        )

    def _ev_catdata(self, event: Event):
        owner = self.channels[event.target]
        category = ap.DataCategory.from_name(event.args["category"])
        self.manager.publish_category_data(
            owner, category, event.args["data"].encode("utf-8"),
            self._graph_for(event.target),
        )

    def _ev_revoke(self, event: Event):
        owner = self.channels[event.target]
        self.manager.revoke_access(
            owner, event.args["subject"],
            ap.DataCategory.from_name(event.args["category"]),
            self._graph_for(event.target),
        )

    def _ev_query(self, event: Event):
        subject = event.args["subject"]
        target = event.args["target"]
        category = ap.DataCategory.from_name(event.args["category"])
        decision = self.manager.query(subject, target, category, self._read_graph())
        self.decisions.append((subject, target, category.value, decision.outcome))
        expected = event.args.get("expect")
        if expected and decision.outcome != expected:
            self.failures.append(
                f"query {subject}/{target}/{category.value}: "
                f"expected {expected}, got {decision.outcome}"
            )

    def _ev_trace(self, event: Event):
        subject = event.args["subject"]
        keyring = self.keydist.keyring_for(subject)
        scope = (
            provenance.SCOPE_POINTERS
            if event.args.get("scope") == "pointers"
            else provenance.SCOPE_FULL
        )
        chain = provenance.fetch_aggr(
            self._read_graph(), event.args["channel"], event.args["tid"],
            keyring, scope=scope,
        )
        rendered = provenance.render_trace(chain, event.args.get("format", "text"))
        name = event.args.get("out", f"trace_{len(self.traces)}.txt")
        self.traces[name] = rendered
        expected = event.args.get("expect")
        if expected:
            golden = (self.base_dir / expected).read_bytes()
            if rendered != golden:
                self.failures.append(
                    f"trace {name}: output differs from golden {expected}"
                )

    def _ev_split(self, event: Event):
        parent_alias = event.target
        parent = self.channels[parent_alias]
        child_alias = event.args["child"]
        key = bytes.fromhex(event.args["key"])
        child_state, announcement = mam.split_channel(
            parent.state, key,
            entropy_source=self.channel_rng.randbytes,
            child_alias=child_alias,
        )
        sc.publish_announcement(parent, self._graph_for(parent_alias), announcement)
        decl = ChannelDecl(
            alias=child_alias,
            node_id=self.channel_nodes[parent_alias],
            key=key,
            level=child_state.security_level,
            height=child_state.height,
        )
        child = self._make_channel(decl, state=child_state)
        for subject in event.args.get("subjects", "").split(";"):
            if subject:
                self._subscribe(subject, child_alias)

    def _ev_rotate_key(self, event: Event):
        alias = event.target
        channel = self.channels[alias]
        new_key = bytes.fromhex(event.args["key"])
        rotation_root = channel.current_root
        channel.state = mam.change_mode(channel.state, mam.RESTRICTED, new_key)
        for subject in event.args.get("subjects", "").split(";"):
            if subject:
                self.keydist.rotate(subject, channel.ident, new_key, rotation_root)

    def _ev_snapshot(self, event: Event):
        horizon = int(float(event.args.get("horizon", self.network.clock.now)))
        self.archive = self.archive or ArchiveStore()
        self.pruned = self._read_graph().local_snapshot(horizon, self.archive)

    # -- outputs ------------------------------------------------------------------

    def _write_outputs(self):
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        save_graph(self._read_graph(), self.out_dir / "ledger.store")
        if self.archive is not None:
            save_archive(self.archive, self.out_dir / "archive.store")
        for name, content in self.traces.items():
            (self.out_dir / name).write_bytes(content)
        if self.decisions:
            lines = ["subject,target,category,decision"]
            lines += [",".join(d) for d in self.decisions]
            (self.out_dir / "decisions.csv").write_text(
                "".join(line + "\n" for line in lines), encoding="utf-8"
            )
        if self.manager.policies:
            lines = [
                ap.format_policy(p)
                for _, p in sorted(self.manager.policies.items())
            ]
            (self.out_dir / "policies.txt").write_text(
                "".join(line + "\n" for line in lines), encoding="utf-8"
            )
        header = "time_ms,node,channel,operation,modeled_ms,transactions"
        (self.out_dir / "metrics.csv").write_text(
            "".join(line + "\n" for line in [header] + self.metrics),
            encoding="utf-8",
        )
        self._write_state()

    def _write_state(self):
        """Persist channel/keyring/policy state so CLI one-offs can continue."""
        import json

        channels = {}
        for alias, channel in self.channels.items():
            st = channel.state
            channels[alias] = {
                "seed": st.seed,
                "mode": st.mode,
                "key": st.auth_key.hex() if st.auth_key else None,
                "level": st.security_level,
                "height": st.height,
                "message_index": st.message_index,
                "node": self.channel_nodes[alias],
                "aggregation": channel.aggregation,
                "seen_tids": sorted(channel.seen_tids),
                "sensor_floors": channel.sensor_floors,
            }
        keyrings = {}
        for subject in self.keydist.subjects():
            ring = self.keydist.keyring_for(subject)
            keyrings[subject] = {
                cid: {
                    "mode": grant.mode,
                    "segments": [
                        [root.hex(), key.hex() if key else None]
                        for root, key in grant.segments
                    ],
                }
                for cid, grant in ring.grants.items()
            }
        state = {
            "difficulty": self.config.difficulty,
            "channels": channels,
            "keyrings": keyrings,
            "policies": [
                ap.format_policy(p) for _, p in sorted(self.manager.policies.items())
            ],
            "child_keys": {k: v.hex() for k, v in sorted(self.manager.child_keys.items())},
        }
        (self.out_dir / "state.json").write_text(
            json.dumps(state, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def run_scenario_file(path: str | Path, out_dir: str | Path | None = None,
                      seed: int | None = None) -> ScenarioResult:
    path = Path(path)
    config = parse_scenario(path.read_text(encoding="utf-8"))
    runner = ScenarioRunner(config, out_dir=out_dir, base_dir=path.parent, seed=seed)
    return runner.run()
