"""Executable model of the three resolution architectures.

standard          device sends a plain query; the resolver strips any
                  client-subnet data and the authoritative answers by the
                  resolver's own source prefix (legacy geo mode).
ecs_basic         the resolver rewrites the client-subnet option to the
                  querying device's address, so answers follow the device's
                  network location.
ecs_user_defined  the device's stub fills the option with the prefix mapped
                  to its user-chosen region and the resolver forwards it
                  untouched, so answers follow the registration choice.

The resolver caches under client-subnet scope semantics with an injected
virtual clock; a single resolver instance expects serialized calls.
"""

from __future__ import annotations

import ipaddress
import json
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import Error
from .transport import InProcessLink
from .wire import (
    QTYPE_A,
    DnsMessage,
    EcsOption,
    ResourceRecord,
    decode_message,
    encode_message,
    make_query,
    make_response,
)
from .zone import DEFAULT_TTL, GeoZone, LocationPrefixMap, NameNotFound

RCODE_NXDOMAIN = 3

ARCHITECTURES = ("standard", "ecs_basic", "ecs_user_defined")


class ScenarioError(Error):
    """Scenario wiring or definition problem."""


@dataclass(frozen=True)
class Forward:
    """Pass a client-supplied client-subnet option upstream unmodified."""


@dataclass(frozen=True)
class Strip:
    """Remove any client-subnet option before going upstream."""


@dataclass(frozen=True)
class RewriteClientSubnet:
    """Replace the option with the querying client's address truncated to prefix_len."""

    prefix_len: int = 24

    def __post_init__(self):
        if not 0 <= self.prefix_len <= 32:
            raise ScenarioError(f"rewrite prefix length {self.prefix_len} out of range")


Policy = Forward | Strip | RewriteClientSubnet


@dataclass(frozen=True)
class DeviceConfig:
    device_id: str
    ip_based_location: str
    user_defined_location: str
    client_address: str

    def validate_against(self, prefix_map: LocationPrefixMap) -> None:
        """Check that client_address lies inside the IP-based region's prefix."""
        prefix = prefix_map.prefix_for(self.ip_based_location)
        if ipaddress.ip_address(self.client_address) not in prefix:
            raise ScenarioError(
                f"device {self.device_id}: address {self.client_address} outside "
                f"{self.ip_based_location} prefix {prefix}"
            )


class VirtualClock:
    """Injected monotonic time so TTL expiry is testable."""

    def __init__(self, now: float = 0.0):
        self.now = now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("clock cannot go backwards")
        self.now += seconds


@dataclass
class CacheEntry:
    qname: str
    qtype: int
    scope_prefix_len: int
    network: bytes
    addresses: tuple
    expires_at: float


def stub_query(
    cfg: DeviceConfig,
    qname: str,
    prefix_map: LocationPrefixMap,
    *,
    qtype: int = QTYPE_A,
    msg_id: int = 0,
) -> DnsMessage:
    """Device-side query carrying the user-defined region's prefix, not the device address."""
    prefix = prefix_map.prefix_for(cfg.user_defined_location)
    ecs = EcsOption.for_prefix(prefix.network_address, prefix.prefixlen)
    return make_query(qname, qtype, msg_id=msg_id, ecs=ecs)


class Authoritative:
    """Zone-backed authoritative endpoint.

    With legacy_geo set, a query that carries no client-subnet option is
    answered by the querying source's /24, which models classic
    resolver-location answering; the flag is explicit per scenario, never
    ambient.
    """

    def __init__(self, zone: GeoZone, *, legacy_geo: bool = False):
        self.zone = zone
        self.legacy_geo = legacy_geo

    def handle(self, payload: bytes, source: str) -> bytes:
        return encode_message(self.respond(decode_message(payload), source))

    def respond(self, query: DnsMessage, source: str = "") -> DnsMessage:
        question = query.question
        ecs = query.edns.ecs if query.edns else None
        lookup_ecs = ecs
        if ecs is None and self.legacy_geo and source:
            lookup_ecs = EcsOption.for_prefix(source, 24)
        try:
            result = self.zone.lookup(question.qname, lookup_ecs)
        except NameNotFound:
            return make_response(query, rcode=RCODE_NXDOMAIN, ecs=_echo(ecs, 0))
        want_v4 = question.qtype == QTYPE_A
        answers = tuple(
            ResourceRecord.for_address(question.qname, addr, result.ttl)
            for addr in result.addresses
            if (addr.version == 4) == want_v4
        )
        return make_response(query, answers, ecs=_echo(ecs, result.scope))


def _echo(ecs: EcsOption | None, scope: int) -> EcsOption | None:
    if ecs is None:
        return None
    return EcsOption(
        family=ecs.family,
        source_prefix_len=ecs.source_prefix_len,
        scope_prefix_len=scope,
        address=ecs.address,
    )


class Resolver:
    """Recursive resolver applying one policy, with a scope-aware cache.

    Calls must be serialized per instance; handle() takes a lock so the UDP
    front end satisfies that automatically.
    """

    def __init__(
        self,
        policy: Policy,
        location: str,
        upstream,
        prefix_map: LocationPrefixMap,
        *,
        clock: VirtualClock | None = None,
        address: str | None = None,
    ):
        self.policy = policy
        self.location = location
        self.upstream = upstream
        self.prefix_map = prefix_map
        self.clock = clock if clock is not None else VirtualClock()
        if address is None:
            prefix = prefix_map.prefix_for(location)
            address = str(prefix.network_address + 1)
        self.address = address
        self._cache: dict[tuple[str, int], list[CacheEntry]] = {}
        self._lock = threading.Lock()

    def handle(self, payload: bytes, source: str, trace: list | None = None) -> bytes:
        with self._lock:
            return encode_message(self.resolve(decode_message(payload), source, trace))

    def effective_ecs(self, incoming: EcsOption | None, source: str) -> EcsOption | None:
        match self.policy:
            case Forward():
                return incoming
            case Strip():
                return None
            case RewriteClientSubnet(prefix_len=plen):
                return EcsOption.for_prefix(source, plen)
        raise ScenarioError(f"unknown policy {self.policy!r}")

    def cache_lookup(self, qname: str, qtype: int, ecs: EcsOption | None) -> CacheEntry | None:
        """Most specific unexpired entry matching under scope semantics, if any.

        A scope-0 entry matches any (and absent) option; an entry with
        positive scope needs an option at least that specific whose address
        truncated to the scope equals the stored network.
        """
        entries = self._cache.get((qname, qtype), [])
        live = [e for e in entries if e.expires_at > self.clock.now]
        best = None
        for entry in live:
            if entry.scope_prefix_len == 0:
                matched = True
            elif ecs is None or ecs.source_prefix_len < entry.scope_prefix_len:
                matched = False
            else:
                matched = ecs.network_at(entry.scope_prefix_len) == entry.network
            if matched and (best is None or entry.scope_prefix_len > best.scope_prefix_len):
                best = entry
        return best

    def _store(self, qname, qtype, scope, ecs, addresses, ttl):
        network = ecs.network_at(scope) if ecs is not None else b""
        entries = self._cache.setdefault((qname, qtype), [])
        entries[:] = [
            e
            for e in entries
            if e.expires_at > self.clock.now
            and not (e.scope_prefix_len == scope and e.network == network)
        ]
        entries.append(
            CacheEntry(qname, qtype, scope, network, tuple(addresses), self.clock.now + ttl)
        )

    def resolve(self, query: DnsMessage, source: str, trace: list | None = None) -> DnsMessage:
        if query.is_response:
            raise ScenarioError("resolver got a response instead of a query")
        question = query.question
        incoming = query.edns.ecs if query.edns else None
        effective = self.effective_ecs(incoming, source)

        entry = self.cache_lookup(question.qname, question.qtype, effective)
        if entry is not None:
            remaining = max(1, int(entry.expires_at - self.clock.now))
            answers = tuple(
                ResourceRecord.for_address(question.qname, addr, remaining)
                for addr in entry.addresses
            )
            return make_response(query, answers, ecs=_echo(effective, entry.scope_prefix_len))

        upstream_query = make_query(
            question.qname, question.qtype, msg_id=query.id, ecs=effective
        )
        if trace is not None:
            trace.append(Hop("resolver", "authoritative", upstream_query))
        upstream_response = decode_message(
            self.upstream.exchange(encode_message(upstream_query), self.address)
        )
        if trace is not None:
            trace.append(Hop("authoritative", "resolver", upstream_response))

        if upstream_response.rcode != 0:
            return make_response(
                query, rcode=upstream_response.rcode, ecs=_echo(effective, 0)
            )
        scope = 0
        if upstream_response.edns and upstream_response.edns.ecs:
            scope = upstream_response.edns.ecs.scope_prefix_len
        addresses = tuple(rr.address() for rr in upstream_response.answers)
        ttl = min((rr.ttl for rr in upstream_response.answers), default=DEFAULT_TTL)
        self._store(question.qname, question.qtype, scope, effective, addresses, ttl)
        return make_response(query, upstream_response.answers, ecs=_echo(effective, scope))


@dataclass(frozen=True)
class Hop:
    sender: str
    receiver: str
    message: DnsMessage

    def fields(self, index: int) -> tuple:
        ecs = self.message.edns.ecs if self.message.edns else None
        if ecs is None:
            fam = plen = addr = scope = "-"
        else:
            fam = str(ecs.family)
            plen = str(ecs.source_prefix_len)
            addr = ecs.address_str()
            scope = str(ecs.scope_prefix_len)
        ips = ";".join(rr.address() for rr in self.message.answers) or "-"
        return (str(index), self.sender, self.receiver, self.message.question.qname, fam, plen, addr, ips, scope)


TRANSCRIPT_HEADER = "hop_index,sender,receiver,qname,ecs_family,ecs_prefix,ecs_address,answer_ips,scope"


@dataclass(frozen=True)
class ScenarioTranscript:
    architecture: str
    hops: tuple[Hop, ...]

    def __post_init__(self):
        if not self.hops:
            raise ScenarioError("transcript has no hops")
        if self.hops[0].sender != "device" or self.hops[-1].receiver != "device":
            raise ScenarioError("transcript must start and end at the device")

    def final_answers(self) -> tuple[str, ...]:
        return tuple(rr.address() for rr in self.hops[-1].message.answers)

    def render(self) -> str:
        lines = [TRANSCRIPT_HEADER]
        for i, hop in enumerate(self.hops, start=1):
            lines.append(",".join(hop.fields(i)))
        return "\n".join(lines) + "\n"


def policy_for_architecture(arch: str) -> Policy:
    if arch == "standard":
        return Strip()
    if arch == "ecs_basic":
        return RewriteClientSubnet(24)
    if arch == "ecs_user_defined":
        return Forward()
    raise ScenarioError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


def run_scenario(
    arch: str,
    cfg: DeviceConfig,
    qname: str,
    zone: GeoZone,
    resolver_location: str,
    *,
    policy: Policy | None = None,
    clock: VirtualClock | None = None,
    msg_id: int = 0,
) -> ScenarioTranscript:
    """Run one query through the chosen architecture and record every hop."""
    if arch not in ARCHITECTURES:
        raise ScenarioError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    prefix_map = zone.regions
    cfg.validate_against(prefix_map)
    if policy is None:
        policy = policy_for_architecture(arch)
    authoritative = Authoritative(zone, legacy_geo=(arch == "standard"))
    resolver = Resolver(
        policy,
        resolver_location,
        InProcessLink(authoritative.handle),
        prefix_map,
        clock=clock,
    )
    if arch == "ecs_user_defined":
        query = stub_query(cfg, qname, prefix_map, msg_id=msg_id)
    else:
        query = make_query(qname, msg_id=msg_id)
    trace: list[Hop] = [Hop("device", "resolver", query)]
    response = decode_message(resolver.handle(encode_message(query), cfg.client_address, trace))
    trace.append(Hop("resolver", "device", response))
    return ScenarioTranscript(architecture=arch, hops=tuple(trace))


@dataclass(frozen=True)
class ScenarioSpec:
    architecture: str
    device: DeviceConfig
    qname: str
    zone_path: Path
    resolver_location: str
    policy: Policy | None = None


def load_scenario(path) -> ScenarioSpec:
    """Read a scenario document; the zone path is resolved relative to the file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    try:
        arch = doc["architecture"]
        device_doc = doc["device"]
        qname = doc["qname"]
        zone_rel = doc["zone"]
        resolver_doc = doc["resolver"]
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"{path}: missing field {exc}") from None
    if arch not in ARCHITECTURES:
        raise ScenarioError(f"{path}: unknown architecture {arch!r}")
    try:
        cfg = DeviceConfig(
            device_id=str(device_doc["device_id"]),
            ip_based_location=str(device_doc["ip_based_location"]),
            user_defined_location=str(device_doc["user_defined_location"]),
            client_address=str(device_doc["client_address"]),
        )
        resolver_location = str(resolver_doc["location"])
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"{path}: missing field {exc}") from None
    policy = None
    if "policy" in resolver_doc:
        policy = _parse_policy(resolver_doc["policy"], path)
    zone_path = (path.parent / zone_rel).resolve()
    return ScenarioSpec(
        architecture=arch,
        device=cfg,
        qname=qname,
        zone_path=zone_path,
        resolver_location=resolver_location,
        policy=policy,
    )


def _parse_policy(raw, path) -> Policy:
    if raw == "forward":
        return Forward()
    if raw == "strip":
        return Strip()
    if isinstance(raw, dict) and "rewrite_client_subnet" in raw:
        return RewriteClientSubnet(int(raw["rewrite_client_subnet"]))
    raise ScenarioError(f"{path}: unknown policy {raw!r}")
