"""Allowlist (MUD-style) construction, serialization, unification, and
client-subnet collapsing.

Each access-control entry is the 5-tuple (endpoint, protocol, source port,
destination port, direction) plus an action; files follow the RFC 8520
ACL/ACE nesting with a simplified fixed schema.  Collapsing replaces each
group of per-region endpoint variants with one canonical domain, which is
what a client-subnet-aware authoritative makes possible.
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass, replace
from fractions import Fraction

from .errors import Error

PROTOCOLS = ("tcp", "udp", "icmp", "any")
DIRECTIONS = ("from-device", "to-device")
ACTIONS = ("accept", "drop")

_MAC_RE = re.compile(r"^([0-9a-f]{2}:){5}[0-9a-f]{2}$")
_REGION_RE = re.compile(r"^[A-Za-z]{2}$")

# Labels that name a region but are not two-letter codes themselves.
DEFAULT_REGION_ALIASES = {"eu": "EU"}


class MudError(Error):
    """Base for allowlist problems."""


class EmptyDomainSet(MudError):
    """Cannot build an allowlist from zero domains."""


class MixedDevices(MudError):
    """Unification inputs describe different devices."""


class SchemaError(MudError):
    """Document violates the allowlist schema; message carries the path."""


class DivisionGuard(MudError):
    """Reduction ratio undefined for empty allowlists."""


def _endpoint_kind(endpoint: str) -> str:
    if _MAC_RE.match(endpoint):
        return "mac"
    try:
        ipaddress.ip_address(endpoint)
        return "ip"
    except ValueError:
        return "domain"


@dataclass(frozen=True, order=True)
class Ace:
    """One allowlist rule; a port of None means any port."""

    endpoint: str
    protocol: str = "tcp"
    direction: str = "from-device"
    source_port: int | None = None
    destination_port: int | None = None
    action: str = "accept"

    def __post_init__(self):
        object.__setattr__(self, "endpoint", self.endpoint.strip().lower())
        if not self.endpoint:
            raise MudError("empty endpoint")
        if self.protocol not in PROTOCOLS:
            raise MudError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.direction not in DIRECTIONS:
            raise MudError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.action not in ACTIONS:
            raise MudError(f"action must be one of {ACTIONS}, got {self.action!r}")
        for port in (self.source_port, self.destination_port):
            if port is not None and not 0 <= port <= 65535:
                raise MudError(f"port {port} out of range")
        if self.protocol == "icmp" and (self.source_port is not None or self.destination_port is not None):
            raise MudError("icmp entries carry no ports")

    @property
    def endpoint_kind(self) -> str:
        return _endpoint_kind(self.endpoint)

    def sort_key(self) -> tuple:
        return (
            self.endpoint,
            self.protocol,
            self.direction,
            -1 if self.source_port is None else self.source_port,
            -1 if self.destination_port is None else self.destination_port,
            self.action,
        )


@dataclass(frozen=True)
class AceTemplate:
    """Everything but the endpoint; stamped onto each domain by generate_mud."""

    protocol: str = "tcp"
    direction: str = "from-device"
    source_port: int | None = None
    destination_port: int | None = 443
    action: str = "accept"

    def make(self, endpoint: str) -> Ace:
        return Ace(
            endpoint=endpoint,
            protocol=self.protocol,
            direction=self.direction,
            source_port=self.source_port,
            destination_port=self.destination_port,
            action=self.action,
        )


DEFAULT_TEMPLATE = AceTemplate()


@dataclass(frozen=True)
class MudFile:
    """Allowlist for one device; entries are kept sorted and de-duplicated."""

    device_id: str
    mud_url: str
    acl: tuple[Ace, ...] = ()
    default_action: str = "drop"

    def __post_init__(self):
        if self.default_action != "drop":
            raise MudError("default action must be drop")
        canonical = tuple(sorted(set(self.acl), key=Ace.sort_key))
        object.__setattr__(self, "acl", canonical)

    def endpoints(self) -> tuple[str, ...]:
        return tuple(sorted({ace.endpoint for ace in self.acl}))


@dataclass(frozen=True)
class RegionDomainGroup:
    """Per-region variants of one service domain and the name replacing them."""

    canonical_domain: str
    regional_variants: dict  # region code -> domain name

    def __post_init__(self):
        object.__setattr__(self, "canonical_domain", self.canonical_domain.lower())
        variants = {k.upper(): v.lower() for k, v in self.regional_variants.items()}
        if len(set(variants.values())) != len(variants):
            raise MudError(f"group {self.canonical_domain}: duplicate variant names")
        object.__setattr__(self, "regional_variants", variants)


def generate_mud(
    domains,
    device_id: str,
    template: AceTemplate = DEFAULT_TEMPLATE,
    mud_url: str | None = None,
) -> MudFile:
    """One accept entry per domain member, ordered lexicographically."""
    members = sorted(set(domains.members if hasattr(domains, "members") else domains))
    if not members:
        raise EmptyDomainSet(f"no domains for device {device_id!r}")
    if mud_url is None:
        mud_url = f"urn:mud:{device_id}"
    return MudFile(
        device_id=device_id,
        mud_url=mud_url,
        acl=tuple(template.make(name) for name in members),
    )


def unify(muds) -> MudFile:
    """Set-union of entries across allowlists for the same device."""
    muds = list(muds)
    if not muds:
        raise MudError("nothing to unify")
    device_ids = {m.device_id for m in muds}
    if len(device_ids) != 1:
        raise MixedDevices(f"inputs describe several devices: {sorted(device_ids)}")
    aces = set()
    for mud in muds:
        aces.update(mud.acl)
    return MudFile(
        device_id=muds[0].device_id,
        mud_url=min(m.mud_url for m in muds),
        acl=tuple(aces),
    )


@dataclass(frozen=True)
class CollapseResult:
    mud: MudFile
    unmatched_variants: tuple[str, ...]
    tuple_splits: tuple[str, ...]  # canonical domains whose variants disagreed on the tuple


def ecs_collapse(unified: MudFile, groups) -> CollapseResult:
    """Replace each group's per-region variant entries with canonical-domain entries.

    Entries agreeing on everything but the endpoint merge into one; distinct
    tuples each keep their own canonical entry and the group is reported as
    split.  Variants named but absent from the input are reported, not fatal.
    """
    variant_to_canonical = {}
    for group in groups:
        for variant in group.regional_variants.values():
            variant_to_canonical[variant] = group.canonical_domain
    present = {ace.endpoint for ace in unified.acl}
    unmatched = tuple(sorted(v for v in variant_to_canonical if v not in present))

    kept = []
    merged: dict[str, set[Ace]] = {}
    for ace in unified.acl:
        canonical = variant_to_canonical.get(ace.endpoint)
        if canonical is None:
            kept.append(ace)
        else:
            merged.setdefault(canonical, set()).add(replace(ace, endpoint=canonical))
    splits = tuple(sorted(name for name, aces in merged.items() if len(aces) > 1))
    for aces in merged.values():
        kept.extend(aces)
    collapsed = MudFile(
        device_id=unified.device_id,
        mud_url=unified.mud_url,
        acl=tuple(kept),
    )
    return CollapseResult(mud=collapsed, unmatched_variants=unmatched, tuple_splits=splits)


def suggest_groups(domains, regions, aliases=None) -> list[RegionDomainGroup]:
    """Advisory grouping of domains differing only in one region-code label.

    The label must equal a region code (case-insensitive) or a configured
    alias; cross-TLD variants intentionally exceed this heuristic, so the
    operator confirms groups before collapsing.
    """
    if aliases is None:
        aliases = DEFAULT_REGION_ALIASES
    label_to_region = {r.lower(): r.upper() for r in regions}
    label_to_region.update({k.lower(): v.upper() for k, v in aliases.items()})
    members = domains.members if hasattr(domains, "members") else domains
    buckets: dict[tuple, dict[str, str]] = {}
    for name in sorted(members):
        if "[" in name:
            continue  # pool patterns never encode a region
        labels = name.lower().split(".")
        for i, label in enumerate(labels):
            region = label_to_region.get(label)
            if region is None:
                continue
            key = (i, tuple(labels[:i]), tuple(labels[i + 1 :]))
            buckets.setdefault(key, {})[region] = name
    out = []
    for key in sorted(buckets, key=str):
        variants = buckets[key]
        if len(variants) < 2:
            continue
        i, before, after = key
        canonical = ".".join([*before, *after])
        out.append(RegionDomainGroup(canonical_domain=canonical, regional_variants=variants))
    return out


def domain_count(mud: MudFile) -> int:
    """Distinct domain-name endpoints; IP and MAC endpoints do not count."""
    return len({ace.endpoint for ace in mud.acl if ace.endpoint_kind == "domain"})


def reduction_ratio(unified: MudFile, ecs: MudFile) -> Fraction:
    """Fraction of the unified allowlist's domains the collapsed one saves."""
    total = domain_count(unified)
    if total == 0:
        raise DivisionGuard("both allowlists have zero domain endpoints")
    return Fraction(total - domain_count(ecs), total)


def _port_json(port: int | None):
    return "any" if port is None else port


def _port_from_json(raw, where: str) -> int | None:
    if raw == "any":
        return None
    if isinstance(raw, int) and not isinstance(raw, bool):
        return raw
    raise SchemaError(f"{where}: expected a port number or 'any', got {raw!r}")


def serialize_mud(mud: MudFile) -> bytes:
    """Stable-keyed document; identical files re-serialize byte-identically."""
    acls = []
    for direction in DIRECTIONS:
        aces = [a for a in mud.acl if a.direction == direction]
        if not aces:
            continue
        acls.append(
            {
                "name": direction,
                "aces": [
                    {
                        "endpoint": ace.endpoint,
                        "protocol": ace.protocol,
                        "source-port": _port_json(ace.source_port),
                        "destination-port": _port_json(ace.destination_port),
                        "direction": ace.direction,
                        "action": ace.action,
                    }
                    for ace in aces
                ],
            }
        )
    doc = {
        "mud": {
            "device-id": mud.device_id,
            "mud-url": mud.mud_url,
            "default-action": mud.default_action,
        },
        "acls": acls,
    }
    return (json.dumps(doc, indent=2) + "\n").encode()


def _require(obj, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{where}.{key}: missing")
    return obj[key]


def parse_mud(data: bytes | str) -> MudFile:
    """Inverse of serialize_mud; schema violations name the offending path."""
    if isinstance(data, bytes):
        data = data.decode()
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"document: {exc}") from None
    head = _require(doc, "mud", "document")
    device_id = _require(head, "device-id", "mud")
    mud_url = _require(head, "mud-url", "mud")
    default_action = _require(head, "default-action", "mud")
    acls = _require(doc, "acls", "document")
    if not isinstance(acls, list):
        raise SchemaError("document.acls: expected an array")
    aces = []
    for i, acl in enumerate(acls):
        raw_aces = _require(acl, "aces", f"acls[{i}]")
        if not isinstance(raw_aces, list):
            raise SchemaError(f"acls[{i}].aces: expected an array")
        for j, raw in enumerate(raw_aces):
            where = f"acls[{i}].aces[{j}]"
            try:
                aces.append(
                    Ace(
                        endpoint=str(_require(raw, "endpoint", where)),
                        protocol=str(_require(raw, "protocol", where)),
                        direction=str(_require(raw, "direction", where)),
                        source_port=_port_from_json(_require(raw, "source-port", where), where),
                        destination_port=_port_from_json(
                            _require(raw, "destination-port", where), where
                        ),
                        action=str(_require(raw, "action", where)),
                    )
                )
            except MudError as exc:
                if isinstance(exc, SchemaError):
                    raise
                raise SchemaError(f"{where}: {exc}") from None
    try:
        return MudFile(
            device_id=str(device_id),
            mud_url=str(mud_url),
            acl=tuple(aces),
            default_action=str(default_action),
        )
    except MudError as exc:
        raise SchemaError(f"document: {exc}") from None


def load_groups(data: bytes | str) -> list[RegionDomainGroup]:
    """Parse a region-group document: [{"canonical": ..., "variants": {REGION: name}}]."""
    if isinstance(data, bytes):
        data = data.decode()
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"groups document: {exc}") from None
    if not isinstance(doc, list):
        raise SchemaError("groups document: expected an array")
    groups = []
    for i, raw in enumerate(doc):
        canonical = _require(raw, "canonical", f"groups[{i}]")
        variants = _require(raw, "variants", f"groups[{i}]")
        if not isinstance(variants, dict):
            raise SchemaError(f"groups[{i}].variants: expected an object")
        for region in variants:
            if not _REGION_RE.match(region):
                raise SchemaError(f"groups[{i}].variants: bad region code {region!r}")
        try:
            groups.append(
                RegionDomainGroup(
                    canonical_domain=str(canonical),
                    regional_variants={str(k): str(v) for k, v in variants.items()},
                )
            )
        except MudError as exc:
            raise SchemaError(f"groups[{i}]: {exc}") from None
    return groups


def sweep_table(location_muds, groups) -> list[tuple[int, int, int, Fraction]]:
    """Unified-versus-collapsed domain counts as locations accumulate.

    Row k covers the first k inputs: (k, unified domains, collapsed domains,
    reduction ratio).
    """
    muds = list(location_muds)
    rows = []
    for k in range(1, len(muds) + 1):
        unified = unify(muds[:k])
        collapsed = ecs_collapse(unified, groups).mud
        rows.append((k, domain_count(unified), domain_count(collapsed), reduction_ratio(unified, collapsed)))
    return rows
