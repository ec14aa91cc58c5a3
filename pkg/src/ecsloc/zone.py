"""Authoritative zone data with client-subnet-aware answer selection.

A zone maps each qname to regional answer sets keyed by network prefix.
A query carrying a client-subnet option gets the longest-prefix-matching
regional answers; a query without one gets the union of every region's
addresses (so an allowlist builder sees all endpoints at once).
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import Error
from .wire import EcsOption

DEFAULT_TTL = 300

_REGION_RE = re.compile(r"^[A-Za-z]{2}$")


class ZoneError(Error):
    """Base for zone data problems."""


class ZoneParseError(ZoneError):
    """Zone document failed to parse or validate; message carries field context."""


class OverlapError(ZoneError):
    """Two prefixes overlap where disjointness is required."""


class DefaultMismatch(ZoneError):
    """Stated default answer set is not the union of the regional sets."""


class UnknownRegion(ZoneError):
    """Region code absent from the prefix map."""


class NameNotFound(ZoneError):
    """Qname is not present in the zone (NXDOMAIN at the message layer)."""


def _check_region_code(code: str) -> str:
    if not _REGION_RE.match(code):
        raise ZoneParseError(f"region code must be two letters, got {code!r}")
    return code.upper()


@dataclass(frozen=True)
class LocationPrefixMap:
    """Region code (two letters, e.g. "UK") to network prefix."""

    entries: dict  # region -> IPv4Network | IPv6Network

    def __post_init__(self):
        normalized = {}
        for code, prefix in self.entries.items():
            code = _check_region_code(code)
            if not isinstance(prefix, (ipaddress.IPv4Network, ipaddress.IPv6Network)):
                try:
                    prefix = ipaddress.ip_network(prefix)
                except ValueError as exc:
                    raise ZoneParseError(f"region {code}: {exc}") from None
            normalized[code] = prefix
        items = sorted(normalized.items())
        for i, (code_a, net_a) in enumerate(items):
            for code_b, net_b in items[i + 1 :]:
                if net_a.version == net_b.version and net_a.overlaps(net_b):
                    raise OverlapError(f"regions {code_a} and {code_b} have overlapping prefixes")
        object.__setattr__(self, "entries", normalized)

    @classmethod
    def default(cls, regions) -> "LocationPrefixMap":
        """Assign each region a disjoint /24 from 198.18.0.0/15 benchmark space.

        Regions are ordered lexicographically so the assignment is stable
        across runs and never touches routable space.
        """
        codes = sorted({_check_region_code(r) for r in regions})
        if len(codes) > 512:
            raise ZoneParseError("default map supports at most 512 regions")
        base = int(ipaddress.IPv4Address("198.18.0.0"))
        entries = {
            code: ipaddress.ip_network((base + (i << 8), 24))
            for i, code in enumerate(codes)
        }
        return cls(entries)

    def prefix_for(self, region: str):
        try:
            return self.entries[region.upper()]
        except KeyError:
            raise UnknownRegion(f"region {region!r} not in prefix map") from None

    def regions(self) -> tuple[str, ...]:
        return tuple(sorted(self.entries))

    def __contains__(self, region: str) -> bool:
        return region.upper() in self.entries


@dataclass(frozen=True)
class RegionalAnswer:
    region: str
    prefix: ipaddress.IPv4Network | ipaddress.IPv6Network
    addresses: tuple
    ttl: int = DEFAULT_TTL

    def __post_init__(self):
        if not self.addresses:
            raise ZoneParseError(f"region {self.region}: empty address list")
        parsed = tuple(ipaddress.ip_address(a) for a in self.addresses)
        for addr in parsed:
            if addr.version != self.prefix.version:
                raise ZoneParseError(
                    f"region {self.region}: address {addr} family differs from prefix {self.prefix}"
                )
        object.__setattr__(self, "addresses", parsed)


@dataclass(frozen=True)
class LookupResult:
    addresses: tuple
    scope: int
    ttl: int


@dataclass(frozen=True)
class AnswerSet:
    """Ordered regional answers for one qname plus the all-region default."""

    answers: tuple[RegionalAnswer, ...]
    default: tuple
    ttl: int = DEFAULT_TTL

    def __post_init__(self):
        # equal-length overlapping networks are identical, so rejecting
        # duplicates also rejects every equal-length overlap
        seen = set()
        for ans in self.answers:
            if ans.prefix in seen:
                raise OverlapError(f"prefix {ans.prefix} listed twice for one qname")
            seen.add(ans.prefix)
        union = set()
        for ans in self.answers:
            union.update(ans.addresses)
        stated = tuple(sorted((ipaddress.ip_address(a) for a in self.default), key=str))
        if set(stated) != union:
            raise DefaultMismatch(
                f"default set {sorted(map(str, stated))} != union {sorted(map(str, union))}"
            )
        object.__setattr__(self, "default", stated)


@dataclass(frozen=True)
class GeoZone:
    origin: str
    regions: LocationPrefixMap
    records: dict = field(default_factory=dict)  # qname -> AnswerSet

    @classmethod
    def load(cls, path) -> "GeoZone":
        """Load and validate a zone document; invariant violations are load errors."""
        path = Path(path)
        text = path.read_text()
        if not text.strip():
            return cls(origin="", regions=LocationPrefixMap({}), records={})
        try:
            doc = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
        except json.JSONDecodeError as exc:
            raise ZoneParseError(f"{path}: {exc}") from None
        except ZoneParseError as exc:
            raise ZoneParseError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ZoneParseError(f"{path}: top level must be an object")
        origin = doc.get("origin", "")
        regions_raw = doc.get("regions", {})
        if not isinstance(regions_raw, dict):
            raise ZoneParseError(f"{path}: 'regions' must be an object")
        try:
            prefix_map = LocationPrefixMap(regions_raw)
        except ZoneError as exc:
            raise type(exc)(f"{path}: regions: {exc}") from None

        records = {}
        records_raw = doc.get("records", {})
        if not isinstance(records_raw, dict):
            raise ZoneParseError(f"{path}: 'records' must be an object")
        for qname, block in records_raw.items():
            where = f"{path}: records[{qname!r}]"
            if not isinstance(block, dict) or "answers" not in block:
                raise ZoneParseError(f"{where}: expected an object with an 'answers' array")
            ttl = block.get("ttl", DEFAULT_TTL)
            if not isinstance(ttl, int) or ttl < 0:
                raise ZoneParseError(f"{where}.ttl: must be a non-negative integer")
            regional = []
            entries = block["answers"]
            if not isinstance(entries, list):
                raise ZoneParseError(f"{where}.answers: must be an array")
            for i, entry in enumerate(entries):
                spot = f"{where}.answers[{i}]"
                if not isinstance(entry, dict):
                    raise ZoneParseError(f"{spot}: expected an object")
                try:
                    region = _check_region_code(str(entry["region"]))
                    addresses = entry["addresses"]
                except KeyError as exc:
                    raise ZoneParseError(f"{spot}: missing field {exc}") from None
                if region not in prefix_map:
                    raise ZoneParseError(f"{spot}.region: {region!r} not in regions table")
                if not isinstance(addresses, list) or not addresses:
                    raise ZoneParseError(f"{spot}.addresses: must be a non-empty array")
                try:
                    regional.append(
                        RegionalAnswer(
                            region=region,
                            prefix=prefix_map.prefix_for(region),
                            addresses=tuple(addresses),
                            ttl=ttl,
                        )
                    )
                except ZoneParseError as exc:
                    raise ZoneParseError(f"{spot}: {exc}") from None
                except ValueError as exc:
                    raise ZoneParseError(f"{spot}.addresses: {exc}") from None
            default = block.get("default")
            if default is None:
                union = set()
                for ans in regional:
                    union.update(ans.addresses)
                default = tuple(union)
            try:
                answer_set = AnswerSet(answers=tuple(regional), default=tuple(default), ttl=ttl)
            except (OverlapError, DefaultMismatch) as exc:
                raise type(exc)(f"{where}: {exc}") from None
            except ValueError as exc:
                raise ZoneParseError(f"{where}.default: {exc}") from None
            records[_lower_name(qname)] = answer_set
        return cls(origin=_lower_name(origin) if origin else "", regions=prefix_map, records=records)

    def qnames(self) -> tuple[str, ...]:
        return tuple(sorted(self.records))

    def lookup(self, qname: str, ecs: EcsOption | None = None) -> LookupResult:
        """Resolve *qname* under the client-subnet rules.

        No option or a zero-length source prefix yields the all-region
        default with scope 0.  Otherwise the longest prefix containing the
        query network wins and the answer's scope is that prefix's length;
        with no containing prefix the default set is returned at scope 0.
        """
        record = self.records.get(_lower_name(qname))
        if record is None:
            raise NameNotFound(f"{qname!r} not in zone {self.origin!r}")
        if ecs is None or ecs.source_prefix_len == 0:
            return LookupResult(record.default, 0, record.ttl)
        query_net = ipaddress.ip_network((ecs.padded_address(), ecs.source_prefix_len))
        best = None
        for ans in record.answers:
            if ans.prefix.version != query_net.version:
                continue
            if ans.prefix.prefixlen <= query_net.prefixlen and query_net.subnet_of(ans.prefix):
                if best is None or ans.prefix.prefixlen > best.prefix.prefixlen:
                    best = ans
        if best is None:
            return LookupResult(record.default, 0, record.ttl)
        return LookupResult(best.addresses, best.prefix.prefixlen, best.ttl)


def _reject_duplicate_keys(pairs):
    # JSON keeps the last duplicate silently, which would hide a
    # repeated qname or region entry
    out = {}
    for key, value in pairs:
        if key in out:
            raise ZoneParseError(f"duplicate key {key!r}")
        out[key] = value
    return out


def _lower_name(name: str) -> str:
    return name.rstrip(".").lower()


def load_zone(path) -> GeoZone:
    return GeoZone.load(path)
