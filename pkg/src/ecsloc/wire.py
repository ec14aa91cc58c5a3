"""DNS wire codec for the small message subset this toolkit exchanges.

Covers the 12-octet header, a single A/AAAA question, A/AAAA answer
records, and one EDNS0 OPT pseudo-record (type 41) whose RDATA may carry
the client-subnet option (code 8, RFC 7871).  The encoder never emits
name compression; the decoder accepts compression pointers so responses
from real resolvers can be read back.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass

from .errors import Error

QTYPE_A = 1
QTYPE_AAAA = 28
TYPE_OPT = 41
CLASS_IN = 1
ECS_OPTION_CODE = 8

DEFAULT_UDP_PAYLOAD = 1232

MAX_LABEL_OCTETS = 63
MAX_NAME_OCTETS = 253

# Address length in octets per ECS family code.
_FAMILY_OCTETS = {1: 4, 2: 16}
_FAMILY_BITS = {1: 32, 2: 128}


class WireError(Error):
    """Base for encode/decode failures."""


class InvalidName(WireError):
    """Domain name violates label or total-length limits."""


class InvalidEcs(WireError):
    """Client-subnet option fields are inconsistent."""


class Truncated(WireError):
    """Buffer ended in the middle of a field."""


class Malformed(WireError):
    """Structurally invalid message bytes."""


class UnsupportedType(WireError):
    """Record type outside the A/AAAA subset."""


def canonical_name(name: str) -> str:
    """Lowercase *name*, strip one trailing dot, and validate label limits."""
    if name.endswith("."):
        name = name[:-1]
    name = name.lower()
    if not name:
        raise InvalidName("empty domain name")
    try:
        encoded = name.encode("ascii")
    except UnicodeEncodeError:
        raise InvalidName(f"non-ASCII name: {name!r}") from None
    if len(encoded) > MAX_NAME_OCTETS:
        raise InvalidName(f"name longer than {MAX_NAME_OCTETS} octets: {name!r}")
    for label in name.split("."):
        if not label:
            raise InvalidName(f"empty label in {name!r}")
        if len(label) > MAX_LABEL_OCTETS:
            raise InvalidName(f"label longer than {MAX_LABEL_OCTETS} octets: {label!r}")
        if any(c.isspace() for c in label):
            raise InvalidName(f"whitespace in label: {label!r}")
    return name


def truncate_to_prefix(address, prefix_len: int) -> bytes:
    """Return ceil(prefix_len / 8) octets of *address* with host bits zeroed.

    *address* may be a dotted/colon string, an ipaddress object, or packed
    bytes (4 or 16 octets).
    """
    if isinstance(address, (bytes, bytearray)):
        if len(address) not in (4, 16):
            raise ValueError(f"packed address must be 4 or 16 octets, got {len(address)}")
        packed = bytes(address)
    else:
        packed = ipaddress.ip_address(address).packed
    if not 0 <= prefix_len <= len(packed) * 8:
        raise ValueError(f"prefix length {prefix_len} out of range for {len(packed)}-octet address")
    nbytes = (prefix_len + 7) // 8
    out = bytearray(packed[:nbytes])
    if prefix_len % 8:
        out[-1] &= (0xFF << (8 - prefix_len % 8)) & 0xFF
    return bytes(out)


@dataclass(frozen=True)
class EcsOption:
    """RFC 7871 client-subnet option.

    *address* holds only ceil(source_prefix_len / 8) octets, and every bit
    past source_prefix_len must be zero.
    """

    family: int
    source_prefix_len: int
    scope_prefix_len: int = 0
    address: bytes = b""

    def __post_init__(self):
        if self.family not in _FAMILY_OCTETS:
            raise InvalidEcs(f"family must be 1 or 2, got {self.family}")
        max_bits = _FAMILY_BITS[self.family]
        if not 0 <= self.source_prefix_len <= max_bits:
            raise InvalidEcs(f"source prefix length {self.source_prefix_len} out of range")
        if not 0 <= self.scope_prefix_len <= max_bits:
            raise InvalidEcs(f"scope prefix length {self.scope_prefix_len} out of range")
        expected = (self.source_prefix_len + 7) // 8
        if len(self.address) != expected:
            raise InvalidEcs(
                f"address must be {expected} octets for /{self.source_prefix_len}, "
                f"got {len(self.address)}"
            )
        if self.address and truncate_to_prefix(self.padded_address(), self.source_prefix_len) != self.address:
            raise InvalidEcs("address has nonzero bits past the source prefix length")

    @classmethod
    def for_prefix(cls, address, prefix_len: int, scope_prefix_len: int = 0) -> "EcsOption":
        """Build an option for *address*/*prefix_len*, truncating host bits."""
        ip = ipaddress.ip_address(address)
        family = 1 if ip.version == 4 else 2
        return cls(
            family=family,
            source_prefix_len=prefix_len,
            scope_prefix_len=scope_prefix_len,
            address=truncate_to_prefix(ip, prefix_len),
        )

    def padded_address(self) -> bytes:
        """Address padded with zero octets to the family's full length."""
        return self.address + b"\x00" * (_FAMILY_OCTETS[self.family] - len(self.address))

    def network_at(self, prefix_len: int) -> bytes:
        """Padded address truncated to *prefix_len* (cache-key form)."""
        return truncate_to_prefix(self.padded_address(), prefix_len)

    def address_str(self) -> str:
        """Dotted/colon text of the padded address."""
        return str(ipaddress.ip_address(self.padded_address()))


@dataclass(frozen=True)
class Question:
    qname: str
    qtype: int = QTYPE_A
    qclass: int = CLASS_IN

    def __post_init__(self):
        object.__setattr__(self, "qname", canonical_name(self.qname))
        if self.qtype not in (QTYPE_A, QTYPE_AAAA):
            raise UnsupportedType(f"qtype {self.qtype} not supported")
        if self.qclass != CLASS_IN:
            raise Malformed(f"qclass {self.qclass} not supported")


@dataclass(frozen=True)
class ResourceRecord:
    name: str
    rtype: int
    ttl: int
    rdata: bytes

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_name(self.name))
        if self.rtype not in (QTYPE_A, QTYPE_AAAA):
            raise UnsupportedType(f"record type {self.rtype} not supported")
        expected = 4 if self.rtype == QTYPE_A else 16
        if len(self.rdata) != expected:
            raise ValueError(f"rdata must be {expected} octets for this type, got {len(self.rdata)}")
        if not 0 <= self.ttl <= 0xFFFFFFFF:
            raise ValueError(f"ttl {self.ttl} out of range")

    @classmethod
    def for_address(cls, name: str, address, ttl: int) -> "ResourceRecord":
        ip = ipaddress.ip_address(address)
        rtype = QTYPE_A if ip.version == 4 else QTYPE_AAAA
        return cls(name=name, rtype=rtype, ttl=ttl, rdata=ip.packed)

    def address(self) -> str:
        return str(ipaddress.ip_address(self.rdata))


@dataclass(frozen=True)
class EdnsOpt:
    udp_payload_size: int = DEFAULT_UDP_PAYLOAD
    ecs: EcsOption | None = None

    def __post_init__(self):
        if not 0 <= self.udp_payload_size <= 0xFFFF:
            raise ValueError(f"udp payload size {self.udp_payload_size} out of range")


@dataclass(frozen=True)
class DnsMessage:
    id: int
    is_response: bool
    recursion_desired: bool
    recursion_available: bool
    rcode: int
    question: Question
    answers: tuple[ResourceRecord, ...] = ()
    edns: EdnsOpt | None = None

    def __post_init__(self):
        if not 0 <= self.id <= 0xFFFF:
            raise ValueError(f"message id {self.id} out of range")
        if not 0 <= self.rcode <= 15:
            raise ValueError(f"rcode {self.rcode} out of range")
        object.__setattr__(self, "answers", tuple(self.answers))
        if not self.is_response:
            if self.answers:
                raise ValueError("a query must carry no answers")
            if self.edns and self.edns.ecs and self.edns.ecs.scope_prefix_len != 0:
                raise ValueError("scope prefix length must be 0 in queries")


def make_query(
    qname: str,
    qtype: int = QTYPE_A,
    *,
    msg_id: int = 0,
    ecs: EcsOption | None = None,
    use_edns: bool = False,
    udp_payload_size: int = DEFAULT_UDP_PAYLOAD,
) -> DnsMessage:
    """Build a recursion-desired query; EDNS is attached when requested or when ECS is given."""
    edns = None
    if ecs is not None or use_edns:
        edns = EdnsOpt(udp_payload_size=udp_payload_size, ecs=ecs)
    return DnsMessage(
        id=msg_id,
        is_response=False,
        recursion_desired=True,
        recursion_available=False,
        rcode=0,
        question=Question(qname, qtype),
        edns=edns,
    )


def make_response(
    query: DnsMessage,
    answers: tuple[ResourceRecord, ...] = (),
    *,
    rcode: int = 0,
    ecs: EcsOption | None = None,
    recursion_available: bool = True,
) -> DnsMessage:
    """Build a response echoing the query's id and question."""
    edns = None
    if query.edns is not None:
        edns = EdnsOpt(udp_payload_size=query.edns.udp_payload_size, ecs=ecs)
    elif ecs is not None:
        edns = EdnsOpt(ecs=ecs)
    return DnsMessage(
        id=query.id,
        is_response=True,
        recursion_desired=query.recursion_desired,
        recursion_available=recursion_available,
        rcode=rcode,
        question=query.question,
        answers=tuple(answers),
        edns=edns,
    )


def _encode_name(name: str) -> bytes:
    name = canonical_name(name)
    out = bytearray()
    for label in name.split("."):
        raw = label.encode("ascii")
        out.append(len(raw))
        out += raw
    out.append(0)
    return bytes(out)


def _encode_ecs_rdata(ecs: EcsOption) -> bytes:
    return (
        struct.pack("!HBB", ecs.family, ecs.source_prefix_len, ecs.scope_prefix_len)
        + ecs.address
    )


def encode_message(msg: DnsMessage) -> bytes:
    """Serialize *msg* to standard DNS wire bytes, without name compression."""
    flags = 0
    if msg.is_response:
        flags |= 0x8000
    if msg.recursion_desired:
        flags |= 0x0100
    if msg.recursion_available:
        flags |= 0x0080
    flags |= msg.rcode & 0x0F
    arcount = 1 if msg.edns is not None else 0
    out = bytearray(struct.pack("!HHHHHH", msg.id, flags, 1, len(msg.answers), 0, arcount))
    out += _encode_name(msg.question.qname)
    out += struct.pack("!HH", msg.question.qtype, msg.question.qclass)
    for rr in msg.answers:
        out += _encode_name(rr.name)
        out += struct.pack("!HHIH", rr.rtype, CLASS_IN, rr.ttl, len(rr.rdata))
        out += rr.rdata
    if msg.edns is not None:
        rdata = b""
        if msg.edns.ecs is not None:
            option = _encode_ecs_rdata(msg.edns.ecs)
            rdata = struct.pack("!HH", ECS_OPTION_CODE, len(option)) + option
        out += b"\x00"  # root name
        out += struct.pack("!HHIH", TYPE_OPT, msg.edns.udp_payload_size, 0, len(rdata))
        out += rdata
    return bytes(out)


class _Reader:
    """Cursor over message bytes; raises Truncated when data runs out."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(f"need {n} octets at offset {self.pos}, have {len(self.data) - self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("!H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("!I", self.take(4))[0]

    def name(self) -> str:
        """Read a possibly-compressed name and return its canonical text."""
        labels = []
        total = 0
        jumps = 0
        return_pos = None
        while True:
            length = self.u8()
            if length == 0:
                break
            kind = length & 0xC0
            if kind == 0xC0:
                pointer = ((length & 0x3F) << 8) | self.u8()
                if pointer >= len(self.data):
                    raise Malformed(f"compression pointer {pointer} out of range")
                jumps += 1
                if jumps > 64:
                    raise Malformed("compression pointer loop")
                if return_pos is None:
                    return_pos = self.pos
                self.pos = pointer
                continue
            if kind != 0:
                raise Malformed(f"reserved label type {kind >> 6:#04b}")
            total += length + 1
            if total > MAX_NAME_OCTETS + 1:
                raise Malformed("name exceeds 253 octets")
            raw = self.take(length)
            try:
                labels.append(raw.decode("ascii"))
            except UnicodeDecodeError:
                raise Malformed(f"non-ASCII label bytes {raw!r}") from None
        if return_pos is not None:
            self.pos = return_pos
        if not labels:
            return ""
        return ".".join(labels).lower()


def _decode_ecs(rdata: bytes) -> EcsOption:
    if len(rdata) < 4:
        raise Malformed("client-subnet option shorter than 4 octets")
    family, source, scope = struct.unpack("!HBB", rdata[:4])
    address = rdata[4:]
    if family not in _FAMILY_OCTETS:
        raise Malformed(f"client-subnet family {family} unknown")
    max_bits = _FAMILY_BITS[family]
    if source > max_bits or scope > max_bits:
        raise Malformed("client-subnet prefix length out of range")
    if len(address) != (source + 7) // 8:
        raise Malformed(
            f"client-subnet address length {len(address)} inconsistent with /{source}"
        )
    padded = address + b"\x00" * (_FAMILY_OCTETS[family] - len(address))
    if address and truncate_to_prefix(padded, source) != address:
        raise Malformed("client-subnet address has nonzero bits past the source prefix")
    return EcsOption(family=family, source_prefix_len=source, scope_prefix_len=scope, address=address)


def _decode_opt(reader: _Reader, name: str) -> EdnsOpt:
    if name != "":
        raise Malformed("OPT record name must be root")
    payload = reader.u16()
    ttl = reader.u32()
    version = (ttl >> 16) & 0xFF
    if version != 0:
        raise Malformed(f"EDNS version {version} not supported")
    rdlen = reader.u16()
    rdata = reader.take(rdlen)
    ecs = None
    pos = 0
    while pos < len(rdata):
        if pos + 4 > len(rdata):
            raise Malformed("EDNS option header truncated")
        code, optlen = struct.unpack("!HH", rdata[pos : pos + 4])
        pos += 4
        if pos + optlen > len(rdata):
            raise Malformed("EDNS option data truncated")
        body = rdata[pos : pos + optlen]
        pos += optlen
        if code == ECS_OPTION_CODE and ecs is None:
            ecs = _decode_ecs(body)
        # other option codes are ignored
    return EdnsOpt(udp_payload_size=payload, ecs=ecs)


def _skip_rr(reader: _Reader) -> None:
    reader.name()
    reader.take(8)  # type, class, ttl
    rdlen = reader.u16()
    reader.take(rdlen)


def decode_message(data: bytes) -> DnsMessage:
    """Parse wire bytes into a DnsMessage; inverse of encode_message on its image."""
    reader = _Reader(bytes(data))
    msg_id, flags, qdcount, ancount, nscount, arcount = struct.unpack("!HHHHHH", reader.take(12))
    opcode = (flags >> 11) & 0x0F
    if opcode != 0:
        raise Malformed(f"opcode {opcode} not supported")
    if qdcount != 1:
        raise Malformed(f"expected exactly one question, got {qdcount}")
    qname = reader.name()
    if qname == "":
        raise Malformed("empty question name")
    qtype = reader.u16()
    qclass = reader.u16()
    if qtype not in (QTYPE_A, QTYPE_AAAA):
        raise UnsupportedType(f"qtype {qtype} not supported")
    if qclass != CLASS_IN:
        raise Malformed(f"qclass {qclass} not supported")

    answers = []
    for _ in range(ancount):
        name = reader.name()
        rtype = reader.u16()
        rclass = reader.u16()
        ttl = reader.u32()
        rdlen = reader.u16()
        rdata = reader.take(rdlen)
        if rtype == TYPE_OPT:
            raise Malformed("OPT record in answer section")
        if rtype not in (QTYPE_A, QTYPE_AAAA):
            raise UnsupportedType(f"answer type {rtype} not supported")
        if rclass != CLASS_IN:
            raise Malformed(f"answer class {rclass} not supported")
        expected = 4 if rtype == QTYPE_A else 16
        if rdlen != expected:
            raise Malformed(f"rdata length {rdlen} wrong for record type {rtype}")
        answers.append(ResourceRecord(name=name, rtype=rtype, ttl=ttl, rdata=rdata))

    for _ in range(nscount):
        _skip_rr(reader)

    edns = None
    for _ in range(arcount):
        name = reader.name()
        rtype = reader.u16()
        if rtype == TYPE_OPT:
            if edns is not None:
                raise Malformed("more than one OPT record")
            edns = _decode_opt(reader, name)
        else:
            reader.take(6)  # class, ttl
            rdlen = reader.u16()
            reader.take(rdlen)

    if reader.pos != len(reader.data):
        raise Malformed(f"{len(reader.data) - reader.pos} trailing octets")

    is_response = bool(flags & 0x8000)
    try:
        return DnsMessage(
            id=msg_id,
            is_response=is_response,
            recursion_desired=bool(flags & 0x0100),
            recursion_available=bool(flags & 0x0080),
            rcode=flags & 0x0F,
            question=Question(qname, qtype),
            answers=tuple(answers),
            edns=edns,
        )
    except ValueError as exc:
        raise Malformed(str(exc)) from None
