"""Shared test utilities: independent oracles and randomized generators.

The reference encoders here are deliberately written against different
primitives (socket.inet_pton, integer masks, hex assembly) than the package
uses, so agreement between the two is meaningful.
"""

from __future__ import annotations

import random
import socket
import string
from pathlib import Path

from ecsloc.mud import Ace, MudFile
from ecsloc.wire import (
    QTYPE_A,
    QTYPE_AAAA,
    DnsMessage,
    EcsOption,
    EdnsOpt,
    Question,
    ResourceRecord,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def reference_truncate(address_text: str, prefix_len: int, family: int = 1) -> bytes:
    """Bitmask oracle: zero host bits with integer arithmetic, keep ceil(p/8) octets."""
    af = socket.AF_INET if family == 1 else socket.AF_INET6
    packed = socket.inet_pton(af, address_text)
    bits = len(packed) * 8
    value = int.from_bytes(packed, "big")
    mask = (((1 << prefix_len) - 1) << (bits - prefix_len)) if prefix_len else 0
    value &= mask
    return value.to_bytes(len(packed), "big")[: (prefix_len + 7) // 8]


def reference_ecs_rdata(family: int, source: int, scope: int, address_text: str) -> bytes:
    """Reference option-data encoder assembled from a hex string.

    Field order per RFC 7871 section 6: FAMILY (2 octets, network order),
    SOURCE PREFIX-LENGTH (1), SCOPE PREFIX-LENGTH (1), truncated ADDRESS.
    """
    hexed = f"{family:04x}{source:02x}{scope:02x}"
    hexed += reference_truncate(address_text, source, family).hex()
    return bytes.fromhex(hexed)


def rand_name(rng: random.Random, max_labels: int = 4) -> str:
    alphabet = string.ascii_lowercase + string.digits
    labels = []
    for _ in range(rng.randint(1, max_labels)):
        length = rng.randint(1, 12)
        labels.append("".join(rng.choice(alphabet) for _ in range(length)))
    return ".".join(labels)


def rand_v4(rng: random.Random) -> str:
    return ".".join(str(rng.randint(0, 255)) for _ in range(4))


def rand_v6(rng: random.Random) -> str:
    return ":".join(f"{rng.randint(0, 0xFFFF):x}" for _ in range(8))


def rand_ecs(rng: random.Random, scope_allowed: bool = False) -> EcsOption:
    if rng.random() < 0.8:
        family, bits, addr = 1, 32, rand_v4(rng)
    else:
        family, bits, addr = 2, 128, rand_v6(rng)
    source = rng.randint(0, bits)
    scope = rng.randint(0, bits) if scope_allowed else 0
    return EcsOption.for_prefix(addr, source, scope_prefix_len=scope) if source else EcsOption(
        family=family, source_prefix_len=0, scope_prefix_len=scope, address=b""
    )


def rand_message(rng: random.Random) -> DnsMessage:
    is_response = rng.random() < 0.5
    qtype = rng.choice((QTYPE_A, QTYPE_AAAA))
    qname = rand_name(rng)
    answers = ()
    if is_response:
        answers = tuple(
            ResourceRecord.for_address(
                rand_name(rng),
                rand_v4(rng) if rng.random() < 0.7 else rand_v6(rng),
                ttl=rng.randint(0, 86400),
            )
            for _ in range(rng.randint(0, 3))
        )
    edns = None
    if rng.random() < 0.7:
        ecs = rand_ecs(rng, scope_allowed=is_response) if rng.random() < 0.8 else None
        edns = EdnsOpt(udp_payload_size=rng.randint(512, 4096), ecs=ecs)
    return DnsMessage(
        id=rng.randint(0, 0xFFFF),
        is_response=is_response,
        recursion_desired=rng.random() < 0.8,
        recursion_available=is_response and rng.random() < 0.8,
        rcode=rng.choice((0, 0, 0, 2, 3)) if is_response else 0,
        question=Question(qname, qtype),
        answers=answers,
        edns=edns,
    )


def rand_ace(rng: random.Random) -> Ace:
    kind = rng.random()
    if kind < 0.6:
        endpoint = rand_name(rng)
    elif kind < 0.8:
        endpoint = rand_v4(rng)
    else:
        endpoint = ":".join(f"{rng.randint(0, 255):02x}" for _ in range(6))
    protocol = rng.choice(("tcp", "udp", "icmp", "any"))
    if protocol == "icmp":
        src = dst = None
    else:
        src = None if rng.random() < 0.5 else rng.randint(0, 65535)
        dst = None if rng.random() < 0.5 else rng.randint(0, 65535)
    return Ace(
        endpoint=endpoint,
        protocol=protocol,
        direction=rng.choice(("from-device", "to-device")),
        source_port=src,
        destination_port=dst,
        action=rng.choice(("accept", "accept", "drop")),
    )


def rand_mud(rng: random.Random, device_id: str | None = None) -> MudFile:
    if device_id is None:
        device_id = "dev-" + rand_name(rng, max_labels=1)
    return MudFile(
        device_id=device_id,
        mud_url=f"urn:mud:{device_id}",
        acl=tuple(rand_ace(rng) for _ in range(rng.randint(0, 8))),
    )
