"""Resolution architectures, policy handling, and scope-aware caching."""

import random

import pytest
from helpers import FIXTURES

from ecsloc.resolver import (
    Authoritative,
    DeviceConfig,
    Forward,
    Hop,
    Resolver,
    RewriteClientSubnet,
    ScenarioError,
    ScenarioTranscript,
    Strip,
    VirtualClock,
    load_scenario,
    run_scenario,
    stub_query,
)
from ecsloc.transport import InProcessLink
from ecsloc.wire import EcsOption, make_query
from ecsloc.zone import UnknownRegion, load_zone

UK = "203.0.113.10"
US = "203.0.113.20"
HK = "203.0.113.30"
ALL = {UK, US, HK}


@pytest.fixture(scope="module")
def zone():
    return load_zone(FIXTURES / "zone.json")


def device(ip="HK", user="UK", address="198.18.0.77"):
    return DeviceConfig(
        device_id="cam01",
        ip_based_location=ip,
        user_defined_location=user,
        client_address=address,
    )


def make_resolver(zone, policy, location, clock=None, legacy_geo=False):
    authoritative = Authoritative(zone, legacy_geo=legacy_geo)
    return Resolver(
        policy,
        location,
        InProcessLink(authoritative.handle),
        zone.regions,
        clock=clock,
    )


class TestStubQuery:

    def test_carries_user_defined_prefix_not_device_address(self, zone):
        query = stub_query(device(ip="HK", user="UK"), "api.example.iot", zone.regions)
        ecs = query.edns.ecs
        assert ecs.address_str() == "198.18.1.0"  # UK prefix, not 198.18.0.x
        assert ecs.source_prefix_len == 24
        assert ecs.scope_prefix_len == 0

    def test_coinciding_locations(self, zone):
        query = stub_query(device(ip="UK", user="UK", address="198.18.1.9"), "api.example.iot", zone.regions)
        assert query.edns.ecs.address_str() == "198.18.1.0"

    def test_unknown_region(self, zone):
        with pytest.raises(UnknownRegion):
            stub_query(device(user="ZZ"), "api.example.iot", zone.regions)


class TestResolvePolicies:

    def test_forward_delivers_user_region(self, zone):
        resolver = make_resolver(zone, Forward(), "HK")
        query = stub_query(device(), "api.example.iot", zone.regions)
        response = resolver.resolve(query, "198.18.0.77")
        assert {rr.address() for rr in response.answers} == {UK}
        assert response.edns.ecs.scope_prefix_len == 24

    def test_rewrite_delivers_client_region(self, zone):
        resolver = make_resolver(zone, RewriteClientSubnet(24), "UK")
        query = make_query("api.example.iot")
        response = resolver.resolve(query, "198.18.0.77")
        assert {rr.address() for rr in response.answers} == {HK}

    def test_strip_delivers_default_set(self, zone):
        resolver = make_resolver(zone, Strip(), "HK")
        query = stub_query(device(), "api.example.iot", zone.regions)
        response = resolver.resolve(query, "198.18.0.77")
        assert {rr.address() for rr in response.answers} == ALL
        # matches the zone's no-option contract
        assert set(map(str, zone.lookup("api.example.iot", None).addresses)) == ALL

    def test_nxdomain_propagates(self, zone):
        resolver = make_resolver(zone, Forward(), "HK")
        response = resolver.resolve(make_query("nope.example.iot"), "198.18.0.77")
        assert response.rcode == 3
        assert response.answers == ()

    def test_legacy_geo_answers_by_source_prefix(self, zone):
        authoritative = Authoritative(zone, legacy_geo=True)
        response = authoritative.respond(make_query("api.example.iot"), "198.18.1.1")
        assert {rr.address() for rr in response.answers} == {UK}
        assert response.edns is None

    def test_aaaa_query_against_v4_zone_is_nodata(self, zone):
        from ecsloc.wire import QTYPE_AAAA

        resolver = make_resolver(zone, Forward(), "HK")
        query = make_query("api.example.iot", qtype=QTYPE_AAAA,
                           ecs=EcsOption.for_prefix("198.18.1.0", 24))
        response = resolver.resolve(query, "198.18.0.77")
        assert response.rcode == 0
        assert response.answers == ()


class TestCache:

    def test_same_network_hits(self, zone):
        resolver = make_resolver(zone, Forward(), "HK")
        first = resolver.resolve(
            make_query("api.example.iot", ecs=EcsOption.for_prefix("198.18.1.7", 24)),
            "198.18.0.77",
        )
        entry = resolver.cache_lookup(
            "api.example.iot", 1, EcsOption.for_prefix("198.18.1.200", 24)
        )
        assert entry is not None
        assert entry.addresses == tuple(rr.address() for rr in first.answers)

    def test_cross_prefix_misses(self, zone):
        resolver = make_resolver(zone, Forward(), "HK")
        resolver.resolve(
            make_query("api.example.iot", ecs=EcsOption.for_prefix("198.18.1.0", 24)),
            "198.18.0.77",
        )
        assert resolver.cache_lookup("api.example.iot", 1, EcsOption.for_prefix("198.18.0.0", 24)) is None

    def test_scope_zero_matches_absent_option(self, zone):
        resolver = make_resolver(zone, Strip(), "HK")
        resolver.resolve(make_query("api.example.iot"), "198.18.0.77")
        assert resolver.cache_lookup("api.example.iot", 1, None) is not None

    def test_less_specific_query_does_not_hit_scoped_entry(self, zone):
        resolver = make_resolver(zone, Forward(), "HK")
        resolver.resolve(
            make_query("api.example.iot", ecs=EcsOption.for_prefix("198.18.1.0", 24)),
            "198.18.0.77",
        )
        assert resolver.cache_lookup("api.example.iot", 1, EcsOption.for_prefix("198.18.0.0", 16)) is None

    def test_expiry_follows_virtual_clock(self, zone):
        clock = VirtualClock()
        resolver = make_resolver(zone, Forward(), "HK", clock=clock)
        ecs = EcsOption.for_prefix("198.18.1.0", 24)
        resolver.resolve(make_query("api.example.iot", ecs=ecs), "198.18.0.77")
        assert resolver.cache_lookup("api.example.iot", 1, ecs) is not None
        clock.advance(299)
        assert resolver.cache_lookup("api.example.iot", 1, ecs) is not None
        clock.advance(2)
        assert resolver.cache_lookup("api.example.iot", 1, ecs) is None

    def test_hits_equal_cold_lookups(self, zone):
        # region-homed prefixes only: a non-matching prefix would cache the
        # default set at scope 0, whose wildcard reuse is covered below
        rng = random.Random(11)
        authoritative = Authoritative(zone)
        resolver = Resolver(Forward(), "HK", InProcessLink(authoritative.handle), zone.regions)
        homed = {
            "api.example.iot": ["198.18.0.", "198.18.1.", "198.18.2."],
            "media.example.iot": ["198.18.1.", "198.18.2."],
        }
        for _ in range(200):
            qname = rng.choice(list(homed))
            address = rng.choice(homed[qname]) + str(rng.randint(0, 255))
            ecs = EcsOption.for_prefix(address, 24)
            got = resolver.resolve(make_query(qname, ecs=ecs), "198.18.0.77")
            cold = authoritative.respond(make_query(qname, ecs=ecs), resolver.address)
            assert {rr.address() for rr in got.answers} == {rr.address() for rr in cold.answers}
            assert got.edns.ecs.scope_prefix_len == cold.edns.ecs.scope_prefix_len

    def test_scope_zero_wildcard_serves_everyone(self, zone):
        # a scope-0 answer is cacheable for all networks, so after a
        # non-matching prefix fills the cache, a region query is served the
        # all-region superset; this is the standard scope-0 reuse rule
        resolver = make_resolver(zone, Forward(), "HK")
        miss_everything = EcsOption.for_prefix("192.0.2.0", 24)
        resolver.resolve(make_query("api.example.iot", ecs=miss_everything), "198.18.0.77")
        follow_up = resolver.resolve(
            make_query("api.example.iot", ecs=EcsOption.for_prefix("198.18.1.0", 24)),
            "198.18.0.77",
        )
        assert {rr.address() for rr in follow_up.answers} == ALL


class TestScenarios:

    def test_standard_follows_resolver_location(self, zone):
        transcript = run_scenario(
            "standard", device(ip="UK", user="UK", address="198.18.1.50"),
            "api.example.iot", zone, "UK",
        )
        assert transcript.final_answers() == (UK,)

    def test_ecs_basic_follows_client_location(self, zone):
        transcript = run_scenario("ecs_basic", device(), "api.example.iot", zone, "HK")
        assert transcript.final_answers() == (HK,)

    def test_ecs_user_defined_follows_registration(self, zone):
        transcript = run_scenario("ecs_user_defined", device(), "api.example.iot", zone, "HK")
        assert transcript.final_answers() == (UK,)

    def test_transcript_starts_and_ends_at_device(self, zone):
        transcript = run_scenario("ecs_user_defined", device(), "api.example.iot", zone, "HK")
        assert transcript.hops[0].sender == "device"
        assert transcript.hops[-1].receiver == "device"
        assert len(transcript.hops) == 4

    def test_transcript_render_shape(self, zone):
        transcript = run_scenario("ecs_user_defined", device(), "api.example.iot", zone, "HK")
        lines = transcript.render().splitlines()
        assert lines[0].startswith("hop_index,sender,receiver,qname")
        assert lines[-1] == "4,resolver,device,api.example.iot,1,24,198.18.1.0,203.0.113.10,24"

    def test_invalid_transcript_rejected(self, zone):
        query = make_query("api.example.iot")
        with pytest.raises(ScenarioError):
            ScenarioTranscript("standard", (Hop("resolver", "device", query),))

    def test_device_address_outside_region_rejected(self, zone):
        bad = device(ip="HK", address="198.18.1.50")
        with pytest.raises(ScenarioError):
            run_scenario("ecs_basic", bad, "api.example.iot", zone, "HK")

    def test_unknown_architecture_rejected(self, zone):
        with pytest.raises(ScenarioError):
            run_scenario("anycast", device(), "api.example.iot", zone, "HK")


class TestDominance:

    def test_user_defined_dominance_small(self, zone):
        regions = zone.regions.regions()
        for user in regions:
            expected = None
            for ip in regions:
                prefix = zone.regions.prefix_for(ip)
                cfg = device(ip=ip, user=user, address=str(prefix.network_address + 5))
                for resolver_location in regions:
                    transcript = run_scenario(
                        "ecs_user_defined", cfg, "api.example.iot", zone, resolver_location
                    )
                    if expected is None:
                        expected = transcript.final_answers()
                    assert transcript.final_answers() == expected

    def test_ip_based_dominance_under_basic(self, zone):
        regions = zone.regions.regions()
        for ip in regions:
            prefix = zone.regions.prefix_for(ip)
            expected = None
            for user in regions:
                cfg = device(ip=ip, user=user, address=str(prefix.network_address + 5))
                for resolver_location in regions:
                    transcript = run_scenario(
                        "ecs_basic", cfg, "api.example.iot", zone, resolver_location
                    )
                    if expected is None:
                        expected = transcript.final_answers()
                    assert transcript.final_answers() == expected


class TestForwardFidelity:

    def test_option_bytes_survive_forwarding(self, zone):
        rng = random.Random(5)
        seen = []

        class Tap:
            def __init__(self, inner):
                self.inner = inner

            def exchange(self, payload, source):
                seen.append(payload)
                return self.inner.exchange(payload, source)

        from ecsloc.wire import decode_message, encode_message, _encode_ecs_rdata

        authoritative = Authoritative(zone)
        for _ in range(100):
            seen.clear()
            prefix_len = rng.randint(0, 32)
            address = ".".join(str(rng.randint(0, 255)) for _ in range(4))
            ecs = EcsOption.for_prefix(address, prefix_len)
            resolver = Resolver(
                Forward(), "HK", Tap(InProcessLink(authoritative.handle)), zone.regions
            )
            query = make_query("api.example.iot", ecs=ecs)
            resolver.handle(encode_message(query), "198.18.0.77")
            arrived = decode_message(seen[0]).edns.ecs
            assert _encode_ecs_rdata(arrived) == _encode_ecs_rdata(ecs)


class TestScenarioFiles:

    def test_fixture_scenarios_load(self):
        spec = load_scenario(FIXTURES / "scenario_ecs_user_defined.json")
        assert spec.architecture == "ecs_user_defined"
        assert spec.device.user_defined_location == "UK"
        assert spec.zone_path == (FIXTURES / "zone.json").resolve()

    def test_policy_override_parses(self, tmp_path):
        doc = (FIXTURES / "scenario_ecs_basic.json").read_text().replace(
            '"location": "HK"', '"location": "HK", "policy": {"rewrite_client_subnet": 16}'
        )
        path = tmp_path / "s.json"
        path.write_text(doc)
        (tmp_path / "zone.json").write_text((FIXTURES / "zone.json").read_text())
        spec = load_scenario(path)
        assert spec.policy == RewriteClientSubnet(16)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text("{\"architecture\": \"standard\"}")
        with pytest.raises(ScenarioError):
            load_scenario(path)
