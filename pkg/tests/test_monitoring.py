import re
from functools import lru_cache
from itertools import combinations

import pytest
from hypothesis import given, settings, strategies as st

from madea.errors import MacMismatch
from madea.monitoring import (
    MatchMode,
    Outcome,
    Reason,
    Verdict,
    lcs_length,
    mask_digits,
    match_entry,
    monitor_stream,
    name_similarity,
    registrable_domain,
)
from madea.profiling import DeviceProfile, Direction, HostnameMap, ProfileEntry, train
from madea.tracegen import FlowSpec, generate_trace, labeled_trace, MALICIOUS

from conftest import (
    BULB_MAC,
    GATEWAY_MAC,
    TURN_ON,
    TURN_ON_REPLY,
    bulb_flow,
    ccc_flow,
)

AWS_TRAINED = "ec2-35-164-195-39.us-west-2.compute.amazonaws.com"
AWS_ROTATED = "ec2-13-235-158-83.ap-south-1.compute.amazonaws.com"


# independent similarity oracle: plain memoized recursion over the masked
# strings, structurally unlike the two-row iterative table in the package
def oracle_lcs(a: str, b: str) -> int:
    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0 or j == 0:
            return 0
        if a[i - 1] == b[j - 1]:
            return rec(i - 1, j - 1) + 1
        return max(rec(i - 1, j), rec(i, j - 1))

    return rec(len(a), len(b))


def oracle_similarity(a: str, b: str) -> float:
    a, b = re.sub(r"[0-9]", "#", a), re.sub(r"[0-9]", "#", b)
    if not a and not b:
        return 1.0
    return 2 * oracle_lcs(a, b) / (len(a) + len(b))


def exhaustive_lcs(a: str, b: str) -> int:
    # brute force over all subsequences of the shorter string
    if len(a) > len(b):
        a, b = b, a
    for k in range(len(a), 0, -1):
        for keep in combinations(range(len(a)), k):
            sub = "".join(a[i] for i in keep)
            it = iter(b)
            if all(ch in it for ch in sub):
                return k
    return 0


def test_registrable_domain():
    assert registrable_domain(AWS_TRAINED) == "amazonaws.com"
    assert registrable_domain("localhost") == "localhost"
    assert registrable_domain("198.98.50.97") == "198.98.50.97"
    assert registrable_domain("m2.tuyaus.com") == "tuyaus.com"


def test_rotated_aws_hostnames_clear_threshold():
    sim = name_similarity(AWS_TRAINED, AWS_ROTATED)
    assert sim == oracle_similarity(AWS_TRAINED, AWS_ROTATED)
    assert sim == pytest.approx(90 / 99)  # frozen from the oracle
    assert sim >= 0.80


def test_identical_strings_score_one():
    assert name_similarity("m2.tuyaus.com", "m2.tuyaus.com") == 1.0


def test_unrelated_endpoint_scores_low():
    sim = name_similarity("m2.tuyaus.com", "198.98.50.97")
    assert sim == oracle_similarity("m2.tuyaus.com", "198.98.50.97")
    assert sim == pytest.approx(0.24)  # frozen from the oracle
    assert sim < 0.80
    assert registrable_domain("m2.tuyaus.com") != registrable_domain("198.98.50.97")


def test_digit_masking_equates_shard_numbers():
    assert mask_digits("m2.tuyaus.com") == "m#.tuyaus.com"
    assert name_similarity("m2.tuyaus.com", "m9.tuyaus.com") == 1.0


name_st = st.text("ab#.-", min_size=0, max_size=8)


@given(name_st, name_st)
@settings(max_examples=200, deadline=None)
def test_lcs_matches_independent_oracles(a, b):
    got = lcs_length(a, b)
    assert got == oracle_lcs(a, b)
    assert got == exhaustive_lcs(a, b)


@given(name_st, name_st)
@settings(max_examples=200, deadline=None)
def test_similarity_symmetric_and_tight(a, b):
    assert name_similarity(a, b) == name_similarity(b, a)
    assert (name_similarity(a, b) == 1.0) == (mask_digits(a) == mask_digits(b))


def bulb_profile() -> DeviceProfile:
    prof = DeviceProfile(BULB_MAC, "RPi Smart Bulb")
    prof.add(ProfileEntry(BULB_MAC, "oculus9353-us1.dropcam.com", Direction.DEVICE_TO_SERVER, 284))
    prof.add(ProfileEntry(BULB_MAC, AWS_TRAINED, Direction.SERVER_TO_DEVICE, 120))
    prof.add(ProfileEntry(BULB_MAC, "192.168.4.50", Direction.USER_TO_DEVICE, 49))
    return prof


def test_exact_match():
    entry = ProfileEntry(BULB_MAC, "oculus9353-us1.dropcam.com", Direction.DEVICE_TO_SERVER, 284)
    assert match_entry(entry, bulb_profile(), MatchMode.strict()) is Reason.EXACT


def test_unseen_endpoint_is_no_endpoint():
    entry = ProfileEntry(BULB_MAC, "198.98.50.97", Direction.DEVICE_TO_SERVER, 74)
    for mode in (MatchMode.strict(), MatchMode.endpoint_only(), MatchMode.length_tolerance(2)):
        assert match_entry(entry, bulb_profile(), mode) is Reason.NO_ENDPOINT


def test_length_rules_per_mode():
    entry = ProfileEntry(BULB_MAC, "oculus9353-us1.dropcam.com", Direction.DEVICE_TO_SERVER, 286)
    assert match_entry(entry, bulb_profile(), MatchMode.strict()) is Reason.LENGTH_MISMATCH
    assert match_entry(entry, bulb_profile(), MatchMode.length_tolerance(2)) is Reason.EXACT
    assert match_entry(entry, bulb_profile(), MatchMode.endpoint_only()) is Reason.EXACT
    far = ProfileEntry(BULB_MAC, "oculus9353-us1.dropcam.com", Direction.DEVICE_TO_SERVER, 300)
    assert match_entry(far, bulb_profile(), MatchMode.length_tolerance(2)) is Reason.LENGTH_MISMATCH


def test_partial_hostname_match():
    entry = ProfileEntry(BULB_MAC, AWS_ROTATED, Direction.SERVER_TO_DEVICE, 120)
    assert match_entry(entry, bulb_profile(), MatchMode.strict()) is Reason.PARTIAL_HOSTNAME
    off_length = ProfileEntry(BULB_MAC, AWS_ROTATED, Direction.SERVER_TO_DEVICE, 121)
    assert match_entry(off_length, bulb_profile(), MatchMode.strict()) is Reason.LENGTH_MISMATCH
    assert match_entry(off_length, bulb_profile(), MatchMode.endpoint_only()) is Reason.PARTIAL_HOSTNAME
    wrong_direction = ProfileEntry(BULB_MAC, AWS_ROTATED, Direction.DEVICE_TO_SERVER, 120)
    assert match_entry(wrong_direction, bulb_profile(), MatchMode.strict()) is Reason.NO_ENDPOINT


def test_raw_ip_endpoints_never_partial_match():
    # digit masking makes two dotted quads identical, so the IP exclusion
    # has to carry the weight here
    prof = DeviceProfile(BULB_MAC)
    prof.add(ProfileEntry(BULB_MAC, "198.98.50.97", Direction.DEVICE_TO_SERVER, 74))
    probe = ProfileEntry(BULB_MAC, "198.98.50.99", Direction.DEVICE_TO_SERVER, 74)
    assert mask_digits(probe.external_address) == mask_digits("198.98.50.97")
    assert match_entry(probe, prof, MatchMode.endpoint_only()) is Reason.NO_ENDPOINT


def test_partial_match_needs_same_registrable_domain():
    prof = DeviceProfile(BULB_MAC)
    prof.add(ProfileEntry(BULB_MAC, "a1.tuyaus.com", Direction.DEVICE_TO_SERVER, 60))
    same_shape = ProfileEntry(BULB_MAC, "a1.tuyaeu.com", Direction.DEVICE_TO_SERVER, 60)
    assert name_similarity("a1.tuyaus.com", "a1.tuyaeu.com") >= 0.80
    assert match_entry(same_shape, prof, MatchMode.strict()) is Reason.NO_ENDPOINT


def test_tie_break_prefers_higher_similarity_then_smaller_key():
    prof = DeviceProfile(BULB_MAC)
    prof.add(ProfileEntry(BULB_MAC, "node-1.svc.example.com", Direction.DEVICE_TO_SERVER, 50))
    prof.add(ProfileEntry(BULB_MAC, "node-22.svc.example.com", Direction.DEVICE_TO_SERVER, 60))
    probe = ProfileEntry(BULB_MAC, "node-3.svc.example.com", Direction.DEVICE_TO_SERVER, 50)
    # node-1 masks to the identical string (similarity 1.0) and carries 50
    assert match_entry(probe, prof, MatchMode.strict()) is Reason.PARTIAL_HOSTNAME
    probe60 = ProfileEntry(BULB_MAC, "node-4.svc.example.com", Direction.DEVICE_TO_SERVER, 60)
    # best candidate mismatches on length but the next one matches
    assert match_entry(probe60, prof, MatchMode.strict()) is Reason.PARTIAL_HOSTNAME


def test_mac_mismatch_rejected():
    entry = ProfileEntry("02:00:00:00:00:01", "x.example.com", Direction.DEVICE_TO_SERVER, 50)
    with pytest.raises(MacMismatch):
        match_entry(entry, bulb_profile(), MatchMode.strict())


def test_verdict_outcome_follows_reason():
    entry = ProfileEntry(BULB_MAC, "x.example.com", Direction.DEVICE_TO_SERVER, 50)
    for reason in Reason:
        v = Verdict.from_reason(0, entry, reason)
        assert (v.outcome is Outcome.BENIGN) == (reason in (Reason.EXACT, Reason.PARTIAL_HOSTNAME))


def test_training_replay_all_benign(bulb_cfg, bulb_training_flows):
    records = generate_trace(bulb_training_flows)
    profiles = train(records, bulb_cfg)
    verdicts = list(monitor_stream(records, bulb_cfg, HostnameMap(), profiles, MatchMode.strict()))
    assert verdicts and all(v.outcome is Outcome.BENIGN for v in verdicts)


def test_injected_flows_exactly_flagged(bulb_cfg, bulb_training_flows):
    profiles = train(generate_trace(bulb_training_flows), bulb_cfg)
    script = bulb_training_flows + [ccc_flow()] + [bulb_flow([TURN_ON, TURN_ON_REPLY])]
    records, labels = labeled_trace(script)
    verdicts = list(monitor_stream(records, bulb_cfg, HostnameMap(), profiles, MatchMode.strict()))
    flagged = {v.packet_index for v in verdicts if v.outcome is Outcome.SUSPICIOUS}
    injected = {i for i, label in enumerate(labels) if label == MALICIOUS}
    assert flagged == injected


def test_rotated_dns_answer_keeps_endpoint_benign(bulb_cfg):
    def script(ip):
        return [FlowSpec(
            device_mac=BULB_MAC, peer_mac=GATEWAY_MAC,
            device_ip="192.168.4.230", peer_ip=ip,
            hostname="m2.tuyaus.com", packets=[(True, 60)],
        )]

    profiles = train(generate_trace(script("54.212.163.173")), bulb_cfg)
    rotated = generate_trace(script("3.130.200.18"))
    verdicts = list(monitor_stream(rotated, bulb_cfg, HostnameMap(), profiles, MatchMode.strict()))
    assert [v.outcome for v in verdicts] == [Outcome.BENIGN]


def test_monitoring_deterministic(bulb_cfg, bulb_training_flows):
    profiles = train(generate_trace(bulb_training_flows), bulb_cfg)
    records = generate_trace(bulb_training_flows + [ccc_flow()])
    first = list(monitor_stream(records, bulb_cfg, HostnameMap(), profiles, MatchMode.strict()))
    second = list(monitor_stream(records, bulb_cfg, HostnameMap(), profiles, MatchMode.strict()))
    assert first == second


def test_unknown_domain_suspicious_in_every_mode(bulb_cfg, bulb_training_flows):
    profiles = train(generate_trace(bulb_training_flows), bulb_cfg)
    attack = generate_trace([ccc_flow(peer_ip="185.10.68.11")])
    for mode in (MatchMode.strict(), MatchMode.length_tolerance(2), MatchMode.endpoint_only()):
        verdicts = list(monitor_stream(attack, bulb_cfg, HostnameMap(), profiles, mode))
        assert verdicts and all(v.reason is Reason.NO_ENDPOINT for v in verdicts)


def random_script(rng) -> list:
    endpoints = ["app1.vendor.example", "app2.vendor.example", "44.20.1.9", "10.0.0.7"]
    script = []
    for _ in range(rng.randint(1, 4)):
        script.append(FlowSpec(
            device_mac=BULB_MAC, peer_mac=GATEWAY_MAC,
            device_ip="192.168.4.230", peer_ip=rng.choice(["44.20.1.9", "44.20.1.10", "10.0.0.7"]),
            hostname=rng.choice([None, endpoints[0], endpoints[1]]),
            packets=[(rng.random() < 0.5, rng.randint(42, 80)) for _ in range(rng.randint(1, 6))],
        ))
    return script


def test_mode_monotonicity_on_random_traces(bulb_cfg):
    import random

    rng = random.Random(1234)
    modes = [MatchMode.strict(), MatchMode.length_tolerance(2), MatchMode.endpoint_only()]
    for _ in range(25):
        profiles = train(generate_trace(random_script(rng), seed=1), bulb_cfg)
        probe = generate_trace(random_script(rng), seed=2)
        benign_sets = []
        for mode in modes:
            verdicts = monitor_stream(probe, bulb_cfg, HostnameMap(), profiles, mode)
            benign_sets.append({v.packet_index for v in verdicts if v.outcome is Outcome.BENIGN})
        assert benign_sets[0] <= benign_sets[1] <= benign_sets[2]
