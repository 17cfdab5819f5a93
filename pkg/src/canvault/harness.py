"""Scenario execution plus the analytic comparison against related schemes.

A scenario builds a network from a validated config, drives the protocol
through its bus phases stage by stage (each stage runs to quiescence before
the next begins, since the central node never waits for per-unit acks), then
attaches the closed-form expectations: the 2N+1 message budget, the message
counts of two competing schemes, and per-scheme computation tallies under
the active latency profile.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from random import Random
from typing import Optional

from . import kem
from .bus import (FRAME_DATA_MAX, LATENCY_PRESETS, BusConfig, ForgeAction,
                  Network, ReplayAction, SimReport, TamperAction)
from .errors import ConfigError, DeadlockError, DomainError, RunCheckError
from .group import Group, get_group, GROUP_NAMES
from .protocol import DEFAULT_CTR_MAX, DEFAULT_REPLAY_CACHE, SECU_ID, Ecu, \
    MsgKind, Secu, body_length


class Scheme(enum.Enum):
    OURS = "ours"
    CARVAJAL_ROCA = "carvajal-roca"
    MUSUROI = "musuroi"


def expected_messages(scheme: Scheme, n: int) -> int:
    """Closed-form message count of a scheme for a group of n units."""
    if n < 1:
        raise DomainError(f"group size must be >= 1, got {n}")
    if scheme is Scheme.OURS:
        return 2 * n + 1
    if scheme is Scheme.CARVAJAL_ROCA:
        return 5 * n + 1
    return 4 * (2 * n - 1)


def comparison_ratios(n: int) -> tuple[Fraction, Fraction]:
    """Our message count over each competitor's, as exact fractions."""
    ours = expected_messages(Scheme.OURS, n)
    return (Fraction(ours, expected_messages(Scheme.CARVAJAL_ROCA, n)),
            Fraction(ours, expected_messages(Scheme.MUSUROI, n)))


def comparison_table(sizes: list[int]) -> list[dict]:
    """Rows for the scheme comparison CSV: one per (size, scheme)."""
    rows = []
    for n in sizes:
        ours = expected_messages(Scheme.OURS, n)
        for scheme in Scheme:
            msgs = expected_messages(scheme, n)
            rows.append({
                "scheme": scheme.value,
                "n": n,
                "messages": msgs,
                "percent_of_ours": round(100 * ours / msgs, 2),
            })
    return rows


# Operation counts behind each scheme's computation estimate at group size 2.
_TALLY_OPS = {
    Scheme.OURS: {"eccdh": 5, "sha": 4, "hkdf": 6, "hmac": 4, "aes": 2},
    Scheme.CARVAJAL_ROCA: {"eccdh": 6, "sha": 2, "aes": 4},
    Scheme.MUSUROI: {"sign": 1, "verify": 2, "eccdh": 4, "aes": 4},
}


def computation_tally_us(scheme: Scheme, op_latency: dict[str, int]) -> Optional[int]:
    """Plug per-op latencies into a scheme's operation tally (size-2 group).

    Returns None when the latency table lacks an operation the scheme needs
    (signature timings exist only for the stm32 profile).
    """
    total = 0
    for op, count in _TALLY_OPS[scheme].items():
        if op not in op_latency:
            return None
        total += count * op_latency[op]
    return total


def affine_fit(xs: list[float], ys: list[float]) -> tuple[float, float, float]:
    """Least-squares line a + b*x; returns (a, b, max relative residual)."""
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    sxx = sum((x - mean_x) ** 2 for x in xs)
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    b = sxy / sxx
    a = mean_y - b * mean_x
    max_rel = max(abs(a + b * x - y) / y for x, y in zip(xs, ys))
    return a, b, max_rel


# -- scenario configuration -------------------------------------------------

_CONFIG_TYPES = {
    "group": str,
    "n_ecus": int,
    "latency_profile": str,
    "bitrate_bps": int,
    "frame_overhead_bits": int,
    "ctr_max": int,
    "post_ticks": int,
    "rng_seed": int,
    "phase4_sender": int,
    "replay_cache_size": int,
    "keyfile": str,
    "adversary": list,
}
_REQUIRED = ("group", "n_ecus")

_ADVERSARY_KEYS = {
    "tamper": {"action", "target", "bit", "occurrence"},
    "replay": {"action", "target", "occurrence", "delay_us"},
    "forge": {"action", "target", "receiver", "at_us"},
}


@dataclass
class ScenarioConfig:
    group: str
    n_ecus: int
    latency_profile: str = "stm32"
    bitrate_bps: int = 1_000_000
    frame_overhead_bits: int = 128
    ctr_max: int = DEFAULT_CTR_MAX
    post_ticks: int = 0
    rng_seed: int = 0
    phase4_sender: Optional[int] = None
    replay_cache_size: int = DEFAULT_REPLAY_CACHE
    keyfile: Optional[str] = None
    adversary: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise ConfigError("scenario config must be a JSON object")
        unknown = set(raw) - set(_CONFIG_TYPES)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in _REQUIRED:
            if key not in raw:
                raise ConfigError(f"missing required config key {key!r}")
        for key, value in raw.items():
            want = _CONFIG_TYPES[key]
            if want is int and isinstance(value, bool):
                raise ConfigError(f"config key {key!r} must be an integer")
            if not isinstance(value, want):
                raise ConfigError(f"config key {key!r} must be {want.__name__}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_json_file(cls, path: str) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self) -> None:
        if self.group not in GROUP_NAMES:
            raise ConfigError(f"unknown group {self.group!r}")
        if self.n_ecus < 1:
            raise ConfigError("n_ecus must be >= 1")
        if self.bitrate_bps < 1:
            raise ConfigError("bitrate_bps must be positive")
        if self.ctr_max < 1:
            raise ConfigError("ctr_max must be >= 1")
        if self.post_ticks < 0:
            raise ConfigError("post_ticks must be >= 0")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed must be >= 0")
        if self.replay_cache_size < 1:
            raise ConfigError("replay_cache_size must be >= 1")
        if self.phase4_sender is not None and not 0 <= self.phase4_sender < self.n_ecus:
            raise ConfigError("phase4_sender must name a unit in [0, n_ecus)")
        for entry in self.adversary:
            _validate_adversary_entry(entry)


def _validate_adversary_entry(entry) -> None:
    if not isinstance(entry, dict):
        raise ConfigError("adversary entries must be objects")
    action = entry.get("action")
    if action not in _ADVERSARY_KEYS:
        raise ConfigError(f"adversary action must be one of {sorted(_ADVERSARY_KEYS)}")
    unknown = set(entry) - _ADVERSARY_KEYS[action]
    if unknown:
        raise ConfigError(f"unknown adversary keys for {action}: {sorted(unknown)}")
    target = entry.get("target")
    try:
        MsgKind(target)
    except ValueError:
        raise ConfigError(f"adversary target must be a message kind, got {target!r}") \
            from None
    for key in ("bit", "occurrence", "delay_us", "at_us"):
        if key in entry and (isinstance(entry[key], bool)
                             or not isinstance(entry[key], int) or entry[key] < 0):
            raise ConfigError(f"adversary key {key!r} must be a nonnegative integer")
    if action == "tamper" and "bit" not in entry:
        raise ConfigError("tamper action requires a bit index")
    if "receiver" in entry and entry["receiver"] is not None \
            and not isinstance(entry["receiver"], int):
        raise ConfigError("forge receiver must be a unit id or null")


def load_latency_profile(name: str) -> tuple[str, dict[str, dict[str, int]]]:
    """Resolve a preset name or ``custom:<path>`` into a latency table."""
    if name in LATENCY_PRESETS:
        return name, LATENCY_PRESETS[name]
    if name.startswith("custom:"):
        path = name.split(":", 1)[1]
        try:
            with open(path) as fh:
                table = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load latency profile {path}: {exc}") from exc
        for node_class in ("secu", "ecu"):
            ops = table.get(node_class)
            if not isinstance(ops, dict):
                raise ConfigError(f"profile must map {node_class!r} to op latencies")
            for op, us in ops.items():
                if isinstance(us, bool) or not isinstance(us, int) or us < 0:
                    raise ConfigError(f"latency {node_class}.{op} must be >= 0 us")
            missing = {"eccdh", "hkdf", "aes", "hmac"} - set(ops)
            if missing:
                raise ConfigError(
                    f"profile {node_class!r} lacks latencies for {sorted(missing)}")
        return name, table
    raise ConfigError(
        f"unknown latency profile {name!r}; presets: {sorted(LATENCY_PRESETS)}")


def _parse_adversary(cfg: ScenarioConfig, group: Group, rng: Random) -> list:
    """Turn config entries into bus actions, building forged bodies here."""
    actions = []
    for entry in cfg.adversary:
        kind = MsgKind(entry["target"])
        if entry["action"] == "tamper":
            bit = entry["bit"]
            if bit >= body_length(group, kind) * 8:
                raise ConfigError(
                    f"tamper bit {bit} outside a {kind.value} body")
            actions.append(TamperAction(kind=kind, bit=bit,
                                        occurrence=entry.get("occurrence", 0)))
        elif entry["action"] == "replay":
            actions.append(ReplayAction(kind=kind,
                                        occurrence=entry.get("occurrence", 0),
                                        delay_us=entry.get("delay_us", 0)))
        else:
            if kind is MsgKind.PAIRWISE_CIPHER:
                # Random valid group elements: they decode fine and then
                # fail the decapsulation consistency check.
                body = b"".join(
                    group.encode_element(
                        group.exp(group.generator, group.random_scalar(rng)))
                    for _ in range(2))
            else:
                body = rng.randbytes(body_length(group, kind))
            actions.append(ForgeAction(kind=kind, body=body,
                                       receiver=entry.get("receiver"),
                                       sender=SECU_ID,
                                       at_us=entry.get("at_us", 0)))
    return actions


# -- key parameter files ------------------------------------------------------

# Sanctioned key lifetimes, recorded with provisioning output as advisory
# metadata; nothing in the simulator enforces them.
CRYPTOPERIODS_YEARS = {
    "private_key_agreement": 2,
    "public_key_agreement": 2,
    "symmetric_authentication": 2,
    "symmetric_data_encryption": 5,
}


def write_keyfile(path: str, group: Group, keypairs: list[kem.EcuKeyPair]) -> None:
    """Persist provisioning output; hex plaintext, simulation use only."""
    data = {
        "simulation_only": True,
        "group": group.name,
        "cryptoperiods_years": CRYPTOPERIODS_YEARS,
        "keypairs": [
            {
                "ecu_id": kp.ecu_id,
                "x": f"{kp.key_exp:x}",
                "y": f"{kp.bind_exp:x}",
                "u": f"{kp.pub_key.value:x}",
                "v": f"{kp.pub_bind.value:x}",
            }
            for kp in keypairs
        ],
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_keyfile(path: str, group: Group, n: int) -> list[kem.EcuKeyPair]:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load keyfile {path}: {exc}") from exc
    if data.get("group") != group.name:
        raise ConfigError(
            f"keyfile group {data.get('group')!r} does not match {group.name!r}")
    entries = data.get("keypairs", [])
    if len(entries) < n:
        raise ConfigError(f"keyfile holds {len(entries)} keypairs, need {n}")
    keypairs = []
    for entry in entries[:n]:
        try:
            kp = kem.EcuKeyPair(
                ecu_id=entry["ecu_id"],
                key_exp=int(entry["x"], 16),
                bind_exp=int(entry["y"], 16),
                pub_key=group.element(int(entry["u"], 16)),
                pub_bind=group.element(int(entry["v"], 16)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"malformed keyfile entry: {exc}") from exc
        if group.exp(group.generator, kp.key_exp) != kp.pub_key or \
                group.exp(group.generator, kp.bind_exp) != kp.pub_bind:
            raise ConfigError(
                f"keyfile entry {kp.ecu_id} has inconsistent public values")
        keypairs.append(kp)
    return keypairs


# -- scenario execution -------------------------------------------------------

def _honest_frame_count(group: Group, n: int) -> int:
    per_kind = {
        MsgKind.PAIRWISE_CIPHER: n,
        MsgKind.GROUP_SECRET: n,
        MsgKind.SEED_BROADCAST: 1,
    }
    total = 0
    for kind, count in per_kind.items():
        body = body_length(group, kind)
        total += count * max(1, -(-body // FRAME_DATA_MAX))
    return total


def run_scenario(cfg: ScenarioConfig, trace_path: Optional[str] = None,
                 strict: bool = True) -> SimReport:
    """Run the full key establishment under a scenario config.

    Raises:
        DeadlockError: a stage could not complete and nothing explains why
            it should not (wiring bug), or the elected seed sender was left
            without a group secret (adversary-induced stall).
        RunCheckError: with ``strict``, a run-level check failed; the report
            rides on the exception for persistence.
    """
    group = get_group(cfg.group)
    profile_name, latency = load_latency_profile(cfg.latency_profile)
    keygen_rng = Random(f"canvault:{cfg.rng_seed}:keygen")
    proto_rng = Random(f"canvault:{cfg.rng_seed}:protocol")
    adversary_rng = Random(f"canvault:{cfg.rng_seed}:adversary")

    if cfg.keyfile is not None:
        keypairs = load_keyfile(cfg.keyfile, group, cfg.n_ecus)
    else:
        keypairs = [kem.keygen(group, i, keygen_rng) for i in range(cfg.n_ecus)]

    secu = Secu(group, [(kp.ecu_id, kp.public) for kp in keypairs])
    ecus = [Ecu(group, kp, ctr_max=cfg.ctr_max,
                replay_cache_size=cfg.replay_cache_size) for kp in keypairs]
    by_id = {e.ecu_id: e for e in ecus}

    net = Network(BusConfig(cfg.bitrate_bps, cfg.frame_overhead_bits), latency,
                  keep_trace=trace_path is not None)
    net.add_secu(secu)
    for ecu in ecus:
        net.add_ecu(ecu)
    for action in _parse_adversary(cfg, group, adversary_rng):
        net.inject_adversary(action)

    phase_times = {}

    def run_stage(name: str, sender_id: int, msgs) -> None:
        start = net.now
        net.schedule_protocol_send(sender_id, msgs, start)
        end = net.run_to_quiescence()
        phase_times[name] = {"start_us": start, "end_us": end,
                             "elapsed_us": end - start}

    run_stage("pairwise", SECU_ID, secu.run_phase2(proto_rng))
    if all(e.pairwise is None for e in ecus) and not net.rejections:
        raise DeadlockError("no unit derived a pairwise secret and no "
                            "rejection explains the stall")

    run_stage("group_secret", SECU_ID, secu.run_phase3(proto_rng))

    sender_id = min(by_id) if cfg.phase4_sender is None else cfg.phase4_sender
    sender = by_id[sender_id]
    if sender.group_secret is None:
        raise DeadlockError(
            f"seed sender ecu{sender_id} holds no group secret; "
            "the session phase cannot start")
    run_stage("session", sender_id, [sender.run_phase4(proto_rng)])

    if cfg.post_ticks:
        start = net.now
        for i in range(cfg.post_ticks):
            net.schedule_data_frame(ecus[i % len(ecus)].ecu_id, start)
        net.run_to_quiescence()

    # -- assemble the report ------------------------------------------------
    report = SimReport(group=cfg.group, n_ecus=cfg.n_ecus, rng_seed=cfg.rng_seed,
                       latency_profile=profile_name)
    report.logical_messages = net.logical_messages
    report.frames = net.frames
    report.data_frames = net.data_frames
    report.phase_times = phase_times
    report.rejections = list(net.rejections)
    report.refresh_events = max(
        (e.session.round_index for e in ecus if e.session is not None), default=0)

    pairwise_ok = all(e.pairwise == secu.pairwise[e.ecu_id] and
                      e.pairwise is not None for e in ecus)
    group_ok = secu.group_secret is not None and \
        all(e.group_secret == secu.group_secret for e in ecus)
    sessions = [e.session for e in ecus]
    session_ok = all(s is not None for s in sessions) and len(
        {(s.session_key, s.round_index) for s in sessions}) == 1
    report.converged = {"pairwise": pairwise_ok, "group_secret": group_ok,
                        "session": session_ok}
    report.partially_keyed = not (pairwise_ok and group_ok and session_ok)

    report.expected_messages = expected_messages(Scheme.OURS, cfg.n_ecus)
    honest = not cfg.adversary
    checks = {
        "message_count": net.logical_messages == report.expected_messages,
        "frame_accounting": net.frames >= net.logical_messages and (
            not honest or net.frames == _honest_frame_count(group, cfg.n_ecus)),
        "convergence": not report.partially_keyed or (
            bool(cfg.adversary) and len(net.rejections) > 0),
    }
    report.checks = checks
    report.comparison = comparison_table([cfg.n_ecus])
    report.computation_tally_us = {
        scheme.value: tally
        for scheme in Scheme
        if (tally := computation_tally_us(scheme, latency["secu"])) is not None
    }

    if trace_path is not None:
        net.write_trace_csv(trace_path)
    if strict and not all(checks.values()):
        failed = sorted(name for name, ok in checks.items() if not ok)
        raise RunCheckError(f"run checks failed: {failed}", report=report)
    return report
