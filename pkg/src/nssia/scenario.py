"""Scenario files: a seed plus an ordered list of protocol steps.

A scenario is JSON of the form

    {"seed": 7, "steps": [{"op": "digitize", "np": "alice"}, ...]}

Ops: init (sizing overrides, first step only), digitize, generate, audit,
log, tamper. People are enrolled on first mention with biometrics drawn
from the run's seeded randomness, so identical scenarios replay identically.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .avatar import DigitalAvatar, avatar_id
from .crypto import verify
from .errors import NssiaError
from .ledger import Transaction
from .protocol import NaturalPerson
from .statedir import SimulationState

_OPS = ("init", "digitize", "generate", "audit", "log", "tamper")
_TAMPER_TARGETS = ("da", "ledger")


class ScenarioInvalid(NssiaError):
    """Scenario file is not valid: unknown op, bad shape, missing field."""


class TamperDetected(NssiaError):
    """A tamper drill was detected by verification (the desired outcome)."""

    def __init__(self, message: str, findings: list[dict] | None = None):
        super().__init__(message)
        self.findings = findings or []


@dataclass(frozen=True)
class Scenario:
    seed: int | None
    steps: tuple[dict, ...]

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        if not isinstance(data, dict) or not isinstance(data.get("steps"), list):
            raise ScenarioInvalid('scenario must be an object with a "steps" list')
        seed = data.get("seed")
        if seed is not None and not isinstance(seed, int):
            raise ScenarioInvalid("seed must be an integer")
        steps = []
        for position, step in enumerate(data["steps"]):
            if not isinstance(step, dict) or step.get("op") not in _OPS:
                raise ScenarioInvalid(f"step {position}: op must be one of {', '.join(_OPS)}")
            if step["op"] == "init" and position != 0:
                raise ScenarioInvalid("init must be the first step")
            if step["op"] in ("digitize", "generate") and not step.get("np"):
                raise ScenarioInvalid(f'step {position}: {step["op"]} needs "np"')
            if step["op"] == "audit" and not (step.get("np") or step.get("dai")):
                raise ScenarioInvalid(f'step {position}: audit needs "np" or "dai"')
            if step["op"] == "log" and not step.get("action"):
                raise ScenarioInvalid(f'step {position}: log needs "action"')
            if step["op"] == "tamper" and step.get("target") not in _TAMPER_TARGETS:
                raise ScenarioInvalid(
                    f'step {position}: tamper target must be one of {", ".join(_TAMPER_TARGETS)}'
                )
            steps.append(step)
        return cls(seed=seed, steps=tuple(steps))

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioInvalid(f"{path}: not valid JSON: {exc}") from exc
        return cls.from_dict(data)


@dataclass
class StepOutcome:
    op: str
    detail: dict = field(default_factory=dict)


def run_scenario(
    state: SimulationState, scenario: Scenario, *, fresh: bool = False
) -> list[StepOutcome]:
    """Execute every step against ``state``; timings accumulate per phase.

    Tamper detections are collected and raised as TamperDetected after the
    last step so a drill scenario still executes fully.
    """
    system = state.system
    outcomes: list[StepOutcome] = []
    tamper_findings: list[dict] = []

    def timed(phase: str, fn):
        start = time.perf_counter()
        result = fn()
        state.timings[phase]["seconds"] += time.perf_counter() - start
        state.timings[phase]["ops"] += 1
        return result

    def person_for(step: dict, enroll: bool = False) -> NaturalPerson:
        name = step.get("np")
        if not name:
            raise ScenarioInvalid(f'{step["op"]} step needs "np"')
        if name not in state.people:
            if not enroll:
                raise ScenarioInvalid(f"unknown person {name!r}")
            state.people[name] = NaturalPerson.enroll(name, system.rng)
        return state.people[name]

    for step in scenario.steps:
        op = step["op"]
        if op == "init":
            if not fresh:
                raise ScenarioInvalid("state dir is already initialized; drop the init step")
            outcomes.append(StepOutcome(op, {"params": dict(step.get("params", {}))}))
        elif op == "digitize":
            person = person_for(step, enroll=True)
            tnum, _ = timed("digitization", lambda: system.digitize(person))
            outcomes.append(StepOutcome(op, {"np": person.name, "tnum": tnum.hex()}))
        elif op == "generate":
            person = person_for(step)
            tolerance = float(step.get("tolerance", 0.0))
            noise = float(step.get("face_noise", 0.0))
            live = person.live_face(noise, system.rng)
            avatar, _ = timed(
                "generation", lambda: system.generate(person, live_face=live, tolerance=tolerance)
            )
            outcomes.append(
                StepOutcome(op, {"np": person.name, "avatar_id": avatar_id(avatar).hex()})
            )
        elif op == "audit":
            digest_ = _audit_subject(state, step)
            regulator = int(step.get("ra", 1))
            result = timed("accountability", lambda: system.audit(regulator, digest_))
            detail = {"avatar_id": digest_.hex(), "ra": regulator, "tid": result.audit_tid.hex()}
            name = step.get("np")
            if name and name in state.people:
                if result.recovered_metadata != state.people[name].md:
                    raise NssiaError(f"audit of {name} recovered mismatching metadata")
                detail["recovered"] = "verified"
            outcomes.append(StepOutcome(op, detail))
        elif op == "log":
            subject = step.get("subject")
            if not subject:
                person = person_for(step)
                subject = (
                    avatar_id(person.avatar).hex() if person.avatar is not None else person.name
                )
            position = system.log_behavior(subject, step["action"])
            outcomes.append(StepOutcome(op, {"subject": subject, "position": position}))
        elif op == "tamper":
            finding = _tamper(state, step)
            tamper_findings.append(finding)
            outcomes.append(StepOutcome(op, finding))

    if tamper_findings:
        raise TamperDetected(
            f"{len(tamper_findings)} tamper drill(s) detected by verification", tamper_findings
        )
    return outcomes


def _audit_subject(state: SimulationState, step: dict) -> bytes:
    if step.get("dai"):
        try:
            return bytes.fromhex(step["dai"])
        except ValueError as exc:
            raise ScenarioInvalid(f"bad avatar id hex: {step['dai']!r}") from exc
    person = state.people.get(step["np"])
    if person is None or person.avatar is None:
        raise ScenarioInvalid(f"{step['np']!r} has no generated avatar to audit")
    return avatar_id(person.avatar)


def _tamper(state: SimulationState, step: dict) -> dict:
    """Flip one byte, then run the verification that must catch it."""
    system = state.system
    if step["target"] == "da":
        name = step.get("np")
        person = state.people.get(name or "")
        if person is None or person.avatar is None or person.avatar.signature is None:
            raise ScenarioInvalid(f"tamper target {name!r} has no signed avatar")
        avatar = person.avatar
        modules = list(avatar.modules)
        which = step.get("module")
        which = system.rng.randrange(len(modules)) if which is None else which % len(modules)
        body = bytearray(modules[which])
        offset = step.get("byte")
        offset = system.rng.randrange(len(body)) if offset is None else offset % len(body)
        body[offset] ^= 0x01
        modules[which] = bytes(body)
        tampered = DigitalAvatar(modules=tuple(modules))
        detected = not verify(
            tampered.canonical_bytes(), avatar.signature, system.generator.keys.public_bytes
        )
        if not detected:
            raise NssiaError("avatar tampering went undetected")
        return {"target": "da", "np": name, "module": which, "byte": offset, "detected": True}

    position = step.get("position")
    if len(system.ledger) == 0:
        raise ScenarioInvalid("cannot tamper with an empty ledger")
    if position is None:
        position = system.rng.randrange(len(system.ledger))
    position %= len(system.ledger)
    original = system.ledger._txs[position]
    mangled = bytearray(original.signature)
    mangled[0] ^= 0x01
    system.ledger._txs[position] = Transaction(
        kind=original.kind,
        tid=original.tid,
        input_address=original.input_address,
        prev_tid=original.prev_tid,
        output_address=original.output_address,
        payload=original.payload,
        signature=bytes(mangled),
    )
    findings = system.ledger.verify_chain()
    system.ledger._txs[position] = original  # drill over; restore the honest record
    if not findings:
        raise NssiaError("ledger tampering went undetected")
    return {
        "target": "ledger",
        "position": position,
        "detected": True,
        "findings": [f.code for f in findings],
    }
