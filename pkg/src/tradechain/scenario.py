"""Line-oriented scenario scripts.

One step per line, shell-style quoting, ``#`` starts a comment::

    actor seller trader
    bootstrap
    onboard seller
    create seller CID-001 type=grain quantity=100 price=25

Positional arguments come first, ``key=value`` options after.  Parsing checks
that every actor and token is declared before use; execution stops at the
first failing step.
"""

from __future__ import annotations

import os
import shlex
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

from .crypto_math import SecurityProfile, TEST_PROFILE
from .errors import ExpectationFailed, ProofRejected, ScenarioParseError, StepFailure, TradeChainError
from .network import ACTOR_KINDS, Network, Summary
from .query import params

SEED_ENV = "TRADECHAIN_SEED"


@dataclass(frozen=True)
class Step:
    line: int
    command: str
    args: tuple[str, ...]
    options: dict = field(default_factory=dict)

    def text(self) -> str:
        opts = [f"{k}={shlex.quote(v)}" for k, v in self.options.items()]
        return " ".join([self.command, *map(shlex.quote, self.args), *opts])


@dataclass(frozen=True)
class Scenario:
    steps: tuple[Step, ...]
    seed: int = 0
    name: str = "scenario"


# command -> (positional names, allowed options, positions holding actor names)
_GRAMMAR: dict[str, tuple[tuple[str, ...], frozenset, tuple[int, ...]]] = {
    "seed": (("value",), frozenset(), ()),
    "actor": (("name", "kind"), frozenset(), ()),
    "bootstrap": ((), frozenset(), ()),
    "onboard": (("actor",), frozenset(), (0,)),
    "new_verinym": (("actor",), frozenset(), (0,)),
    "publish_schema": (("actor", "name", "version", "attributes"), frozenset(), (0,)),
    "publish_cred_def": (("issuer", "schema"), frozenset(), (0,)),
    "issue_credential": (("issuer", "holder"), None, (0, 1)),
    "revoke": (("issuer", "holder"), frozenset(), (0, 1)),
    "register_trader": (("trader", "issuer"), frozenset({"predicate", "expect"}), (0, 1)),
    "create": (("trader", "cid"), frozenset({"type", "quantity", "price", "notes"}), (0,)),
    "trade": (("seller", "buyer", "cid"), frozenset({"type", "quantity", "price", "notes"}), (0, 1)),
    "issue_token": (("trader", "requester", "token"),
                    frozenset({"fields", "grant", "uses", "expiry", "policy", "cid", "max_records"}), (0, 1)),
    "query": (("requester", "token"), frozenset({"expect"}), (0,)),
    "delete_wallet": (("actor",), frozenset(), (0,)),
}

_REQUIRED = {
    "create": frozenset({"type", "quantity", "price"}),
    "trade": frozenset({"type", "quantity", "price"}),
}


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    steps: list[Step] = []
    actors: set[str] = set()
    tokens: set[str] = set()
    seed = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        try:
            words = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise ScenarioParseError(str(exc), lineno) from None
        if not words:
            continue
        command, rest = words[0], words[1:]
        if command not in _GRAMMAR:
            raise ScenarioParseError(f"unknown step {command!r}", lineno)
        names, allowed, actor_slots = _GRAMMAR[command]
        args = tuple(w for w in rest if "=" not in w)
        options = dict(w.split("=", 1) for w in rest if "=" in w)
        if len(args) != len(names):
            raise ScenarioParseError(f"{command} takes {len(names)} argument(s): {' '.join(names) or '-'}", lineno)
        if allowed is not None and set(options) - allowed:
            raise ScenarioParseError(f"unknown option(s) {sorted(set(options) - allowed)} for {command}", lineno)
        missing = _REQUIRED.get(command, frozenset()) - set(options)
        if missing:
            raise ScenarioParseError(f"{command} needs option(s) {sorted(missing)}", lineno)
        for slot in actor_slots:
            if args[slot] not in actors:
                raise ScenarioParseError(f"actor {args[slot]!r} is not declared", lineno)
        if command == "seed":
            try:
                seed = int(args[0])
            except ValueError:
                raise ScenarioParseError("seed must be an integer", lineno) from None
            continue
        if command == "actor":
            if args[1] not in ACTOR_KINDS:
                raise ScenarioParseError(f"actor kind must be one of {ACTOR_KINDS}", lineno)
            if args[0] in actors:
                raise ScenarioParseError(f"actor {args[0]!r} declared twice", lineno)
            actors.add(args[0])
        if command == "issue_token":
            tokens.add(args[2])
        if command == "query" and args[1] not in tokens:
            raise ScenarioParseError(f"token {args[1]!r} is not issued before use", lineno)
        steps.append(Step(lineno, command, args, options))
    return Scenario(tuple(steps), seed, name)


def load_scenario(path: str | os.PathLike) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), path.stem)


def demo_scenario_text() -> str:
    return resources.files("tradechain").joinpath("scenarios/demo.tcs").read_text(encoding="utf-8")


def demo_scenario() -> Scenario:
    return parse_scenario(demo_scenario_text(), "demo")


def effective_seed(scenario_seed: int, override: int | None = None) -> int:
    if override is not None:
        return override
    env = os.environ.get(SEED_ENV)
    return int(env) if env not in (None, "") else scenario_seed


def _value(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def _fields(text: str) -> tuple[str, ...]:
    return tuple(f for f in text.split(",") if f)


class Runner:
    """Executes steps against a :class:`Network`."""

    def __init__(self, network: Network, on_step: Optional[Callable[[int, Step], None]] = None):
        self.net = network
        self.on_step = on_step

    def run(self, steps) -> None:
        for index, step in enumerate(steps):
            if self.on_step:
                self.on_step(index, step)
            try:
                self.execute(step)
            except (TradeChainError, ValueError, KeyError) as exc:
                raise StepFailure(index, step.text(), exc) from exc

    def execute(self, step: Step) -> None:
        net, a, o = self.net, step.args, step.options
        c = step.command
        if c == "actor":
            net.add_actor(a[0], a[1])
        elif c == "bootstrap":
            net.bootstrap()
        elif c == "onboard":
            net.onboard(a[0])
        elif c == "new_verinym":
            net.new_verinym(a[0])
        elif c == "publish_schema":
            net.publish_schema(a[0], a[1], a[2], _fields(a[3]))
        elif c == "publish_cred_def":
            net.publish_cred_def(a[0], a[1])
        elif c == "issue_credential":
            net.issue_credential(a[0], a[1], {k: _value(v) for k, v in o.items()})
        elif c == "revoke":
            net.revoke(a[0], a[1])
        elif c == "register_trader":
            attr, threshold = None, 0
            if "predicate" in o:
                attr, _, rhs = o["predicate"].partition(">=")
                threshold = int(rhs)
            expect = o.get("expect", "registered")
            try:
                net.register_trader(a[0], a[1], attr, threshold)
                outcome = "registered"
            except ProofRejected as exc:
                if expect == "registered":
                    raise
                outcome = exc.reason
            if outcome != expect and not (expect == "rejected" and outcome != "registered"):
                raise ExpectationFailed(f"registration outcome {outcome!r}, expected {expect!r}")
        elif c == "create":
            net.create(a[0], a[1], o["type"], int(o["quantity"]), int(o["price"]), o.get("notes", ""))
        elif c == "trade":
            net.trade(a[0], a[1], a[2], o["type"], int(o["quantity"]), int(o["price"]), o.get("notes", ""))
        elif c == "issue_token":
            def p(text):
                return params(*_fields(text), cid=o.get("cid"),
                              max_records=int(o["max_records"]) if "max_records" in o else None)
            grant = p(o.get("grant", o.get("fields", "")))
            ask = p(o.get("fields", o.get("grant", "")))
            kwargs = {"policy": o["policy"]} if "policy" in o else {}
            net.issue_token(a[0], a[1], a[2], grant, ask, uses=int(o.get("uses", 1)),
                            expiry_in=int(o.get("expiry", 100_000)), **kwargs)
        elif c == "query":
            result = net.query(a[0], a[1])
            if "expect" in o and result.count != int(o["expect"]):
                raise ExpectationFailed(f"query returned {result.count} records, expected {o['expect']}")
        elif c == "delete_wallet":
            net.delete_wallet(a[0])
        else:  # pragma: no cover - grammar and dispatcher disagree
            raise ScenarioParseError(f"no executor for {c!r}", step.line)


@dataclass
class RunOutcome:
    network: Network
    summary: Summary
    exit_code: int
    error: Optional[StepFailure] = None


def run_scenario(scenario: Scenario | str | os.PathLike, seed: int | None = None,
                 profile: SecurityProfile = TEST_PROFILE) -> RunOutcome:
    """Run a scenario; protocol failures become a nonzero exit code, parse errors raise."""
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    net = Network(seed=effective_seed(scenario.seed, seed), profile=profile)
    try:
        Runner(net).run(scenario.steps)
    except StepFailure as exc:
        summary = net.summary() if net.tml is not None else Summary(chains_ok=False)
        return RunOutcome(net, summary, 1, exc)
    return RunOutcome(net, net.summary(), 0)
