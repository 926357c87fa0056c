"""``tradechain`` command line.

A deployment directory holds the seed, the security profile and the list of
steps executed so far.  Every command rebuilds the in-memory network by
replaying those steps (the run is deterministic), applies its own step,
appends it on success and rewrites the ledger exports.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .bench import DEFAULT_RATES, TX_KINDS, bench_overheads, bench_throughput, export_report, report_csv
from .crypto_math import get_profile
from .errors import ScenarioParseError, StepFailure, TradeChainError
from .ledger_core import read_export, verify_chain
from .query import AccessToken, sign_request, token_hash
from .scenario import Runner, Scenario, demo_scenario, effective_seed, load_scenario, parse_scenario
from .network import Network
from .tml import history_request

CONFIG_FILE = "deployment.txt"
STEPS_FILE = "steps.tcs"
EXPORTS = {"idml": "idml.log", "tml": "tml.log"}

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


# --------------------------------------------------------------------------
# deployment directory
# --------------------------------------------------------------------------

class Deployment:
    def __init__(self, directory: Path, seed: int, profile: str):
        self.directory = directory
        self.seed = seed
        self.profile = profile

    @classmethod
    def create(cls, directory: Path, seed: int, profile: str) -> "Deployment":
        directory.mkdir(parents=True, exist_ok=True)
        if (directory / CONFIG_FILE).exists():
            raise FileExistsError(f"{directory} already holds a deployment")
        (directory / CONFIG_FILE).write_text(f"seed = {seed}\nprofile = {profile}\n", encoding="utf-8")
        (directory / STEPS_FILE).write_text("", encoding="utf-8")
        return cls(directory, seed, profile)

    @classmethod
    def open(cls, directory: Path) -> "Deployment":
        cfg = {}
        for line in (directory / CONFIG_FILE).read_text(encoding="utf-8").splitlines():
            key, _, value = line.partition("=")
            cfg[key.strip()] = value.strip()
        return cls(directory, int(cfg["seed"]), cfg["profile"])

    def steps_text(self) -> str:
        return (self.directory / STEPS_FILE).read_text(encoding="utf-8")

    def load(self) -> Network:
        net = Network(seed=self.seed, profile=get_profile(self.profile))
        Runner(net).run(parse_scenario(self.steps_text()).steps)
        return net

    def apply(self, lines: Sequence[str]) -> Network:
        """Replay, then run ``lines``; persisted only if they all succeed."""
        text = self.steps_text()
        scenario = parse_scenario(text + "".join(line + "\n" for line in lines))
        net = Network(seed=self.seed, profile=get_profile(self.profile))
        Runner(net).run(scenario.steps)
        with open(self.directory / STEPS_FILE, "a", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
        self.write_exports(net)
        return net

    def write_exports(self, net: Network) -> None:
        if net.idml is None:
            return
        net.idml.ledger.export(self.directory / EXPORTS["idml"])
        net.tml.ledger.export(self.directory / EXPORTS["tml"])
        (self.directory / "genesis.txt").write_text(net.idml.genesis.to_text(), encoding="utf-8")


def save_scenario_run(directory: Path, scenario: Scenario, seed: int, profile: str, net: Network) -> None:
    dep = Deployment.create(directory, seed, profile)
    with open(directory / STEPS_FILE, "w", encoding="utf-8") as fh:
        for step in scenario.steps:
            fh.write(step.text() + "\n")
    dep.write_exports(net)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _out(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _err(text: str) -> None:
    sys.stderr.write(text + "\n")


def cmd_bootstrap(args) -> int:
    seed = effective_seed(args.seed if args.seed is not None else 0)
    dep = Deployment.create(Path(args.dir), seed, args.profile)
    net = dep.apply(["bootstrap"])
    _out(f"bootstrapped {args.dir} (seed {seed})")
    _out(f"steward_did={net.steward.verinym}")
    _out(f"tml_admin_did={net.admin.agent.verinym}")
    _out(f"qsc_did={net.qsc.did}")
    return EXIT_OK


def cmd_step(args) -> int:
    dep = Deployment.open(Path(args.dir))
    net = dep.apply(args.lines)
    for line in net.summary().lines():
        _out(line)
    return EXIT_OK


def _resolve_scenario(name: str) -> Scenario:
    if name == "demo" and not Path(name).exists():
        return demo_scenario()
    return load_scenario(name)


def cmd_run(args) -> int:
    from .scenario import run_scenario

    scenario = _resolve_scenario(args.scenario)
    seed = effective_seed(scenario.seed, args.seed)
    outcome = run_scenario(scenario, seed=seed, profile=get_profile(args.profile))
    for line in outcome.summary.lines():
        _out(line)
    if outcome.error is not None:
        _err(f"error: {outcome.error} [{getattr(outcome.error.cause, 'code', 'error')}]")
    if args.dir:
        save_scenario_run(Path(args.dir), scenario, seed, args.profile, outcome.network)
    return outcome.exit_code


def cmd_bench_overheads(args) -> int:
    report = bench_overheads(get_profile(args.profile), runs=args.runs, seed=args.seed)
    _emit_report(report, args.out)
    return EXIT_OK


def cmd_bench_throughput(args) -> int:
    kinds = [k for k in args.kinds.split(",") if k]
    rates = [float(r) for r in args.rates.split(",") if r]
    report = bench_throughput(kinds, rates, duration_ms=args.duration_ms, profile=get_profile(args.profile),
                              seed=args.seed, samples=args.samples)
    _emit_report(report, args.out)
    return EXIT_OK


def _emit_report(report, out: str | None) -> None:
    if out:
        export_report(report, out)
        _out(f"wrote {out}")
    else:
        _out(report_csv(report))


def cmd_ledger_export(args) -> int:
    net = Deployment.open(Path(args.dir)).load()
    ledger = net.idml.ledger if args.ledger == "idml" else net.tml.ledger
    if args.out:
        ledger.export(args.out)
        _out(f"wrote {len(ledger)} entries to {args.out}")
    else:
        for line in ledger.export_lines():
            _out(line)
    return EXIT_OK


def cmd_ledger_verify(args) -> int:
    try:
        entries = read_export(args.path)
    except (TradeChainError, ValueError, TypeError, KeyError) as exc:
        _out(f"INVALID {args.path}: {exc}")
        return EXIT_FAILURE
    if not verify_chain(entries):
        _out(f"INVALID {args.path}: hash chain broken")
        return EXIT_FAILURE
    _out(f"OK {args.path}: {len(entries)} entries")
    return EXIT_OK


def cmd_token_issue(args) -> int:
    dep = Deployment.open(Path(args.dir))
    opts = [f"fields={args.fields}", f"uses={args.uses}", f"expiry={args.expiry}"]
    for key in ("grant", "policy", "cid", "max_records"):
        value = getattr(args, key)
        if value is not None:
            opts.append(f"{key}={shlex.quote(str(value))}")
    net = dep.apply([" ".join(["issue_token", args.trader, args.requester, args.name, *opts])])
    token = net.tokens[args.name]
    armored = token.armor()
    if args.out:
        Path(args.out).write_text(armored + "\n", encoding="ascii")
        _out(f"wrote token {args.name} ({token_hash(token).hex()}) to {args.out}")
    else:
        _out(armored)
    return EXIT_OK


def cmd_query_run(args) -> int:
    dep = Deployment.open(Path(args.dir))
    token = AccessToken.unarmor(Path(args.token).read_text(encoding="ascii"))
    net = dep.load()
    name = next((n for n, t in net.tokens.items() if t == token), None)
    if name is not None:
        net = dep.apply([f"query {args.requester} {name}"])
        result = net.results[-1]
    else:
        # not a token this deployment issued verbatim: run it without persisting
        agent = net.actor(args.requester)
        result = net.qsc.execute_query(token, agent.verinym, sign_request(agent, token))
    payload = {"token_hash": result.token_hash.hex(), "count": result.count,
               "records": [r.to_record() for r in result.records]}
    _out(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_tml_inspect(args) -> int:
    net = Deployment.open(Path(args.dir)).load()
    if args.as_ == "qsc":
        state = net.tml.commodity_history(args.cid, capability=net.qsc._capability)
    else:
        agent = net.actor(args.as_)
        parties = {d.did for d in agent.wallet.dids()}
        mine = next((e for e in _history_dids(net, args.cid) if e in parties), None)
        if mine is None:
            _err(f"error: {args.as_} is neither a party to {args.cid} nor the auditor [unauthorized]")
            return EXIT_FAILURE
        state = net.tml.commodity_history(args.cid, requester=mine,
                                          signature=agent.wallet.sign(mine, history_request(args.cid, mine)))
    _out(f"CID {state.cid}")
    _out(f"owner {state.owner}")
    for entry in state.history:
        p = entry.payload_value()
        parties = p.get("DID_v") or f"{p['DID_p_SB']} -> {p['DID_p_BS']}"
        _out(f"  seq={entry.seq} t={entry.timestamp} {entry.tx_type} H_data={p['H_data'].hex()[:16]} {parties}")
    return EXIT_OK


def _history_dids(net: Network, cid: str) -> list[str]:
    out = []
    for e in net.tml.ledger.entries():
        if e.tx_type in ("TX_cr", "TX_tr"):
            p = e.payload_value()
            if p["CID"] == cid:
                out += [d for d in (p.get("DID_v"), p.get("DID_p_SB"), p.get("DID_p_BS")) if d]
    return out


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tradechain", description="TradeChain ledgers, scenarios and benchmarks")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def profile(sp, default="test"):
        sp.add_argument("--profile", choices=("test", "default"), default=default,
                        help=f"security profile (default: {default})")

    sp = sub.add_parser("bootstrap", help="create a deployment directory with both genesis records")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--seed", type=int)
    profile(sp)
    sp.set_defaults(func=cmd_bootstrap)

    sp = sub.add_parser("step", help="append scenario lines to a deployment and run them")
    sp.add_argument("--dir", required=True)
    sp.add_argument("lines", nargs="+", help="one quoted scenario line per argument")
    sp.set_defaults(func=cmd_step)

    sp = sub.add_parser("run", help="run a scenario script ('demo' for the bundled one)")
    sp.add_argument("scenario")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--dir", help="save the run as a deployment directory")
    profile(sp)
    sp.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="benchmarks").add_subparsers(dest="bench", required=True)
    sp = bench.add_parser("overheads", help="per-function time overheads")
    sp.add_argument("--runs", type=int, default=10)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out")
    profile(sp, "default")
    sp.set_defaults(func=cmd_bench_overheads)
    sp = bench.add_parser("throughput", help="throughput and latency over a send-rate sweep")
    sp.add_argument("--kinds", default=",".join(TX_KINDS))
    sp.add_argument("--rates", default=",".join(str(r) for r in DEFAULT_RATES))
    sp.add_argument("--duration-ms", type=float, default=5000.0)
    sp.add_argument("--samples", type=int, default=60)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out")
    profile(sp, "default")
    sp.set_defaults(func=cmd_bench_throughput)

    ledger = sub.add_parser("ledger", help="ledger exports").add_subparsers(dest="ledger_cmd", required=True)
    sp = ledger.add_parser("export", help="export a deployment's ledger")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--ledger", choices=tuple(EXPORTS), required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ledger_export)
    sp = ledger.add_parser("verify", help="check an export's hash chain")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_ledger_verify)

    token = sub.add_parser("token", help="access tokens").add_subparsers(dest="token_cmd", required=True)
    sp = token.add_parser("issue", help="issue a token from a trader to a requester")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--trader", required=True)
    sp.add_argument("--requester", required=True)
    sp.add_argument("--name", required=True)
    sp.add_argument("--fields", required=True, help="Param_j, comma separated")
    sp.add_argument("--grant", help="Param_i if wider than Param_j")
    sp.add_argument("--uses", type=int, default=1)
    sp.add_argument("--expiry", type=int, default=100_000, help="validity in ms from now")
    sp.add_argument("--policy")
    sp.add_argument("--cid")
    sp.add_argument("--max-records", dest="max_records", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_token_issue)

    query = sub.add_parser("query", help="queries").add_subparsers(dest="query_cmd", required=True)
    sp = query.add_parser("run", help="run a query with a token file")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--requester", required=True)
    sp.add_argument("--token", required=True)
    sp.set_defaults(func=cmd_query_run)

    tml = sub.add_parser("tml", help="TML views").add_subparsers(dest="tml_cmd", required=True)
    sp = tml.add_parser("inspect", help="commodity history (owners and the QSC auditor only)")
    sp.add_argument("cid")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--as", dest="as_", required=True, help="actor name, or 'qsc'")
    sp.set_defaults(func=cmd_tml_inspect)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        _err(f"error: {exc} [{exc.code}]")
        return EXIT_USAGE
    except StepFailure as exc:
        _err(f"error: {exc} [{getattr(exc.cause, 'code', 'error')}]")
        return EXIT_FAILURE
    except TradeChainError as exc:
        _err(f"error: {exc} [{exc.code}]")
        return EXIT_FAILURE
    except ValueError as exc:
        _err(f"error: {exc} [invalid-argument]")
        return EXIT_USAGE
    except OSError as exc:
        _err(f"error: {exc} [io-error]")
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
