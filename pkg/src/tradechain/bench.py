"""Time-overhead and throughput/latency benchmarks.

Service times are measured by executing the real protocol code.  Throughput
and latency come from a discrete-event simulation in logical time driven by
those measured samples: open-loop fixed-rate clients, a batching orderer
(block cut on message count or timeout) and a serial committer for writes; a
single serial QSC worker for queries.  Running in logical time keeps the
orderings stable on shared CI machines.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import random
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from . import canonical
from .agents import onboard
from .crypto_math import TEST_PROFILE, SecurityProfile
from .ledger_core import sign_tx
from .network import Network
from .query import params, sign_request
from .scenario import Runner, demo_scenario
from .tml import LEDGER_NAME as TML_NAME
from .tml import TX_CR, TX_TR, CreateTx, TradeTx, commodity_hash, cr_preimage, owner_auth_preimage, tr_preimage
from .trading import create_commodity, trade_commodity

TX_KINDS = (TX_CR, TX_TR, "query_unfiltered", "query_filtered")
DEFAULT_RATES = (10, 50, 100, 150, 200, 250, 300, 350, 400, 450, 500)
THROUGHPUT_HEADER = ("kind", "rate_tps", "throughput_tps", "latency_ms")
TIMING_HEADER = ("function", "mean_ms", "median_ms", "runs")
MIN_RUNS = 10
COMPUTE_SUFFIX = ":compute"


@dataclass(frozen=True)
class OrderingModel:
    """Single orderer that cuts a block at ``max_message_count`` txs or after ``batch_timeout_ms``."""

    batch_timeout_ms: float = 2000.0
    max_message_count: int = 10

    def isolated_wait_ms(self) -> float:
        # a lone transaction never fills a block, so it waits out the timeout
        return self.batch_timeout_ms


@dataclass(frozen=True)
class TimingRow:
    function: str
    mean_ms: float
    median_ms: float
    runs: int


@dataclass(frozen=True)
class ThroughputRow:
    kind: str
    rate_tps: float
    throughput_tps: float
    latency_ms: float


@dataclass
class BenchReport:
    timings: list[TimingRow] = field(default_factory=list)
    throughput: list[ThroughputRow] = field(default_factory=list)

    def timing(self, function: str) -> TimingRow:
        for row in self.timings:
            if row.function == function:
                return row
        raise KeyError(function)

    def saturation(self, kind: str) -> float:
        """Highest achieved throughput for ``kind`` over the sweep."""
        return max(r.throughput_tps for r in self.throughput if r.kind == kind)

    def rows(self, kind: str) -> list[ThroughputRow]:
        return [r for r in self.throughput if r.kind == kind]


# --------------------------------------------------------------------------
# discrete-event simulation
# --------------------------------------------------------------------------

def fixed_rate_arrivals(rate_tps: float, duration_ms: float) -> list[float]:
    if rate_tps <= 0:
        raise ValueError("rate must be positive")
    gap = 1000.0 / rate_tps
    n = max(1, int(round(duration_ms * rate_tps / 1000.0)))
    return [i * gap for i in range(n)]


def simulate_writes(arrivals: Sequence[float], client: Sequence[float], commit: Sequence[float],
                    model: OrderingModel, rng: random.Random) -> list[tuple[float, float]]:
    """(send, commit) instants for each submitted write."""
    at_orderer = sorted((a + rng.choice(client), a) for a in arrivals)
    blocks: list[tuple[float, list[float]]] = []
    pending: list[float] = []
    opened = 0.0
    for t, sent in at_orderer:
        if pending and t > opened + model.batch_timeout_ms:
            blocks.append((opened + model.batch_timeout_ms, pending))
            pending = []
        if not pending:
            opened = t
        pending.append(sent)
        if len(pending) >= model.max_message_count:
            blocks.append((t, pending))
            pending = []
    if pending:
        blocks.append((opened + model.batch_timeout_ms, pending))
    out = []
    free = 0.0
    for cut, sends in blocks:
        start = max(cut, free)
        free = start + sum(rng.choice(commit) for _ in sends)
        out.extend((s, free) for s in sends)
    return out


def simulate_reads(arrivals: Sequence[float], service: Sequence[float],
                   rng: random.Random) -> list[tuple[float, float]]:
    """FIFO single-server queue; (send, done) per request."""
    out = []
    free = 0.0
    for a in arrivals:
        start = max(a, free)
        free = start + rng.choice(service)
        out.append((a, free))
    return out


def summarize(pairs: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """(throughput tps, mean latency ms) using first-send to last-completion as the span."""
    first = min(s for s, _ in pairs)
    last = max(d for _, d in pairs)
    span = max(last - first, 1e-9)
    return len(pairs) * 1000.0 / span, statistics.fmean(d - s for s, d in pairs)


# --------------------------------------------------------------------------
# measured service times
# --------------------------------------------------------------------------

def _ms(fn: Callable[[], object]) -> tuple[float, object]:
    t = time.perf_counter()
    out = fn()
    return (time.perf_counter() - t) * 1000.0, out


def bench_network(seed: int = 1, profile: SecurityProfile = TEST_PROFILE) -> Network:
    """Demo deployment minus the query, with a quota large enough for many trades."""
    net = Network(seed=seed, profile=profile, pseudonym_quota=1_000_000)
    Runner(net).run([s for s in demo_scenario().steps if s.command != "query"])
    return net


@dataclass
class ServiceSamples:
    client: dict[str, list[float]] = field(default_factory=dict)
    commit: dict[str, list[float]] = field(default_factory=dict)
    read: dict[str, list[float]] = field(default_factory=dict)


def measure_service(net: Network, samples: int = 60, prefix: str = "B") -> ServiceSamples:
    out = ServiceSamples()
    tml = net.tml
    seller, buyer = net.actor("seller"), net.actor("buyer")
    did_v = seller.verinym

    client, commit = [], []
    cids = []
    for i in range(samples):
        cid = f"{prefix}-cr-{i}"
        h_data, preimage = commodity_hash("grain", 10 + i, 20)

        def build():
            sig = seller.wallet.sign(did_v, cr_preimage(cid, h_data, did_v))
            data = canonical.encode(CreateTx(cid, h_data, did_v, sig).to_record())
            return data, sign_tx(seller.wallet.signer(did_v), TML_NAME, TX_CR, data, did_v)

        c_ms, (data, env_sig) = _ms(build)
        k_ms, _ = _ms(lambda: tml.submit_signed(TX_CR, data, did_v, env_sig))
        seller.wallet.store_data(h_data, preimage)
        seller.holdings[cid] = did_v
        client.append(c_ms)
        commit.append(k_ms)
        cids.append((cid, h_data, preimage))
    out.client[TX_CR], out.commit[TX_CR] = client, commit

    client, commit = [], []
    for cid, h_data, preimage in cids:
        c_sell, c_buy = onboard(seller, buyer)
        sb, bs = c_sell.my_did, c_buy.my_did

        def build():
            pre = tr_preimage(cid, h_data, sb, bs)
            tx = TradeTx(cid, h_data, sb, bs, seller.wallet.sign(sb, pre), buyer.wallet.sign(bs, pre))
            auth = seller.wallet.sign(did_v, owner_auth_preimage(cid, h_data, sb, bs))
            data = canonical.encode(tx.to_record())
            return data, sign_tx(seller.wallet.signer(sb), TML_NAME, TX_TR, data, sb), auth

        c_ms, (data, env_sig, auth) = _ms(build)
        k_ms, _ = _ms(lambda: tml.submit_signed(TX_TR, data, sb, env_sig, owner_auth=auth))
        for agent, did in ((seller, sb), (buyer, bs)):
            agent.wallet.mark_used(did)
            agent.wallet.store_data(h_data, preimage)
        seller.holdings.pop(cid, None)
        buyer.holdings[cid] = bs
        client.append(c_ms)
        commit.append(k_ms)
    out.client[TX_TR], out.commit[TX_TR] = client, commit

    auditor = net.actor("auditor")
    token = net.issue_token("seller", "auditor", f"{prefix}-bench-token",
                            params("CID", "commodity_type", "quantity", "unit_price", "timestamp"),
                            uses=1_000_000, expiry_in=10**12)
    sig = sign_request(auditor, token)
    now = net.clock.peek()
    unfiltered, filtered = [], []
    for _ in range(samples):
        # interleaved so both kinds see the same machine conditions
        unfiltered.append(_ms(lambda: net.qsc.retrieve(token, auditor.verinym, sig, now))[0])
        filtered.append(_ms(lambda: net.qsc.evaluate(token, auditor.verinym, sig, now))[0])
    out.read["query_unfiltered"], out.read["query_filtered"] = unfiltered, filtered
    return out


# --------------------------------------------------------------------------
# public entry points
# --------------------------------------------------------------------------

def _row(name: str, values: Sequence[float]) -> TimingRow:
    return TimingRow(name, statistics.fmean(values), statistics.median(values), len(values))


def bench_overheads(profile: SecurityProfile = TEST_PROFILE, runs: int = MIN_RUNS, seed: int = 1,
                    model: OrderingModel = OrderingModel(), network: Network | None = None) -> BenchReport:
    """Per-function times for the registration, trade, token and query groups.

    Functions that write to a ledger are reported with the orderer's wait for
    a lone transaction added once per sequential write; the raw compute time
    is reported alongside under the ``:compute`` suffix.
    """
    if runs < MIN_RUNS:
        raise ValueError(f"at least {MIN_RUNS} runs are required")
    net = network or bench_network(seed, profile)
    wait = model.isolated_wait_ms()
    seller, buyer = net.actor("seller"), net.actor("buyer")
    acc: dict[str, list[float]] = {}

    def add(name: str, compute_ms: float, writes: int = 0) -> None:
        acc.setdefault(name, []).append(compute_ms + writes * wait)
        if writes:
            acc.setdefault(name + COMPUTE_SUFFIX, []).append(compute_ms)

    for i in range(runs):
        did_ms, did_v = _ms(lambda: net.new_verinym("seller"))
        sub: dict = {}
        net.register_trader("seller", "scca", "reputation", 50, did_v=did_v, timings=sub)
        add("registration/did_v_creation", did_ms, writes=1)
        add("registration/did_v_verification", sub["did_v_verification"])
        add("registration/proof_generation", sub["proof_generation"])
        add("registration/proof_verification", sub["proof_verification"])
        total = did_ms + wait + sub["did_v_verification"] + sub["proof_generation"] + sub["proof_verification"]
        acc.setdefault("registration/total", []).append(total)

        cid = f"OV-{seed}-{i}"
        cr_ms, _ = _ms(lambda: create_commodity(seller, net.tml, cid, "grain", 5, 20, did_v=did_v))
        add("tx_cr/commit", cr_ms, writes=1)

        pair_ms, pair = _ms(lambda: onboard(seller, buyer))
        tr_ms, _ = _ms(lambda: trade_commodity(seller, buyer, net.tml, cid, "grain", 5, 22, channel=pair))
        add("trade/did_p_pair_generation", pair_ms, writes=2)
        add("trade/tx_tr_commit", tr_ms, writes=1)
        acc.setdefault("trade/total", []).append(pair_ms + tr_ms + 3 * wait)

        tok_ms, token = _ms(lambda: net.issue_token("seller", "auditor", f"OV-tok-{seed}-{i}",
                                                    params("CID", "quantity"), uses=runs))
        add("token/generation", tok_ms, writes=1)
        auditor = net.actor("auditor")
        sig = sign_request(auditor, token)
        q_ms, _ = _ms(lambda: net.qsc.evaluate(token, auditor.verinym, sig, net.clock.peek()))
        add("query/validation_and_return", q_ms)

    return BenchReport(timings=[_row(name, vals) for name, vals in acc.items()])


def bench_throughput(kinds: Iterable[str] = TX_KINDS, rates: Iterable[float] = DEFAULT_RATES,
                     duration_ms: float = 5000.0, profile: SecurityProfile = TEST_PROFILE, seed: int = 1,
                     samples: int = 60, model: OrderingModel = OrderingModel(),
                     service: ServiceSamples | None = None) -> BenchReport:
    kinds, rates = tuple(kinds), tuple(rates)
    for k in kinds:
        if k not in TX_KINDS:
            raise ValueError(f"unknown tx kind {k!r}; expected one of {TX_KINDS}")
    service = service or measure_service(bench_network(seed, profile), samples, prefix=f"S{seed}")
    rows = []
    for kind in kinds:
        for rate in rates:
            rng = random.Random(f"{seed}:{kind}:{rate}")
            arrivals = fixed_rate_arrivals(rate, duration_ms)
            if kind in service.read:
                pairs = simulate_reads(arrivals, service.read[kind], rng)
            else:
                pairs = simulate_writes(arrivals, service.client[kind], service.commit[kind], model, rng)
            tps, lat = summarize(pairs)
            rows.append(ThroughputRow(kind, float(rate), tps, lat))
    return BenchReport(throughput=rows)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def report_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    sections = 0
    if report.throughput:
        w.writerow(THROUGHPUT_HEADER)
        for r in report.throughput:
            w.writerow([r.kind, f"{r.rate_tps:g}", f"{r.throughput_tps:.3f}", f"{r.latency_ms:.3f}"])
        sections += 1
    if report.timings:
        if sections:
            buf.write("\n")
        w.writerow(TIMING_HEADER)
        for r in report.timings:
            w.writerow([r.function, f"{r.mean_ms:.4f}", f"{r.median_ms:.4f}", r.runs])
    return buf.getvalue()


def export_report(report: BenchReport, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report_csv(report))


def parse_report(text: str) -> BenchReport:
    report = BenchReport()
    for block in text.strip().split("\n\n"):
        rows = list(csv.reader(io.StringIO(block.strip())))
        if not rows:
            continue
        header, body = tuple(rows[0]), rows[1:]
        if header == THROUGHPUT_HEADER:
            report.throughput += [ThroughputRow(k, float(a), float(b), float(c)) for k, a, b, c in body]
        elif header == TIMING_HEADER:
            report.timings += [TimingRow(f, float(a), float(b), int(n)) for f, a, b, n in body]
        else:
            raise ValueError(f"unknown report section header {header}")
    return report


def read_report(path: str | os.PathLike) -> BenchReport:
    with open(path, encoding="utf-8") as fh:
        return parse_report(fh.read())


def fingerprint(net: Network) -> str:
    """Digest of both ledger exports, for instrumentation-neutrality checks."""
    h = hashlib.sha256()
    for line in net.idml.ledger.export_lines() + net.tml.ledger.export_lines():
        h.update(line.encode())
    return h.hexdigest()
