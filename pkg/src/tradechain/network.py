"""A complete in-process deployment: Steward, IDML, TML, QSC and named actors.

Everything is driven from one seeded RNG and a logical clock, so replaying the
same calls with the same seed reproduces byte-identical ledgers.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import anoncreds
from .agents import Agent, EndpointRegistry, StewardAgent, Transport, connection_between, \
    create_and_publish_cred_def, delete_wallet, issue_credential, onboard, publish_verinym
from .cpabe import abe_keygen, abe_setup
from .crypto_math import TEST_PROFILE, SecurityProfile
from .errors import InvalidArgument, Unauthorized
from .idml import IDML, SCHEMA_PRIVILEGE, GenesisConfig, Role
from .ledger_core import LogicalClock
from .query import QSC, QSC_ROLE, AccessToken, QueryParams, QueryResult, issue_token, sign_request
from .tml import TML
from .trading import RegistrationPolicy, TmlAdmin, create_commodity, register_trader, trade_commodity
from .wallet import create_wallet

ACTOR_KINDS = ("government", "issuer", "trader", "auditor")
QSC_DEPLOY_ATTR = "deploy:tml"
DEFAULT_TOKEN_POLICY = f"and({QSC_ROLE}, {QSC_DEPLOY_ATTR})"


@dataclass
class Summary:
    registered_traders: int = 0
    commodities: int = 0
    trades: int = 0
    queries: int = 0
    tokens: int = 0
    idml_entries: int = 0
    tml_entries: int = 0
    chains_ok: bool = True
    query_results: list = field(default_factory=list)

    def lines(self) -> list[str]:
        return [f"registered_traders={self.registered_traders}", f"commodities={self.commodities}",
                f"trades={self.trades}", f"tokens={self.tokens}", f"successful_queries={self.queries}",
                f"query_record_counts={','.join(str(n) for n in self.query_results) or '-'}",
                f"idml_entries={self.idml_entries}", f"tml_entries={self.tml_entries}",
                f"chains_ok={self.chains_ok}"]


class Network:
    def __init__(self, seed: int = 0, profile: SecurityProfile = TEST_PROFILE, pseudonym_quota: int = 100,
                 quota_window_ms: int = 86_400_000, network_name: str = "tradechain"):
        self.seed = seed
        self.profile = profile
        self.rng = random.Random(seed)
        self.clock = LogicalClock()
        self.transport = Transport(self.clock)
        self.pseudonym_quota = pseudonym_quota
        self.quota_window_ms = quota_window_ms
        self.network_name = network_name
        self.actors: dict[str, Agent] = {}
        self.kinds: dict[str, str] = {}
        self.schemas: dict[str, str] = {}
        self.cred_defs: dict[str, str] = {}  # issuer name -> cred def id
        self.tokens: dict[str, AccessToken] = {}
        self.results: list[QueryResult] = []
        self.steward: Optional[StewardAgent] = None
        self.idml: Optional[IDML] = None
        self.tml: Optional[TML] = None
        self.qsc: Optional[QSC] = None
        self.admin: Optional[TmlAdmin] = None
        self.registry: Optional[EndpointRegistry] = None
        self.abe = None

    # -- setup -------------------------------------------------------------------

    def _agent(self, name: str) -> Agent:
        return Agent(name, self.transport, self.idml, self.profile, self.rng)

    def bootstrap(self) -> None:
        """Genesis on both ledgers, the TML admin and the QSC."""
        if self.idml is not None:
            raise InvalidArgument("already bootstrapped")
        wallet = create_wallet("steward", self.profile, self.rng)
        rec = wallet.gen_did("verinym")
        genesis = GenesisConfig(network=self.network_name, steward_did=rec.did, steward_verkey=rec.verkey,
                                steward_endpoint="steward", pseudonym_quota=self.pseudonym_quota,
                                quota_window_ms=self.quota_window_ms)
        self.idml = IDML(genesis, self.clock)
        self.steward = StewardAgent("steward", self.transport, self.idml, self.profile, self.rng, wallet=wallet)
        self.steward.verinyms.append(rec.did)
        self.transport.bind(rec.did, "steward")
        self.idml.bootstrap(self.steward.logging_signer())
        for agent in self.actors.values():
            agent.idml = self.idml

        admin = self._agent("tml_admin")
        qsc = self._agent("qsc")
        for agent, role in ((admin, Role.TRUST_ANCHOR), (qsc, Role.TRADER)):
            onboard(self.steward, agent)
            if role is not Role.TRADER:
                self.steward.approve(agent.name, role)
            publish_verinym(agent, self.steward, role)
        capability = self.rng.getrandbits(256).to_bytes(32, "big")
        cap_hash = hashlib.sha256(capability).digest()
        self.tml = TML(self.idml, admin.verinym, qsc.verinym, cap_hash, self.clock)
        self.tml.bootstrap(admin.wallet.signer(admin.verinym))
        self.registry = EndpointRegistry(cap_hash, self.rng)
        self.abe = abe_setup(rng=self.rng)
        qsc_key = abe_keygen(self.abe, {QSC_ROLE, QSC_DEPLOY_ATTR}, self.rng)
        self.qsc = QSC(qsc, self.tml, qsc_key, capability, self.registry, self.rng)
        self.admin = TmlAdmin(admin, self.tml, policy=None)

    def add_actor(self, name: str, kind: str) -> Agent:
        if kind not in ACTOR_KINDS:
            raise InvalidArgument(f"actor kind must be one of {ACTOR_KINDS}")
        if name in self.actors or name in ("steward", "tml_admin", "qsc"):
            raise InvalidArgument(f"actor {name!r} already declared")
        agent = self._agent(name)
        self.actors[name] = agent
        self.kinds[name] = kind
        return agent

    def actor(self, name: str) -> Agent:
        try:
            return self.actors[name]
        except KeyError:
            raise InvalidArgument(f"unknown actor {name!r}") from None

    def onboard(self, name: str) -> str:
        """Steward channel plus a published verinym with the role the actor kind implies."""
        agent, kind = self.actor(name), self.kinds[name]
        onboard(self.steward, agent)
        role = Role.TRUST_ANCHOR if kind in ("government", "issuer") else Role.TRADER
        if role is Role.TRUST_ANCHOR:
            self.steward.approve(name, role, (SCHEMA_PRIVILEGE,) if kind == "government" else ())
        return publish_verinym(agent, self.steward, role)

    def new_verinym(self, name: str) -> str:
        return publish_verinym(self.actor(name), self.steward, Role.TRADER)

    # -- identity ------------------------------------------------------------------

    def publish_schema(self, actor: str, schema_name: str, version: str, attributes: Iterable[str]) -> str:
        agent = self.actor(actor)
        schema = anoncreds.create_schema(schema_name, version, list(attributes))
        self.idml.publish_schema(agent.wallet.signer(agent.verinym), schema)
        self.schemas[schema_name] = schema.id
        return schema.id

    def publish_cred_def(self, issuer: str, schema_name: str) -> str:
        if schema_name not in self.schemas:
            raise InvalidArgument(f"unknown schema {schema_name!r}")
        cd = create_and_publish_cred_def(self.actor(issuer), self.schemas[schema_name])
        self.cred_defs[issuer] = cd.id
        return cd.id

    def issue_credential(self, issuer: str, holder: str, values: dict) -> anoncreds.Credential:
        a_issuer, a_holder = self.actor(issuer), self.actor(holder)
        try:
            connection_between(a_issuer, a_holder)
        except Unauthorized:
            onboard(a_issuer, a_holder)
        return issue_credential(a_issuer, a_holder, self.cred_defs[issuer], values)

    def revoke(self, issuer: str, holder: str) -> int:
        """Revoke every credential ``issuer`` gave ``holder``; returns how many."""
        signer = self.actor(issuer).wallet.signer(self.actor(issuer).verinym)
        cd_id = self.cred_defs[issuer]
        creds = self.actor(holder).wallet.credentials(cd_id)
        for cred in creds:
            self.idml.set_revocation(signer, cd_id, cred.raw_values[anoncreds.REVOCATION_INDEX])
        return len(creds)

    def delete_wallet(self, name: str) -> int:
        return delete_wallet(self.actor(name), self.steward)

    # -- trading ---------------------------------------------------------------------

    def register_trader(self, trader: str, issuer: str, attribute: str | None = None, threshold: int = 0,
                        did_v: str | None = None, timings: dict | None = None):
        preds = (anoncreds.Predicate(attribute, threshold),) if attribute else ()
        self.admin.policy = RegistrationPolicy(self.cred_defs[issuer], preds)
        return register_trader(self.admin, self.actor(trader), did_v=did_v, timings=timings)

    def create(self, trader: str, cid: str, commodity_type: str, quantity: int, unit_price: int,
               notes: str = "", did_v: str | None = None) -> int:
        return create_commodity(self.actor(trader), self.tml, cid, commodity_type, quantity, unit_price,
                                notes, did_v=did_v)

    def trade(self, seller: str, buyer: str, cid: str, commodity_type: str, quantity: int, unit_price: int,
              notes: str = "") -> int:
        return trade_commodity(self.actor(seller), self.actor(buyer), self.tml, cid, commodity_type, quantity,
                               unit_price, notes)

    # -- queries -----------------------------------------------------------------------

    def issue_token(self, trader: str, requester: str, name: str, param_i: QueryParams,
                    param_j: QueryParams | None = None, uses: int = 1, expiry_in: int = 100_000,
                    time_range: tuple[int, int] | None = None, policy: str = DEFAULT_TOKEN_POLICY) -> AccessToken:
        if name in self.tokens:
            raise InvalidArgument(f"token {name!r} already issued")
        now = self.clock.peek()
        token = issue_token(self.actor(trader), self.registry, self.qsc, self.actor(requester).verinym,
                            param_i, param_j or param_i, time_range or (0, now + expiry_in), now + expiry_in,
                            uses, policy, self.abe.master_public)
        self.tokens[name] = token
        return token

    def query(self, requester: str, name: str) -> QueryResult:
        token = self.tokens[name]
        agent = self.actor(requester)
        result = self.qsc.execute_query(token, agent.verinym, sign_request(agent, token))
        self.results.append(result)
        return result

    # -- inspection ----------------------------------------------------------------------

    def all_dids(self) -> set[str]:
        """Every DID known to either ledger or any wallet."""
        out = set(self.idml.all_dids()) | self.tml.all_dids()
        for agent in [self.steward, self.admin.agent, self.qsc.agent, *self.actors.values()]:
            if agent.wallet is not None:
                out.update(d.did for d in agent.wallet.dids())
        return out

    def summary(self) -> Summary:
        tml_entries = self.tml.ledger.entries()
        return Summary(
            registered_traders=sum(1 for e in tml_entries if e.tx_type == "REGISTER"
                                   and e.payload_value()["status"] == "registered"),
            commodities=sum(1 for e in tml_entries if e.tx_type == "TX_cr"),
            trades=sum(1 for e in tml_entries if e.tx_type == "TX_tr"),
            queries=len(self.results),
            tokens=len(self.tokens),
            idml_entries=len(self.idml.ledger),
            tml_entries=len(tml_entries),
            chains_ok=self.idml.ledger.verify_chain() and self.tml.ledger.verify_chain(),
            query_results=[r.count for r in self.results],
        )
