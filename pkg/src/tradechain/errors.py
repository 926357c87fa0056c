"""Exception hierarchy.

Every error carries a short kebab-case ``code`` so callers (and the CLI) can
report failures without string-matching messages.
"""

from __future__ import annotations


class TradeChainError(Exception):
    code = "error"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details


# crypto_math -----------------------------------------------------------------

class GenerationTimeout(TradeChainError):
    code = "generation-timeout"


class InvalidArgument(TradeChainError, ValueError):
    code = "invalid-argument"


# canonical encoding / ledger -------------------------------------------------

class EncodingFailure(TradeChainError):
    code = "encoding-failure"


class BadSignature(TradeChainError):
    code = "bad-signature"


class Unauthorized(TradeChainError):
    code = "unauthorized"


# anoncreds ---------------------------------------------------------------------

class DuplicateAttribute(TradeChainError):
    code = "duplicate-attribute"


class InvalidBlindingProof(TradeChainError):
    code = "invalid-blinding-proof"


class ArityMismatch(TradeChainError):
    code = "arity-mismatch"


class NonceReused(TradeChainError):
    code = "nonce-reused"


class PredicateUnsatisfied(TradeChainError):
    code = "predicate-unsatisfied"


# cpabe ---------------------------------------------------------------------------

class MalformedPolicy(TradeChainError):
    code = "malformed-policy"


class AbeDecryptError(TradeChainError):
    code = "abe-decrypt-error"


class PolicyNotSatisfied(AbeDecryptError):
    code = "policy-not-satisfied"


class IntegrityFailure(AbeDecryptError):
    code = "integrity-failure"


# idml ----------------------------------------------------------------------------

class DuplicateDid(TradeChainError):
    code = "duplicate-did"


class InsufficientRole(Unauthorized):
    code = "insufficient-role"


class DuplicateRecord(TradeChainError):
    code = "duplicate"


class UnknownSchema(TradeChainError):
    code = "unknown-schema"


class UnknownCredDef(TradeChainError):
    code = "unknown-cred-def"


class NotIssuer(Unauthorized):
    code = "not-issuer"


class RevocationMonotonicity(TradeChainError):
    code = "revocation-monotonicity"


class QuotaExceeded(TradeChainError):
    code = "quota-exceeded"


# wallet / agents -------------------------------------------------------------

class NonceMismatch(TradeChainError):
    code = "nonce-mismatch"


class DecryptionFailure(TradeChainError):
    code = "decryption-failure"


class VerkeyMismatch(TradeChainError):
    code = "verkey-mismatch"


class UnauthorizedCaller(Unauthorized):
    code = "unauthorized-caller"


class UnknownEndpoint(TradeChainError):
    code = "unknown-endpoint"


class MessageDropped(TradeChainError):
    code = "message-dropped"


# tml -----------------------------------------------------------------------------

class ProofRejected(TradeChainError):
    code = "proof-rejected"

    def __init__(self, reason: str):
        super().__init__(f"proof rejected: {reason}", reason=reason)
        self.reason = reason


class AlreadyRegistered(TradeChainError):
    code = "already-registered"


class DuplicateCid(TradeChainError):
    code = "duplicate-cid"


class UnregisteredTrader(TradeChainError):
    code = "unregistered-trader"


class UnusedPreviousDid(TradeChainError):
    code = "unused-previous-did"


class UnknownCid(TradeChainError):
    code = "unknown-cid"


class NotOwner(TradeChainError):
    code = "not-owner"


class DeletedDid(TradeChainError):
    code = "deleted-did"


# query_access --------------------------------------------------------------------

class InvalidParams(TradeChainError):
    code = "invalid-params"


class InvalidTimeRange(TradeChainError):
    code = "invalid-time-range"


class TokenRejected(TradeChainError):
    code = "token-rejected"


class TokenBadSignature(TokenRejected, BadSignature):
    code = "bad-signature"


class WrongRequester(TokenRejected):
    code = "wrong-requester"


class TokenExpired(TokenRejected):
    code = "expired"


class UsesExhausted(TokenRejected):
    code = "uses-exhausted"


class TokenPolicyNotSatisfied(TokenRejected):
    code = "policy-not-satisfied"


class ParamMismatch(TokenRejected):
    code = "param-mismatch"


class EndpointUnreachable(TradeChainError):
    code = "endpoint-unreachable"


# cli / scenarios -----------------------------------------------------------------

class ScenarioParseError(TradeChainError):
    code = "parse-error"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message, line=line)
        self.line = line


class StepFailure(TradeChainError):
    code = "step-failure"

    def __init__(self, index: int, step: str, cause: Exception):
        super().__init__(f"step {index} ({step}) failed: {cause}", index=index)
        self.index = index
        self.cause = cause


class ExpectationFailed(TradeChainError):
    code = "expectation-failed"
