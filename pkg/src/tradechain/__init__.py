"""TradeChain: identity-decoupled supply-chain ledgers with anonymous credentials and ABE-sealed access tokens."""

__version__ = "0.1.0"
