"""seqmc: sequential MCMC particle systems for evolving measures on finite
state spaces, with exact deterministic oracles and non-asymptotic
error-bound checks."""

__version__ = "0.1.0"
