"""Deployment parameter profiles.

The toy profile exists so oracle-backed tests and the soundness-rate
experiments finish in seconds; it is not a security configuration.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Profile:
    name: str
    rsa_bits: int
    public_exponent: int
    security_bits: int


PROFILES = {
    "toy": Profile("toy", rsa_bits=512, public_exponent=7, security_bits=16),
    "default": Profile("default", rsa_bits=2048, public_exponent=65537, security_bits=128),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
