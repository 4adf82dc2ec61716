"""Desk-scale OIDC certificate authority with embedded proofs-of-authentication.

Certificates issued by this CA carry the requester's OIDC token header and
body plus a proof of knowledge of the token's RSA signature, so a verifier
can re-check the authentication event long after the identity provider has
rotated its keys -- without the certificate ever containing a replayable
bearer token.
"""

__version__ = "0.1.0"
