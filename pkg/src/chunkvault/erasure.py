"""Single-parity erasure codec over ciphertext chunks.

A chunk is split into k contiguous data stripes plus one XOR parity stripe
(k+1 stripes total; any k reconstruct the chunk). The default k=4 gives a
4-of-5 code with exactly 25% storage overhead.
"""

from __future__ import annotations

from dataclasses import dataclass

from chunkvault.errors import InsufficientStripesError, ValidationError
from chunkvault.parity import parity_of, xor_into

DEFAULT_K = 4
MIN_K = 2
MAX_K = 16


def _check_k(k: int) -> None:
    if not MIN_K <= k <= MAX_K:
        raise ValidationError(f"data stripe count k={k} outside [{MIN_K}, {MAX_K}]")


@dataclass(frozen=True)
class StripeSet:
    """All k+1 stripes of one chunk; index k is the parity stripe."""

    chunk_name: bytes  # 32-byte ciphertext hash
    k: int
    stripes: tuple[bytes, ...]

    @property
    def stripe_size(self) -> int:
        return len(self.stripes[0])

    def verify_parity(self) -> bool:
        """True iff the parity stripe equals the XOR of the data stripes."""
        return bytes(parity_of(self.stripes[: self.k])) == self.stripes[self.k]


def encode(chunk: bytes, chunk_name: bytes = b"", k: int = DEFAULT_K) -> StripeSet:
    """Split a chunk into k data stripes and append the XOR parity stripe.

    The chunk length must be divisible by k; chunks are padded to a fixed
    size upstream, so an indivisible length signals a bug in the caller.
    """
    _check_k(k)
    if len(chunk) == 0 or len(chunk) % k != 0:
        raise ValidationError(f"chunk length {len(chunk)} not divisible by k={k}")
    size = len(chunk) // k
    data = tuple(bytes(chunk[i * size:(i + 1) * size]) for i in range(k))
    return StripeSet(chunk_name=chunk_name, k=k, stripes=data + (bytes(parity_of(data)),))


def reconstruct(stripes: dict[int, bytes], k: int = DEFAULT_K) -> bytes:
    """Rebuild the chunk from any >= k stripes, keyed by stripe index.

    If all k data stripes are present they are concatenated directly; when
    the parity stripe substitutes for one missing data stripe, the missing
    stripe is the XOR of parity and the remaining data stripes.
    """
    _check_k(k)
    for idx in stripes:
        if not 0 <= idx <= k:
            raise ValidationError(f"stripe index {idx} outside 0..{k}")
    if len(stripes) < k:
        raise InsufficientStripesError(
            f"have {len(stripes)} stripes, need at least {k}")
    sizes = {len(b) for b in stripes.values()}
    if len(sizes) != 1:
        raise ValidationError(f"inconsistent stripe lengths: {sorted(sizes)}")

    data = [stripes.get(i) for i in range(k)]
    missing = [i for i, b in enumerate(data) if b is None]
    if not missing:
        return b"".join(data)
    # >= k of k+1 stripes with >= 1 data stripe missing implies exactly one
    # hole, filled from parity.
    hole = missing[0]
    acc = bytearray(stripes[k])
    for i, b in enumerate(data):
        if i != hole:
            xor_into(acc, b)
    data[hole] = bytes(acc)
    return b"".join(data)


def reconstruct_from_set(stripe_set: StripeSet, present: set[int]) -> bytes:
    """Reconstruct using only the stripe indices in ``present``."""
    return reconstruct(
        {i: stripe_set.stripes[i] for i in present}, k=stripe_set.k)
