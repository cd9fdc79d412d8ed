"""Block cipher, XOR, MAC and PRNG primitives used by every protocol party.

All protocol quantities (identities, keys, nonces, intermediate values and
MAC tags) are single 16-byte blocks, so the cipher is only ever applied to
one block at a time and no mode or padding is involved.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass

from cryptography.hazmat.primitives import cmac
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

BLOCK_SIZE = 16
MASK64 = (1 << 64) - 1
ZERO_BLOCK = bytes(BLOCK_SIZE)

# 16-byte values. Kept as plain bytes; width is enforced at the call sites.
Block = bytes
SecretKey = bytes
Nonce = bytes
MacTag = bytes


def check_block(value: bytes, name: str = "block") -> bytes:
    if not isinstance(value, (bytes, bytearray)):
        raise TypeError(f"{name} must be bytes, got {type(value).__name__}")
    if len(value) != BLOCK_SIZE:
        raise ValueError(f"{name} must be {BLOCK_SIZE} bytes, got {len(value)}")
    return bytes(value)


def _ecb(key: bytes):
    return Cipher(algorithms.AES(key), modes.ECB())


def encrypt_block(plaintext: Block, key: SecretKey) -> Block:
    check_block(plaintext, "plaintext")
    check_block(key, "key")
    enc = _ecb(key).encryptor()
    return enc.update(plaintext) + enc.finalize()


def decrypt_block(ciphertext: Block, key: SecretKey) -> Block:
    check_block(ciphertext, "ciphertext")
    check_block(key, "key")
    dec = _ecb(key).decryptor()
    return dec.update(ciphertext) + dec.finalize()


def xor_combine(a: Block, b: Block) -> Block:
    check_block(a, "a")
    check_block(b, "b")
    return bytes(x ^ y for x, y in zip(a, b))


def compute_mac(message: bytes, key: SecretKey) -> MacTag:
    """AES-CMAC of ``message`` under ``key``."""
    if not message:
        raise ValueError("cannot MAC an empty message")
    check_block(key, "key")
    c = cmac.CMAC(algorithms.AES(key))
    c.update(bytes(message))
    return c.finalize()


def verify_mac(message: bytes, tag: MacTag, key: SecretKey) -> bool:
    if not message or len(tag) != BLOCK_SIZE:
        return False
    return hmac.compare_digest(compute_mac(message, key), bytes(tag))


def timestamp_block(millis: int) -> Block:
    """Left-pad a 64-bit millisecond timestamp to a full block."""
    if not 0 <= millis <= MASK64:
        raise ValueError(f"timestamp out of 64-bit range: {millis}")
    return millis.to_bytes(BLOCK_SIZE, "big")


def block_timestamp(block: Block) -> int | None:
    """Inverse of :func:`timestamp_block`; ``None`` if the padding is not zero."""
    check_block(block)
    if any(block[:8]):
        return None
    return int.from_bytes(block[8:], "big")


@dataclass(frozen=True)
class PrngState:
    """xorshift128+ state (shift triple 23, 17, 26).

    State is explicit: every draw returns the value together with the
    successor state, the original is never mutated.
    """

    s0: int
    s1: int

    def __post_init__(self):
        for v in (self.s0, self.s1):
            if not 0 <= v <= MASK64:
                raise ValueError("PRNG state words must be 64-bit unsigned")
        if self.s0 == 0 and self.s1 == 0:
            raise ValueError("PRNG state must not be all zero")

    def next_u64(self) -> tuple[int, "PrngState"]:
        x = self.s0
        y = self.s1
        x ^= (x << 23) & MASK64
        new_s1 = x ^ y ^ (x >> 17) ^ (y >> 26)
        return (new_s1 + y) & MASK64, PrngState(y, new_s1)

    def next_nonce(self) -> tuple[Nonce, "PrngState"]:
        hi, st = self.next_u64()
        lo, st = st.next_u64()
        return hi.to_bytes(8, "big") + lo.to_bytes(8, "big"), st

    def next_bytes(self, n: int) -> tuple[bytes, "PrngState"]:
        out = bytearray()
        st = self
        while len(out) < n:
            v, st = st.next_u64()
            out += v.to_bytes(8, "big")
        return bytes(out[:n]), st


def prng_next_nonce(state: PrngState) -> tuple[Nonce, PrngState]:
    return state.next_nonce()


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, label: str) -> PrngState:
    """Derive an independent PRNG state for one party from a master seed."""
    h = master & MASK64
    for ch in label.encode():
        h = splitmix64(h ^ ch)
    s0 = splitmix64(h)
    s1 = splitmix64(s0)
    if s0 == 0 and s1 == 0:
        s1 = 1
    return PrngState(s0, s1)
