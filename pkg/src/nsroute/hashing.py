"""FNV-1a 64-bit hashing and seed mixing.

The offset basis and prime are the published FNV-1a constants; everything
that needs a stable digest (tie-breaking seeds, stub executor output, trace
headers) goes through :func:`fnv1a_64` so results never depend on Python's
randomized ``hash()``.
"""

FNV64_OFFSET_BASIS = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & MASK64
    return h


def rotl64(x: int, r: int) -> int:
    r %= 64
    x &= MASK64
    return ((x << r) | (x >> (64 - r))) & MASK64


class XorShift64Star:
    """xorshift64* generator; the only source of randomness in a run.

    A zero state is replaced by the FNV offset basis since xorshift has an
    all-zero fixed point.
    """

    name = "xorshift64*"

    def __init__(self, seed: int):
        self.state = (seed & MASK64) or FNV64_OFFSET_BASIS

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def random(self) -> float:
        # top 53 bits -> [0, 1)
        return (self.next_u64() >> 11) / float(1 << 53)
