"""SplitMix64: a small seedable generator with a fixed, portable recurrence."""

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix(self.state)

    def uniform_int(self, lo: int, hi: int) -> int:
        """Inclusive range; modulo reduction keeps the draw sequence portable."""
        if hi < lo:
            raise ValueError(f"Empty range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def random(self) -> float:
        return (self.next_u64() >> 11) / float(1 << 53)


def hash64(seed: int, index: int) -> int:
    """Keyed draw independent of call order."""
    return _mix((seed + (index + 1) * GOLDEN_GAMMA) & MASK64)


def unit_from_hash(seed: int, index: int) -> float:
    return (hash64(seed, index) >> 11) / float(1 << 53)
