import numpy as np

_MASK64 = (1 << 64) - 1


class RngStream:
    """Counter-based random stream.

    Every draw builds a fresh PCG64 generator keyed by ``(seed, counter)`` and
    then advances the counter, so a stream can be snapshotted and restored by
    copying two integers.
    """

    def __init__(self, seed, counter=0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter) & _MASK64

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def __eq__(self, other):
        return isinstance(other, RngStream) and (self.seed, self.counter) == (
            other.seed,
            other.counter,
        )

    def generator(self):
        gen = np.random.Generator(np.random.PCG64([self.seed, self.counter]))
        self.counter = (self.counter + 1) & _MASK64
        return gen

    def spawn(self, key):
        """Independent child stream; does not advance this one."""
        state = np.random.SeedSequence([self.seed, int(key) & _MASK64]).generate_state(
            2, np.uint32
        )
        return RngStream((int(state[0]) << 32) | int(state[1]))

    def copy(self):
        return RngStream(self.seed, self.counter)

    def uniform(self, size=None, low=0.0, high=1.0):
        return self.generator().uniform(low, high, size)

    def normal(self, size=None):
        return self.generator().standard_normal(size)
