"""Independent model of the seeded ratio split, used to freeze test values.

mt19937_64 is written out from its published definition; the shuffle and
largest-remainder sizes mirror the documented behaviour.
"""
from fractions import Fraction

M64 = (1 << 64) - 1


class MT19937_64:
    def __init__(self, seed):
        self.mt = [0] * 312
        self.mt[0] = seed & M64
        for i in range(1, 312):
            prev = self.mt[i - 1]
            self.mt[i] = (6364136223846793005 * (prev ^ (prev >> 62)) + i) & M64
        self.index = 312

    def _twist(self):
        upper, lower = 0xFFFFFFFF80000000, 0x7FFFFFFF
        for i in range(312):
            x = (self.mt[i] & upper) | (self.mt[(i + 1) % 312] & lower)
            xa = x >> 1
            if x & 1:
                xa ^= 0xB5026F5AA96619E9
            self.mt[i] = self.mt[(i + 156) % 312] ^ xa
        self.index = 0

    def __call__(self):
        if self.index >= 312:
            self._twist()
        y = self.mt[self.index]
        self.index += 1
        y ^= (y >> 29) & 0x5555555555555555
        y ^= (y << 17) & 0x71D67FFFEDA60000
        y ^= (y << 37) & 0xFFF7EEE000000000
        y ^= y >> 43
        return y & M64


def uniform_index(rng, bound):
    threshold = ((1 << 64) - bound) % bound
    while True:
        r = rng()
        if r >= threshold:
            return r % bound


def sizes(n, fractions):
    exact = [n * f for f in fractions]
    out = [int(e) for e in exact]
    rema = sorted(range(3), key=lambda i: (-(exact[i] - out[i]), i))
    k = 0
    while sum(out) < n:
        out[rema[k]] += 1
        k += 1
    return out


def split(ids, fractions, seed):
    order = sorted(ids)
    rng = MT19937_64(seed)
    for i in range(len(order) - 1, 0, -1):
        j = uniform_index(rng, i + 1)
        order[i], order[j] = order[j], order[i]
    s = sizes(len(order), fractions)
    out = {}
    for i, ident in enumerate(order):
        out[ident] = "sft" if i < s[0] else "pref" if i < s[0] + s[1] else "test"
    return out


if __name__ == "__main__":
    # The 10000th output for seed 5489 is the published reference value.
    rng = MT19937_64(5489)
    for _ in range(9999):
        rng()
    assert rng() == 9981545732273789042
    third = Fraction(1, 3)
    result = split(list("abcdef"), [third, third, third], 42)
    print("seed42:", "".join(result[k][0] for k in sorted(result)))
    ids = ["d%04d" % i for i in range(20)]
    result = split(ids, [Fraction(7, 20), Fraction(7, 20), Fraction(3, 10)], 7)
    print("d20 seed7 sft:", ",".join(k for k in sorted(result) if result[k] == "sft"))
    print("d20 seed7 test:", ",".join(k for k in sorted(result) if result[k] == "test"))
