"""Scalar oracle for the normalized Gaussian basis at phase z = 0
(5 centres equally spaced on [0, 1], bandwidth 0.2)."""
from mpmath import mp, mpf, exp

mp.dps = 40
K, bw, z = 5, mpf("0.2"), mpf(0)
raw = [exp(-(z - mpf(k) / (K - 1)) ** 2 / (2 * bw * bw)) for k in range(K)]
s = sum(raw)
for v in raw:
    print(mp.nstr(v / s, 17))
