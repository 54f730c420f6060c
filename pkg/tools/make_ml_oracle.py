"""Generate the frozen Mittag-Leffler reference table used by the tests.

Each value is the power series summed in extended precision until the terms
fall below 1e-45 past the peak (never fewer than 500 terms); the working
precision covers the peak term plus 60 digits.
Orders are rational, so Gamma(j alpha + beta) follows from the first q values
by the recurrence Gamma(x + p) = (x)_p Gamma(x) with alpha = p / q.
Values too large for double precision are stored by their base-10 logarithm.
"""

import json
import math
import sys
from fractions import Fraction

import mpmath

ALPHAS = ["1/5", "1/4", "3/10", "2/5", "1/2", "3/5", "7/10", "4/5", "9/10", "1"]
BETAS = ["1/5", "1/2", "1", "3/2", "2"]
ZS = ["-5", "-3", "-1", "-1/2", "1/2", "1", "3", "5"]


def ml_reference(alpha: Fraction, beta: Fraction, z: Fraction):
    p, q = alpha.numerator, alpha.denominator
    # peak term size, to size the working precision
    lz = math.log(abs(float(z)))
    logs = []
    k = 0
    while True:
        lt = k * lz - math.lgamma(float(k * alpha + beta)) if float(k * alpha + beta) > 0 else 0.0
        logs.append(lt)
        peak = max(logs)
        if k >= 500 and k > logs.index(peak) and lt < -45 * math.log(10):
            break
        k += 1
    nterms = k + 1
    dps = int(60 + max(peak, 0.0) / math.log(10))
    with mpmath.workdps(dps):
        al = mpmath.mpf(p) / q
        be = mpmath.mpf(beta.numerator) / beta.denominator
        za = mpmath.mpf(z.numerator) / z.denominator
        # rg[r] carries 1/Gamma(x) for x = (j alpha + beta), j = r mod q chain
        rg = [mpmath.rgamma(r * al + be) for r in range(q)]
        acc = mpmath.mpf(0)
        zk = mpmath.mpf(1)
        for j in range(nterms):
            r = j % q
            acc += zk * rg[r]
            x = j * al + be
            # advance chain r from x to x + p
            step = mpmath.mpf(1)
            for i in range(p):
                step *= x + i
            rg[r] = rg[r] / step
            zk *= za
        val = float(acc)
        if math.isfinite(val):
            return {"value": mpmath.nstr(acc, 30), "terms": nterms}
        return {"log10": mpmath.nstr(mpmath.log10(acc), 20), "terms": nterms}


def main(path):
    rows = []
    for a in ALPHAS:
        for b in BETAS:
            for z in ZS:
                ref = ml_reference(Fraction(a), Fraction(b), Fraction(z))
                rows.append({"alpha": a, "beta": b, "z": z, **ref})
                print(a, b, z, ref, file=sys.stderr)
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main(sys.argv[1])
