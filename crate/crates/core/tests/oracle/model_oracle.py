"""Reference values for the analytic model tests, from mpmath.

Uses the Mittag-Leffler evaluation of ml_oracle.py and evaluates the model
integrals directly in the original variables (no substitutions), so it shares
no numerical route with the Rust code beyond the formulas themselves.
Parameters: H = 0.05, lambda = 0.3, nu = 0.45, rho = -0.7, flat xi = 0.025.
"""
import mpmath as mp
from ml_oracle import cdf

mp.mp.dps = 40
H, LAM, NU, RHO, XI = mp.mpf("0.05"), mp.mpf("0.3"), mp.mpf("0.45"), mp.mpf("-0.7"), mp.mpf("0.025")
ALPHA = H + mp.mpf("0.5")
D = mp.mpf(1) / 252


def F(x):
    return cdf(ALPHA, LAM, x) if x > 0 else mp.mpf(0)


def zumbach(k, delta=D):
    g = lambda s: (F(s + k * delta) - F(s + (k - 1) * delta)) * F(delta - s)
    return 2 * (RHO * NU / LAM) ** 2 * XI * mp.quad(g, [0, delta / 2, delta])


def var_sigma2(t, delta=D):
    inc = lambda s: (F(s + delta) - F(s)) ** 2
    pts = [0, delta, 2 * delta, 8 * delta, 32 * delta, t - delta]
    past = mp.quad(inc, pts)
    today = mp.quad(lambda s: F(s) ** 2, [0, delta / 2, delta])
    return (NU / LAM) ** 2 * XI * (past + today)


def fourth_moment(t, delta=D):
    inc = lambda s: (F(s + delta) - F(s)) ** 2
    pts = [0, delta, 2 * delta, 8 * delta, 32 * delta, t - delta]
    carried = 3 * (NU / LAM) ** 2 * XI * mp.quad(inc, pts)
    ff = mp.quad(lambda u: F(u) * F(delta - u), [0, delta / 2, delta])
    f2 = mp.quad(lambda s: F(s) ** 2, [0, delta / 2, delta])
    return (12 * (RHO * NU / LAM) ** 2 * XI * ff + 3 * (XI * delta) ** 2
            + 3 * (NU / LAM) ** 2 * XI * f2 + carried)


def stationary_increment_sq(delta=D):
    inc = lambda s: (F(s + delta) - F(s)) ** 2
    pts = [0, delta, 4 * delta, 16 * delta, 64 * delta, 1, 10, 100, 1000, 10 ** 4, 10 ** 5, mp.inf]
    return mp.quad(inc, pts)


if __name__ == "__main__":
    for k in [1, 2, 5, 10]:
        print(f"Z(k={k}) =", mp.nstr(zumbach(k), 20))
    print("var_sigma2(t=1) =", mp.nstr(var_sigma2(mp.mpf(1)), 20))
    print("fourth_moment(t=1) =", mp.nstr(fourth_moment(mp.mpf(1)), 20))
    j = stationary_increment_sq()
    f2 = mp.quad(lambda s: F(s) ** 2, [0, D / 2, D])
    print("stationary increment_sq =", mp.nstr(j, 20))
    print("stationary var_sigma2 =", mp.nstr((NU / LAM) ** 2 * XI * (j + f2), 20))
