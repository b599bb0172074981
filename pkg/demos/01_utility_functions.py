"""Tour of the utility families: values, marginals, demand inversion.

Prints the satisfaction curves used by the reference experiment, shows how
the marginal of ln U prices rate, and inverts it: given a price, what rate
does a user want?
"""

from carrieralloc import (
    LogarithmicUtility,
    SigmoidalUtility,
    evaluate,
    marginal,
    solve_rate_for_price,
)

PROFILES = [
    ("sigmoidal a=5  b=10 (voice-like, near-step at 10)", SigmoidalUtility(a=5.0, b=10.0)),
    ("sigmoidal a=3  b=20 (adaptive video, knee at 20)", SigmoidalUtility(a=3.0, b=20.0)),
    ("sigmoidal a=1  b=30 (softer video, knee at 30)", SigmoidalUtility(a=1.0, b=30.0)),
    ("logarithmic k=15  (greedy elastic)", LogarithmicUtility(k=15.0, r_max=100.0)),
    ("logarithmic k=3", LogarithmicUtility(k=3.0, r_max=100.0)),
    ("logarithmic k=0.5 (patient elastic)", LogarithmicUtility(k=0.5, r_max=100.0)),
]


def main() -> None:
    print("satisfaction U(r) at a few rates")
    rates = [1.0, 5.0, 10.0, 20.0, 30.0, 50.0, 100.0]
    header = "  ".join(f"{r:>7.0f}" for r in rates)
    print(f"{'profile':<52} {header}")
    for name, u in PROFILES:
        row = "  ".join(f"{evaluate(u, r):7.4f}" for r in rates)
        print(f"{name:<52} {row}")

    print("\nmarginal of ln U is strictly decreasing: it is the rate's price tag")
    u = SigmoidalUtility(a=3.0, b=20.0)
    for r in (2.0, 10.0, 19.0, 21.0, 30.0):
        print(f"  marginal at r={r:5.1f}: {marginal(u, r):10.6f}")

    print("\ninverting the marginal: demand at a price (ceiling 400)")
    for name, u in PROFILES:
        demands = [solve_rate_for_price(u, p, 400.0) for p in (3.0, 1.0, 0.1, 0.01)]
        row = "  ".join(f"{d:8.3f}" for d in demands)
        print(f"{name:<52} {row}")
    print("(columns: price 3.0, 1.0, 0.1, 0.01 — cheaper rate, larger demand)")


if __name__ == "__main__":
    main()
