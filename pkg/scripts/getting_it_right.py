"""Compare successive-substitution Gibbs moments with forward prior-predictive moments."""

import argparse

from devtox.validation import getting_it_right, tiny_problem


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--model", default="Gen-LNB", choices=("Gen-LNB", "CW-LNB", "CR-LNB"))
    p.add_argument("--transitions", type=int, default=200_000)
    p.add_argument("--forward", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    result = getting_it_right(tiny_problem(model=args.model), args.transitions, args.forward, args.seed)
    print(result.table())
    print("PASS" if result.passed(3.0) else "FAIL", "(all |z| <= 3)")


if __name__ == "__main__":
    main()
