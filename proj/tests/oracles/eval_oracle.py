"""Recomputes tests/fixtures/eval_oracle.json from eval_fixture.csv with exact fractions.

Run from the repository root; exits nonzero when the committed table differs.
"""
import csv
import json
import sys
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction

CLASSES = ["benign", "volumetric", "protocol", "vulnerability"]


def render(f: Fraction) -> str:
    d = Decimal(f.numerator) / Decimal(f.denominator)
    return str(d.quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN))


def ratio(n: int, d: int) -> Fraction:
    return Fraction(n, d) if d else Fraction(0)


def table(rows):
    conf = [[0] * 4 for _ in CLASSES]
    for truth, pred in rows:
        conf[CLASSES.index(truth)][CLASSES.index(pred)] += 1
    per_class = {}
    f1s = []
    for k, name in enumerate(CLASSES):
        tp = conf[k][k]
        predicted = sum(conf[t][k] for t in range(4))
        actual = sum(conf[k])
        p, r = ratio(tp, predicted), ratio(tp, actual)
        f1 = ratio(2 * tp, predicted + actual) if tp else Fraction(0)
        f1s.append(f1)
        per_class[name] = {"precision": str(p), "recall": str(r), "f1": str(f1), "support": actual,
                           "rendered": [render(p), render(r), render(f1)]}
    n = len(rows)
    acc = Fraction(sum(conf[k][k] for k in range(4)), n)
    macro = sum(f1s, Fraction(0)) / 4
    return {"n_samples": n, "confusion": conf, "per_class": per_class,
            "accuracy": str(acc), "accuracy_rendered": render(acc),
            "macro_f1": str(macro), "macro_f1_rendered": render(macro)}


def main() -> int:
    with open("tests/fixtures/eval_fixture.csv") as f:
        rows = [(r["truth"], r["pred"]) for r in csv.DictReader(f)]
    got = table(rows)
    with open("tests/fixtures/eval_oracle.json") as f:
        want = json.load(f)
    want.pop("_note", None)
    if got != want:
        print(json.dumps(got, indent=2))
        return 1
    print("eval oracle table matches")
    return 0


if __name__ == "__main__":
    sys.exit(main())
