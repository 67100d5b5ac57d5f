"""Regenerates the bundled sample dataset (credit-style binary task)."""
import csv
import json
import random

rng = random.Random(7)
rows = []
for _ in range(300):
    income = rng.lognormvariate(10.5, 0.5)
    debt = rng.uniform(0.0, 1.0) * income
    age = rng.randint(21, 70)
    late_payments = rng.randint(0, 6)
    utilization = rng.uniform(0.0, 1.0)
    risk = debt / income + 0.15 * late_payments + 0.4 * utilization - 0.005 * (age - 21)
    label = "default" if risk + rng.gauss(0.0, 0.1) > 0.95 else "repaid"
    rows.append([round(income, 2), round(debt, 2), age, late_payments, round(utilization, 4), label])

with open("credit.csv", "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["income", "debt", "age", "late_payments", "utilization", "outcome"])
    w.writerows(rows)

meta = {
    "task_description": "Predict whether a borrower defaults on a personal loan.",
    "target": "outcome",
    "features": [
        {"name": "income", "description": "Annual income in dollars"},
        {"name": "debt", "description": "Outstanding debt in dollars"},
        {"name": "age", "description": "Borrower age in years"},
        {"name": "late_payments", "description": "Number of late payments in the last two years"},
        {"name": "utilization", "description": "Fraction of available credit in use"},
    ],
}
with open("credit.meta.json", "w") as f:
    json.dump(meta, f, indent=2)
    f.write("\n")
