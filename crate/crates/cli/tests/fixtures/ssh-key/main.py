import csv
import os
from pathlib import Path


def mean_age(path):
    with open(path, newline="") as f:
        ages = [int(row["age"]) for row in csv.DictReader(f)]
    return sum(ages) / len(ages) if ages else 0.0


def main():
    data = Path(os.environ.get("PASTA_DATA_DIR", "."))
    cohort = data / "cohort.csv"
    if cohort.exists():
        print(f"mean age: {mean_age(cohort):.1f}")
    else:
        print("no cohort data at this station")


if __name__ == "__main__":
    main()
