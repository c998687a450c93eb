"""Regenerate the packaged golden oracle CSV for the n=10 Curie-Weiss spec."""

from pathlib import Path

from netcausal import io
from netcausal.cli import EFFECT_COLUMNS, Experiment, cmd_estimate, load_spec

DATA = Path(__file__).resolve().parents[1] / "src" / "netcausal" / "data"


def main():
    exp = Experiment(load_spec(DATA / "cw10_spec.json"))
    (_, rows, _, _), = cmd_estimate(exp, "oracle")
    io.atomic_write(DATA / "cw10_oracle.csv", io.csv_text(rows, EFFECT_COLUMNS))
    print(rows[0]["de"], rows[0]["ie"])


if __name__ == "__main__":
    main()
