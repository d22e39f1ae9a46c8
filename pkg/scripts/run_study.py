"""Run the lattice coverage study and print the coverage table.

Finished replicates are appended to OUT/replicates.jsonl, so an interrupted
run picks up where it stopped.  The acceptance tests read the same directory.

    python3 scripts/run_study.py --out results/study --workers 4
"""
import argparse
import json
import logging
from pathlib import Path

from circuithmm.summary import StudySpec, replicate_study


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "results" / "study"))
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", help="study spec JSON (defaults to the standard protocol)")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    data = json.loads(Path(args.config).read_text()) if args.config else {}
    spec = StudySpec.from_dict(data)
    spec.n_replicates = args.replicates
    table, records = replicate_study(spec, args.out, workers=args.workers)
    print(f"{'block':<12}{'n':>6}{'coverage':>10}{'width':>9}{'bias':>9}{'rmse':>9}")
    for r in table.to_records():
        print(f"{r['block']:<12}{r['n']:>6}{r['coverage']:>10.3f}{r['width']:>9.3f}{r['bias']:>9.3f}{r['rmse']:>9.3f}")


if __name__ == "__main__":
    main()
