"""Generate and merge a scaled-down analog of the reference deployment, then print its headline numbers.

    python scripts/deployment_analog.py --out /tmp/analog [--scale 1.0] [--seed 3]
"""

import argparse
import json
from pathlib import Path

from citemerge import pipeline, synthgen


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies the 6250 + 5000 record counts")
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    gen = synthgen.GenConfig(seed=args.seed, n1=round(6250 * args.scale), n2=round(5000 * args.scale),
                             overlap=0.25, doi_coverage_d2=0.61, title_noise_rate=0.3,
                             title_noise_edits=2, stoplist_rate=0.0016, cross_only_citation_rate=0.2)
    paths = synthgen.generate(gen, args.out)
    cfg = pipeline.load_config(paths["pipeline"], workers=args.workers)
    pipeline.run_pipeline(cfg)
    ev = pipeline.stage_evaluate(cfg, paths["truth"])

    report = json.loads((cfg.output_dir / "report" / "report.json").read_text())
    keep = ("node_count", "edge_count", "matched_by_query", "doi_coverage", "provenance_distribution",
            "edge_distribution", "growth", "avg_citations_matched", "avg_references_matched",
            "dprime_ratios", "filter", "title_audit")
    summary = {k: report[k] for k in keep}
    summary["title_audit"] = {k: summary["title_audit"][k] for k in ("pairs", "passing", "rate")}
    summary["evaluation"] = {"records": ev["records"], "edges": ev["edges"]}
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
