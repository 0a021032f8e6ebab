"""Campaign report rendering: delimited tables plus figures on disk."""

from __future__ import annotations

import csv
import json
import os


def _load_campaign(path: str) -> dict:
    if os.path.isdir(path):
        path = os.path.join(path, "campaign.json")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def render_report(campaign: str | dict, out_dir: str) -> list[str]:
    """Write cases.csv, summary.csv, verdicts.png, discovery.png into out_dir."""
    doc = _load_campaign(campaign) if isinstance(campaign, str) else campaign
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []

    cases_path = os.path.join(out_dir, "cases.csv")
    with open(cases_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iteration", "case_id", "kind", "fingerprint", "duration_s", "artifact"]
        )
        for r in doc.get("results", []):
            writer.writerow(
                [
                    r["iteration"],
                    r["case_id"],
                    r["kind"],
                    r["fingerprint"],
                    r["duration_s"],
                    r["artifact"] or "",
                ]
            )
    written.append(cases_path)

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key in (
            "master_seed",
            "iterations",
            "gen_attempts",
            "gen_failures",
            "cases_per_second",
            "wall_s",
        ):
            writer.writerow([key, doc.get(key)])
        writer.writerow(["unique_fingerprints", len(doc.get("unique_fingerprints", []))])
        for kind, count in sorted(doc.get("counts", {}).items()):
            writer.writerow([f"verdict_{kind}", count])
    written.append(summary_path)

    written.extend(_render_figures(doc, out_dir))
    return written


def _render_figures(doc: dict, out_dir: str) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    counts = dict(sorted(doc.get("counts", {}).items()))
    fig, ax = plt.subplots(figsize=(7, 4))
    kinds = list(counts)
    ax.bar(range(len(kinds)), [counts[k] for k in kinds], color="#4878a8")
    ax.set_xticks(range(len(kinds)))
    ax.set_xticklabels(kinds, rotation=20, ha="right")
    ax.set_ylabel("cases")
    ax.set_title("verdicts")
    fig.tight_layout()
    verdicts_path = os.path.join(out_dir, "verdicts.png")
    fig.savefig(verdicts_path, dpi=120)
    plt.close(fig)
    written.append(verdicts_path)

    results = doc.get("results", [])
    seen: set[str] = set()
    xs, ys = [0], [0]
    for r in results:
        fp = r.get("fingerprint")
        if fp:
            seen.add(fp)
        xs.append(r["iteration"] + 1)
        ys.append(len(seen))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.step(xs, ys, where="post", color="#a85248")
    ax.set_xlabel("iteration")
    ax.set_ylabel("unique fingerprints")
    ax.set_title("failure discovery")
    fig.tight_layout()
    discovery_path = os.path.join(out_dir, "discovery.png")
    fig.savefig(discovery_path, dpi=120)
    plt.close(fig)
    written.append(discovery_path)
    return written
