"""Regenerate published_7b.jsonl: 100 judged examples per dataset whose
post-penalty totals sum to the published per-dataset 7B scores."""

import json
import random

CRITERIA = [
    "logical_progression",
    "temporal_alignment",
    "spatial_grounding",
    "continuation",
    "clarity",
    "semantic_alignment",
]
RAW_LABELS = [
    "Logical progression",
    "Temporal sequencing",
    "Spatial grounding",
    "Continuation",
    "Clarity",
    "Semantic alignment",
]
# dataset -> published macro accuracy (%) for 100 examples
TARGETS = {
    "CC4D": 39.1,
    "COIN": 46.7,
    "CrTk": 48.0,
    "EgPL": 52.4,
    "EgPER": 38.4,
    "EgEx": 44.0,
    "NIV": 55.9,
}
N = 100
FATAL = 6
FLUFF = 10
RAW = 15


def split_total(rng, total, caps):
    scores = [0] * 6
    for _ in range(total):
        open_ = [i for i in range(6) if scores[i] < caps[i]]
        scores[rng.choice(open_)] += 1
    return scores


def main():
    rng = random.Random(20240611)
    lines = []
    for dataset, pct in TARGETS.items():
        points = round(pct * N * 30 / 100)
        live = N - FATAL
        totals = [points // live + (1 if i < points % live else 0) for i in range(live)]
        for _ in range(400):
            a, b = rng.randrange(live), rng.randrange(live)
            if totals[a] > 4 and totals[b] < 26:
                totals[a] -= 1
                totals[b] += 1
        kinds = ["fluff"] * FLUFF + ["raw"] * RAW + ["plain"] * (live - FLUFF - RAW)
        rng.shuffle(kinds)
        examples = []
        for total, kind in zip(totals, kinds):
            if kind == "fluff":
                total = min(total, 22)
            caps = [5, 5, 5, 5, 2, 2] if kind == "fluff" else [5] * 6
            examples.append((kind, split_total(rng, total, caps)))
        # fluff caps lowered some totals; hand the difference to plain examples
        deficit = points - sum(sum(s) for _, s in examples)
        while deficit > 0:
            kind, s = examples[rng.randrange(live)]
            open_ = [i for i in range(6) if s[i] < 5]
            if kind == "plain" and open_:
                s[rng.choice(open_)] += 1
                deficit -= 1
        for _ in range(FATAL):
            examples.append(("fatal", [rng.randint(0, 5) for _ in range(6)]))
        rng.shuffle(examples)
        for n, (kind, s) in enumerate(examples):
            rec = {"dataset": dataset, "id": f"{dataset}-{n:03d}"}
            if kind == "raw":
                parts = [f"{label}: {v}" for label, v in zip(RAW_LABELS, s)]
                rec["raw_output"] = "Scores. " + "; ".join(parts) + "."
            else:
                raw = list(s)
                if kind == "fluff":
                    raw[4] = rng.randint(2, 5) if s[4] == 2 else s[4]
                    raw[5] = rng.randint(2, 5) if s[5] == 2 else s[5]
                    rec["fluff"] = True
                if kind == "fatal":
                    rec["fatal"] = True
                    rec["fluff"] = rng.random() < 0.5
                rec["scores"] = dict(zip(CRITERIA, raw))
            lines.append(json.dumps(rec))
    with open("published_7b.jsonl", "w") as f:
        f.write("\n".join(lines) + "\n")
    with open("splits.json", "w") as f:
        json.dump({"in_domain": ["CC4D", "COIN", "CrTk", "EgPL"], "zero_shot": ["EgPER", "EgEx", "NIV"]}, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
