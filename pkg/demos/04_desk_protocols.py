"""Run the robustness, masking-ablation and SSL protocols.

The protocols are meant for qsar_bio and a 4000-row htru2 subsample.  When
the UCI files are not in ``$MIRRAMS_DATA_DIR`` this script falls back to
the synthetic surrogates from ``mirrams.benchmarks``, which only match the
real data in size, width and class balance.  Results from surrogates show
how the pipeline behaves, not how MIRRAMS does on the real benchmarks.

Usage::

    python demos/04_desk_protocols.py [robustness|ablation|ssl ...]

Writes ``demos/results/<protocol>_<dataset>.json``.
"""

import json
import sys
from pathlib import Path

from mirrams import protocols
from mirrams.benchmarks import DatasetUnavailable, load_benchmark, make_surrogate

OUT = Path(__file__).resolve().parent / "results"


def dataset(name):
    try:
        return load_benchmark(name), name
    except DatasetUnavailable as exc:
        print(f"[{name}] {exc}\n[{name}] using the synthetic surrogate instead")
        return make_surrogate(name), f"surrogate_{name}"


def save(kind, label, result):
    OUT.mkdir(exist_ok=True)
    path = OUT / f"{kind}_{label}.json"
    path.write_text(json.dumps(result.to_dict(), indent=2, default=float) + "\n")
    print(f"wrote {path.relative_to(OUT.parent.parent)} ({result.seconds:.0f} s)")


def robustness():
    for name in ("qsar_bio", "htru2"):
        ds, label = dataset(name)
        res = protocols.robustness(ds)
        print(f"[{label}] drop 0.1->0.3: MIRRAMS {100 * res.drop_mirrams:.2f}, "
              f"plain CE {100 * res.drop_plain:.2f} (gap {100 * res.degradation_gap:.2f} points)")
        print(f"[{label}] AUC at 0.3: MIRRAMS {100 * sum(res.mirrams[0.3]) / 3:.2f}, "
              f"logistic {100 * res.baseline[0.3]:.2f} (margin {100 * res.margin_over_baseline:.2f})")
        save("robustness", label, res)


def ablation():
    ds, label = dataset("qsar_bio")
    res = protocols.masking_ablation(ds)
    print(f"[{label}] validation AUC r=0.3 vs r=0: gain {100 * res.mean_gain:.2f} points, "
          f"better on {res.seeds_improved}/3 seeds")
    save("ablation", label, res)


def ssl():
    ds, label = dataset("htru2")
    res = protocols.ssl_comparison(ds)
    print(f"[{label}] AUC at 0.2: SSL {100 * sum(res.ssl) / 3:.2f}, supervised "
          f"{100 * sum(res.supervised) / 3:.2f}, labeled-only CE {100 * sum(res.labeled_only) / 3:.2f}")
    save("ssl", label, res)


if __name__ == "__main__":
    steps = {"robustness": robustness, "ablation": ablation, "ssl": ssl}
    for name in sys.argv[1:] or list(steps):
        steps[name]()
