"""Bundled benchmark-shaped peptide datasets and their generator.

The package ships two CSV files, ACPs250 (250 positive / 250 negative) and
Independent (150/150), matching the record counts, balance and file layout
of the public anticancer-peptide benchmarks of the same names.  The bundled
sequences themselves are synthetic stand-ins: the original collections are
not redistributable here, so records are drawn from a generative grammar
that mirrors the biology the classifiers are supposed to pick up.

Positive-grammar peptides are cationic-amphipathic: a lysine/arginine-rich
amino-terminal block followed by a hydrophobic repeat region and a short
tail.  Negatives are either polar/acidic peptides (easy) or, crucially,
order-swapped positives built from the same blocks (hard): their residue and
k-mer composition matches the positive class and only the global arrangement
differs, so composition-only models hit a ceiling while order-aware models
can separate them.  A small fraction of records swaps grammars entirely,
acting as label noise.  A handful of published example rows are kept
verbatim at their usual positions.

Everything is deterministic: fixed seeds, fixed counts.
"""

from __future__ import annotations

import os
from importlib import resources

import numpy as np

from .seqdata import Dataset, load_dataset

CATIONIC = ("KRWFGA", (0.42, 0.18, 0.11, 0.11, 0.06, 0.12))
HYDROPHOBIC = ("LIAFVW", (0.33, 0.15, 0.18, 0.16, 0.12, 0.06))
LINKER = ("KSGQRH", (0.40, 0.15, 0.12, 0.10, 0.13, 0.10))
POLAR = ("DESTNQGP", (0.17, 0.17, 0.16, 0.13, 0.11, 0.10, 0.10, 0.06))
MIXED = ("LAVKGSTPE", (0.12, 0.14, 0.10, 0.12, 0.12, 0.12, 0.10, 0.08, 0.10))
TAIL = ("GAPK", (0.40, 0.30, 0.15, 0.15))

# published sample rows kept verbatim: sample id -> (sequence, label)
ACPS250_FIXED = {
    1: ("KWKLFFKKIEKVGQNIRDGIIKAGPAVA", 0),
    2: ("FLPAIVGAAAKFLPKIFCAISKKC", 0),
    499: ("FLPIVTNLLSGLL", 1),
    500: ("GALRGCWTKSYPPKPKCK", 1),
}
INDEPENDENT_FIXED = {
    1: ("AAKKWAKAKWAKAKKWKAAA", 0),
    2: ("AAVPIVNLKDELLFPSWEALFSGSE", 0),
    299: ("VTSWSLCTPGCTSPGGGSNCSFCC", 1),
    300: ("YVPLPNVPQPGRRPFPTFPGQG", 1),
}

GENERATOR_SETTINGS = {
    "ACPs250": dict(
        n_negative=250, n_positive=250, seed=764501,
        hard_negative_fraction=0.35, grammar_noise=0.05,
        fixed_rows=ACPS250_FIXED,
    ),
    "Independent": dict(
        n_negative=150, n_positive=150, seed=911702,
        hard_negative_fraction=0.25, grammar_noise=0.02,
        fixed_rows=INDEPENDENT_FIXED,
    ),
}


def _block(rng, pool, length):
    letters, weights = pool
    idx = rng.choice(len(letters), size=length, p=np.array(weights))
    return "".join(letters[i] for i in idx)


def _active_parts(rng):
    head = _block(rng, CATIONIC, int(rng.integers(4, 9)))
    units = []
    for _ in range(int(rng.integers(3, 7))):
        units.append(_block(rng, HYDROPHOBIC, 2) + _block(rng, LINKER, 1))
    tail = _block(rng, TAIL, int(rng.integers(0, 4)))
    return head, "".join(units), tail


def active_sequence(rng) -> str:
    """Positive grammar: cationic head, amphipathic core, short tail."""
    head, core, tail = _active_parts(rng)
    return head + core + tail


def swapped_sequence(rng) -> str:
    """Hard negative: the same blocks as a positive, arranged core-first."""
    head, core, tail = _active_parts(rng)
    return core + head + tail


def polar_sequence(rng) -> str:
    """Easy negative: polar/acidic segments, length-matched to positives."""
    target = int(rng.integers(4, 9)) + 3 * int(rng.integers(3, 7)) + int(
        rng.integers(0, 4)
    )
    chunks = []
    total = 0
    while total < target:
        pool = POLAR if rng.random() < 0.6 else MIXED
        n = int(rng.integers(2, 6))
        chunks.append(_block(rng, pool, n))
        total += n
    return "".join(chunks)[:target]


def synthesize(name, n_negative, n_positive, seed, hard_negative_fraction,
               grammar_noise, fixed_rows=None) -> list[tuple[int, str, int]]:
    """Deterministic record list (sample, sequence, label), negatives first."""
    rng = np.random.default_rng(seed)
    fixed_rows = fixed_rows or {}

    def negative_grammar():
        if rng.random() < hard_negative_fraction:
            return swapped_sequence(rng)
        return polar_sequence(rng)

    rows = []
    for sample in range(1, n_negative + n_positive + 1):
        label = 0 if sample <= n_negative else 1
        if sample in fixed_rows:
            seq, fixed_label = fixed_rows[sample]
            rows.append((sample, seq, fixed_label))
            continue
        noisy = rng.random() < grammar_noise
        wants_positive = (label == 1) != noisy
        seq = active_sequence(rng) if wants_positive else negative_grammar()
        rows.append((sample, seq, label))
    return rows


def write_csv(rows, path):
    lines = ["sample,content,label"]
    lines += [f"{s},{seq},{label}" for s, seq, label in rows]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def generate_default_files(out_dir) -> dict[str, str]:
    """Regenerate both bundled CSVs into a directory."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, settings in GENERATOR_SETTINGS.items():
        rows = synthesize(name, **settings)
        path = os.path.join(out_dir, f"{name}.csv")
        write_csv(rows, path)
        paths[name] = path
    return paths


def packaged_path(name: str) -> str:
    """Filesystem path of a bundled dataset CSV."""
    if name not in GENERATOR_SETTINGS:
        raise KeyError(
            f"unknown dataset {name!r}; bundled: {sorted(GENERATOR_SETTINGS)}"
        )
    return str(resources.files("pepclf").joinpath(f"data/{name}.csv"))


def load_packaged(name: str) -> Dataset:
    return load_dataset(packaged_path(name), format="csv")


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="regenerate the bundled datasets")
    parser.add_argument("--out", default="data", help="output directory")
    args = parser.parse_args()
    for name, path in generate_default_files(args.out).items():
        print(f"wrote {path}")
