"""Bundled synthetic translation task for demos and end-to-end tests.

Two invented languages are related by a fixed word substitution plus
word-order reversal, so the mapping is deterministic, learnable by a
small model in minutes, and has a known exact reference translation for
every sentence. Run ``python -m interlingua.toy OUTDIR`` to write the
text files.

A third synthetic language can be derived from any line set by renaming
every word with a fixed prefix; it is word-for-word parallel to its
source, which makes it handy for language-extension experiments.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from .seeding import derive_rng

SOURCE_WORDS = (
    "taru", "mesi", "konda", "pelo", "rika", "suvan", "tiko", "brela",
    "soma", "quon", "delfi", "runo", "yaska", "pelma", "droka", "zinti",
    "golu", "ferin", "vablo", "nir",
)

TARGET_WORDS = (
    "ulme", "satre", "bovik", "melo", "daru", "ponti", "gresa", "vilok",
    "hanu", "telpa", "mirok", "seva", "lodra", "kipun", "aster", "folny",
    "ugra", "wemik", "oshta", "pru",
)

WORD_MAP = dict(zip(SOURCE_WORDS, TARGET_WORDS))

MIN_WORDS = 3
MAX_WORDS = 8


def translate_line(line: str) -> str:
    """Exact reference translation: substitute every word, reverse the order."""
    words = line.split()
    return " ".join(WORD_MAP[w] for w in reversed(words))


def toy_pairs(count: int, seed: int = 0, stream: str = "train") -> list[tuple[str, str]]:
    rng = derive_rng(seed, "toy", stream)
    pairs = []
    for _ in range(count):
        length = int(rng.integers(MIN_WORDS, MAX_WORDS + 1))
        words = [SOURCE_WORDS[i] for i in rng.integers(0, len(SOURCE_WORDS), size=length)]
        src = " ".join(words)
        pairs.append((src, translate_line(src)))
    return pairs


def renamed_lines(lines: list[str], prefix: str = "z") -> list[str]:
    """Word-for-word parallel copy with every word renamed."""
    return [" ".join(prefix + w for w in line.split()) for line in lines]


def write_toy_task(out_dir, n_train: int = 32, n_test: int = 8, seed: int = 0) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for stream, count in (("train", n_train), ("test", n_test)):
        pairs = toy_pairs(count, seed=seed, stream=stream)
        for side, idx in (("x", 0), ("y", 1)):
            path = out / f"{stream}.{side}"
            path.write_text("\n".join(p[idx] for p in pairs) + "\n", encoding="utf-8")
            paths[f"{stream}_{side}"] = path
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m interlingua.toy",
        description="write the bundled synthetic translation task to a directory",
    )
    parser.add_argument("out_dir", help="directory for train/test text files")
    parser.add_argument("--train-pairs", type=int, default=32)
    parser.add_argument("--test-pairs", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    paths = write_toy_task(args.out_dir, args.train_pairs, args.test_pairs, args.seed)
    for key in sorted(paths):
        print(f"{key}: {paths[key]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
