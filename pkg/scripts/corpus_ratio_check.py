"""Recompute average words per sentence from corpus totals.

    python scripts/corpus_ratio_check.py 781330:70750 541603:44964 1033592:44387

Each argument is ``words:sentences``; with no arguments the three totals above
are used.
"""

import sys

from dyadtraits.metrics import CorpusStats

DEFAULT = ["781330:70750", "541603:44964", "1033592:44387"]


def main(argv):
    for spec in argv or DEFAULT:
        words, sentences = (int(x.replace(",", "")) for x in spec.split(":"))
        s = CorpusStats(total_sentences=sentences, total_words=words)
        print(f"{words:>10,} words / {sentences:>7,} sentences = {s.avg_words_per_sentence:.2f}")


if __name__ == "__main__":
    main(sys.argv[1:])
