"""Independent reference computations used by the test-suite."""

from fractions import Fraction


def fleiss_kappa_exact(table):
    """Direct evaluation of Fleiss' formula in exact rationals.

    Returns None when chance agreement is 1 (kappa undefined by the formula).
    """
    N = len(table)
    k = len(table[0])
    n = sum(table[0])
    per_row = []
    for row in table:
        agree = Fraction(0)
        # pairs of raters agreeing on this subject, counted directly
        for c in row:
            agree += Fraction(c * (c - 1))
        per_row.append(agree / (n * (n - 1)))
    p_bar = sum(per_row, Fraction(0)) / N
    p_j = [Fraction(sum(row[j] for row in table), N * n) for j in range(k)]
    p_e = sum((p * p for p in p_j), Fraction(0))
    if p_e == 1:
        return None
    return (p_bar - p_e) / (1 - p_e)
