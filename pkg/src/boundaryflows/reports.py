"""Convergence bookkeeping shared by the zoom/flow pipelines.

A ConvergenceReport holds an index set with matching error values and judges
them converged / diverged / inconclusive over a trailing window.  Rate
helpers fit a geometric ratio or a power-law exponent by least squares on
the log scale.
"""

import csv

import numpy as np

DEFAULT_THRESHOLD = 0.5   # tail max must drop below threshold * head max
DEFAULT_WINDOW = 3


class ConvergenceReport:
    """Errors indexed along a subsequence, with a convergence verdict.

    verdict is "converged" when the trailing-window max is below
    threshold * leading-window max, "diverged" when the tail grew above the
    head, and "inconclusive" otherwise (including too-short sequences).
    """

    def __init__(self, indices, errors, threshold=DEFAULT_THRESHOLD,
                 window=DEFAULT_WINDOW, extras=None, floor=0.0):
        if len(indices) != len(errors):
            raise ValueError("indices and errors must align")
        self.indices = [int(i) for i in indices]
        self.errors = [float(e) for e in errors]
        self.threshold = float(threshold)
        self.window = int(window)
        self.floor = float(floor)
        self.extras = dict(extras) if extras else {}
        self.verdict = self._judge()

    def _judge(self):
        w = self.window
        # a tail at the caller's declared noise floor is converged no matter
        # what the ratios say
        if self.errors and max(self.errors[-w:]) <= self.floor:
            return "converged"
        if len(self.errors) < 2 * w:
            return "inconclusive"
        head = max(self.errors[:w])
        tail = max(self.errors[-w:])
        if head == 0.0:
            return "converged" if tail == 0.0 else "diverged"
        if tail <= self.threshold * head:
            return "converged"
        if tail > head:
            return "diverged"
        return "inconclusive"

    @property
    def converged(self):
        return self.verdict == "converged"

    def geometric_ratio(self):
        """Least-squares slope of log(err) against the index: err ~ C r^n."""
        mask = [e > 0 for e in self.errors]
        idx = np.array([i for i, m in zip(self.indices, mask) if m], dtype=float)
        err = np.array([e for e, m in zip(self.errors, mask) if m], dtype=float)
        if idx.size < 2:
            return float("nan")
        slope = np.polyfit(idx, np.log(err), 1)[0]
        return float(np.exp(slope))

    def powerlaw_exponent(self):
        """Least-squares slope of log(err) against log(index): err ~ C n^p."""
        mask = [e > 0 and i > 0 for i, e in zip(self.indices, self.errors)]
        idx = np.array([i for i, m in zip(self.indices, mask) if m], dtype=float)
        err = np.array([e for e, m in zip(self.errors, mask) if m], dtype=float)
        if idx.size < 2:
            return float("nan")
        return float(np.polyfit(np.log(idx), np.log(err), 1)[0])

    def rows(self):
        for i, e in zip(self.indices, self.errors):
            yield {"index": i, "error": repr(e)}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["index", "error"])
            writer.writeheader()
            for row in self.rows():
                writer.writerow(row)

    def __repr__(self):
        return ("ConvergenceReport(n=%d, first=%.3g, last=%.3g, verdict=%s)"
                % (len(self.errors),
                   self.errors[0] if self.errors else float("nan"),
                   self.errors[-1] if self.errors else float("nan"),
                   self.verdict))
