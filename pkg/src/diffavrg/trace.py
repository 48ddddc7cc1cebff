"""Run traces: per-epoch metrics plus optional per-iteration probes."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

CSV_COLUMNS = ("epoch", "rel_error", "n_g", "n_c", "time_model", "rate_fit")


@dataclass
class RunTrace:
    """Metrics recorded once per (global) epoch.

    ``n_g`` is the cumulative number of per-sample gradient evaluations per
    node (network total divided by ``K``); ``n_c`` is the cumulative number of
    communication rounds per node, i.e. iterations.
    """

    variant: str = ""
    step_size: float = float("nan")
    batch_size: int = 1
    epoch_length: int = 1
    cadence: str = ""
    t_comp: float = 1.0
    t_comm: float = 1.0
    error_mode: str = "relative"
    epochs: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    n_g: list = field(default_factory=list)
    n_c: list = field(default_factory=list)
    # Filled only when the per-iteration probe is on: one row per iteration.
    node_charges: list | None = None
    local_index: list | None = None
    shard_sizes: list | None = None
    rate_fit: tuple | None = None
    diverged_at: int | None = None

    def record(self, epoch, iteration, error, n_g, n_c):
        self.epochs.append(int(epoch))
        self.iterations.append(int(iteration))
        self.errors.append(float(error))
        self.n_g.append(float(n_g))
        self.n_c.append(int(n_c))

    @property
    def time_model(self):
        return [self.t_comp * g + self.t_comm * c for g, c in zip(self.n_g, self.n_c)]

    @property
    def final_error(self):
        return self.errors[-1] if self.errors else float("nan")

    def __len__(self):
        return len(self.epochs)

    def first_epoch_below(self, target):
        """Fractional epoch where the error first drops to ``target``.

        Interpolates log-error linearly between the two bracketing records;
        ``None`` if the target is never reached.
        """
        errs = self.errors
        for j, e in enumerate(errs):
            if e <= target:
                if j == 0:
                    return float(self.epochs[0])
                e0 = errs[j - 1]
                frac = (np.log(e0) - np.log(target)) / (np.log(e0) - np.log(e))
                return self.epochs[j - 1] + frac * (self.epochs[j] - self.epochs[j - 1])
        return None

    def cost_to_reach(self, target):
        """``(n_g, n_c)`` at the first record whose error is at most ``target``."""
        for e, g, c in zip(self.errors, self.n_g, self.n_c):
            if e <= target:
                return g, c
        return None

    def charges_array(self):
        if self.node_charges is None:
            return None
        return np.asarray(self.node_charges, dtype=np.int64)

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# variant={self.variant} step_size={self.step_size!r} batch_size={self.batch_size}\n")
        buf.write(f"# cadence: {self.cadence}\n")
        buf.write(f"# error: {self.error_mode}; time_model = {self.t_comp!r}*n_g + {self.t_comm!r}*n_c\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        times = self.time_model
        last = len(self.epochs) - 1
        for j in range(len(self.epochs)):
            rate = ""
            if j == last and self.rate_fit is not None:
                rate = repr(float(self.rate_fit[0]))
            writer.writerow(
                [self.epochs[j], repr(self.errors[j]), repr(self.n_g[j]), self.n_c[j], repr(times[j]), rate]
            )
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def read_trace_csv(path):
    """Load the columns written by :meth:`RunTrace.to_csv`.

    Raises :class:`InvalidInput` when required columns are missing or a
    value does not parse.
    """
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines)
    missing = set(CSV_COLUMNS[:4]) - set(reader.fieldnames or ())
    if missing:
        raise InvalidInput(f"{path}: not a trace CSV, missing columns {sorted(missing)}")
    trace = RunTrace()
    for line_no, row in enumerate(reader, start=2):
        try:
            trace.record(int(row["epoch"]), int(row["n_c"]), float(row["rel_error"]), float(row["n_g"]), int(row["n_c"]))
            if row.get("rate_fit"):
                trace.rate_fit = (float(row["rate_fit"]), float("nan"))
        except (TypeError, ValueError) as exc:
            raise InvalidInput(f"{path}: bad trace row {line_no}: {exc}") from None
    return trace
