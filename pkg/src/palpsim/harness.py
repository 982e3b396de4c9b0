"""Experiment harness: runs the four assistive modes headlessly with
scripted users, records the evaluation metrics, and provides the summary
statistics (error/time tables, membrane containment, Welch t-tests)."""

import csv
import math
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import t as t_dist

from . import phantom as ph
from . import users as vu
from .config import RunConfig
from .simulate import SimSession

# average cricothyroid membrane size (width x height, mm)
MALE_MEMBRANE = (13.0, 10.0)
FEMALE_MEMBRANE = (10.5, 7.5)


@dataclass
class ExperimentRecord:
    mode: int
    estimate: np.ndarray       # mm
    ground_truth: np.ndarray   # mm
    error_norm: float          # mm, always ||estimate - ground_truth||
    completion_time: float     # s, control handover to landmark recording
    log_path: str = ""
    completed: bool = True
    seed: int = 0
    strategy: str = ""
    extras: dict = None

    @classmethod
    def build(cls, mode, estimate, ground_truth, completion_time, **kw):
        estimate = np.asarray(estimate, dtype=float)
        ground_truth = np.asarray(ground_truth, dtype=float)
        return cls(mode=mode, estimate=estimate, ground_truth=ground_truth,
                   error_norm=float(np.linalg.norm(estimate - ground_truth)),
                   completion_time=float(completion_time), **kw)


def run_mode(mode, model, user=None, config=None, seed=None, log_path=None):
    """Execute one trial of an assistive mode with a scripted user.

    Completion time runs from control handover (t=0) to the moment the
    estimate is recorded; for mode 4 it spans landmark initialization plus
    the autonomous scan.  A timeout flags the record incomplete.
    """
    config = config or RunConfig()
    if user is None:
        user = vu.VirtualUser(
            perception_noise_sigma=config.experiment.perception_sigma,
            reaction_delay=config.experiment.reaction_delay,
            strategy=vu.STRATEGY_FOR_MODE[mode],
            seed=config.experiment.seed,
            depth_noise=config.experiment.depth_noise,
            readout_noise=config.experiment.readout_noise)
    if user.strategy != vu.STRATEGY_FOR_MODE[mode]:
        user = replace(user, strategy=vu.STRATEGY_FOR_MODE[mode])
    if seed is not None:
        user = replace(user, seed=seed)

    session = SimSession(model, config, mode=mode, seed=user.seed,
                         log=log_path is not None)
    session.deadline = config.experiment.timeout_s
    gt = ph.ground_truth_center(model)

    completed = True
    extras = {}
    try:
        estimate, extras = vu.run_strategy(user, session)
    except vu.TrialTimeout:
        completed = False
        estimate = session.state.p.copy()

    if log_path:
        session.log.write_csv(log_path)

    return ExperimentRecord.build(
        mode=mode, estimate=estimate, ground_truth=gt,
        completion_time=session.t, log_path=log_path or "",
        completed=completed, seed=user.seed, strategy=user.strategy,
        extras=extras)


def _trial_worker(args):
    mode, model, config, seed, log_path = args
    return run_mode(mode, model, config=config, seed=seed, log_path=log_path)


def trial_seed(base_seed, mode, index):
    """Deterministic per-trial seed, independent of execution order."""
    return int(np.random.SeedSequence([base_seed, mode, index]).generate_state(1)[0])


def run_batch(mode, model, config=None, trials=10, base_seed=0, jobs=1,
              log_dir=None):
    """Run a batch of independent trials, optionally in parallel.

    Each trial owns its own session and derived seed, so results are
    identical whether run sequentially or across processes.
    """
    config = config or RunConfig()
    args = []
    for i in range(trials):
        log_path = None
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
            log_path = os.path.join(log_dir, f"mode{mode}_trial{i:03d}.csv")
        args.append((mode, model, config, trial_seed(base_seed, mode, i), log_path))
    if jobs > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(jobs) as pool:
            return pool.map(_trial_worker, args)
    return [_trial_worker(a) for a in args]


# -- metrics -----------------------------------------------------------------

def membrane_containment(records, width, height, geometry="ellipse"):
    """Percentage of estimates falling within an average membrane centered
    at ground truth: width along the lateral axis, height along the
    superior-inferior axis."""
    if width <= 0 or height <= 0:
        raise ValueError("membrane size must be positive")
    if not records:
        raise ValueError("no records")
    inside = 0
    for r in records:
        ex = r.estimate[0] - r.ground_truth[0]
        ey = r.estimate[1] - r.ground_truth[1]
        if geometry == "ellipse":
            ok = (ex / (width / 2)) ** 2 + (ey / (height / 2)) ** 2 <= 1.0
        elif geometry == "rect":
            ok = abs(ex) <= width / 2 and abs(ey) <= height / 2
        else:
            raise ValueError(f"unknown containment geometry {geometry!r}")
        inside += bool(ok)
    return 100.0 * inside / len(records)


def two_sided_t_test(a, b, alpha=0.05):
    """Welch's unequal-variance t-test, two-sided.

    Returns {'t', 'df', 'p', 'significant'}.  Degenerate inputs where both
    samples have zero variance are rejected.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least 2 samples per group")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise ValueError("both samples have zero variance")
    na, nb = len(a), len(b)
    se2 = va / na + vb / nb
    t_val = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = 2.0 * t_dist.sf(abs(t_val), df)
    return {"t": float(t_val), "df": float(df), "p": float(p),
            "significant": bool(p < alpha)}


def summarize(records):
    """Per-mode mean and standard deviation of error norm and completion
    time (population std, so a single trial reports sigma = 0)."""
    by_mode = {}
    for r in records:
        by_mode.setdefault(r.mode, []).append(r)
    table = {}
    for mode in sorted(by_mode):
        errs = np.array([r.error_norm for r in by_mode[mode]])
        times = np.array([r.completion_time for r in by_mode[mode]])
        table[mode] = {
            "n": len(errs),
            "error_mean": float(errs.mean()),
            "error_std": float(errs.std(ddof=0)),
            "time_mean": float(times.mean()),
            "time_std": float(times.std(ddof=0)),
        }
    return table


def format_summary(table, containment=None):
    lines = ["mode  n   err_mean  err_std  time_mean  time_std",
             "----  --  --------  -------  ---------  --------"]
    for mode, row in table.items():
        lines.append(f"{mode:>4}  {row['n']:>2}  {row['error_mean']:8.2f}  "
                     f"{row['error_std']:7.2f}  {row['time_mean']:9.1f}  "
                     f"{row['time_std']:8.1f}")
    if containment:
        lines.append("")
        lines.append("containment%:  " + "  ".join(
            f"mode{m}: male {v[0]:.1f} / female {v[1]:.1f}"
            for m, v in containment.items()))
    return "\n".join(lines)


# -- record persistence -------------------------------------------------------

RECORD_FIELDS = ("mode", "seed", "strategy", "ex", "ey", "ez",
                 "gx", "gy", "gz", "error_norm", "completion_time",
                 "completed", "log_path")


def save_records(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.mode, r.seed, r.strategy,
                        *(f"{v:.17g}" for v in r.estimate),
                        *(f"{v:.17g}" for v in r.ground_truth),
                        f"{r.error_norm:.17g}", f"{r.completion_time:.17g}",
                        int(r.completed), r.log_path])


def load_records(path):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            est = np.array([float(row["ex"]), float(row["ey"]), float(row["ez"])])
            gt = np.array([float(row["gx"]), float(row["gy"]), float(row["gz"])])
            records.append(ExperimentRecord(
                mode=int(row["mode"]), estimate=est, ground_truth=gt,
                error_norm=float(row["error_norm"]),
                completion_time=float(row["completion_time"]),
                log_path=row["log_path"], completed=bool(int(row["completed"])),
                seed=int(row["seed"]), strategy=row["strategy"], extras={}))
    return records


def report(records):
    """Summary tables in the style of the evaluation study: error/time per
    mode plus male/female membrane containment percentages."""
    table = summarize(records)
    by_mode = {}
    for r in records:
        by_mode.setdefault(r.mode, []).append(r)
    containment = {
        mode: (membrane_containment(rs, *MALE_MEMBRANE),
               membrane_containment(rs, *FEMALE_MEMBRANE))
        for mode, rs in sorted(by_mode.items())
    }
    return table, containment
