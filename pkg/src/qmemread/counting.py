"""Time-tagged detection logs and coincidence statistics.

Events are rows ``trial,channel,t_ns`` with channels F1A/F1B (the heralding
field behind a fiber beamsplitter) and F2A/F2B (the retrieved field).  From
per-trial occupancies the module derives the single and joint detection
probabilities, the normalized correlations

    g11 = p11 / p1^2 ,   g22 = p22 / p2^2 ,   g12 = p12 / (p1 p2) ,

the Cauchy-Schwarz parameter R = g12^2 / (g11 g22) (R > 1 is nonclassical,
as is g12 > 2), the conditional retrieval probability p_c = p12 / p1, and
time-resolved heralded wavepackets.  A synthetic-log generator driven by the
closed-form wavepacket provides end-to-end pipeline tests.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .params import ParamError, ReadoutParams
from .wavepacket import pc_at

CHANNELS = ("F1A", "F1B", "F2A", "F2B")
_CODE = {name: i for i, name in enumerate(CHANNELS)}
FIELD1_CODES = (0, 1)
FIELD2_CODES = (2, 3)

DEFAULT_TRIAL_WINDOW_NS = 1500  # detector-on period per trial


class StatsError(ValueError):
    """Statistics are undefined for the requested data (e.g. no trials)."""


class ModelError(ValueError):
    """The synthesis model is inconsistent (e.g. P_c > 1)."""


@dataclass(frozen=True)
class DetectionEvent:
    """One photodetection: trial index, channel name, time tag in ns."""

    trial_id: int
    channel: str
    t_ns: int


@dataclass
class EventStore:
    """Columnar store of detection events, sorted by (trial, t, channel).

    ``parse_errors`` lists (line_number, reason) for rejected malformed
    lines; ``n_rejected_channel`` counts well-formed rows with an unknown
    channel; exact duplicate rows are collapsed into ``n_duplicates``.
    """

    trial: np.ndarray
    channel: np.ndarray         # int8 codes into CHANNELS
    t_ns: np.ndarray
    n_trials: int
    trial_window_ns: int = DEFAULT_TRIAL_WINDOW_NS
    n_duplicates: int = 0
    n_rejected_channel: int = 0
    parse_errors: list = field(default_factory=list)

    def __len__(self):
        return self.trial.size

    def events(self):
        """Iterate events as DetectionEvent records."""
        for tr, ch, t in zip(self.trial.tolist(), self.channel.tolist(),
                             self.t_ns.tolist()):
            yield DetectionEvent(tr, CHANNELS[ch], t)


def _dedupe_sorted(trial, channel, t_ns):
    """Collapse exact duplicate (trial, channel, t) rows; assumes sorted."""
    if trial.size == 0:
        return trial, channel, t_ns, 0
    keep = np.ones(trial.size, dtype=bool)
    keep[1:] = ((trial[1:] != trial[:-1]) | (t_ns[1:] != t_ns[:-1])
                | (channel[1:] != channel[:-1]))
    removed = int(trial.size - keep.sum())
    return trial[keep], channel[keep], t_ns[keep], removed


def _sorted_store(trial, channel, t_ns, n_trials, window, rejected, errors,
                  warn_duplicates=True):
    trial = np.asarray(trial, dtype=np.int64)
    channel = np.asarray(channel, dtype=np.int8)
    t_ns = np.asarray(t_ns, dtype=np.int64)
    order = np.lexsort((channel, t_ns, trial))
    trial, channel, t_ns = trial[order], channel[order], t_ns[order]
    trial, channel, t_ns, dups = _dedupe_sorted(trial, channel, t_ns)
    if dups and warn_duplicates:
        warnings.warn(f"collapsed {dups} duplicate detection record(s)",
                      stacklevel=3)
    if n_trials is None:
        n_trials = int(trial[-1]) + 1 if trial.size else 0
    return EventStore(trial=trial, channel=channel, t_ns=t_ns,
                      n_trials=int(n_trials), trial_window_ns=int(window),
                      n_duplicates=dups, n_rejected_channel=rejected,
                      parse_errors=errors)


def ingest(source, n_trials=None, trial_window_ns=DEFAULT_TRIAL_WINDOW_NS) -> EventStore:
    """Parse a detection log into an EventStore.

    ``source`` is a file path, an open text stream, or an iterable of lines
    in the format ``trial,channel,t_ns`` (header row optional).  Malformed
    lines are skipped and reported with their line number in
    ``parse_errors``; rows with an unknown channel are tallied; duplicate
    rows are collapsed with a warning.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return ingest(fh, n_trials=n_trials, trial_window_ns=trial_window_ns)

    trials, chans, times = [], [], []
    rejected = 0
    errors = []
    reader = csv.reader(source)
    for lineno, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if lineno == 1 and row[0].strip().lower() == "trial":
            continue
        if len(row) != 3:
            errors.append((lineno, f"expected 3 fields, got {len(row)}"))
            continue
        ch = row[1].strip()
        try:
            tr = int(row[0])
            t = int(row[2])
        except ValueError:
            errors.append((lineno, "non-integer trial or time"))
            continue
        if tr < 0:
            errors.append((lineno, "negative trial index"))
            continue
        if not (0 <= t < trial_window_ns):
            errors.append((lineno, f"time {t} outside trial window "
                                   f"[0, {trial_window_ns})"))
            continue
        if ch not in _CODE:
            rejected += 1
            continue
        if n_trials is not None and tr >= n_trials:
            errors.append((lineno, f"trial {tr} >= n_trials {n_trials}"))
            continue
        trials.append(tr)
        chans.append(_CODE[ch])
        times.append(t)
    return _sorted_store(np.array(trials, dtype=np.int64),
                         np.array(chans, dtype=np.int8),
                         np.array(times, dtype=np.int64),
                         n_trials, trial_window_ns, rejected, errors)


def write_log(store: EventStore, path):
    """Write a store back to ``trial,channel,t_ns`` CSV (with header)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trial,channel,t_ns\n")
        for tr, ch, t in zip(store.trial.tolist(), store.channel.tolist(),
                             store.t_ns.tolist()):
            fh.write(f"{tr},{CHANNELS[ch]},{t}\n")


@dataclass
class CorrelationSummary:
    """Per-trial probabilities, normalized correlations and their errors.

    Quantities that are undefined for the data (zero denominators) are None;
    everything else is still computed.  Uncertainties are binomial standard
    errors on probabilities, propagated to first order for the ratios.
    """

    n_trials: int
    p1: float = 0.0
    p2: float = 0.0
    p11: float = 0.0
    p22: float = 0.0
    p12: float = 0.0
    u_p1: float = 0.0
    u_p2: float = 0.0
    u_p11: float = 0.0
    u_p22: float = 0.0
    u_p12: float = 0.0
    g11: float | None = None
    g22: float | None = None
    g12: float | None = None
    r_cs: float | None = None
    pc_total: float | None = None
    u_g11: float | None = None
    u_g22: float | None = None
    u_g12: float | None = None
    u_r_cs: float | None = None
    u_pc_total: float | None = None
    quantum_g12: bool | None = None
    cauchy_schwarz_violated: bool | None = None

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _binom_se(p, n):
    return math.sqrt(p * (1.0 - p) / n)


def probabilities(store: EventStore, window1, window2) -> CorrelationSummary:
    """Single and joint per-trial detection probabilities.

    ``window1``/``window2`` are inclusive (lo, hi) ns ranges applied to the
    heralding and retrieved field respectively.  p11 (p22) is the fraction
    of trials with a count on both detectors of field 1 (2), the
    beamsplitter-pair coincidence.
    """
    if store.n_trials <= 0:
        raise StatsError("no trials: probabilities are undefined")
    for name, (lo, hi) in (("window1", window1), ("window2", window2)):
        if not (0 <= lo <= hi < store.trial_window_ns):
            raise ParamError([name], f"{name} must lie within the trial window")

    occ = _occupancy(store, window1, window2)
    f1 = occ[0] | occ[1]
    f2 = occ[2] | occ[3]
    n = store.n_trials
    s = CorrelationSummary(n_trials=n)
    s.p1 = float(np.count_nonzero(f1)) / n
    s.p2 = float(np.count_nonzero(f2)) / n
    s.p11 = float(np.count_nonzero(occ[0] & occ[1])) / n
    s.p22 = float(np.count_nonzero(occ[2] & occ[3])) / n
    s.p12 = float(np.count_nonzero(f1 & f2)) / n
    s.u_p1, s.u_p2 = _binom_se(s.p1, n), _binom_se(s.p2, n)
    s.u_p11, s.u_p22 = _binom_se(s.p11, n), _binom_se(s.p22, n)
    s.u_p12 = _binom_se(s.p12, n)
    return s


def _occupancy(store, window1, window2):
    """Boolean per-trial occupancy for each channel in its field's window."""
    occ = []
    for code in range(4):
        lo, hi = window1 if code in FIELD1_CODES else window2
        mask = (store.channel == code) & (store.t_ns >= lo) & (store.t_ns <= hi)
        flags = np.zeros(store.n_trials, dtype=bool)
        flags[store.trial[mask]] = True
        occ.append(flags)
    return occ


def _ratio_err(value, parts):
    """First-order relative-error propagation for a product/ratio."""
    acc = 0.0
    for u, p in parts:
        if p <= 0:
            return None
        acc += (u / p) ** 2
    return abs(value) * math.sqrt(acc)


def correlations(summary: CorrelationSummary) -> CorrelationSummary:
    """Fill the normalized correlations, R, p_c and nonclassicality flags.

    g12 > 2 marks nonclassical cross-correlation; r_cs > 1 violates the
    Cauchy-Schwarz bound for classical fields.  Both comparisons are exact
    (no hidden tolerance).  Undefined quantities stay None.
    """
    s = summary
    if s.p1 > 0:
        s.g11 = s.p11 / s.p1 ** 2
        s.u_g11 = (_ratio_err(s.g11, [(s.u_p11, s.p11), (2 * s.u_p1, s.p1)])
                   if s.p11 > 0 else s.u_p11 / s.p1 ** 2)
        s.pc_total = s.p12 / s.p1
        s.u_pc_total = (_ratio_err(s.pc_total, [(s.u_p12, s.p12), (s.u_p1, s.p1)])
                        if s.p12 > 0 else s.u_p12 / s.p1)
    if s.p2 > 0:
        s.g22 = s.p22 / s.p2 ** 2
        s.u_g22 = (_ratio_err(s.g22, [(s.u_p22, s.p22), (2 * s.u_p2, s.p2)])
                   if s.p22 > 0 else s.u_p22 / s.p2 ** 2)
    if s.p1 > 0 and s.p2 > 0:
        s.g12 = s.p12 / (s.p1 * s.p2)
        s.u_g12 = (_ratio_err(s.g12, [(s.u_p12, s.p12), (s.u_p1, s.p1),
                                      (s.u_p2, s.p2)])
                   if s.p12 > 0 else s.u_p12 / (s.p1 * s.p2))
        s.quantum_g12 = s.g12 > 2
    if s.g12 is not None and s.g11 and s.g22:
        s.r_cs = s.g12 ** 2 / (s.g11 * s.g22)
        parts = [(2 * (s.u_g12 or 0), s.g12), (s.u_g11, s.g11), (s.u_g22, s.g22)]
        s.u_r_cs = _ratio_err(s.r_cs, parts) if s.g12 > 0 else None
        s.cauchy_schwarz_violated = s.r_cs > 1
    return s


@dataclass(frozen=True)
class BinnedWavepacket:
    """Heralded wavepacket: per-bin p_c, per-bin g12 and raw counts."""

    t_lo_ns: np.ndarray
    t_hi_ns: np.ndarray
    pc: np.ndarray
    g12: np.ndarray
    n_coinc: np.ndarray
    n_heralds: int
    n_trials: int

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t_lo_ns,t_hi_ns,pc,g12,n_coinc\n")
            for lo, hi, pc, g, c in zip(self.t_lo_ns.tolist(), self.t_hi_ns.tolist(),
                                        self.pc.tolist(), self.g12.tolist(),
                                        self.n_coinc.tolist()):
                fh.write(f"{lo},{hi},{pc:.12g},{g:.12g},{c}\n")


def conditional_wavepacket(store: EventStore, herald_window, bin_width_ns=1,
                           t_range=None) -> BinnedWavepacket:
    """Time-resolved p_c(t) and g12(t) conditioned on a field-1 herald.

    p_c per bin counts field-2 detections in heralded trials divided by the
    number of heralds; g12(t) = p_c(t) / p2(t) with p2(t) the unconditional
    per-bin field-2 probability.  ``bin_width_ns`` >= 1 (use 1 ns for
    wavepackets, wider bins for correlation traces).
    """
    if bin_width_ns < 1:
        raise ParamError(["bin_width_ns"], "bin width must be >= 1 ns")
    if store.n_trials <= 0:
        raise StatsError("no trials")
    lo_h, hi_h = herald_window
    herald_mask = np.zeros(store.n_trials, dtype=bool)
    sel = ((np.isin(store.channel, FIELD1_CODES)) &
           (store.t_ns >= lo_h) & (store.t_ns <= hi_h))
    herald_mask[store.trial[sel]] = True
    n_heralds = int(np.count_nonzero(herald_mask))
    if n_heralds == 0:
        raise StatsError("empty herald set: conditional wavepacket undefined")

    lo, hi = t_range if t_range is not None else (0, store.trial_window_ns)
    n_bins = int((hi - lo) // bin_width_ns)
    if n_bins < 1:
        raise ParamError(["t_range"], "range shorter than one bin")
    hi = lo + n_bins * bin_width_ns

    is_f2 = np.isin(store.channel, FIELD2_CODES)
    in_range = (store.t_ns >= lo) & (store.t_ns < hi)
    f2_all = is_f2 & in_range
    f2_her = f2_all & herald_mask[store.trial]

    idx_all = (store.t_ns[f2_all] - lo) // bin_width_ns
    idx_her = (store.t_ns[f2_her] - lo) // bin_width_ns
    counts_all = np.bincount(idx_all, minlength=n_bins).astype(np.int64)
    counts_her = np.bincount(idx_her, minlength=n_bins).astype(np.int64)

    pc = counts_her / n_heralds
    p2 = counts_all / store.n_trials
    with np.errstate(divide="ignore", invalid="ignore"):
        g12 = np.where(p2 > 0, pc / p2, np.nan)
    edges = lo + bin_width_ns * np.arange(n_bins + 1)
    return BinnedWavepacket(t_lo_ns=edges[:-1], t_hi_ns=edges[1:], pc=pc,
                            g12=g12, n_coinc=counts_her,
                            n_heralds=n_heralds, n_trials=store.n_trials)


@dataclass(frozen=True)
class SynthDesign:
    """Trial structure for the synthetic-log generator.

    Field-1 heralds fire with probability ``p1`` at ``herald_t_ns``; on a
    herald, a field-2 detection is drawn with probability P_c at a time
    sampled from the normalized wavepacket, offset by ``read_start_ns``.
    ``background_per_ns`` adds uncorrelated counts on every channel.
    """

    n_trials: int
    p1: float
    window_ns: int = DEFAULT_TRIAL_WINDOW_NS
    herald_t_ns: int = 20
    read_start_ns: int = 50
    read_window_ns: int = 300
    background_per_ns: float = 0.0

    def __post_init__(self):
        bad = []
        if self.n_trials < 1:
            bad.append("n_trials")
        if not (0 < self.p1 <= 1):
            bad.append("p1")
        if self.window_ns < 2:
            bad.append("window_ns")
        if not (0 <= self.herald_t_ns < self.window_ns):
            bad.append("herald_t_ns")
        if not (0 <= self.read_start_ns < self.window_ns):
            bad.append("read_start_ns")
        if self.read_window_ns < 1:
            bad.append("read_window_ns")
        if self.background_per_ns < 0:
            bad.append("background_per_ns")
        if bad:
            raise ParamError(bad)


def synthesize_log(params: ReadoutParams, design: SynthDesign, seed) -> EventStore:
    """Generate a detection log from the closed-form wavepacket.

    Deterministic for a fixed seed (fixed draw order: heralds, herald
    channels, emissions, emission times, field-2 channels, then backgrounds
    channel by channel).  Raises ModelError if the integrated wavepacket
    exceeds 1, which would make the per-trial emission draw inconsistent.
    """
    rng = np.random.default_rng(seed)
    t_max_ns = min(design.read_window_ns, design.window_ns - design.read_start_ns)
    grid = np.linspace(0.0, t_max_ns * 1e-3, 4 * t_max_ns + 1)
    dens = pc_at(grid, params)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1])
                                           * np.diff(grid))])
    total_pc = float(cdf[-1])
    if total_pc > 1.0:
        raise ModelError(f"integrated wavepacket P_c = {total_pc:.4g} > 1; "
                         "reduce scale_f or the sampling window")

    herald_mask = rng.random(design.n_trials) < design.p1
    her_trials = np.flatnonzero(herald_mask)
    n_her = her_trials.size
    her_chan = rng.integers(0, 2, n_her).astype(np.int8)

    if total_pc > 0 and n_her:
        emit = rng.random(n_her) < total_pc
        u = rng.random(int(np.count_nonzero(emit)))
        t_sig = np.interp(u * total_pc, cdf, grid)
        t2 = design.read_start_ns + np.floor(t_sig * 1e3).astype(np.int64)
        t2 = np.minimum(t2, design.window_ns - 1)
        sig_trials = her_trials[emit]
        sig_chan = (2 + rng.integers(0, 2, sig_trials.size)).astype(np.int8)
    else:
        sig_trials = np.empty(0, dtype=np.int64)
        sig_chan = np.empty(0, dtype=np.int8)
        t2 = np.empty(0, dtype=np.int64)

    all_trials = [her_trials, sig_trials]
    all_chans = [her_chan, sig_chan]
    all_times = [np.full(n_her, design.herald_t_ns, dtype=np.int64), t2]

    if design.background_per_ns > 0:
        lam = design.background_per_ns * design.window_ns
        for code in range(4):
            counts = rng.poisson(lam, design.n_trials)
            tot = int(counts.sum())
            all_trials.append(np.repeat(np.arange(design.n_trials), counts))
            all_chans.append(np.full(tot, code, dtype=np.int8))
            all_times.append(rng.integers(0, design.window_ns, tot))

    return _sorted_store(np.concatenate(all_trials),
                         np.concatenate(all_chans),
                         np.concatenate(all_times),
                         design.n_trials, design.window_ns, 0, [],
                         warn_duplicates=False)
