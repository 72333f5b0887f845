"""Trial scoring, EER/DET computation, confusion matrices and report rendering."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascade import (MODES, ONE_STAGE, THREE_STAGE, TWO_STAGE_EMOTION, TWO_STAGE_GENDER, WORST_CASE,
                      BatchScorer, CascadeConfig, forced, mode_score, worst_case_labels)
from .errors import DegenerateTrialSet
from .manifest import GENDERS, DatasetManifest, Entry

log = logging.getLogger(__name__)

TRIAL_COLUMNS = (
    "utterance", "claimed", "true_speaker", "gender_true", "gender_decided", "emotion_true",
    "emotion_decided", "mode", "lambda", "target_term", "wrong_emotion_term", "wrong_gender_term", "accept",
)


@dataclass
class TrialScore:
    score: float
    is_target: bool
    emotion_true: str = ""
    gender_true: str = ""
    mode: str = ""
    utterance: str = ""
    claimed: str = ""
    true_speaker: str = ""
    gender_decided: str = ""
    emotion_decided: str = ""
    target_term: float = 0.0
    wrong_emotion_term: float = 0.0
    wrong_gender_term: float = 0.0
    accept: bool = False


@dataclass
class EerResult:
    eer_percent: float
    threshold: float


# --------------------------------------------------------------------------
# EER and DET


def _split_scores(trials):
    tar = np.array([t.score for t in trials if t.is_target], dtype=float)
    non = np.array([t.score for t in trials if not t.is_target], dtype=float)
    if tar.size == 0 or non.size == 0:
        raise DegenerateTrialSet(f"need both classes, got {tar.size} targets / {non.size} non-targets")
    if not (np.all(np.isfinite(tar)) and np.all(np.isfinite(non))):
        raise DegenerateTrialSet("trial scores must be finite")
    return tar, non


def _points(trials):
    tar, non = _split_scores(trials)
    tar.sort()
    non.sort()
    u = np.unique(np.concatenate([tar, non]))
    below = np.concatenate([[-np.inf], u])  # largest score under each threshold
    frr = np.searchsorted(tar, below, side="right") / tar.size
    far = (non.size - np.searchsorted(non, below, side="right")) / non.size
    thr = np.concatenate([[-np.inf], 0.5 * (u[:-1] + u[1:]), [np.inf]])
    return thr, far, frr, u


def operating_points(trials):
    """(thresholds, FAR, FRR) with one point per gap between distinct scores plus both ends.

    Point k sits between the (k-1)-th and k-th distinct score, so thresholds run
    -inf, midpoints..., +inf.  FAR counts non-targets scoring >= threshold,
    FRR counts targets scoring below it.
    """
    return _points(trials)[:3]


def compute_eer(trials) -> EerResult:
    """Equal error rate, linearly interpolated between the bracketing operating points.

    The returned threshold is interpolated the same way, with the infinite end
    thresholds pinned to the lowest and highest observed scores.
    """
    thr, far, frr, u = _points(trials)
    d = far - frr
    k = int(np.argmax(d <= 0))  # d[0] = 1 and d[-1] = -1, so a crossing always exists
    thr[0], thr[-1] = u[0], u[-1]
    if d[k] == 0:
        return EerResult(100.0 * float(far[k]), float(thr[k]))
    a = d[k - 1] / (d[k - 1] - d[k])
    eer = far[k - 1] + a * (far[k] - far[k - 1])
    return EerResult(100.0 * float(eer), float(thr[k - 1] + a * (thr[k] - thr[k - 1])))


def det_curve(trials) -> list[tuple[float, float]]:
    """(FAR, FRR) pairs from (1, 0) to (0, 1), one per distinct threshold."""
    _, far, frr = operating_points(trials)
    return list(zip(far.tolist(), frr.tolist()))


# --------------------------------------------------------------------------
# Confusion matrices


@dataclass
class Confusion:
    labels: list[str]
    counts: np.ndarray

    @property
    def percent(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, 100.0 * self.counts / rows, 0.0)

    @property
    def recall(self) -> dict[str, float]:
        return dict(zip(self.labels, np.diag(self.percent).tolist()))

    @property
    def accuracy(self) -> float:
        """Identification performance: mean of the per-class diagonal percentages."""
        present = self.counts.sum(axis=1) > 0
        return float(np.mean(np.diag(self.percent)[present])) if present.any() else 0.0

    @property
    def overall(self) -> float:
        total = self.counts.sum()
        return float(100.0 * np.trace(self.counts) / total) if total else 0.0


def _confusion(labels, truth, decided) -> Confusion:
    idx = {l: i for i, l in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=int)
    for t, d in zip(truth, decided):
        counts[idx[t], idx[d]] += 1
    return Confusion(list(labels), counts)


def confusion_matrices(decisions, emotion_set) -> tuple[Confusion, dict[str, Confusion]]:
    """Gender 2x2 and per-true-gender emotion m x m counts.

    ``decisions`` yields objects with gender_true/gender_decided/emotion_true/
    emotion_decided, one per utterance.
    """
    decisions = list(decisions)
    gender = _confusion(GENDERS, [d.gender_true for d in decisions], [d.gender_decided for d in decisions])
    emotion = {}
    for g in GENDERS:
        mine = [d for d in decisions if d.gender_true == g]
        emotion[g] = _confusion(emotion_set, [d.emotion_true for d in mine], [d.emotion_decided for d in mine])
    return gender, emotion


# --------------------------------------------------------------------------
# Experiment suite


@dataclass
class EvalConfig:
    modes: tuple = MODES
    cross_claimant: bool = False
    corpus_name: str = "synthetic"
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    ordering_slack_pp: float = 1.0
    worst_case_tolerance_pp: float = 3.0
    # fail the run when the framework ordering does not hold
    enforce_ordering: bool = False


def build_trials(m: DatasetManifest, cross_claimant: bool = False) -> list[tuple[Entry, str]]:
    """(test utterance, claimed speaker) pairs.

    Targets: every claimant test utterance claiming its own speaker.  Non-targets:
    every imposter test utterance claiming each same-gender claimant, plus, when
    ``cross_claimant`` is set, claimants claiming other same-gender claimants.
    """
    claimants = m.claimants()
    trials = []
    for e in m.entries:
        if e.split != "test":
            continue
        if e.role == "claimant":
            trials.append((e, e.speaker_id))
        for c, g in claimants.items():
            if g != e.gender or c == e.speaker_id:
                continue
            if e.role == "imposter" or cross_claimant:
                trials.append((e, c))
    return trials


@dataclass
class ModeResult:
    per_emotion: dict[str, EerResult]
    pooled: EerResult
    det: list[tuple[float, float]]

    @property
    def average(self) -> float:
        return float(np.mean([r.eer_percent for r in self.per_emotion.values()]))


@dataclass
class EvalReport:
    corpus_name: str
    emotion_set: list[str]
    modes: dict[str, ModeResult]
    gender_confusion: Confusion | None
    emotion_confusion: dict[str, Confusion]
    trials: list[TrialScore]

    @property
    def gender_accuracy(self) -> float:
        return self.gender_confusion.overall / 100.0 if self.gender_confusion else float("nan")

    @property
    def emotion_accuracy(self) -> float:
        """Average over genders of the mean per-emotion recall."""
        if not self.emotion_confusion:
            return float("nan")
        return float(np.mean([c.accuracy for c in self.emotion_confusion.values()])) / 100.0

    def emotion_recall(self) -> dict[str, float]:
        """Per-emotion recall averaged over the two genders (Table-1 rows)."""
        out = {}
        for e in self.emotion_set:
            vals = [c.recall[e] for c in self.emotion_confusion.values() if c.counts[c.labels.index(e)].sum()]
            out[e] = float(np.mean(vals)) if vals else float("nan")
        return out


def score_trials(reg, m: DatasetManifest, features, cfg: EvalConfig) -> list[TrialScore]:
    pairs = build_trials(m, cfg.cross_claimant)
    utts = {e.path: e for e, _ in pairs}
    scorer = BatchScorer(reg, {p: features(e) for p, e in utts.items()})
    out = []
    for mode in cfg.modes:
        for e, claimed in pairs:
            source = scorer.utterance(e.path)
            if mode == WORST_CASE:
                vs = mode_score(reg, source, claimed, forced(*worst_case_labels(e.gender, e.emotion, reg.emotion_set)),
                                cfg.cascade)
                g_dec, e_dec = vs.trace.overrides["gender"], vs.trace.overrides["emotion"]
            else:
                vs = mode_score(reg, source, claimed, mode, cfg.cascade)
                g_dec = vs.trace.gender_decision.chosen if vs.trace.gender_decision else ""
                e_dec = vs.trace.emotion_decision.chosen if vs.trace.emotion_decision else ""
            out.append(TrialScore(
                score=vs.lam, is_target=claimed == e.speaker_id, emotion_true=e.emotion,
                gender_true=e.gender, mode=mode, utterance=e.path, claimed=claimed,
                true_speaker=e.speaker_id, gender_decided=g_dec, emotion_decided=e_dec,
                target_term=vs.target_term, wrong_emotion_term=vs.wrong_emotion_term,
                wrong_gender_term=vs.wrong_gender_term,
            ))
    return out


def summarize(trials: list[TrialScore], emotion_set, corpus_name="synthetic") -> EvalReport:
    """Aggregate scored trials into per-mode EER tables and stage confusion matrices."""
    modes: dict[str, ModeResult] = {}
    for mode in dict.fromkeys(t.mode for t in trials):
        mine = [t for t in trials if t.mode == mode]
        per_emotion = {}
        for emo in emotion_set:
            sub = [t for t in mine if t.emotion_true == emo]
            if sub:
                per_emotion[emo] = compute_eer(sub)
        modes[mode] = ModeResult(per_emotion, compute_eer(mine), det_curve(mine))

    # one stage decision per utterance, taken from the three-stage rows
    seen: dict[str, TrialScore] = {}
    for t in trials:
        if t.mode == THREE_STAGE:
            seen.setdefault(t.utterance, t)
    gender_c, emotion_c = (confusion_matrices(seen.values(), emotion_set) if seen else (None, {}))
    return EvalReport(corpus_name, list(emotion_set), modes, gender_c, emotion_c, trials)


def run_experiment_suite(reg, m: DatasetManifest, features, cfg: EvalConfig | None = None) -> EvalReport:
    cfg = cfg or EvalConfig()
    trials = score_trials(reg, m, features, cfg)
    return summarize(trials, reg.emotion_set, cfg.corpus_name)


def ordering_check(report: EvalReport, slack_pp: float = 1.0, worst_tol_pp: float = 3.0) -> list[str]:
    """Violations of the expected framework ordering (empty when it holds or modes are missing)."""
    avg = {m: r.average for m, r in report.modes.items()}
    problems = []

    def need(*names):
        return all(n in avg for n in names)

    if need(THREE_STAGE, TWO_STAGE_GENDER) and avg[THREE_STAGE] > avg[TWO_STAGE_GENDER]:
        problems.append(f"three_stage {avg[THREE_STAGE]:.2f}% > two_stage_gender {avg[TWO_STAGE_GENDER]:.2f}%")
    if need(THREE_STAGE, TWO_STAGE_EMOTION) and avg[THREE_STAGE] > avg[TWO_STAGE_EMOTION]:
        problems.append(f"three_stage {avg[THREE_STAGE]:.2f}% > two_stage_emotion {avg[TWO_STAGE_EMOTION]:.2f}%")
    for two in (TWO_STAGE_GENDER, TWO_STAGE_EMOTION):
        if need(two, ONE_STAGE) and avg[two] > avg[ONE_STAGE] + slack_pp:
            problems.append(f"{two} {avg[two]:.2f}% > one_stage {avg[ONE_STAGE]:.2f}% + {slack_pp} pp")
    if need(WORST_CASE, THREE_STAGE) and avg[WORST_CASE] < avg[THREE_STAGE]:
        problems.append(f"worst_case {avg[WORST_CASE]:.2f}% < three_stage {avg[THREE_STAGE]:.2f}%")
    if need(WORST_CASE, ONE_STAGE) and abs(avg[WORST_CASE] - avg[ONE_STAGE]) > worst_tol_pp:
        problems.append(f"worst_case {avg[WORST_CASE]:.2f}% not within {worst_tol_pp} pp of one_stage "
                        f"{avg[ONE_STAGE]:.2f}%")
    return problems


# --------------------------------------------------------------------------
# Report files


def format_report(report: EvalReport) -> str:
    name = report.corpus_name
    lines = []
    if report.gender_confusion is not None:
        gc = report.gender_confusion
        lines += [
            "Stage 1: gender identification",
            f"  accuracy: {gc.overall:.2f}%",
            "  confusion (rows = true, cols = decided):",
            "           " + "".join(f"{g:>9}" for g in gc.labels),
        ]
        for g, row in zip(gc.labels, gc.counts):
            lines.append(f"  {g:<9}" + "".join(f"{v:>9d}" for v in row))
        lines.append("")

    if report.emotion_confusion:
        recall = report.emotion_recall()
        lines += [
            "Table 1 layout: gender-dependent emotion identification performance",
            f"{'Emotion':<12}{'Emotion identification performance (%)':>40}",
            f"{'':<12}{name:>40}",
        ]
        for e in report.emotion_set:
            lines.append(f"{e.capitalize():<12}{recall[e]:>40.1f}")
        lines += [f"{'Average':<12}{100 * report.emotion_accuracy:>40.2f}", ""]
        for g, c in report.emotion_confusion.items():
            lines.append(f"  {g} emotion confusion (rows = true, cols = decided):")
            lines.append("  " + " " * 11 + "".join(f"{e[:8]:>9}" for e in c.labels))
            for e, row in zip(c.labels, c.counts):
                lines.append(f"  {e:<11}" + "".join(f"{v:>9d}" for v in row))
            lines.append("")

    if THREE_STAGE in report.modes:
        r = report.modes[THREE_STAGE]
        lines += [
            "Table 2 layout: percentage EER based on the three-stage framework",
            f"{'Emotion':<12}{'EER (%)':>20}",
            f"{'':<12}{name:>20}",
        ]
        for e in report.emotion_set:
            if e in r.per_emotion:
                lines.append(f"{e.capitalize():<12}{r.per_emotion[e].eer_percent:>20.2f}")
        lines += [f"{'Average':<12}{r.average:>20.2f}", ""]

    lines += [
        "Framework comparison (EER %, per-emotion thresholds averaged; pooled = one global threshold)",
        f"{'mode':<20}" + "".join(f"{e[:9]:>10}" for e in report.emotion_set) + f"{'average':>10}{'pooled':>10}",
    ]
    for mode, r in report.modes.items():
        cells = "".join(
            f"{r.per_emotion[e].eer_percent:>10.2f}" if e in r.per_emotion else f"{'-':>10}"
            for e in report.emotion_set
        )
        lines.append(f"{mode:<20}{cells}{r.average:>10.2f}{r.pooled.eer_percent:>10.2f}")
    return "\n".join(lines) + "\n"


def report_rows(report: EvalReport):
    """Tidy (mode, emotion, metric, value) rows."""
    for mode, r in report.modes.items():
        for e, res in r.per_emotion.items():
            yield mode, e, "eer_percent", res.eer_percent
            yield mode, e, "eer_threshold", res.threshold
        yield mode, "all", "average_eer_percent", r.average
        yield mode, "all", "pooled_eer_percent", r.pooled.eer_percent
        yield mode, "all", "pooled_eer_threshold", r.pooled.threshold
        yield mode, "all", "n_target", sum(1 for t in report.trials if t.mode == mode and t.is_target)
        yield mode, "all", "n_nontarget", sum(1 for t in report.trials if t.mode == mode and not t.is_target)
    if report.gender_confusion is not None:
        yield THREE_STAGE, "all", "gender_accuracy_percent", report.gender_confusion.overall
        for e, v in report.emotion_recall().items():
            yield THREE_STAGE, e, "emotion_recall_percent", v
        yield THREE_STAGE, "all", "emotion_accuracy_percent", 100 * report.emotion_accuracy


def write_trials(trials, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for t in trials:
            w.writerow([t.utterance, t.claimed, t.true_speaker, t.gender_true, t.gender_decided,
                        t.emotion_true, t.emotion_decided, t.mode, repr(t.score), repr(t.target_term),
                        repr(t.wrong_emotion_term), repr(t.wrong_gender_term), int(t.accept)])


def read_trials(path) -> list[TrialScore]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(TrialScore(
                score=float(row["lambda"]), is_target=row["claimed"] == row["true_speaker"],
                emotion_true=row["emotion_true"], gender_true=row["gender_true"], mode=row["mode"],
                utterance=row["utterance"], claimed=row["claimed"], true_speaker=row["true_speaker"],
                gender_decided=row["gender_decided"], emotion_decided=row["emotion_decided"],
                target_term=float(row["target_term"]), wrong_emotion_term=float(row["wrong_emotion_term"]),
                wrong_gender_term=float(row["wrong_gender_term"]), accept=row["accept"] == "1",
            ))
    return out


def apply_thresholds(report: EvalReport) -> None:
    """Mark each trial accepted at its mode's pooled EER threshold."""
    for t in report.trials:
        t.accept = bool(t.score >= report.modes[t.mode].pooled.threshold)


def write_reports(report: EvalReport, out_dir, figures: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    (out_dir / "report.txt").write_text(format_report(report))
    written.append(out_dir / "report.txt")
    with open(out_dir / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("mode", "emotion", "metric", "value"))
        for mode, emo, metric, value in report_rows(report):
            w.writerow((mode, emo, metric, repr(float(value))))
    written.append(out_dir / "report.csv")
    for mode, r in report.modes.items():
        path = out_dir / f"det_{mode}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("far", "frr"))
            w.writerows((repr(a), repr(b)) for a, b in r.det)
        written.append(path)
    write_trials(report.trials, out_dir / "trials.csv")
    written.append(out_dir / "trials.csv")
    if figures:
        from .plotting import render_figures

        written += render_figures(report, out_dir)
    return written

