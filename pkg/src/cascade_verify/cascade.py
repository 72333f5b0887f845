"""Three-stage decision chain: gender -> gender-dependent emotion -> verification score.

Also hosts the baseline framings (one-stage, gender-only and emotion-only
two-stage) and the forced-label mode used for the worst-case experiment.
Every stage works on per-frame log-likelihoods, obtained from a *scorer*:
a callable mapping a registry key to ``(1/T) log P(O | model)`` for one
utterance.  Passing a raw ``FeatureSequence`` builds a memoising scorer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingModel, UnknownClaimant
from .frontend import FeatureSequence
from .hmm import batch_avg_log_likelihood
from .manifest import GENDERS
from .training import (EMOTION, EMOTION_POOLED, GENDER, SPEAKER, SPEAKER_GENDER, SPEAKER_POOLED,
                       ModelRegistry)

THREE_STAGE = "three_stage"
TWO_STAGE_GENDER = "two_stage_gender"
TWO_STAGE_EMOTION = "two_stage_emotion"
ONE_STAGE = "one_stage"
WORST_CASE = "worst_case"
MODES = (ONE_STAGE, TWO_STAGE_GENDER, TWO_STAGE_EMOTION, THREE_STAGE, WORST_CASE)


@dataclass
class CascadeConfig:
    # which models realise the wrong-emotion term: the claimant's own other-emotion
    # models ("own_speaker") or the decided gender's other-emotion models ("gender_emotion")
    eq5_cohort: str = "gender_emotion"
    # wrong-gender term: opposite gender's other-emotion models, or its pooled claimant models
    eq6_cohort: str = "opposite_emotion"
    # "printed": target - wrong_emotion - wrong_gender; "mean": target - average of the two
    eq3_variant: str = "printed"

    def validate(self):
        if self.eq5_cohort not in ("own_speaker", "gender_emotion"):
            raise ValueError(f"unknown eq5_cohort {self.eq5_cohort!r}")
        if self.eq6_cohort not in ("opposite_emotion", "opposite_pooled_speakers"):
            raise ValueError(f"unknown eq6_cohort {self.eq6_cohort!r}")
        if self.eq3_variant not in ("printed", "mean"):
            raise ValueError(f"unknown eq3_variant {self.eq3_variant!r}")


# --------------------------------------------------------------------------
# Scorers


class Scorer:
    """Memoised per-frame log-likelihoods of one utterance under registry models."""

    def __init__(self, registry: ModelRegistry, seq: FeatureSequence):
        self.registry = registry
        self.seq = seq
        self._memo: dict[tuple, float] = {}

    def __call__(self, key: tuple) -> float:
        if key not in self._memo:
            model = self.registry.get(key)
            self._memo[key] = float(batch_avg_log_likelihood(model, [self.seq])[0])
        return self._memo[key]


class BatchScorer:
    """Scores a fixed set of utterances one model at a time (one batched forward pass per model)."""

    def __init__(self, registry: ModelRegistry, sequences: dict[str, FeatureSequence]):
        self.registry = registry
        self.ids = list(sequences)
        self._seqs = [sequences[i] for i in self.ids]
        self._row = {u: i for i, u in enumerate(self.ids)}
        self._cols: dict[tuple, np.ndarray] = {}

    def column(self, key: tuple) -> np.ndarray:
        col = self._cols.get(key)
        if col is None:
            col = batch_avg_log_likelihood(self.registry.get(key), self._seqs)
            self._cols[key] = col
        return col

    def utterance(self, utt_id: str):
        row = self._row[utt_id]
        return lambda key: float(self.column(key)[row])


def _scorer(registry, source):
    if isinstance(source, FeatureSequence):
        return Scorer(registry, source)
    return source


# --------------------------------------------------------------------------
# Decisions and traces


@dataclass
class StageDecision:
    chosen: str
    scores: dict[str, float]
    tie: bool = False
    forced: bool = False


@dataclass
class StageTrace:
    gender_decision: StageDecision | None = None
    emotion_decision: StageDecision | None = None
    overrides: dict = field(default_factory=dict)


@dataclass
class VerificationScore:
    lam: float
    target_term: float
    wrong_emotion_term: float
    wrong_gender_term: float
    B_used: int
    trace: StageTrace = field(default_factory=StageTrace)


@dataclass
class Verdict:
    accept: bool
    score: float
    mode: str
    components: VerificationScore


def _argmax(scores: dict[str, float], order) -> StageDecision:
    """First label (in ``order``) attaining the maximum."""
    best = max(scores[k] for k in order)
    winners = [k for k in order if scores[k] == best]
    return StageDecision(winners[0], dict(scores), tie=len(winners) > 1)


def opposite(gender: str) -> str:
    return GENDERS[1 - GENDERS.index(gender)]


def identify_gender(reg: ModelRegistry, source) -> StageDecision:
    """G* = argmax over the two gender HMMs; ties go to male."""
    score = _scorer(reg, source)
    return _argmax({g: score((GENDER, g)) for g in GENDERS}, GENDERS)


def identify_emotion(reg: ModelRegistry, source, gender: str) -> StageDecision:
    """E* = argmax over the decided gender's emotion HMMs, in manifest emotion order."""
    score = _scorer(reg, source)
    order = reg.emotion_set
    return _argmax({e: score((EMOTION, gender, e)) for e in order}, order)


def identify_emotion_pooled(reg: ModelRegistry, source) -> StageDecision:
    score = _scorer(reg, source)
    order = reg.emotion_set
    return _argmax({e: score((EMOTION_POOLED, e)) for e in order}, order)


def _claimant_gender(reg: ModelRegistry, claimed: str) -> str:
    try:
        return reg.claimants[claimed]
    except KeyError:
        raise UnknownClaimant(claimed) from None


def _mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else 0.0


def verification_score(reg: ModelRegistry, source, claimed: str, g: str, e: str,
                       cfg: CascadeConfig | None = None, trace: StageTrace | None = None) -> VerificationScore:
    """Log-likelihood ratio of the claim given decided gender ``g`` and emotion ``e``.

    lambda = target - wrong_emotion - wrong_gender, where target is the claimant's
    (e)-model, wrong_emotion averages the B = m - 1 other-emotion models and
    wrong_gender averages the same B emotions under the opposite gender.
    Speaker-side models are always those of the claimant's enrolled gender.
    """
    cfg = cfg or CascadeConfig()
    score = _scorer(reg, source)
    g_claim = _claimant_gender(reg, claimed)
    if g not in GENDERS:
        raise MissingModel((GENDER, g))
    if e not in reg.emotion_set:
        raise MissingModel((EMOTION, g, e))
    others = [x for x in reg.emotion_set if x != e]
    g_bar = opposite(g)

    target = score((SPEAKER, g_claim, e, claimed))
    if cfg.eq5_cohort == "own_speaker":
        wrong_emotion = _mean(score((SPEAKER, g_claim, x, claimed)) for x in others)
    else:
        wrong_emotion = _mean(score((EMOTION, g, x)) for x in others)
    if cfg.eq6_cohort == "opposite_emotion":
        wrong_gender = _mean(score((EMOTION, g_bar, x)) for x in others)
    else:
        cohort = [s for s, sg in reg.claimants.items() if sg == g_bar]
        wrong_gender = _mean(score((SPEAKER_POOLED, s)) for s in cohort)

    if cfg.eq3_variant == "printed":
        lam = target - wrong_emotion - wrong_gender
    else:
        lam = target - 0.5 * (wrong_emotion + wrong_gender)
    return VerificationScore(lam, target, wrong_emotion, wrong_gender, len(others), trace or StageTrace())


# --------------------------------------------------------------------------
# Framework variants


def forced(g: str, e: str) -> str:
    return f"forced:{g}:{e}"


def parse_mode(mode: str):
    if mode.startswith("forced:"):
        _, g, e = mode.split(":", 2)
        return "forced", (g, e)
    if mode not in MODES or mode == WORST_CASE:
        raise ValueError(f"unknown mode {mode!r} (worst_case is expressed as forced:<g>:<e>)")
    return mode, None


def worst_case_labels(g_true: str, e_true: str, emotion_set) -> tuple[str, str]:
    """Opposite gender and the next emotion (cyclically) in manifest order."""
    i = list(emotion_set).index(e_true)
    return opposite(g_true), emotion_set[(i + 1) % len(emotion_set)]


def _cohort_score(reg, score, claimed, target_key, cohort_keys, fallback_keys):
    target = score(target_key)
    keys = cohort_keys or fallback_keys
    cohort = _mean(score(k) for k in keys)
    return VerificationScore(target - cohort, target, cohort, 0.0, len(keys))


def mode_score(reg: ModelRegistry, source, claimed: str, mode: str,
               cfg: CascadeConfig | None = None) -> VerificationScore:
    """Score one claim under a framework variant (no thresholding)."""
    kind, labels = parse_mode(mode)
    score = _scorer(reg, source)
    g_claim = _claimant_gender(reg, claimed)
    others = [s for s in reg.claimants if s != claimed]

    if kind == THREE_STAGE:
        gd = identify_gender(reg, score)
        ed = identify_emotion(reg, score, gd.chosen)
        return verification_score(reg, score, claimed, gd.chosen, ed.chosen, cfg, StageTrace(gd, ed))

    if kind == "forced":
        g, e = labels
        trace = StageTrace(overrides={"gender": g, "emotion": e, "source": "forced"})
        return verification_score(reg, score, claimed, g, e, cfg, trace)

    if kind == TWO_STAGE_GENDER:
        gd = identify_gender(reg, score)
        cohort = [(SPEAKER_GENDER, reg.claimants[s], s) for s in others if reg.claimants[s] == gd.chosen]
        vs = _cohort_score(reg, score, claimed, (SPEAKER_GENDER, g_claim, claimed), cohort,
                           [(GENDER, gd.chosen)])
        vs.trace = StageTrace(gender_decision=gd)
        return vs

    if kind == TWO_STAGE_EMOTION:
        ed = identify_emotion_pooled(reg, score)
        cohort = [(SPEAKER, reg.claimants[s], ed.chosen, s) for s in others]
        vs = _cohort_score(reg, score, claimed, (SPEAKER, g_claim, ed.chosen, claimed), cohort,
                           [(EMOTION_POOLED, ed.chosen)])
        vs.trace = StageTrace(emotion_decision=ed)
        return vs

    # one-stage: no gender, no emotion
    cohort = [(SPEAKER_POOLED, s) for s in others]
    return _cohort_score(reg, score, claimed, (SPEAKER_POOLED, claimed), cohort,
                         [(GENDER, g) for g in GENDERS])


def verify(reg: ModelRegistry, source, claimed: str, threshold: float, mode: str = THREE_STAGE,
           cfg: CascadeConfig | None = None) -> Verdict:
    """Accept the claim iff the mode's score reaches ``threshold``."""
    vs = mode_score(reg, source, claimed, mode, cfg)
    return Verdict(bool(vs.lam >= threshold), vs.lam, mode, vs)
