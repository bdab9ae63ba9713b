#!/usr/bin/env python3

"""
Semantic frames, the linearized strings the model generates for them, and the
metrics used to score generated frames and transcripts.

A frame is linearized as its intents joined by "+", followed by one
" & <slot type> <slot value>" field per slot:

    flight_info & from_city pittsburgh & to_city baltimore
"""

import logging

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional
from editdistance import eval as levenshtein
from pydantic import BaseModel, ConfigDict
from .tokenizer import normalize
from .util import format_float
from .errors import DataError, FrameError

log = logging.getLogger(__name__)

FIELD_SEP = '&'
INTENT_SEP = '+'

@dataclass(frozen=True)
class SemanticFrame:
    intents: tuple
    slots: tuple = ()

    def __post_init__(self):
        intents = tuple(self.intents)
        slots = tuple((t, v) for t, v in self.slots)

        if not intents:
            raise FrameError("a frame must have at least one intent")

        for label in intents + tuple(t for t, _ in slots):
            if not _is_label(label):
                raise FrameError(f"invalid label: {label!r}")

        for type, value in slots:
            if not value or normalize(value) != value or FIELD_SEP in value.split() or INTENT_SEP in value.split():
                raise FrameError(f"invalid value for slot '{type}': {value!r}")

        object.__setattr__(self, 'intents', intents)
        object.__setattr__(self, 'slots', slots)

    @property
    def slot_types(self):
        return [t for t, _ in self.slots]


@dataclass(frozen=True)
class ParseResult:
    frame: Optional[SemanticFrame]
    anomalies: tuple = field(default=())

    @property
    def ok(self):
        return self.frame is not None and not self.anomalies


class EvalReport(BaseModel):
    """
    Corpus-level scores.  Word error rate is absent if no transcripts were
    scored, and the slot metrics are absent if the references have no slots.
    """
    model_config = ConfigDict(frozen=True)

    num_utterances: int
    intent_acc: float
    intent_correct: int
    wer: Optional[float] = None
    word_errors: Optional[int] = None
    ref_words: Optional[int] = None
    slot_precision: Optional[float] = None
    slot_recall: Optional[float] = None
    slot_f1: Optional[float] = None
    ref_slots: Optional[int] = None
    hyp_slots: Optional[int] = None
    slot_matches: Optional[int] = None
    parse_anomalies: int = 0


def linearize(frame):
    text = INTENT_SEP.join(frame.intents)
    for type, value in frame.slots:
        text += f' {FIELD_SEP} {type} {value}'
    return text

def parse(text, intent_set=None, slot_type_set=None):
    """
    Recover a semantic frame from a linearized string.

    Parsing never fails.  Anything that can't be interpreted (an unknown
    label, a slot without a value, an empty field) is dropped and described in
    the anomalies of the result.  If no intent survives, the frame is None.
    A label set of None accepts any label.
    """
    anomalies = []
    fields = [x.strip() for x in normalize(text).split(FIELD_SEP)]

    intents = []
    for intent in (x.strip() for x in fields[0].split(INTENT_SEP)):
        if not intent:
            anomalies.append("empty intent")
        elif not _is_label(intent):
            anomalies.append(f"malformed intent: {intent!r}")
        elif intent_set is not None and intent not in intent_set:
            anomalies.append(f"unknown intent: {intent!r}")
        else:
            intents.append(intent)

    slots = []
    for slot in fields[1:]:
        words = slot.split()
        if not words:
            anomalies.append("empty slot field")
            continue

        type, value = words[0], ' '.join(words[1:])
        if INTENT_SEP in words:
            anomalies.append(f"'{INTENT_SEP}' inside slot field: {slot!r}")
        elif not value:
            anomalies.append(f"slot '{type}' has no value")
        elif slot_type_set is not None and type not in slot_type_set:
            anomalies.append(f"unknown slot type: {type!r}")
        else:
            slots.append((type, value))

    frame = SemanticFrame(intents, slots) if intents else None
    return ParseResult(frame, tuple(anomalies))

def label_sets(frames):
    """
    Collect every intent and slot type used by the given frames.
    """
    intents, slot_types = set(), set()
    for frame in frames:
        intents.update(frame.intents)
        slot_types.update(frame.slot_types)
    return intents, slot_types

def wer(ref, hyp):
    """
    The word-level edit distance between a reference and a hypothesis,
    divided by the length of the reference.  Strings are split on whitespace.
    """
    ref, hyp = _words(ref), _words(hyp)
    if not ref:
        raise DataError("can't compute the word error rate of an empty reference")
    return levenshtein(ref, hyp) / len(ref)

def corpus_wer(refs, hyps):
    """
    Return the total word errors divided by the total reference words, along
    with both totals.
    """
    refs, hyps = list(refs), list(hyps)
    _check_aligned(refs, hyps)

    errors = words = 0
    for ref, hyp in zip(refs, hyps):
        ref, hyp = _words(ref), _words(hyp)
        errors += levenshtein(ref, hyp)
        words += len(ref)

    if not words:
        raise DataError("can't compute the word error rate of empty references")

    return errors / words, errors, words

def score(refs, hyps, ref_transcripts=None, hyp_transcripts=None, parse_anomalies=0):
    """
    Score hypothesis frames against reference frames, utterance by utterance.

    A hypothesis of None (i.e. one that didn't parse into a frame) counts as
    an incorrect intent with no slots.  Slots are matched as a multiset of
    exact (type, value) pairs, and all counts are summed over the corpus
    before the ratios are taken.
    """
    refs, hyps = list(refs), list(hyps)
    _check_aligned(refs, hyps)
    if not refs:
        raise DataError("nothing to score")

    intent_correct = 0
    ref_slots = hyp_slots = matches = 0

    for ref, hyp in zip(refs, hyps):
        ref_counts = Counter(ref.slots)
        hyp_counts = Counter(hyp.slots) if hyp else Counter()

        if hyp and set(hyp.intents) == set(ref.intents):
            intent_correct += 1

        ref_slots += sum(ref_counts.values())
        hyp_slots += sum(hyp_counts.values())
        matches += sum((ref_counts & hyp_counts).values())

    scores = dict(
            num_utterances=len(refs),
            intent_acc=intent_correct / len(refs),
            intent_correct=intent_correct,
            parse_anomalies=parse_anomalies,
    )

    if ref_slots:
        precision = matches / hyp_slots if hyp_slots else 0.0
        recall = matches / ref_slots
        f1 = 2 * precision * recall / (precision + recall) if matches else 0.0
        scores.update(
                slot_precision=precision,
                slot_recall=recall,
                slot_f1=f1,
                ref_slots=ref_slots,
                hyp_slots=hyp_slots,
                slot_matches=matches,
        )

    if ref_transcripts is not None:
        wer, errors, words = corpus_wer(ref_transcripts, hyp_transcripts)
        scores.update(wer=wer, word_errors=errors, ref_words=words)

    return EvalReport(**scores)

def format_report(report, header=()):
    """
    Render a report as ``metric<TAB>value`` lines, followed by a single
    ``json<TAB>{...}`` line holding the whole report.
    """
    lines = [f'# {x}' for x in header]

    for key, value in report.model_dump().items():
        if value is None:
            value = 'n/a'
        elif isinstance(value, float):
            value = format_float(value)
        lines.append(f'{key}\t{value}')

    lines.append(f'json\t{report.model_dump_json()}')
    return ''.join(x + '\n' for x in lines)


def _is_label(label):
    return (
            bool(label) and
            label == label.lower() and
            not any(c.isspace() for c in label) and
            FIELD_SEP not in label and
            INTENT_SEP not in label
    )

def _words(text):
    return text.split() if isinstance(text, str) else list(text)

def _check_aligned(refs, hyps):
    if len(refs) != len(hyps):
        raise DataError(f"got {len(refs)} references but {len(hyps)} hypotheses")
