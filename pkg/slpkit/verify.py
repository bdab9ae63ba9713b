#!/usr/bin/env python3

"""
Property suites that check the implementation against independent oracles:
finite differences for gradients, perturbation tests for the attention mask,
re-scoring for mask-append decoding, exhaustive search for beam search,
Monte-Carlo estimates for the masking policy, and brute-force counting for the
metrics.

Each suite is registered under a name and run with a number of trials.  Suites
never raise when a check fails; they report it in their `SuiteResult`.
"""

import logging
import arrow
import numpy as np

from collections import Counter
from dataclasses import dataclass, field, replace
from . import numkit as nk
from .composer import SpeechEmbeddingSequence, compose
from .model import ModelConfig, ModelParams, forward, mlm_logits
from .trainer import MaskingPolicy, apply_masking, masked_loss
from .generator import BANNED, beam_search, greedy_search, rescore, step_distribution, _rank
from .grammars import find_grammar
from .slu_codec import SemanticFrame, linearize, parse, score, wer
from .tokenizer import SPECIALS, EOS, MASK
from .util import rng_from, seed_from

log = logging.getLogger(__name__)

suites = {}

@dataclass
class Suite:
    name: str
    func: object
    trials: int
    description: str


@dataclass
class SuiteResult:
    name: str
    trials: int
    failures: list = field(default_factory=list)
    details: str = ''
    seconds: float = 0.0

    @property
    def passed(self):
        return not self.failures

    def format(self):
        status = 'PASS' if self.passed else 'FAIL'
        line = f'{status}\t{self.name}\t{self.trials} trials\t{self.seconds:.1f}s'
        if self.details:
            line += f'\t{self.details}'
        for failure in self.failures[:5]:
            line += f'\n\t{failure}'
        return line


def suite(name, trials):
    def decorator(func):
        description = (func.__doc__ or '').strip().split('\n')[0]
        suites[name] = Suite(name, func, trials, description)
        return func
    return decorator

def run_suite(name, trials=None, seed=0):
    try:
        s = suites[name]
    except KeyError:
        from .errors import UsageError
        raise UsageError(f"unknown suite '{name}' (known suites: {', '.join(suites)})") from None

    trials = s.trials if trials is None else trials
    result = SuiteResult(name, trials)

    start = arrow.now()
    s.func(result, trials, seed)
    result.seconds = (arrow.now() - start).total_seconds()

    log.debug(result.format())
    return result

def run_suites(names=None, trials=None, seed=0):
    return [run_suite(x, trials, seed) for x in (names or suites)]


@suite('gradcheck', trials=1)
def check_gradients(result, trials, seed):
    """
    Compare backpropagated gradients to central finite differences.

    Every coordinate of a 2-layer model with d_model=8 is checked, and 20
    coordinates per parameter of a 2-layer model with d_model=32.
    """
    tolerance = 1e-4
    worst = []

    for trial in range(trials):
        for d_model, num_samples in [(8, None), (32, 20)]:
            config = _tiny_config(d_model=d_model, n_heads=2, d_ff=2 * d_model, n_layers=2)
            params = ModelParams.initialize(config, seed=seed_from(seed, trial, d_model))
            rng = rng_from(seed, trial, d_model)

            speech = _random_speech(rng, config)
            ids = _random_text(rng, config, config.max_text) + [EOS]
            corrupted, positions, targets = apply_masking(
                    ids, MaskingPolicy(mask_rate=0.5), rng, config.vocab_size)

            error, where = nk.check_gradients(
                    lambda: masked_loss(speech, corrupted, positions, targets, params),
                    params,
                    num_samples=num_samples,
                    rng=rng,
            )
            worst.append(error)

            if not error < tolerance:
                result.failures.append(f"d_model={d_model}: relative error {error:.3g} at {where}")

    result.details = f"max relative error {max(worst):.3g}"

@suite('causality', trials=200)
def check_causality(result, trials, seed):
    """
    Perturb the joint input and check which outputs are allowed to change.
    """
    for trial in range(trials):
        rng = rng_from(seed, trial)
        config = _tiny_config(
                n_layers=int(rng.integers(0, 3)),
                d_model=8 * int(rng.integers(1, 3)),
                n_heads=int(rng.choice([1, 2])),
                max_frames=int(rng.integers(1, 6)),
                max_text=int(rng.integers(2, 7)),
        )
        params = ModelParams.initialize(config, seed=seed_from(seed, trial))
        speech = _random_speech(rng, config)
        ids = _random_text(rng, config, int(rng.integers(1, config.max_text + 1)))

        joint = compose(speech, ids, params)
        hidden = forward(joint, params).numpy()
        logits = mlm_logits(nk.tensor(hidden), params).numpy()
        start = joint.text_span.start

        # Changing the tokens after t leaves every position up to t alone.
        t = int(rng.integers(0, len(ids)))
        changed = ids[:t+1] + _random_text(rng, config, len(ids) - t - 1)
        joint_2 = compose(speech, changed, params)
        logits_2 = mlm_logits(forward(joint_2, params), params).numpy()

        if not np.array_equal(logits[:start + t + 1], logits_2[:start + t + 1]):
            result.failures.append(f"trial {trial}: changing text after position {t} changed earlier logits")

        # Changing any text leaves the speech part alone.
        joint_3 = compose(speech, _random_text(rng, config, len(ids)), params)
        hidden_3 = forward(joint_3, params).numpy()
        speech_part = slice(joint.speech_span.start, joint.speech_span.stop)

        if not np.array_equal(hidden[speech_part], hidden_3[speech_part]):
            result.failures.append(f"trial {trial}: changing the text changed the speech part")

        # Changing the padding changes nothing else.
        is_pad = np.array(joint.is_pad)
        if is_pad.any():
            embeddings = joint.embeddings.numpy()
            embeddings[is_pad] = rng.normal(size=embeddings[is_pad].shape)
            joint_4 = replace(joint, embeddings=nk.tensor(embeddings))
            hidden_4 = forward(joint_4, params).numpy()

            if not np.array_equal(hidden[~is_pad], hidden_4[~is_pad]):
                result.failures.append(f"trial {trial}: changing the padding changed other positions")

@suite('teacher-forcing', trials=50)
def check_teacher_forcing(result, trials, seed):
    """
    Check that mask-append decoding and full-sequence re-scoring agree exactly.
    """
    for trial in range(trials):
        rng = rng_from(seed, trial)
        config = _tiny_config(max_text=int(rng.integers(2, 7)))
        params = ModelParams.initialize(config, seed=seed_from(seed, trial))
        speech = _random_speech(rng, config)
        steps = []

        def step_fn(prefix):
            log_probs = step_distribution(speech, prefix, params)
            steps.append(log_probs)
            return log_probs

        hyp = greedy_search(step_fn, config.max_text)

        for t, (expected, actual) in enumerate(zip(steps, rescore(speech, hyp.token_ids, params))):
            if not np.array_equal(expected, actual):
                result.failures.append(f"trial {trial}: step {t} differs from re-scoring")
                break

@suite('beam-oracle', trials=100)
def check_beam_search(result, trials, seed):
    """
    Compare full-width beam search to exhaustive enumeration, and beam search
    of width 1 to greedy search.
    """
    for trial in range(trials):
        rng = rng_from(seed, trial)
        vocab_size = int(rng.integers(len(SPECIALS) + 1, 9))
        max_len = int(rng.integers(1, 5))
        step_fn = _toy_step_fn(seed_from(seed, trial), vocab_size)

        allowed = [x for x in range(vocab_size) if x not in BANNED]
        best = min(_enumerate(step_fn, allowed, max_len), key=_rank)
        found = beam_search(step_fn, len(allowed)**max_len, max_len)[0]

        if found != best:
            result.failures.append(f"trial {trial}: beam found {found.token_ids} ({found.logprob}), exhaustive search found {best.token_ids} ({best.logprob})")

        greedy = greedy_search(step_fn, max_len)
        narrow = beam_search(step_fn, 1, max_len)[0]

        if greedy != narrow:
            result.failures.append(f"trial {trial}: greedy found {greedy.token_ids}, beam of width 1 found {narrow.token_ids}")

@suite('masking-stats', trials=100000)
def check_masking_statistics(result, trials, seed):
    """
    Estimate the replacement mix, span lengths and masked fraction by sampling.
    """
    policy = MaskingPolicy()
    tolerance = 0.01
    rng = rng_from(seed)
    vocab_size, length = 1000, 20

    replacements = Counter()
    spans = Counter()
    masked = 0

    for _ in range(trials):
        ids = rng.integers(len(SPECIALS), vocab_size, size=length).tolist()
        corrupted, positions, targets, applied = apply_masking(
                ids, policy, rng, vocab_size, with_spans=True)
        masked += len(positions)
        spans.update(n for _, n in applied)

        for i in positions:
            if corrupted[i] == MASK:
                replacements['mask'] += 1
            elif corrupted[i] == ids[i]:
                replacements['keep'] += 1
            else:
                replacements['random'] += 1

    num_spans = sum(spans.values())

    observed = {
            'replace with [MASK]': (replacements['mask'] / masked, policy.replace_mask_p),
            'replace with random': (replacements['random'] / masked, policy.replace_random_p),
            'keep original': (replacements['keep'] / masked, policy.keep_original_p),
            'unigram spans': (spans[1] / num_spans, policy.unigram_p),
            'bigram spans': (spans[2] / num_spans, policy.multigram_p / 2),
            'trigram spans': (spans[3] / num_spans, policy.multigram_p / 2),
            'masked fraction': (masked / (trials * length), policy.mask_rate),
    }

    for name, (actual, expected) in observed.items():
        if abs(actual - expected) > tolerance:
            result.failures.append(f"{name}: {actual:.4f}, expected {expected:.4f} ± {tolerance}")

    result.details = ', '.join(f'{k} {v[0]:.3f}' for k, v in observed.items())

@suite('codec-roundtrip', trials=10000)
def check_codec(result, trials, seed):
    """
    Check that parsing a linearized frame gives back the same frame.
    """
    rng = rng_from(seed)
    grammars = [find_grammar(x) for x in ['atis-like', 'fsc-like']]
    intents = sorted(set().union(*(g.intents for g in grammars)))
    slot_types = sorted(set().union(*(g.slot_types for g in grammars)))
    values = ['boston', 'new york', 'monday', 'us air', 'rental car', 'morning', 'a b c']

    for trial in range(trials):
        frame = _random_frame(rng, intents, slot_types, values)
        parsed = parse(linearize(frame), set(intents), set(slot_types))

        if parsed.frame != frame or parsed.anomalies:
            result.failures.append(f"{linearize(frame)!r} parsed to {parsed}")

@suite('wer-oracle', trials=1000)
def check_wer(result, trials, seed):
    """
    Compare the word error rate to a separate dynamic-programming implementation.
    """
    rng = rng_from(seed)
    words = ['a', 'b', 'c', 'd', 'e']

    for trial in range(trials):
        ref = list(rng.choice(words, size=int(rng.integers(1, 12))))
        hyp = list(rng.choice(words, size=int(rng.integers(0, 12))))
        expected = _edit_distance(ref, hyp) / len(ref)
        actual = wer(ref, hyp)

        if actual != expected:
            result.failures.append(f"wer({ref}, {hyp}) = {actual}, expected {expected}")

@suite('slot-oracle', trials=1000)
def check_slot_scores(result, trials, seed):
    """
    Compare slot precision, recall and F1 to brute-force counting.
    """
    rng = rng_from(seed)
    intents = ['flight', 'airfare']
    slot_types = ['from_city', 'to_city']
    values = ['boston', 'denver']

    for trial in range(trials):
        n = int(rng.integers(1, 6))
        refs = [_random_frame(rng, intents, slot_types, values, min_slots=1) for _ in range(n)]
        hyps = [_random_frame(rng, intents, slot_types, values) for _ in range(n)]

        matches = hyp_slots = ref_slots = 0
        for ref, hyp in zip(refs, hyps):
            unmatched = list(ref.slots)
            for slot in hyp.slots:
                if slot in unmatched:
                    unmatched.remove(slot)
                    matches += 1
            ref_slots += len(ref.slots)
            hyp_slots += len(hyp.slots)

        precision = matches / hyp_slots if hyp_slots else 0.0
        recall = matches / ref_slots
        f1 = 2 * precision * recall / (precision + recall) if matches else 0.0

        report = score(refs, hyps)
        expected = precision, recall, f1
        actual = report.slot_precision, report.slot_recall, report.slot_f1

        if any(abs(a - b) > 1e-12 for a, b in zip(actual, expected)):
            result.failures.append(f"trial {trial}: got P/R/F1 {actual}, expected {expected}")


def _tiny_config(**kwargs):
    defaults = dict(
            n_layers=1, n_heads=2, d_model=8, d_ff=16, vocab_size=12,
            d_speech=8, max_frames=4, max_text=4,
    )
    return ModelConfig(**{**defaults, **kwargs})

def _random_speech(rng, config):
    num_frames = int(rng.integers(1, config.max_frames + 1))
    return SpeechEmbeddingSequence(rng.normal(size=(num_frames, config.d_speech)))

def _random_text(rng, config, length):
    return rng.integers(len(SPECIALS), config.vocab_size, size=length).tolist()

def _toy_step_fn(seed, vocab_size):
    banned = list(BANNED)

    def step_fn(prefix):
        logits = rng_from(seed, len(prefix), *prefix).normal(size=vocab_size)
        logits[banned] = -np.inf
        return nk.log_softmax_lastdim(nk.tensor(logits)).numpy()

    return step_fn

def _enumerate(step_fn, allowed, max_len):
    from .generator import Hypothesis

    frontier = [Hypothesis((), 0.0, False)]
    complete = []

    for _ in range(max_len):
        grown = []
        for hyp in frontier:
            log_probs = hyp.logprob + np.asarray(step_fn(hyp.token_ids))
            for token in allowed:
                child = hyp.extend(token, log_probs[token])
                (complete if child.finished else grown).append(child)
        frontier = grown

    return complete + frontier

def _random_frame(rng, intents, slot_types, values, min_slots=0):
    num_intents = int(rng.integers(1, 3))
    num_slots = int(rng.integers(min_slots, 5))
    return SemanticFrame(
            [str(x) for x in rng.choice(intents, size=num_intents, replace=False)],
            [(str(rng.choice(slot_types)), str(rng.choice(values))) for _ in range(num_slots)],
    )

def _edit_distance(a, b):
    d = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        prev, d[0] = d[0], i
        for j, y in enumerate(b, 1):
            prev, d[j] = d[j], min(d[j] + 1, d[j-1] + 1, prev + (x != y))
    return d[-1]
