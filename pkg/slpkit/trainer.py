#!/usr/bin/env python3

"""
Conditional masked-LM training.

Each training example pairs a speech embedding sequence with a target token
sequence (a transcript, a linearized semantic frame, or both joined by [SLU]).
Some of the target tokens are corrupted, the corrupted sequence is composed
after the speech, and the model is trained to recover the original tokens.
Because the text part of the attention mask is causal, predicting a masked
token only ever uses the speech and the tokens to its left, which is exactly
the distribution needed to generate text one token at a time.
"""

import enum
import math
import logging
import numpy as np

from dataclasses import dataclass, field
from typing import Optional
from more_itertools import chunked
from pydantic import BaseModel, ConfigDict, Field, model_validator
from . import numkit as nk
from .composer import compose
from .model import ModelParams, forward, mlm_logits, mask_for
from .tokenizer import SPECIALS, EOS, MASK, SLU, tokenize
from .util import rng_from, format_float
from .errors import TrainingError

log = logging.getLogger(__name__)

# Keys that keep the random streams used for different purposes apart.
SHUFFLE_STREAM = 1
SUBSET_STREAM = 2
MASKING_STREAM = 3
DEV_STREAM = 4

class Regime(enum.Enum):
    PRETRAIN_ASR = 'pretrain'
    FINETUNE_SLU = 'finetune'
    ONESTEP_SLU = 'onestep-slu'
    ONESTEP_ASR_SLU = 'onestep-asr-slu'

    @property
    def needs_init(self):
        return self is Regime.FINETUNE_SLU


class MaskingPolicy(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    mask_rate: float = Field(0.15, gt=0, lt=1)
    replace_mask_p: float = Field(0.8, ge=0, le=1)
    replace_random_p: float = Field(0.1, ge=0, le=1)
    keep_original_p: float = Field(0.1, ge=0, le=1)
    unigram_p: float = Field(0.8, ge=0, le=1)
    multigram_p: float = Field(0.2, ge=0, le=1)

    @model_validator(mode='after')
    def _check_probabilities(self):
        replace = self.replace_mask_p + self.replace_random_p + self.keep_original_p
        if not math.isclose(replace, 1, abs_tol=1e-9):
            raise ValueError(f"replacement probabilities must sum to 1, not {replace}")

        spans = self.unigram_p + self.multigram_p
        if not math.isclose(spans, 1, abs_tol=1e-9):
            raise ValueError(f"unigram_p + multigram_p must be 1, not {spans}")

        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    batch_size: int = Field(16, ge=1)
    lr: float = Field(1e-4, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    epochs: int = Field(10, ge=0)
    seed: int = Field(0, ge=0)
    regime: Regime = Regime.PRETRAIN_ASR
    train_fraction: float = Field(1.0, gt=0, le=1)
    clip_norm: Optional[float] = Field(None, gt=0)


@dataclass(frozen=True, eq=False)
class TrainingExample:
    speech: object
    target_ids: tuple
    id: str = ''

    def __post_init__(self):
        target_ids = tuple(int(x) for x in self.target_ids)

        if not target_ids:
            raise TrainingError(f"example '{self.id}' has an empty target")

        specials = [x for x in target_ids if x < len(SPECIALS) and x != SLU]
        if specials:
            raise TrainingError(f"example '{self.id}' has special token {SPECIALS[specials[0]]} in its target")

        object.__setattr__(self, 'target_ids', target_ids)


@dataclass
class LossLog:
    steps: list = field(default_factory=list)
    dev: list = field(default_factory=list)

    def record_step(self, epoch, step, loss):
        self.steps.append((epoch, step, loss))

    def record_dev(self, epoch, loss):
        self.dev.append((epoch, loss))

    @property
    def epoch_losses(self):
        """
        The mean training loss of each epoch, in order.
        """
        by_epoch = {}
        for epoch, _, loss in self.steps:
            by_epoch.setdefault(epoch, []).append(loss)
        return [float(np.mean(by_epoch[k])) for k in sorted(by_epoch)]

    def format(self, header=()):
        lines = [f'# {x}' for x in header]
        dev = dict(self.dev)

        for epoch, step, loss in self.steps:
            lines.append(f'epoch {epoch} step {step} loss {format_float(loss)}')
        for epoch, loss in sorted(dev.items()):
            lines.append(f'epoch {epoch} dev {format_float(loss)}')

        return ''.join(x + '\n' for x in lines)

    def write(self, path, header=()):
        with open(path, 'w', encoding='utf8') as f:
            f.write(self.format(header))


def target_ids_for(regime, transcript, frame_text, vocab):
    """
    Tokenize the target that the given training regime learns to generate.
    """
    if regime is Regime.PRETRAIN_ASR:
        return tokenize(transcript, vocab)

    slu_ids = tokenize(frame_text, vocab)

    if regime in (Regime.FINETUNE_SLU, Regime.ONESTEP_SLU):
        return slu_ids

    if regime is Regime.ONESTEP_ASR_SLU:
        return tokenize(transcript, vocab) + [SLU] + slu_ids

    raise TrainingError(f"unknown regime: {regime}")

def build_examples(records, regime, vocab, load_speech):
    """
    Make a training example for each manifest record.

    *load_speech* is called with each record and must return its
    `SpeechEmbeddingSequence`.
    """
    return [
            TrainingExample(
                speech=load_speech(record),
                target_ids=target_ids_for(regime, record.transcript, record.frame_text, vocab),
                id=record.utterance_id,
            )
            for record in records
    ]

def draw_span_length(policy, rng):
    if rng.random() < policy.unigram_p:
        return 1
    return 2 if rng.random() < 0.5 else 3

def draw_span_count(budget, policy, rng):
    """
    Pick how many spans to draw so that, on average, they cover *budget*
    tokens.  At least one span is always drawn.
    """
    mean_length = policy.unigram_p + 2.5 * policy.multigram_p
    expected = budget / mean_length
    count = math.floor(expected)
    count += rng.random() < expected - count
    return max(int(count), 1)

def apply_masking(text_ids, policy, rng, vocab_size, *, with_spans=False):
    """
    Corrupt a sequence of token ids for masked-LM training.

    Spans of 1, 2 or 3 tokens are selected without overlapping each other.
    The number of spans is fixed before any length is drawn, so that the
    selected spans cover ⌈mask_rate·len⌉ tokens on average and their lengths
    follow the policy.  Each selected token is then replaced by [MASK],
    replaced by a random non-special token, or left alone.

    Returns the corrupted ids, the selected positions (sorted), and the
    original ids at those positions.  With *with_spans*, the (start, length)
    of each span is returned too, in the order the spans were drawn.
    """
    text_ids = list(text_ids)
    n = len(text_ids)

    if n < 1:
        raise TrainingError("can't mask an empty sequence")
    if vocab_size <= len(SPECIALS):
        raise TrainingError(f"vocabulary of size {vocab_size} has no ordinary tokens")

    budget = min(n, math.ceil(round(policy.mask_rate * n, 9)))
    selected = np.zeros(n, dtype=bool)
    spans = []

    for _ in range(draw_span_count(budget, policy, rng)):
        if selected.all():
            break

        length = draw_span_length(policy, rng)

        # If the span doesn't fit anywhere, fall back to shorter spans.
        while True:
            free = np.convolve(~selected, np.ones(length, dtype=int), mode='valid')
            starts = np.flatnonzero(free == length)
            if starts.size or length == 1:
                break
            length -= 1

        start = int(starts[rng.integers(starts.size)])
        selected[start:start + length] = True
        spans.append((start, length))

    positions = np.flatnonzero(selected).tolist()
    corrupted = list(text_ids)

    for i in positions:
        u = rng.random()
        if u < policy.replace_mask_p:
            corrupted[i] = MASK
        elif u < policy.replace_mask_p + policy.replace_random_p:
            corrupted[i] = int(rng.integers(len(SPECIALS), vocab_size))

    targets = [text_ids[i] for i in positions]

    if with_spans:
        return corrupted, positions, targets, spans
    return corrupted, positions, targets

def masked_loss(speech, corrupted, positions, targets, params):
    """
    The summed cross-entropy of the original tokens at the corrupted
    positions.  *corrupted* includes the terminal position, and *positions*
    are indices into it.
    """
    joint = compose(speech, corrupted[:-1], params, terminal=corrupted[-1])
    logits = mlm_logits(forward(joint, params, mask_for(joint)), params)
    offset = joint.text_span.start
    return nk.cross_entropy_masked(logits, targets, [offset + i for i in positions])

def training_step(batch, params, policy, config, states, *, epoch=0, indices=None):
    """
    Take one optimizer step on the given batch of examples and return the
    loss: the cross-entropy summed over every masked position in the batch,
    divided by the number of masked positions.
    """
    batch = list(batch)
    if not batch:
        raise TrainingError("can't train on an empty batch")
    if indices is None:
        indices = range(len(batch))

    losses, num_masked = [], 0

    for index, example in zip(indices, batch):
        rng = rng_from(config.seed, MASKING_STREAM, epoch, index)
        corrupted, positions, targets = _draw_masking(example, policy, params.config, rng)
        losses.append(masked_loss(example.speech, corrupted, positions, targets, params))
        num_masked += len(positions)

    total = losses[0]
    for loss in losses[1:]:
        total = nk.add(total, loss)
    loss = nk.scale(total, 1 / num_masked)

    params.zero_grad()
    nk.backward(loss)

    if config.clip_norm is not None:
        nk.clip_grad_norm(params, config.clip_norm)

    nk.adam_step(
            params, states, config.lr,
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.adam_eps,
    )
    params.zero_grad()

    return loss.item()

def evaluate_loss(examples, params, policy, seed=0):
    """
    The masked-LM loss of the given examples under a fixed masking draw, with
    no parameter update.  Used to monitor held-out data between epochs.  The
    draw depends only on *seed* and the order of the examples.
    """
    total, num_masked = 0.0, 0

    for index, example in enumerate(examples):
        rng = rng_from(seed, DEV_STREAM, index)
        corrupted, positions, targets = _draw_masking(example, policy, params.config, rng)
        total += masked_loss(example.speech, corrupted, positions, targets, params).item()
        num_masked += len(positions)

    return total / num_masked if num_masked else math.nan

def run_regime(examples, config, params=None, *, model_config=None, policy=None, dev_examples=None):
    """
    Train a model with the given regime and return the trained parameters and
    the loss log.

    If *params* is given, training continues from a copy of them; the given
    parameters are never modified.  Otherwise a model is initialized from
    *model_config*.  The fine-tuning regime requires initial parameters.
    """
    policy = policy or MaskingPolicy()
    examples = list(examples)

    if params is None:
        if config.regime.needs_init:
            raise TrainingError(f"the '{config.regime.value}' regime needs an initial checkpoint")
        if model_config is None:
            raise TrainingError("either initial parameters or a model config are required")
        params = ModelParams.initialize(model_config, config.seed)
    else:
        params = params.copy()

    if not examples:
        raise TrainingError("no training examples")

    if config.train_fraction < 1:
        k = max(1, round(config.train_fraction * len(examples)))
        subset = rng_from(config.seed, SUBSET_STREAM).permutation(len(examples))[:k]
        examples = [examples[i] for i in sorted(subset)]
        log.info(f"training on {k} of the available examples (fraction={config.train_fraction})")

    states = nk.adam_states(params)
    loss_log = LossLog()

    log.info(f"training {config.regime.value}: {len(examples)} examples, {config.epochs} epochs, batch size {config.batch_size}")

    for epoch in range(1, config.epochs + 1):
        order = rng_from(config.seed, SHUFFLE_STREAM, epoch).permutation(len(examples))

        for step, indices in enumerate(chunked(order.tolist(), config.batch_size), 1):
            batch = [examples[i] for i in indices]
            loss = training_step(
                    batch, params, policy, config, states,
                    epoch=epoch, indices=indices,
            )
            loss_log.record_step(epoch, step, loss)

        message = f"epoch {epoch}: loss {loss_log.epoch_losses[-1]:.4f}"

        if dev_examples:
            dev_loss = evaluate_loss(dev_examples, params, policy, config.seed)
            loss_log.record_dev(epoch, dev_loss)
            message += f", dev loss {dev_loss:.4f}"

        log.info(message)

    return params, loss_log


def _draw_masking(example, policy, model_config, rng):
    # The closing [EOS] can be masked like any other target token.
    ids = list(example.target_ids[:model_config.max_text]) + [EOS]
    return apply_masking(ids, policy, rng, model_config.vocab_size)
