#!/usr/bin/env python3

"""
Text generation by mask-append decoding.

To generate the next token, a [MASK] is appended to the text generated so
far, the whole joint sequence is run through the model, and the distribution
predicted for the [MASK] position is read off.  The chosen token replaces the
[MASK] and the process repeats until [EOS] is chosen or the length limit is
reached.

The search itself (`greedy_search()` and `beam_search()`) only needs a
function mapping a prefix to a vector of log probabilities, so it can be
exercised without a model.
"""

import enum
import logging
import numpy as np

from dataclasses import dataclass
from pydantic import BaseModel, ConfigDict, Field
from . import numkit as nk
from .composer import compose
from .model import forward, mlm_logits, mask_for
from .tokenizer import PAD, UNK, BOS, SEP, EOS, MASK, SLU, detokenize
from .util import format_float
from .errors import LengthError, ModelError

log = logging.getLogger(__name__)

BANNED = PAD, UNK, BOS, SEP, MASK

class DecodeMode(enum.Enum):
    GREEDY = 'greedy'
    BEAM = 'beam'

class Output(enum.Enum):
    TRANSCRIPT = 'transcript'
    SLU = 'slu'
    ASR_SLU = 'asr-slu'
    TWO_PASS = 'two-pass'


class DecodeConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    mode: DecodeMode = DecodeMode.BEAM
    beam_size: int = Field(4, ge=1)
    max_len: int = Field(24, ge=1)
    output: Output = Output.TRANSCRIPT


@dataclass(frozen=True)
class Hypothesis:
    token_ids: tuple
    logprob: float
    finished: bool

    @property
    def output_ids(self):
        """
        The generated tokens, without the closing [EOS].
        """
        return self.token_ids[:-1] if self.finished else self.token_ids

    @property
    def truncated(self):
        return not self.finished

    def extend(self, token, logprob):
        token = int(token)
        return Hypothesis(self.token_ids + (token,), float(logprob), token == EOS)


def step_distribution(speech, prefix, params):
    """
    Return the log probability of every vocabulary entry being the next token
    after the given prefix.  Banned tokens have a log probability of -inf.
    """
    prefix = list(prefix)
    max_text = params.config.max_text

    if len(prefix) + 1 > max_text:
        raise LengthError(f"can't extend a prefix of {len(prefix)} tokens, the text limit is {max_text}")

    joint = compose(speech, prefix, params, terminal=MASK)
    return _log_probs_at(joint, params, joint.text_span.stop - 1)

def rescore(speech, ids, params):
    """
    Score a complete sequence with teacher forcing: for each position, the
    log probability vector that mask-append decoding would have used to choose
    that position's token.

    All positions are scored by running the whole sequence at once, with the
    position being scored replaced by [MASK].  The causal text mask hides
    everything to the right of that position.
    """
    ids = list(ids)
    if not ids:
        return []

    vectors = []
    for t in range(len(ids)):
        corrupted = ids[:t] + [MASK] + ids[t+1:]
        joint = compose(speech, corrupted[:-1], params, terminal=corrupted[-1])
        vectors.append(_log_probs_at(joint, params, joint.text_span.start + t))

    return vectors

def greedy_search(step_fn, max_len):
    hyp = Hypothesis((), 0.0, False)

    while not hyp.finished and len(hyp.token_ids) < max_len:
        scores = hyp.logprob + np.asarray(step_fn(hyp.token_ids))
        token = int(np.argmax(scores))
        hyp = hyp.extend(token, scores[token])

    return hyp

def beam_search(step_fn, beam_size, max_len):
    """
    Return the final beam, best hypothesis first.

    Hypotheses are ranked by their total log probability, with ties broken in
    favor of the lexicographically smaller token sequence.  Finished
    hypotheses stop growing but stay in the beam, competing with the
    unfinished ones.
    """
    if beam_size < 1:
        raise ValueError(f"beam size must be at least 1, not {beam_size}")

    beam = [Hypothesis((), 0.0, False)]

    for _ in range(max_len):
        if all(x.finished for x in beam):
            break

        candidates = [x for x in beam if x.finished]

        for hyp in beam:
            if hyp.finished:
                continue

            scores = hyp.logprob + np.asarray(step_fn(hyp.token_ids))
            tokens = np.arange(scores.size)
            order = np.lexsort((tokens, -scores))

            for token in order[:beam_size]:
                if np.isfinite(scores[token]):
                    candidates.append(hyp.extend(token, scores[token]))

        beam = sorted(candidates, key=_rank)[:beam_size]

    return sorted(beam, key=_rank)

def greedy_generate(speech, params, config):
    return greedy_search(_step_fn(speech, params), _max_len(params, config))

def beam_generate(speech, params, config):
    """
    Return the n-best list found by beam search, best first.
    """
    return beam_search(_step_fn(speech, params), config.beam_size, _max_len(params, config))

def generate(speech, params, config):
    """
    Decode with the search configured by *config*, and return the n-best list
    (which only ever has one entry for greedy search).
    """
    if config.mode is DecodeMode.GREEDY:
        nbest = [greedy_generate(speech, params, config)]
    else:
        nbest = beam_generate(speech, params, config)

    if nbest[0].truncated:
        log.warning(f"generation for '{speech.source_id}' stopped at the length limit ({_max_len(params, config)} tokens)")

    return nbest

def two_pass_generate(speech, pretrained_params, finetuned_params, config):
    """
    Generate the transcript with the pre-trained model, and the semantic
    frame with the fine-tuned one.  Returns the best hypothesis of each.
    """
    if pretrained_params is None or finetuned_params is None:
        raise ModelError("two-pass generation needs both a pre-trained and a fine-tuned model")

    transcript = generate(speech, pretrained_params, config)[0]
    frame = generate(speech, finetuned_params, config)[0]
    return transcript, frame

def split_asr_slu(ids):
    """
    Split the output of a model trained on "transcript [SLU] frame" targets.

    Returns the transcript ids, the frame ids, and a description of what was
    wrong with the output (or None).
    """
    ids = list(ids)

    if SLU not in ids:
        return ids, [], "no [SLU] boundary, treating the whole output as a transcript"

    i = ids.index(SLU)
    transcript, frame = ids[:i], ids[i+1:]

    if not transcript:
        return transcript, frame, "[SLU] boundary at the start of the output"

    return transcript, frame, None

def format_nbest(hyps, vocab):
    """
    One line per hypothesis: rank, total log probability, and text.
    """
    return ''.join(
            f'{rank}\t{format_float(hyp.logprob)}\t{detokenize(hyp.output_ids, vocab)}\n'
            for rank, hyp in enumerate(hyps, 1)
    )


def _log_probs_at(joint, params, position):
    hidden = forward(joint, params, mask_for(joint))
    logits = mlm_logits(nk.take(hidden, slice(position, position + 1)), params).numpy()[0]
    logits[list(BANNED)] = -np.inf
    return nk.log_softmax_lastdim(nk.tensor(logits)).numpy()

def _step_fn(speech, params):
    return lambda prefix: step_distribution(speech, prefix, params)

def _max_len(params, config):
    max_text = params.config.max_text
    if config.max_len > max_text:
        raise LengthError(f"max_len ({config.max_len}) can't exceed the model's text limit ({max_text})")
    return config.max_len

def _rank(hyp):
    return -hyp.logprob, hyp.token_ids
