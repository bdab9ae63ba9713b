#!/usr/bin/env python3

import autoprop
import logging

from .composer import SpeechEmbeddingSequence, JointInput, compose
from .model import (
        ModelConfig, ModelParams, AttentionMask, build_mask, forward,
        mlm_logits, save_checkpoint, load_checkpoint,
)
from .trainer import (
        Regime, MaskingPolicy, TrainConfig, TrainingExample, LossLog,
        build_examples, run_regime,
)
from .generator import (
        DecodeMode, Output, DecodeConfig, Hypothesis, generate,
        two_pass_generate, split_asr_slu, format_nbest,
)
from .tokenizer import (
        Vocabulary, VocabConfig, train_vocab, tokenize, detokenize,
        read_vocab, write_vocab,
)
from .slu_codec import (
        SemanticFrame, ParseResult, EvalReport, FIELD_SEP, INTENT_SEP,
        linearize, label_sets, score, format_report, wer,
)
from .slu_codec import parse as parse_frame
from .corpus import (
        ManifestRecord, Manifest, PseudoEncoderConfig, CorpusConfig,
        pseudo_encode, generate_corpus, read_manifest, write_manifest,
        read_embeddings, write_embeddings,
)
from .grammars import Grammar, find_grammar
from .config import RunConfig, load_config, format_config
from .parser import Repr
from .errors import *

log = logging.getLogger(__name__)

def load(checkpoint, vocab, decode_config=None):
    """
    Load a trained model and its vocabulary, ready to decode.

    *vocab* may be a path or a `Vocabulary`.
    """
    params = load_checkpoint(checkpoint)

    if not isinstance(vocab, Vocabulary):
        vocab = read_vocab(vocab)

    return SpeechLanguageModel(params, vocab, decode_config)

def evaluate(refs, hyps):
    """
    Score a hypothesis manifest against a reference manifest.

    The manifests must list the same utterance ids, in any order.  Hypothesis
    frames are parsed against the labels used by the references; anything
    that doesn't parse is counted as an anomaly (and logged) rather than
    treated as an error.  The word error rate is only reported if at least one
    hypothesis has a transcript.
    """
    hyps_by_id = {x.utterance_id: x for x in hyps}
    ref_ids = [x.utterance_id for x in refs]

    if set(ref_ids) != set(hyps_by_id):
        missing = sorted(set(ref_ids) - set(hyps_by_id))
        extra = sorted(set(hyps_by_id) - set(ref_ids))
        raise ManifestError(f"utterance ids differ: {len(missing)} missing from the hypotheses {missing[:3]}, {len(extra)} not in the references {extra[:3]}")

    ref_frames = [parse_frame(x.frame_text).frame for x in refs]
    intents, slot_types = label_sets(ref_frames)

    hyp_frames, num_anomalies = [], 0
    for ref in refs:
        hyp = hyps_by_id[ref.utterance_id]
        result = parse_frame(hyp.frame_text, intents, slot_types)

        if not result.ok:
            num_anomalies += 1
            problems = '; '.join(result.anomalies) or 'no intent'
            log.warning(f"'{hyp.utterance_id}': {problems}")

        hyp_frames.append(result.frame)

    hyp_transcripts = [hyps_by_id[x].transcript for x in ref_ids]
    has_transcripts = any(x.strip() for x in hyp_transcripts)

    return score(
            ref_frames,
            hyp_frames,
            ref_transcripts=[x.transcript for x in refs] if has_transcripts else None,
            hyp_transcripts=hyp_transcripts if has_transcripts else None,
            parse_anomalies=num_anomalies,
    )


@autoprop
class SpeechLanguageModel(Repr):
    """
    A trained model paired with its vocabulary and decoding settings.
    """
    repr_attrs = ['num_params', 'vocab']

    def __init__(self, params, vocab, decode_config=None):
        if params.config.vocab_size != len(vocab):
            raise VocabError(f"the model expects {params.config.vocab_size} tokens, but the vocabulary has {len(vocab)}")

        self._params = params
        self._vocab = vocab
        self.decode_config = decode_config or DecodeConfig()

    def get_params(self):
        return self._params

    def get_vocab(self):
        return self._vocab

    def get_config(self):
        return self._params.config

    def get_num_params(self):
        return self._params.num_params

    def generate(self, speech):
        """
        Return the n-best list for the given speech, best first.
        """
        return generate(speech, self._params, self.decode_config)

    def transcribe(self, speech):
        return self._text(self.generate(speech)[0].output_ids)

    def understand(self, speech):
        """
        Generate a linearized frame for the given speech and parse it.
        """
        return parse_frame(self._text(self.generate(speech)[0].output_ids))

    def decode(self, speech, finetuned=None):
        """
        Generate whatever the output setting asks for.

        Returns the transcript, the linearized frame (either may be empty),
        and the n-best list formatted as text.
        """
        output = self.decode_config.output
        transcript = frame = ''

        if output is Output.TWO_PASS:
            if finetuned is None:
                raise ModelError("two-pass output needs a fine-tuned model")

            best_transcript, best_frame = two_pass_generate(
                    speech, self._params, finetuned.params, self.decode_config)
            nbest = format_nbest([best_transcript], self._vocab) + \
                    format_nbest([best_frame], finetuned.vocab)

            return self._text(best_transcript.output_ids), finetuned._text(best_frame.output_ids), nbest

        hyps = self.generate(speech)
        ids = hyps[0].output_ids

        if output is Output.TRANSCRIPT:
            transcript = self._text(ids)

        elif output is Output.SLU:
            frame = self._text(ids)

        elif output is Output.ASR_SLU:
            transcript_ids, frame_ids, problem = split_asr_slu(ids)
            if problem:
                log.warning(f"'{speech.source_id}': {problem}")
            transcript, frame = self._text(transcript_ids), self._text(frame_ids)

        return transcript, frame, format_nbest(hyps, self._vocab)

    def save(self, path):
        save_checkpoint(path, self._params)

    def _text(self, ids):
        return detokenize(ids, self._vocab)
