#!/usr/bin/env python3

import logging
import autoprop

from dataclasses import dataclass
from ..slu_codec import SemanticFrame, FIELD_SEP, INTENT_SEP
from ..tokenizer import normalize
from ..parser import Repr
from ..errors import GrammarError

log = logging.getLogger(__name__)

@dataclass(frozen=True)
class Instantiation:
    transcript: str
    frame: SemanticFrame

    @property
    def combination(self):
        """
        The slot values that were filled in, ignoring which template they
        were filled into.
        """
        return tuple(sorted(self.frame.slots))


@autoprop
class Grammar(Repr):
    """
    A set of sentence templates, each paired with the semantic frame it
    expresses.

    Subclasses register themselves by name.  They must provide the sets of
    `intents` and `slot_types` they use, and implement `instantiations()`.
    If `shares_sentences` is false, the splits drawn by `sample()` never share
    a combination of slot values.
    """
    grammar_classes = {}
    repr_attrs = ['name']
    shares_sentences = False

    def __init_subclass__(cls):
        super().__init_subclass__()

        if hasattr(cls, 'name'):
            Grammar.grammar_classes[cls.name] = cls

    def instantiations(self):
        raise NotImplementedError

    def get_reserved_tokens(self):
        """
        Tokens that must never be broken into pieces, so that generated
        frames always parse.
        """
        return [FIELD_SEP, INTENT_SEP, *sorted(self.intents), *sorted(self.slot_types)]

    def sample(self, counts, rng):
        """
        Draw instantiations for each split.

        *counts* maps split names to sizes, in the order the splits should be
        filled.  Splits of grammars that share sentences are drawn with
        replacement; otherwise, each combination of slot values appears in at
        most one split.
        """
        pool = self.instantiations()
        if not pool:
            raise GrammarError(f"grammar '{self.name}' produces no sentences")

        if self.shares_sentences:
            return {
                    split: [pool[i] for i in rng.integers(len(pool), size=n)]
                    for split, n in counts.items()
            }

        order = rng.permutation(len(pool))
        used = set()
        samples = {}
        cursor = 0

        for split, n in counts.items():
            chosen, split_combinations = [], set()

            while len(chosen) < n and cursor < len(order):
                inst = pool[order[cursor]]
                cursor += 1

                if inst.combination in used:
                    continue

                chosen.append(inst)
                split_combinations.add(inst.combination)

            if len(chosen) < n:
                raise GrammarError(f"grammar '{self.name}' is too small to draw {n} '{split}' sentences with unseen slot combinations (got {len(chosen)})")

            used |= split_combinations
            samples[split] = chosen

        return samples


def find_grammar(name):
    try:
        cls = Grammar.grammar_classes[name]
    except KeyError:
        known = ', '.join(sorted(Grammar.grammar_classes))
        raise GrammarError(f"unknown grammar '{name}' (known grammars: {known})") from None

    return cls()

def render(template, values):
    """
    Fill the placeholders of a template and normalize the result.
    """
    try:
        return normalize(template.format(**values))
    except KeyError as err:
        raise GrammarError(f"unresolved placeholder {err} in template: {template!r}") from None
