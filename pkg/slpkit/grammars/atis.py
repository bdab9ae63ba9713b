#!/usr/bin/env python3

"""
Questions about flights.  Most sentences fill several slots, and a few carry
two intents.  No combination of slot values is shared between splits, so the
test set always asks about combinations that were never seen in training.
"""

import string
import itertools

from .base import Grammar, Instantiation, render
from ..slu_codec import SemanticFrame

__all__ = ['AtisGrammar']

LEXICONS = {
        'city': [
            'atlanta', 'baltimore', 'boston', 'dallas', 'denver', 'new york',
            'oakland', 'philadelphia', 'pittsburgh', 'san francisco', 'seattle',
            'washington',
        ],
        'depart_date': [
            'monday', 'tuesday', 'wednesday', 'thursday', 'friday', 'saturday',
            'sunday', 'tomorrow',
        ],
        'depart_time': [
            'morning', 'afternoon', 'evening', 'night',
        ],
        'airline_name': [
            'american', 'continental', 'delta', 'united', 'us air',
        ],
        'transport_type': [
            'bus', 'limousine', 'rental car', 'taxi',
        ],
}

# Slot types that draw their values from another slot type's lexicon.
LEXICON_ALIASES = {
        'from_city': 'city',
        'to_city': 'city',
}

TEMPLATES = [
        (['flight'], 'i want to fly from {from_city} to {to_city} on {depart_date} {depart_time}'),
        (['flight'], 'show me flights from {from_city} to {to_city}'),
        (['flight'], 'list {airline_name} flights from {from_city} to {to_city} on {depart_date}'),
        (['flight'], 'what flights leave {from_city} on {depart_date} for {to_city}'),
        (['airfare'], 'how much is a ticket from {from_city} to {to_city}'),
        (['airfare'], 'what is the cheapest fare from {from_city} to {to_city} on {depart_date}'),
        (['ground_service'], 'what {transport_type} service is available in {city}'),
        (['ground_service'], 'is there ground transportation in {city}'),
        (['airline'], 'which airlines fly from {from_city} to {to_city}'),
        (['flight_time'], 'what time does the {airline_name} flight from {from_city} to {to_city} leave'),
        (['flight', 'airfare'], 'show me flights and fares from {from_city} to {to_city} on {depart_date}'),
        (['flight', 'airfare'], 'list flights from {from_city} to {to_city} in the {depart_time} and their prices'),
]

class AtisGrammar(Grammar):
    name = 'atis-like'
    shares_sentences = False
    intents = frozenset(x for intents, _ in TEMPLATES for x in intents)
    slot_types = frozenset([*LEXICONS, *LEXICON_ALIASES])

    def instantiations(self):
        sentences = []

        for intents, template in TEMPLATES:
            slot_types = _placeholders(template)
            lexicons = [LEXICONS[LEXICON_ALIASES.get(x, x)] for x in slot_types]

            for values in itertools.product(*lexicons):
                slots = list(zip(slot_types, values))
                if _same_city(slots):
                    continue

                frame = SemanticFrame(intents, slots)
                sentences.append(Instantiation(render(template, dict(slots)), frame))

        return sentences


def _placeholders(template):
    return [
            field for _, field, _, _ in string.Formatter().parse(template)
            if field is not None
    ]

def _same_city(slots):
    slots = dict(slots)
    return 'from_city' in slots and slots.get('from_city') == slots.get('to_city')
