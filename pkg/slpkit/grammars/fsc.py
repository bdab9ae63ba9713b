#!/usr/bin/env python3

"""
Voice commands for a smart home assistant.  Every command has a single
intent, named after its action, object and location, and no slots.  The same
sentence can be spoken (i.e. pseudo-encoded) many times, so splits share
sentences.
"""

from .base import Grammar, Instantiation, render
from ..slu_codec import SemanticFrame

__all__ = ['FscGrammar']

LOCATIONS = {
        'none': '',
        'kitchen': ' in the kitchen',
        'bedroom': ' in the bedroom',
        'washroom': ' in the washroom',
}

TEMPLATES = {
        'activate': [
            'turn on the {object}{location}',
            'switch on the {object}{location}',
            'turn the {object} on{location}',
            '{object} on{location}',
        ],
        'deactivate': [
            'turn off the {object}{location}',
            'switch off the {object}{location}',
            'turn the {object} off{location}',
            '{object} off{location}',
        ],
        'increase': [
            'increase the {object}{location}',
            'turn the {object} up{location}',
            'raise the {object}{location}',
            'more {object}{location}',
        ],
        'decrease': [
            'decrease the {object}{location}',
            'turn the {object} down{location}',
            'lower the {object}{location}',
            'less {object}{location}',
        ],
        'bring': [
            'bring me {object}',
            'get me {object}',
            'fetch {object}',
            'i need {object}',
        ],
        'change_language': [
            'switch the language to {object}',
            'change the language to {object}',
            'set my device to {object}',
            'i want to use {object}',
        ],
}

# The generic language change has no object to mention.
NO_LANGUAGE_TEMPLATES = [
        'change the language',
        'switch languages',
        'use a different language',
        'language',
]

OBJECTS = {
        'newspaper': 'the newspaper',
        'juice': 'some juice',
        'socks': 'my socks',
        'shoes': 'my shoes',
}

COMMANDS = [
        *[('activate', 'lights', x) for x in LOCATIONS],
        ('activate', 'music', 'none'),
        ('activate', 'lamp', 'none'),
        *[('deactivate', 'lights', x) for x in LOCATIONS],
        ('deactivate', 'music', 'none'),
        ('deactivate', 'lamp', 'none'),
        *[('increase', 'heat', x) for x in LOCATIONS],
        ('increase', 'volume', 'none'),
        *[('decrease', 'heat', x) for x in LOCATIONS],
        ('decrease', 'volume', 'none'),
        *[('bring', x, 'none') for x in OBJECTS],
        *[('change_language', x, 'none') for x in ['chinese', 'korean', 'english', 'german', 'none']],
]

class FscGrammar(Grammar):
    name = 'fsc-like'
    shares_sentences = True
    intents = frozenset(f'{a}_{o}_{l}' for a, o, l in COMMANDS)
    slot_types = frozenset()

    def instantiations(self):
        sentences = []

        for action, object, location in COMMANDS:
            frame = SemanticFrame([f'{action}_{object}_{location}'])

            if action == 'change_language' and object == 'none':
                templates = NO_LANGUAGE_TEMPLATES
            else:
                templates = TEMPLATES[action]

            values = {
                    'object': OBJECTS.get(object, object),
                    'location': LOCATIONS[location],
            }
            for template in templates:
                sentences.append(Instantiation(render(template, values), frame))

        return sentences
