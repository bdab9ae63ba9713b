#!/usr/bin/env python3

"""
Train a unified speech-language model and use it to transcribe speech and
extract intents and slots.
"""

__version__ = '0.1.0'

from .api import *
