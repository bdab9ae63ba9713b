#!/usr/bin/env python3

from .base import Grammar, Instantiation, find_grammar, render
from .fsc import *
from .atis import *
