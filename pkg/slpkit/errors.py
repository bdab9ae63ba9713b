#!/usr/bin/env python3

class SlpError(Exception):
    category = 'internal'
    exit_code = 1


class UsageError(SlpError):
    category = 'usage'
    exit_code = 2

class ConfigError(UsageError):
    pass


class DataError(SlpError):
    category = 'data'
    exit_code = 3

class ParseError(DataError):

    def __init__(self, message, offset=None):
        self.message = message
        self.offset = offset
        self.path = None

    def __str__(self):
        message = self.message
        if self.path is not None:
            message = f"{self.path}: {message}"
        if self.offset is not None:
            message = f"{message} (at byte offset {self.offset})"
        return message

class VocabError(DataError):
    pass

class ManifestError(DataError):
    pass

class GrammarError(DataError):
    pass

class FrameError(DataError):
    pass


class VerificationFailed(SlpError):
    category = 'verification'
    exit_code = 4


class ModelError(SlpError):
    category = 'model'

class ShapeError(ModelError):
    pass

class DegenerateRowError(ModelError):
    pass

class LengthError(ModelError):
    pass

class TrainingError(ModelError):
    pass

class OptimizerError(ModelError):
    pass
