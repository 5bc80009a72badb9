'''
Error types raised by the ddereach library
'''


class DdeReachError(Exception):
    '''Base class for every error raised by ddereach.'''


class DimensionError(DdeReachError, ValueError):
    '''Boxes or matrices with incompatible shapes were combined.'''


class ExprSyntaxError(DdeReachError, ValueError):
    '''
    Malformed expression text

    Args:
        message (str): what went wrong
        text (str): the full expression being parsed
        position (int): 0-based character offset of the offending token
    '''

    def __init__(self, message, text='', position=0):
        self.text = text
        self.position = position
        detail = message
        if text:
            detail = f"{message} at position {position}\n  {text}\n  {' ' * position}^"
        super().__init__(detail)
        self.reason = message


class UnknownVariableError(ExprSyntaxError):
    '''A variable outside the declared alphabet was referenced.'''


class MissingVariableError(DdeReachError, KeyError):
    '''An evaluation environment does not bind a variable of the expression.'''

    def __str__(self):
        return f"no value bound for variable {self.args[0]!r}"


class ModelError(DdeReachError, ValueError):
    '''
    Invalid model file or violated model invariant

    Args:
        reason (str): human readable named reason, e.g. "K must be at least 2"
        section (str): model-file section the problem was found in, if known
        line (int): 1-based line number in the model file, if known
    '''

    def __init__(self, reason, section=None, line=None):
        self.reason = reason
        self.section = section
        self.line = line
        where = []
        if section:
            where.append(f"[{section}]")
        if line:
            where.append(f"line {line}")
        prefix = f"{' '.join(where)}: " if where else ''
        super().__init__(prefix + reason)


class ConfigError(DdeReachError, ValueError):
    '''Run configuration is inconsistent with the model (step grid, checkpoints, ...).'''


class StepSizeError(DdeReachError):
    '''No a priori enclosure could be found, even after adaptive step halving.'''

    def __init__(self, message, time=None):
        self.time = time
        super().__init__(message if time is None else f"{message} (t = {time!r})")


class DomainExitError(DdeReachError):
    '''An enclosure left the viable domain X entirely.'''

    def __init__(self, message, time=None, label=None):
        self.time = time
        self.label = label
        super().__init__(message if time is None else f"{message} (t = {time!r}, set {label})")


class SingularSensitivityError(DdeReachError):
    '''A segment-start sensitivity matrix could not be inverted.'''

    def __init__(self, message, time=None):
        self.time = time
        super().__init__(message if time is None else f"{message} (t = {time!r})")


class ReachOutputError(DdeReachError):
    '''A reach output directory is missing or does not match the model.'''
