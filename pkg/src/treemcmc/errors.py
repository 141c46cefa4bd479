"""Exception hierarchy.

``ValidationError`` subclasses signal bad input or configuration (CLI exit
code 1); every other ``TreeMCMCError`` is a runtime failure (exit code 2).
"""


class TreeMCMCError(Exception):
    pass


class ValidationError(TreeMCMCError, ValueError):
    pass


# tree core
class IndexOutOfRange(ValidationError, IndexError):
    pass


class ExtendPastLeaf(ValidationError):
    pass


class ZeroProbabilityBranch(TreeMCMCError):
    pass


class MaxRetriesExceeded(TreeMCMCError):
    pass


class NonterminatingTree(TreeMCMCError):
    pass


class LimitExceeded(TreeMCMCError):
    pass


# chain
class NoUnblockedBranch(TreeMCMCError):
    pass


class SameLeaf(ValidationError):
    pass


# model space
class InconsistentConstraints(ValidationError):
    pass


# scoring
class UnknownVariable(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ChildInParents(ValidationError):
    pass


class VariableMismatch(ValidationError):
    pass


# analysis / cli
class EmptyTrace(ValidationError):
    pass


class FeatureMismatch(ValidationError):
    pass


class SpaceTooLarge(ValidationError):
    pass
