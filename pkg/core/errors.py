"""Exception and warning types shared by the optimizer stack."""


class RsvrgError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(RsvrgError, ValueError):
    pass


class ContractViolation(RsvrgError, ValueError):
    pass


class ConfigError(RsvrgError, ValueError):
    pass


class ParseError(RsvrgError, ValueError):
    def __init__(self, msg, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {msg}" if where else msg)


class CutLocusError(RsvrgError, ArithmeticError):
    """The logarithm map is undefined: a principal angle reached pi/2.

    Carries the offending smallest singular value of base^T target plus
    whatever run context was attached on the way up (batch index, epoch,
    inner iteration).
    """

    def __init__(self, smallest_sv, **context):
        self.smallest_sv = float(smallest_sv)
        self.context = dict(context)
        super().__init__(self._message())

    def _message(self):
        msg = f"target on the cut locus (smallest singular value {self.smallest_sv:.3e})"
        if self.context:
            extra = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
            msg += f" [{extra}]"
        return msg

    def with_context(self, **context):
        merged = dict(self.context)
        merged.update(context)
        return CutLocusError(self.smallest_sv, **merged)


class DivergenceError(RsvrgError, ArithmeticError):
    def __init__(self, epoch, eta, value=None):
        self.epoch = epoch
        self.eta = eta
        self.value = value
        super().__init__(f"non-finite cost {value!r} at epoch {epoch} (eta={eta!r})")


class StalledLineSearch(RsvrgError, ArithmeticError):
    def __init__(self, epoch, halvings):
        self.epoch = epoch
        self.halvings = halvings
        super().__init__(f"backtracking exhausted {halvings} halvings at iteration {epoch}")


class NonConvergenceWarning(RuntimeWarning):
    pass


class NonUniqueSubspaceWarning(RuntimeWarning):
    pass


class DroppedUsersWarning(UserWarning):
    pass
