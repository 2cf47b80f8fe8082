"""Exception hierarchy shared by every module."""


class FcpError(Exception):
    """Base class; the CLI maps these to exit code 2."""


class FileMissing(FcpError):
    pass


class ParseError(FcpError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ShapeError(FcpError, ValueError):
    pass


class StratifyError(FcpError, ValueError):
    pass


class ConfigError(FcpError, ValueError):
    pass


class DegenerateLabels(FcpError, ValueError):
    pass


class NonFiniteLoss(FcpError, FloatingPointError):
    pass


class LabelError(FcpError, ValueError):
    pass


class NonStochasticRows(FcpError, ValueError):
    pass


class ModelMissing(FcpError):
    pass


class VersionError(FcpError):
    pass
