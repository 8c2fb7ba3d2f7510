"""Exception hierarchy; the CLI maps each family to an exit code."""


class FeatureStepError(Exception):
    exit_code = 1


class ConfigError(FeatureStepError):
    exit_code = 2


class DataError(FeatureStepError):
    exit_code = 3


class NumericalError(FeatureStepError):
    exit_code = 4


class ParameterError(ConfigError, ValueError):
    """An invalid model parameter (non-positive variance, bad season, ...)."""


class FeatureAbsentError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ImproperProductError(NumericalError):
    pass


class GridTooSmallError(NumericalError):
    pass
