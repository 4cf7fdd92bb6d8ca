import copy
import logging
import math

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised when a config value fails validation

    Args:
        field (str): Name of the offending config field
        message (str): Human readable description of the problem
    """

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


def _strip_quotes(text):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in ("'", '"'):
        return text[1:-1]
    return text


def _split_list(text):
    """Split '1, 2', '[1, 2]' or '(1, 2)' into stripped string items"""
    text = text.strip()
    if text[:1] in ("[", "(") and text[-1:] in ("]", ")"):
        text = text[1:-1]
    return [_strip_quotes(part) for part in text.split(",") if part.strip()]


class Param:
    """Base class for all config Params

    Args:
        default (any): The default value to use
        help_text (str, optional): Appended to validation errors. Default is ''.
    """

    def __init__(self, default=None, help_text=""):
        self.name = None
        self.help_text = help_text
        self.default = default

    def bind(self, name):
        """Called by the metaclass with the attribute name this Param lives at"""
        self.name = name

    def validate(self, value):
        """Return ``value`` coerced to this Param's type or raise ConfigError"""
        return value

    def parse(self, text):
        """Convert a config-file string into a validated value"""
        return self.validate(_strip_quotes(text))

    def _fail(self, message):
        if self.help_text:
            message = f"{message} ({self.help_text})"
        raise ConfigError(self.name or "?", message)

    def __deepcopy__(self, memo):
        new = copy.copy(self)
        memo[id(self)] = new
        return new


class NumberParam(Param):
    """Base class for numeric Params with an optional range

    Args:
        min_val (int, float, optional): Minimum acceptable value
        max_val (int, float, optional): Maximum acceptable value
        min_inclusive (bool): If False, ``min_val`` itself is rejected
        max_inclusive (bool): If False, ``max_val`` itself is rejected
    """

    number_type = float

    def __init__(
        self,
        default=None,
        min_val=None,
        max_val=None,
        min_inclusive=True,
        max_inclusive=True,
        help_text="",
    ):
        super().__init__(default=default, help_text=help_text)
        self.min = min_val
        self.max = max_val
        self.min_inclusive = min_inclusive
        self.max_inclusive = max_inclusive
        if default is not None:
            self.default = self.validate(default)

    def _coerce(self, value):
        raise NotImplementedError

    def validate(self, value):
        value = self._coerce(value)
        if self.min is not None:
            if value < self.min or (value == self.min and not self.min_inclusive):
                op = ">=" if self.min_inclusive else ">"
                self._fail(f"must be {op} {self.min}. Got {value}")
        if self.max is not None:
            if value > self.max or (value == self.max and not self.max_inclusive):
                op = "<=" if self.max_inclusive else "<"
                self._fail(f"must be {op} {self.max}. Got {value}")
        return value


class IntParam(NumberParam):
    """An integer valued Param"""

    def _coerce(self, value):
        if isinstance(value, bool):
            self._fail(f"expected an integer. Got {value!r}")
        if isinstance(value, str):
            try:
                value = float(value) if ("e" in value.lower() or "." in value) else int(value)
            except ValueError:
                self._fail(f"expected an integer. Got {value!r}")
        if isinstance(value, float):
            if not value.is_integer():
                self._fail(f"expected an integer. Got {value!r}")
            value = int(value)
        try:
            return int(value)
        except (TypeError, ValueError):
            self._fail(f"expected an integer. Got {value!r}")


class FloatParam(NumberParam):
    """A finite float valued Param"""

    def _coerce(self, value):
        if isinstance(value, bool):
            self._fail(f"expected a number. Got {value!r}")
        try:
            value = float(value)
        except (TypeError, ValueError):
            self._fail(f"expected a number. Got {value!r}")
        if not math.isfinite(value):
            self._fail(f"must be finite. Got {value}")
        return value


class BoolParam(Param):
    """A True/False Param"""

    _TRUE = ("true", "yes", "1", "on")
    _FALSE = ("false", "no", "0", "off")

    def validate(self, value):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            low = value.strip().lower()
            if low in self._TRUE:
                return True
            if low in self._FALSE:
                return False
        if isinstance(value, int) and value in (0, 1):
            return bool(value)
        self._fail(f"expected a boolean. Got {value!r}")


class ChoiceParam(Param):
    """A Param restricted to a fixed set of string options

    Args:
        options ([str]): Acceptable values, in display order
        default (str): One of ``options``
    """

    def __init__(self, options, default=None, help_text=""):
        super().__init__(default=default, help_text=help_text)
        self.options = list(options)
        if default is None:
            self.default = self.options[0]
        elif default not in self.options:
            raise ValueError(f"Default must be one of {self.options}. Got {default}.")

    def validate(self, value):
        value = str(value).strip()
        if value not in self.options:
            self._fail(f"must be one of {self.options}. Got {value!r}")
        return value


class TupleParam(Param):
    """A Param holding a tuple of numbers

    Args:
        item_param (NumberParam): Validator applied to every item
        min_len (int): Minimum number of items
    """

    def __init__(self, item_param, default=(), min_len=1, help_text=""):
        super().__init__(default=None, help_text=help_text)
        self.item_param = item_param
        self.min_len = min_len
        self.default = self.validate(default)

    def bind(self, name):
        super().bind(name)
        self.item_param.name = name

    def validate(self, value):
        if isinstance(value, str):
            value = _split_list(value)
        try:
            items = tuple(self.item_param.validate(v) for v in value)
        except TypeError:
            self._fail(f"expected a sequence. Got {value!r}")
        if len(items) < self.min_len:
            self._fail(f"needs at least {self.min_len} item(s). Got {len(items)}")
        return items

    def parse(self, text):
        return self.validate(text)


class IntTupleParam(TupleParam):
    """Tuple of integers, eg. hidden layer widths"""

    def __init__(self, default=(), min_val=None, max_val=None, min_len=1, help_text=""):
        super().__init__(
            IntParam(min_val=min_val, max_val=max_val),
            default=default,
            min_len=min_len,
            help_text=help_text,
        )


class FloatTupleParam(TupleParam):
    """Tuple of floats, eg. a sweep grid"""

    def __init__(
        self,
        default=(),
        min_val=None,
        max_val=None,
        min_inclusive=True,
        max_inclusive=True,
        min_len=1,
        help_text="",
    ):
        super().__init__(
            FloatParam(
                min_val=min_val,
                max_val=max_val,
                min_inclusive=min_inclusive,
                max_inclusive=max_inclusive,
            ),
            default=default,
            min_len=min_len,
            help_text=help_text,
        )
