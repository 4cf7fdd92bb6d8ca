import copy
import hashlib
import json
import logging

from .params import ConfigError, Param

log = logging.getLogger(__name__)


class DeclarativeFieldBase(type):
    """Base MetaClass for setting up fields and making Param's properties

    The goal here is to allow a config class to declare `Param` class variables
    that are then converted into validated instance level values. Params are
    inherited, so a subclass only declares what it adds or overrides.
    """

    def __new__(cls, name, bases, attrs):
        params = {}
        for base in reversed(bases):
            params.update(getattr(base, "_params", {}))

        for key, value in list(attrs.items()):
            if isinstance(value, Param):
                value.bind(key)
                params[key] = value
                attrs[key] = _make_property(key)

        attrs["_params"] = params
        return super().__new__(cls, name, bases, attrs)


def _make_property(name):
    def getter(self):
        return self._values[name]

    def setter(self, value):
        self._values[name] = self._fields[name].validate(value)

    return property(getter, setter)


class BaseConfig(metaclass=DeclarativeFieldBase):
    """Base class for all configs

    Keyword arguments override defaults. A ``name__attr`` keyword sets an
    attribute on the underlying Param instead, eg. ``lr__max=1.0``, which
    only affects this instance.

    Raises:
        ConfigError: A value fails its Param's validation or ``check()``
    """

    # Section name used in experiment config files
    section = None

    def __init__(self, **kwargs):
        self._fields = {name: copy.deepcopy(param) for name, param in self._params.items()}
        self._values = {name: param.default for name, param in self._fields.items()}
        self._setup_overridden_values(**kwargs)
        self.check()

    def _setup_overridden_values(self, **kwargs):
        """Sets overridden Param properties such as defaults"""
        # Param attribute overrides first so ranges apply to value overrides
        for attr, val in kwargs.items():
            parts = attr.split("__")
            if len(parts) > 1:
                self._set_param_attr(parts[0], parts[1], val)
        for attr, val in kwargs.items():
            if "__" not in attr:
                self._get_param(attr)
                setattr(self, attr, val)

    def _get_param(self, param_name):
        """Return Param object or raise ConfigError

        Args:
            param_name (str): name of class Param
        """
        try:
            return self._fields[param_name]
        except KeyError:
            raise ConfigError(param_name, f"unknown field for {self.__class__.__name__}") from None

    def _set_param_attr(self, param_name, attr, val):
        """Sets attribute on param to val

        Args:
            param_name (str): name of class Param
            attr (str): name of attr of Param
            val (any): value to set attr of Param to
        """
        param = self._get_param(param_name)
        if not hasattr(param, attr):
            raise ConfigError(param_name, f"Param has no attribute {attr!r}")
        setattr(param, attr, val)

    def check(self):
        """Override to validate invariants spanning several fields"""
        pass

    @classmethod
    def from_mapping(cls, mapping, **kwargs):
        """Build a config from a mapping of field name -> string or value

        Strings are parsed by the field's Param so config file text works
        directly. ``kwargs`` are applied afterwards.
        """
        values = {}
        for key, raw in mapping.items():
            key = key.strip()
            if key not in cls._params:
                raise ConfigError(key, f"unknown field for {cls.__name__}")
            param = cls._params[key]
            values[key] = param.parse(raw) if isinstance(raw, str) else raw
        values.update(kwargs)
        return cls(**values)

    def to_dict(self):
        return {name: _jsonable(self._values[name]) for name in self._fields}

    def replace(self, **changes):
        """Return a copy with ``changes`` applied"""
        values = dict(self._values)
        values.update(changes)
        return self.__class__(**values)

    def content_hash(self):
        """sha256 over the canonical JSON form of this config"""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __repr__(self):
        items = ", ".join(f"{k}={v!r}" for k, v in self._values.items())
        return f"{self.__class__.__name__}({items})"


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value
