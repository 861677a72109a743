"""

`DataInterface` instances perform high-level data operations, such as value
parsing, key validation, and defaulting, on top of a `DataProvider`.

"""

import dataclasses

import ivseg.data_processing.data_provider
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


class NoDataError(Exception):

    def __init__(self, variable=None, message=None) -> None:
        Exception.__init__(self, message or f"Can not retrieve `{variable}`")
        self.variable = variable


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class KeySchema:
    """
    Declared keys and the types their raw values are parsed by
    """
    types: dict  # Format {key: type}

    def variables(self):
        return list(self.types.keys())

    def parse(self, variable, raw):
        kind = self.types[variable]

        if not isinstance(raw, str):
            return raw

        try:
            if kind is bool:
                lowered = raw.strip().lower()

                if lowered in ("1", "true", "yes", "on"):
                    return True

                if lowered in ("0", "false", "no", "off"):
                    return False

                raise ValueError(raw)

            if kind is int:
                return int(raw)

            if kind is float:
                return float(raw)

            return kind(raw)
        except ValueError:
            raise ConfigError(f"Key `{variable}`: can not parse `{raw}` as {kind.__name__}")


class DataInterfaceBase:
    """
    Acquires data from an underlying data storage.
    """
    def data(self, variable):
        """
        Expected to raise `NoDataError`, if no data can be acquired
        """
        raise NoDataError(variable)

    def set_data(self, value, variable):
        raise NotImplementedError()


class WrappingDataInterface(DataInterfaceBase):

    def __init__(self, data_interface_implementor):
        DataInterfaceBase.__init__(self)
        self._data_interface_implementor = data_interface_implementor

    def data(self, *args, **kwargs):
        return self._data_interface_implementor.data(*args, **kwargs)

    def set_data(self, *args, **kwargs):
        return self._data_interface_implementor.set_data(*args, **kwargs)

    def data_provider(self):
        return self._data_interface_implementor.data_provider()


@dataclasses.dataclass
class ConcreteDataInterface(DataInterfaceBase):

    _data_provider: ivseg.data_processing.data_provider.DataProviderBase
    """
    The storage
    """

    _schema: KeySchema
    """
    Describes the keys stored by `_data_provider`
    """

    def data_provider(self):
        return self._data_provider

    def schema(self):
        return self._schema

    def data(self, variable):
        return self._schema.parse(variable, self._data_provider.data(variable))

    def set_data(self, value, variable):
        return self._data_provider.set_data(value, variable)


class ConstrainedDataInterface(WrappingDataInterface):
    """
    Key-checking filter. Unlike a plain wrapper, rejects keys the schema does
    not declare, both on request and in the storage itself.
    """

    def __init__(self, data_interface_implementor, schema: KeySchema = None):
        WrappingDataInterface.__init__(self, data_interface_implementor)
        self._schema = schema or data_interface_implementor.schema()

    def unexpected_keys(self):
        declared = set(self._schema.variables())

        return [k for k in self.data_provider().keys_stored() if k not in declared]

    def validate(self):
        unexpected = self.unexpected_keys()

        if unexpected:
            raise ConfigError(f"Unknown keys: {', '.join(unexpected)}; expected a subset of {self._schema.variables()}")

    def _check(self, variable):
        if variable not in self._schema.variables():
            raise ConfigError(f"Key `{variable}` has not been expected")

    def data(self, variable):
        self._check(variable)

        return self._data_interface_implementor.data(variable)

    def set_data(self, value, variable):
        self._check(variable)

        return self._data_interface_implementor.set_data(value, variable)


@dataclasses.dataclass
class DefaultingDataInterface(DataInterfaceBase):
    """
    "No-value" exception-handling decorator.

    Returns a default value for `NoDataError`-producing variables
    """

    _data_interface_implementor: DataInterfaceBase
    """
    Decorated instance
    """

    _default_value_override: dict = dataclasses.field(default_factory=dict)
    """
    Per-variable default values. Variables missing from here are not
    defaultable
    """

    def data(self, variable):
        try:
            return self._data_interface_implementor.data(variable)
        except NoDataError:
            if variable not in self._default_value_override:
                raise NoDataError(variable, message=f"DefaultingDataInterface: missing variable `{variable}` has no default")

            log.verbose(DefaultingDataInterface.data, "defaulting", variable, "to", self._default_value_override[variable])

            return self._default_value_override[variable]

    def set_data(self, value, variable):
        return self._data_interface_implementor.set_data(value, variable)

    def data_provider(self):
        return self._data_interface_implementor.data_provider()

