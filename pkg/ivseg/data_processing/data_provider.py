"""

`DataProvider` is a low-level storage access API encapsulating working with
files or RAM under an interface.

`DataProvider` is similar to `DataInterface` (see "data_interface.py") in a
sense that both are used for data accessing. However, `DataInterface` knows
nothing about the underlying storage, while `DataProvider` is unaware of
business logic, as it only deals with plain `(K, V)` rows.

"""

import dataclasses
import os

import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


class DataProviderBase:
    """
    Represents underlying data as a list of `(KEY, VALUE)` entries.

    If the implementor cannot satisfy the request due to lack of data, it
    must raise `ivseg.data_processing.data_interface.NoDataError(...)`
    """

    def data(self, key):
        raise NotImplementedError()

    def set_data(self, value, key):
        raise NotImplementedError()

    def into_iter(self):
        """
        Iterates over stored `(KEY, VALUE)` pairs in storage order
        """
        raise NotImplementedError()

    def keys_stored(self):
        return [k for k, _ in self.into_iter()]


class RamDataProvider(dict, DataProviderBase):

    def __init__(self, *args, **kwargs):
        dict.__init__(self, *args, **kwargs)
        DataProviderBase.__init__(self)

    def data(self, key):
        import ivseg.data_processing.data_interface

        if key not in self:
            raise ivseg.data_processing.data_interface.NoDataError(key)

        return self[key]

    def set_data(self, value, key):
        self[key] = value

    def into_iter(self):
        yield from self.items()


def parse_key_value_lines(lines, origin="<text>"):
    """
    `key = value` lines; `#` starts a comment, blank lines are skipped.
    Returns `[(key, raw string value)]`, raising `ValueError` on malformed or
    duplicate lines.
    """
    out = []
    seen = set()

    for number, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()

        if not line:
            continue

        key, sep, value = line.partition("=")
        key = key.strip()

        if not sep or not key:
            raise ValueError(f"{origin}:{number}: expected `key = value`, got `{line}`")

        if key in seen:
            raise ValueError(f"{origin}:{number}: duplicate key `{key}`")

        seen.add(key)
        out.append((key, value.strip()))

    return out


@dataclasses.dataclass
class KeyValueFileDataProvider(dict, DataProviderBase):
    """
    Flat UTF-8 `key = value` file, buffered in RAM. Values are kept as raw
    strings; parsing is the business of the data interface.
    """
    file_name: str

    def __post_init__(self):
        if not os.path.exists(self.file_name):
            raise FileNotFoundError(f"No such key-value file: `{self.file_name}`")

        with open(self.file_name, "r", encoding="utf-8") as f:
            for key, value in parse_key_value_lines(f.readlines(), self.file_name):
                self[key] = value

        log.debug(KeyValueFileDataProvider, "read", len(self), "keys from", self.file_name)

    def __hash__(self):
        return id(self)

    def data(self, key):
        import ivseg.data_processing.data_interface

        try:
            return self[key]
        except KeyError:
            raise ivseg.data_processing.data_interface.NoDataError(key)

    def set_data(self, value, key):
        self[key] = str(value)

    def into_iter(self):
        yield from self.items()


def write_key_value_file(file_name, rows):
    with open(file_name, "w", encoding="utf-8") as f:
        for key, value in rows:
            f.write(f"{key} = {value}\n")
