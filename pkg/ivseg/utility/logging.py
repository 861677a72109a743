import dataclasses
import inspect
import os
import pathlib
import sys


def _level_from_environment(default):
    value = os.environ.get("IVSEG_LOG_LEVEL", None)

    if value is None or value.strip() == "":
        return default

    value = value.strip().upper()

    if value.isdigit():
        return int(value)

    return getattr(Log, "LEVEL_" + value, default)


@dataclasses.dataclass
class Log:
    filter_allow: set = None
    filter_disable: set = None
    file: str = None
    level: int = None
    stream: object = None

    LEVEL_SHUT_UP = 0
    LEVEL_CRITICAL = 1
    LEVEL_ERROR = 2
    LEVEL_WARNING = 3
    LEVEL_INFO = 4
    LEVEL_DEBUG = 5
    LEVEL_VERBOSE = 6
    LEVEL = LEVEL_INFO  # Process-wide default, used when `level` is None

    def check_filter(self, out):
        res = self.filter_allow is None

        if self.filter_allow is not None:
            for s in self.filter_allow:
                if s in out:
                    res = True

        if self.filter_disable is not None:
            for s in self.filter_disable:
                if s in out:
                    res = False

        return res

    def effective_level(self):
        if self.level is not None:
            return self.level

        return _level_from_environment(Log.LEVEL)

    def _emit(self, threshold, prefix, *args, **kwargs):
        if self.effective_level() < threshold:
            return

        fmt = self.format(*args, **kwargs)

        if self.check_filter(fmt):
            print(prefix, fmt, file=self.stream or sys.stdout)

    def verbose(self, *args, **kwargs):
        self._emit(Log.LEVEL_VERBOSE, "VERBOSE - ", *args, **kwargs)

    def info(self, *args, **kwargs):
        self._emit(Log.LEVEL_INFO, "INFO - ", *args, **kwargs)

    def warning(self, *args, **kwargs):
        self._emit(Log.LEVEL_WARNING, "WARN - ", *args, **kwargs)

    def error(self, *args, **kwargs):
        self._emit(Log.LEVEL_ERROR, "ERROR - ", *args, **kwargs)

    def debug(self, *args, **kwargs):
        self._emit(Log.LEVEL_DEBUG, "DEBUG - ", *args, **kwargs)

    def critical(self, *args, **kwargs):
        self._emit(Log.LEVEL_CRITICAL, "CRITICAL - ", *args, **kwargs)

    def format(self, *args, **kwargs):
        """
        Formats input data according to the following pattern: "[CONTEXT] TOPICS (if any) | message".

        The context is inferred by detecting the following types of objects:
        - a string representing Path
        - type name
        - callable

        Topics get passed explicitly with `topics=LIST` argument
        """

        if self.file is not None:
            args = (self.file,) + args

        context = []
        suffix = []

        def is_path(arg):
            if type(arg) is not str:
                return False
            return os.path.isfile(arg) or os.path.isdir(arg)

        def format_path(arg):
            return pathlib.Path(arg).stem

        def format_class(arg):
            return arg.__name__

        def format_callable(arg):
            return getattr(arg, "__qualname__", str(arg).split()[1]) + "()"

        for a in args:
            if is_path(a):
                context += [format_path(a)]
            elif inspect.isclass(a):
                context += [format_class(a)]
            elif callable(a):
                context += [format_callable(a)]
            else:
                suffix += [str(a)]

        topics = " "
        if "topics" in kwargs.keys():
            topics = kwargs["topics"]
            topics = ' ' + ', '.join(topics) + ' | '

        return '[' + ' : '.join(context) + ']' + topics + ' '.join(suffix)
