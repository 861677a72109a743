import dataclasses
import os


def dir_create_if_not_exists(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OSError(f"Can not create directory `{path}`: {e.strerror}") from e

    return path


def parse_id_list(text):
    """
    "a,b, c" -> ["a", "b", "c"]
    """
    return [s.strip() for s in text.split(",") if s.strip()]


@dataclasses.dataclass
class Trace:
    """
    Accumulated history of training steps, one time series per loss component
    """

    series: dict = dataclasses.field(default_factory=dict)

    @dataclasses.dataclass
    class TimeSeries:
        title: str
        series: list = dataclasses.field(default_factory=list)

        def append(self, t, val):
            self.series.append((t, val))

        def as_line_x1y1(self):
            return self.series

    def tick(self, t, **values):
        for title, val in values.items():
            if title not in self.series:
                self.series[title] = self.TimeSeries(title)

            self.series[title].append(t, val)

    def as_iter(self):
        yield from self.series.values()

    def __len__(self):
        return max((len(s.series) for s in self.series.values()), default=0)
