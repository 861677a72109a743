"""
Position bookkeeping for token sequences built from named groups.

Some handled problems:

- Identify the rows of a group (e.g. "text") in a concatenated sequence;
- Iterate through the groups in their storage order.
"""

import dataclasses
import itertools


@dataclasses.dataclass(frozen=True)
class Span:
    start: int
    stop: int

    def __len__(self):
        return self.stop - self.start

    def as_slice(self):
        return slice(self.start, self.stop)


@dataclasses.dataclass(frozen=True)
class SpanIndex:
    """
    Ordered, contiguous, disjoint spans covering `[0, length)`.

    A sequence assembled from groups "a", "b", "c" of lengths 2, 0, 3 has the
    layout

    a0 a1 c0 c1 c2

    with spans a=[0,2), b=[2,2), c=[2,5).
    """
    groups: tuple  # Format ((name, Span), ...), storage order

    @staticmethod
    def from_lengths(**lengths):
        bounds = list(itertools.accumulate(lengths.values(), initial=0))

        for name, n in lengths.items():
            if n < 0:
                raise ValueError(f"Group `{name}` has a negative length {n}")

        groups = tuple((name, Span(bounds[i], bounds[i + 1])) for i, name in enumerate(lengths))

        return SpanIndex(groups)

    def __len__(self):
        return self.groups[-1][1].stop if self.groups else 0

    def names(self):
        return [name for name, _ in self.groups]

    def span(self, name) -> Span:
        for group, span in self.groups:
            if group == name:
                return span

        raise KeyError(f"No group `{name}` among {self.names()}")

    __getitem__ = span

    def lengths(self):
        return {name: len(span) for name, span in self.groups}
