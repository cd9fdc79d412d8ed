class SimClock:
    """Manually driven millisecond clock; never moves backwards."""

    def __init__(self, start: int = 0):
        if start < 0:
            raise ValueError("clock cannot start before the epoch")
        self.millis = start

    def __call__(self) -> int:
        return self.millis

    def advance(self, ms: int) -> int:
        if ms < 0:
            raise ValueError("clock cannot move backwards")
        self.millis += ms
        return self.millis

    def __repr__(self):
        return f"SimClock({self.millis})"
