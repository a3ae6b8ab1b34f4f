"""Exception types shared across the pipeline."""


class MlodError(Exception):
    pass


class ParseError(MlodError, ValueError):
    """Malformed input file or blob."""


class LengthNotMultipleOf16(ParseError):
    def __init__(self, length):
        super().__init__(f"point blob length {length} is not a multiple of 16")
        self.length = length


class NonFiniteValue(ParseError):
    def __init__(self, index):
        super().__init__(f"non-finite value in point {index}")
        self.index = index


class MissingKey(ParseError):
    def __init__(self, key):
        super().__init__(f"missing calibration key {key!r}")
        self.key = key


class WrongArity(ParseError):
    def __init__(self, key, expected, got):
        super().__init__(f"{key}: expected {expected} numbers, got {got}")
        self.key = key
        self.expected = expected
        self.got = got


class WrongFieldCount(ParseError):
    def __init__(self, line, count):
        super().__init__(f"line {line}: expected 15 or 16 fields, got {count}")
        self.line = line
        self.count = count


class ZeroNormal(ParseError):
    def __init__(self):
        super().__init__("ground plane normal has zero length")


class NonOrthonormalRotation(UserWarning):
    pass


class GeometryError(MlodError, ValueError):
    pass


class BehindCamera(GeometryError):
    pass


class DegenerateOnImage(GeometryError):
    pass


class OutsideExtents(GeometryError):
    pass


class DegenerateBox(GeometryError):
    pass


class DegenerateCorners(GeometryError):
    pass


class ZeroVector(GeometryError):
    pass


class InvalidDepthRange(MlodError, ValueError):
    pass


class ShapeMismatch(MlodError, ValueError):
    pass


class UnknownClass(MlodError, KeyError):
    pass


class PlacementFailure(MlodError, RuntimeError):
    pass


class NonFiniteLoss(MlodError, FloatingPointError):
    def __init__(self, step, value=float("nan")):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step
        self.value = value
