"""Exception types shared across the toolkit."""


class AttnFilterError(Exception):
    """Base class for every error raised by this package."""


class FormatError(AttnFilterError):
    """Malformed NPY container: bad magic, version, header, or payload size."""


class DtypeError(AttnFilterError):
    """Tensor dtype outside the accepted set (little-endian f4/f8)."""


class MissingComponent(AttnFilterError):
    """A required file is absent from a bundle directory."""


class BundleInvalid(AttnFilterError):
    """A bundle violates one of its invariants.

    ``invariant`` carries a short machine-checkable name for the broken
    invariant, e.g. "row-stochastic" or "geometry".
    """

    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}" if detail else invariant)


class AlreadyExists(AttnFilterError):
    """Refusing to overwrite an existing bundle directory."""


class IoError(AttnFilterError):
    """Underlying filesystem failure while reading or writing."""


class NumericError(AttnFilterError):
    """Non-finite or out-of-domain values where finite ones are required."""


class ShapeError(AttnFilterError):
    """Operands have incompatible shapes or lengths."""


class GeometryError(AttnFilterError):
    """Token count does not map onto a square patch grid."""


class GradientMissing(AttnFilterError):
    """No attention gradients available for the requested class."""


class DegenerateInput(AttnFilterError):
    """A metric input is constant or has zero mass."""


class OracleError(AttnFilterError):
    """The scoring oracle failed, timed out, or returned an invalid reply."""


class ProtocolError(AttnFilterError):
    """Wire-protocol violation: bad framing, version, or response pairing."""
