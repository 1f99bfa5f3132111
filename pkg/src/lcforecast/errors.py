class ParseError(ValueError):
    """Malformed input file; the message carries the offending line number."""


class ValidationError(ValueError):
    """Input is well-formed but violates a contract (ordering, ids, shapes)."""
