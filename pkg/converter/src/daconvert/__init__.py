"""Raw SwDA / MRDA dialogue corpora -> canonical JSONL corpus files."""

from .convert import RawCorpusDescriptor, convert, validate_output

__all__ = ["RawCorpusDescriptor", "convert", "validate_output"]
