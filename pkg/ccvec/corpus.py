# ccvec/corpus.py
"""
Patch ingestion: unified-diff parsing, tokenization, vocabularies and
message labels.
"""
import hashlib
import json
import logging
import random
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from ccvec.errors import CorpusError, ParseError

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
OOV_TOKEN = "<unk>"
PAD_ID = 0
OOV_ID = 1

TokenLine = List[str]

_MULTI_GLYPH_OPS = ("==", "!=", "<=", ">=", "->", "&&", "||", "++", "--", "<<", ">>")
_TOKEN_RE = re.compile(
    r"[^\W\d]\w*"  # identifiers (may contain digits after the first char)
    r"|\d+"
    r"|" + "|".join(re.escape(op) for op in _MULTI_GLYPH_OPS) +
    r"|\S"
)
_HUNK_HEADER_RE = re.compile(r"^@@(?: -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@.*)?$")
_BINARY_MARKERS = ("Binary files ", "GIT binary patch")


class VocabKind(str, Enum):
    CODE = "code"
    MESSAGE = "message"


@dataclass
class Hunk:
    removed: List[TokenLine] = field(default_factory=list)
    added: List[TokenLine] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not self.removed and not self.added


@dataclass
class FileChange:
    path: str
    hunks: List[Hunk] = field(default_factory=list)

    def code_tokens(self) -> List[str]:
        tokens: List[str] = []
        for hunk in self.hunks:
            for line in hunk.removed + hunk.added:
                tokens.extend(line)
        return tokens


@dataclass
class PatchChange:
    id: str
    message: str
    files: List[FileChange] = field(default_factory=list)
    message_tokens: List[str] = field(default_factory=list)

    @classmethod
    def create(cls, message: str, files: List[FileChange], id: Optional[str] = None) -> "PatchChange":
        """Build a patch from a raw log message, keeping its first line only."""
        first_line = first_message_line(message)
        tokens = tokenize_line(first_line, lowercase=True) if first_line.strip() else []
        patch = cls(id=id or "", message=first_line, files=files, message_tokens=tokens)
        if not patch.id:
            patch.id = content_hash(patch)
        return patch

    def code_tokens(self) -> List[str]:
        """All code tokens of the patch in diff order."""
        tokens: List[str] = []
        for file_change in self.files:
            tokens.extend(file_change.code_tokens())
        return tokens


@dataclass
class ParseWarning:
    line_number: int
    path: str
    reason: str


def first_message_line(message: str) -> str:
    for line in message.splitlines():
        if line.strip():
            return line.strip()
    return ""


def content_hash(patch: PatchChange) -> str:
    digest = hashlib.sha1()
    digest.update(patch.message.encode("utf-8"))
    for file_change in patch.files:
        digest.update(b"\x00" + file_change.path.encode("utf-8"))
        for hunk in file_change.hunks:
            for sign, lines in (b"-", hunk.removed), (b"+", hunk.added):
                for line in lines:
                    digest.update(sign + " ".join(line).encode("utf-8"))
    return digest.hexdigest()[:16]


def tokenize_line(text: str, lowercase: bool = False) -> TokenLine:
    """Split a code or message line into identifier, number and operator tokens.

    Multi-glyph operators (==, ->, && ...) stay whole; every other
    punctuation glyph becomes its own token. Lowercasing is used for
    log messages only.
    """
    if lowercase:
        text = text.lower()
    return _TOKEN_RE.findall(text)


class DiffParser:
    """Line-oriented unified diff parser.

    Context lines are discarded, blank changed lines are dropped and
    binary files are skipped with a warning record in ``self.warnings``.
    """

    def __init__(self) -> None:
        self.warnings: List[ParseWarning] = []
        self._files: List[FileChange] = []
        self._current: Optional[FileChange] = None
        self._hunk: Optional[Hunk] = None
        self._binary = False
        # remaining (old, new) counts of a hunk whose header carried ranges
        self._remaining: Optional[List[int]] = None

    def parse(self, text: str) -> List[FileChange]:
        lines = text.splitlines()
        index = 0
        while index < len(lines):
            line = lines[index]
            number = index + 1
            next_line = lines[index + 1] if index + 1 < len(lines) else None

            if self._remaining is not None and (self._remaining[0] > 0 or self._remaining[1] > 0):
                self._content_line(line, counted=True)
            elif line.startswith("diff "):
                self._start_file(_path_from_diff_line(line))
            elif line.startswith("--- ") and next_line is not None and next_line.startswith("+++ "):
                self._header_pair(line, next_line)
                index += 1
            elif line.startswith("@@"):
                self._start_hunk(line, number)
            elif line.startswith(_BINARY_MARKERS):
                self._mark_binary(number)
            elif self._hunk is not None:
                self._content_line(line, counted=False)
            index += 1

        self._close_file()
        return self._files

    def _start_file(self, path: str) -> None:
        self._close_file()
        self._current = FileChange(path=path)
        self._binary = False

    def _header_pair(self, old_line: str, new_line: str) -> None:
        new_path = _strip_prefix(new_line[4:].split("\t")[0].strip(), "b/")
        old_path = _strip_prefix(old_line[4:].split("\t")[0].strip(), "a/")
        path = old_path if new_path == "/dev/null" else new_path
        if self._current is None or self._current.hunks or self._hunk is not None:
            self._start_file(path)
        else:
            self._current.path = path

    def _start_hunk(self, line: str, number: int) -> None:
        match = _HUNK_HEADER_RE.match(line.rstrip())
        if not match:
            raise ParseError(f"malformed hunk header: {line!r}", line_number=number)
        if self._current is None:
            self._current = FileChange(path="")
        self._close_hunk()
        self._hunk = Hunk()
        if match.group(1) is not None:
            old_count = int(match.group(2)) if match.group(2) is not None else 1
            new_count = int(match.group(4)) if match.group(4) is not None else 1
            self._remaining = [old_count, new_count]
        else:
            self._remaining = None

    def _content_line(self, line: str, counted: bool) -> None:
        if line.startswith("\\"):
            return
        sign = line[:1]
        body = line[1:]
        if counted:
            if sign == "-":
                self._remaining[0] -= 1
            elif sign == "+":
                self._remaining[1] -= 1
            else:
                self._remaining[0] -= 1
                self._remaining[1] -= 1
        if self._hunk is None or sign not in "+-" or not sign:
            return
        if not body.strip():
            return
        tokens = tokenize_line(body)
        if sign == "-":
            self._hunk.removed.append(tokens)
        else:
            self._hunk.added.append(tokens)

    def _mark_binary(self, number: int) -> None:
        path = self._current.path if self._current is not None else ""
        self.warnings.append(ParseWarning(number, path, "binary file skipped"))
        logger.warning("Skipping binary file %r (line %d)", path, number)
        self._binary = True

    def _close_hunk(self) -> None:
        if self._hunk is not None and self._current is not None and not self._hunk.is_empty():
            self._current.hunks.append(self._hunk)
        self._hunk = None
        self._remaining = None

    def _close_file(self) -> None:
        self._close_hunk()
        if self._current is not None and self._current.hunks and not self._binary:
            self._files.append(self._current)
        self._current = None
        self._binary = False


def _strip_prefix(path: str, prefix: str) -> str:
    return path[len(prefix):] if path.startswith(prefix) else path


def _path_from_diff_line(line: str) -> str:
    parts = line.split()
    if len(parts) >= 4 and parts[1] == "--git":
        return _strip_prefix(parts[-1], "b/")
    return parts[-1] if len(parts) > 1 else ""


def parse_unified_diff(text: str, warnings: Optional[List[ParseWarning]] = None) -> List[FileChange]:
    """Parse unified diff text into one FileChange per affected file."""
    parser = DiffParser()
    files = parser.parse(text)
    if warnings is not None:
        warnings.extend(parser.warnings)
    return files


@dataclass
class Vocabulary:
    kind: VocabKind
    itos: List[str]
    min_count: int = 1
    stoi: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.itos[:2] != [PAD_TOKEN, OOV_TOKEN]:
            raise CorpusError("vocabulary must start with the PAD and OOV entries")
        self.stoi = {token: index for index, token in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("vocabulary contains duplicate tokens")

    @classmethod
    def from_counts(cls, kind: VocabKind, counts: Counter, min_count: int,
                    max_size: Optional[int] = None) -> "Vocabulary":
        ranked = sorted(
            (item for item in counts.items()
             if item[1] >= min_count and item[0] not in (PAD_TOKEN, OOV_TOKEN)),
            key=lambda item: (-item[1], item[0]),
        )
        if max_size is not None:
            ranked = ranked[:max_size]
        return cls(kind=kind, itos=[PAD_TOKEN, OOV_TOKEN] + [token for token, _ in ranked],
                   min_count=min_count)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi and self.stoi[token] > OOV_ID

    def token_to_id(self, token: str) -> int:
        return self.stoi.get(token, OOV_ID)

    def id_to_token(self, index: int) -> str:
        return self.itos[index]

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.token_to_id(token) for token in tokens]

    def to_dict(self) -> Dict:
        return {"kind": self.kind.value, "min_count": self.min_count, "tokens": list(self.itos)}

    @classmethod
    def from_dict(cls, data: Dict) -> "Vocabulary":
        return cls(kind=VocabKind(data["kind"]), itos=list(data["tokens"]),
                   min_count=int(data.get("min_count", 1)))


def build_vocabularies(corpus: Sequence[PatchChange], code_min_count: int = 1,
                       msg_min_count: int = 1,
                       msg_max_size: Optional[int] = None) -> Tuple[Vocabulary, Vocabulary]:
    """Build the code vocabulary and the message-word vocabulary."""
    if not corpus:
        raise CorpusError("cannot build vocabularies from an empty corpus")
    code_counts: Counter = Counter()
    msg_counts: Counter = Counter()
    for patch in corpus:
        code_counts.update(patch.code_tokens())
        msg_counts.update(patch.message_tokens)

    code_vocab = Vocabulary.from_counts(VocabKind.CODE, code_counts, code_min_count)
    msg_vocab = Vocabulary.from_counts(VocabKind.MESSAGE, msg_counts, msg_min_count, msg_max_size)
    if len(msg_vocab) <= 2:
        raise CorpusError(
            f"message vocabulary is empty after filtering (min_count={msg_min_count}, "
            f"max_size={msg_max_size})"
        )
    logger.info("Built vocabularies: %d code tokens, %d message words",
                len(code_vocab), len(msg_vocab))
    return code_vocab, msg_vocab


def message_labels(patch: PatchChange, vm: Vocabulary) -> np.ndarray:
    """Multi-hot vector over the message vocabulary for the patch's first line."""
    if vm.kind is not VocabKind.MESSAGE:
        raise CorpusError("message_labels requires a message vocabulary")
    labels = np.zeros(len(vm), dtype=np.float32)
    for token in patch.message_tokens:
        index = vm.token_to_id(token)
        if index > OOV_ID:
            labels[index] = 1.0
    return labels


# Canonical JSON-lines corpus format

class HunkRecord(BaseModel):
    removed: List[str] = Field(default_factory=list)
    added: List[str] = Field(default_factory=list)


class FileRecord(BaseModel):
    path: str
    hunks: List[HunkRecord] = Field(default_factory=list)


class PatchRecord(BaseModel):
    id: Optional[str] = None
    message: str = ""
    files: List[FileRecord] = Field(default_factory=list)


def patch_from_record(record: PatchRecord) -> PatchChange:
    files = []
    for file_record in record.files:
        hunks = []
        for hunk_record in file_record.hunks:
            hunk = Hunk(
                removed=[tokenize_line(line) for line in hunk_record.removed if line.strip()],
                added=[tokenize_line(line) for line in hunk_record.added if line.strip()],
            )
            if not hunk.is_empty():
                hunks.append(hunk)
        if hunks:
            files.append(FileChange(path=file_record.path, hunks=hunks))
    return PatchChange.create(record.message, files, id=record.id)


def patch_to_record(patch: PatchChange) -> PatchRecord:
    return PatchRecord(
        id=patch.id,
        message=patch.message,
        files=[
            FileRecord(path=f.path, hunks=[
                HunkRecord(removed=[" ".join(line) for line in h.removed],
                           added=[" ".join(line) for line in h.added])
                for h in f.hunks
            ])
            for f in patch.files
        ],
    )


def load_corpus(path: Union[str, Path]) -> List[PatchChange]:
    """Read a canonical JSON-lines corpus."""
    patches = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = PatchRecord.model_validate_json(line)
            except ValidationError as e:
                raise ParseError(f"invalid patch record in {path}: {e}", line_number=number) from e
            patches.append(patch_from_record(record))
    logger.info("Loaded %d patches from %s", len(patches), path)
    return patches


def save_corpus(patches: Iterable[PatchChange], path: Union[str, Path]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for patch in patches:
            f.write(json.dumps(patch_to_record(patch).model_dump(), ensure_ascii=False) + "\n")
            count += 1
    return count


def import_paired_files(diff_path: Union[str, Path], msg_path: Union[str, Path],
                        newline_marker: str = "<nl>", workers: int = 1) -> List[PatchChange]:
    """Import a line-aligned diff/message corpus: line i of each file is patch i."""
    diff_lines = _read_lines(diff_path)
    msg_lines = _read_lines(msg_path)
    if len(diff_lines) != len(msg_lines):
        raise CorpusError(
            f"diff and message files differ in length: {len(diff_lines)} != {len(msg_lines)}"
        )

    def build(pair: Tuple[str, str]) -> PatchChange:
        diff_line, msg_line = pair
        files = parse_unified_diff(diff_line.replace(newline_marker, "\n"))
        return PatchChange.create(msg_line, files)

    pairs = list(zip(diff_lines, msg_lines))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            patches = list(pool.map(build, pairs))
    else:
        patches = [build(pair) for pair in pairs]
    logger.info("Imported %d patches from %s / %s", len(patches), diff_path, msg_path)
    return patches


def _read_lines(path: Union[str, Path]) -> List[str]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


# Bot-generated and trivial messages that carry no information about the code change
_BOT_MESSAGE_PATTERNS = [
    re.compile(p) for p in (
        r"^\[maven-release-plugin\]",
        r"^ignore update ' .* \.'$",
        r"^update changelog",
        r"^prepare (the )?(next )?(development|release) (version|iteration)",
        r"^bump (the )?version",
        r"^(merge|rollback|revert) ",
        r"^update (version|submodule|dependencies)",
        r"^auto[- ]?(generated|commit)",
    )
]
_TRIVIAL_VERBS = ("add", "change", "delete", "edit", "fix", "modify", "remove", "update")


def is_noisy_message(patch: PatchChange) -> bool:
    """True for bot messages and messages that only name a changed file."""
    message = patch.message.lower().strip()
    if any(pattern.search(message) for pattern in _BOT_MESSAGE_PATTERNS):
        return True
    words = message.rstrip(".").split()
    if len(words) == 2 and words[0] in _TRIVIAL_VERBS:
        stems = set()
        for file_change in patch.files:
            name = file_change.path.rsplit("/", 1)[-1].lower()
            stems.update({name, name.split(".", 1)[0]})
        return words[1] in stems
    return False


def filter_noisy_messages(patches: Sequence[PatchChange]) -> List[PatchChange]:
    kept = [patch for patch in patches if not is_noisy_message(patch)]
    if len(kept) != len(patches):
        logger.warning("Dropped %d patches with bot or trivial messages", len(patches) - len(kept))
    return kept


_SYNTHETIC_VERBS = ("fix", "add", "remove", "refactor")
_SYNTHETIC_NOUNS = ("leak", "parser", "cache", "logging", "timeout", "race")


def synthetic_corpus(count: int = 8, seed: int = 0) -> List[PatchChange]:
    """Small deterministic corpus with distinct code and distinct messages per patch."""
    rng = random.Random(seed)
    patches = []
    for i in range(count):
        verb = _SYNTHETIC_VERBS[i % len(_SYNTHETIC_VERBS)]
        noun = _SYNTHETIC_NOUNS[(i // len(_SYNTHETIC_VERBS)) % len(_SYNTHETIC_NOUNS)]
        files = []
        for f in range(1 + i % 2):
            name = f"{noun}_{verb}_{f}"
            hunk = Hunk(
                removed=[tokenize_line(f"{name} = load ( {rng.randint(0, 9)} ) ;")],
                added=[tokenize_line(f"{name} = {verb}_{noun} ( {name} , {i} ) ;"),
                       tokenize_line(f"return {name} -> {noun} ;")],
            )
            files.append(FileChange(path=f"src/{noun}/{verb}_{f}.c", hunks=[hunk]))
        patches.append(PatchChange.create(f"{verb} {noun} handling", files, id=f"synthetic-{i}"))
    return patches
