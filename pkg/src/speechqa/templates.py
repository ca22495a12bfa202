"""Template bank and on-the-fly QA sampling.

Templates live in a UTF-8 TSV file of (family, question, answer) triples with
``${NAME}`` placeholders. Recognized placeholders:

* ``${MOS} ${NOI} ${COL} ${DIS} ${LOUD}`` - scores rendered to one decimal
* ``${DIM_NAME}``  - the sampled dimension's display name
* ``${DIM_SCORE}`` - the sampled dimension's score, one decimal
* ``${CATEGORY}``  - verbal category binned from the sampled dimension's score
* ``${CONDITION}`` - the record's condition string, or "simulated" if absent
"""

import enum
import math
import re
from dataclasses import dataclass
from importlib import resources

from .errors import ConfigError, DataError, ParseError, TemplateError
from .manifest import ClipRecord, ScoreSet


class TaskFamily(enum.Enum):
    MosNumeric = "mos_numeric"
    DimNumeric = "dim_numeric"
    DimCategorical = "dim_categorical"
    MultiDim = "multi_dim"
    Explanatory = "explanatory"


class Dimension(enum.Enum):
    Noisiness = ("noi", "noisiness")
    Coloration = ("col", "coloration")
    Discontinuity = ("dis", "discontinuity")
    Loudness = ("loud", "loudness")

    @property
    def field(self) -> str:
        return self.value[0]

    @property
    def display(self) -> str:
        return self.value[1]


DIM_FAMILIES = (TaskFamily.DimNumeric, TaskFamily.DimCategorical)

PLACEHOLDER_NAMES = frozenset(
    {"MOS", "NOI", "COL", "DIS", "LOUD", "DIM_NAME", "DIM_SCORE", "CATEGORY",
     "CONDITION"}
)

_PLACEHOLDER_RE = re.compile(r"\$\{([A-Z_]+)\}")

CATEGORIES = ("very bad", "poor", "fair", "good", "excellent")
_CATEGORY_SCORE = {"very bad": 1.0, "poor": 2.0, "bad": 2.0, "fair": 3.0,
                   "good": 4.0, "excellent": 5.0}


@dataclass(frozen=True)
class Template:
    family: TaskFamily
    question_text: str
    answer_text: str
    placeholders: frozenset

    def __post_init__(self):
        used = set(_PLACEHOLDER_RE.findall(self.question_text))
        used |= set(_PLACEHOLDER_RE.findall(self.answer_text))
        undeclared = used - self.placeholders
        if undeclared:
            raise TemplateError(
                f"placeholders {sorted(undeclared)} used but not declared"
            )
        unknown = self.placeholders - PLACEHOLDER_NAMES
        if unknown:
            raise TemplateError(f"unknown placeholder names {sorted(unknown)}")


@dataclass(frozen=True)
class QAPair:
    family: TaskFamily
    dimension: Dimension | None
    question: str
    answer: str
    truth: ScoreSet
    clip_id: str


def bin_to_category(score: float) -> str:
    """Round-half-up a score in [1, 5] to its verbal category."""
    if not (1.0 <= score <= 5.0):
        raise DataError(f"score {score} outside [1, 5]")
    return CATEGORIES[int(math.floor(score + 0.5)) - 1]


def category_to_score(cat: str) -> float:
    """Map a verbal category back to its bin score; 'bad' aliases 'poor'."""
    key = " ".join(cat.strip().lower().split())
    if key not in _CATEGORY_SCORE:
        raise ParseError(f"unknown quality category {cat!r}")
    return _CATEGORY_SCORE[key]


def sample_task(rng, allowed) -> TaskFamily:
    """Uniform draw over an allowed set of task families."""
    if not allowed:
        raise ConfigError("allowed task-family set is empty")
    ordered = [f for f in TaskFamily if f in set(allowed)]
    return ordered[int(rng.integers(0, len(ordered)))]


def sample_dimension(rng) -> Dimension:
    dims = list(Dimension)
    return dims[int(rng.integers(0, len(dims)))]


def select_template(rng, family: TaskFamily, bank) -> Template:
    """Uniform draw over the bank's templates for one family."""
    candidates = [t for t in bank if t.family == family]
    if not candidates:
        raise ConfigError(f"template bank has no templates for {family.name}")
    return candidates[int(rng.integers(0, len(candidates)))]


def _render(text: str, record: ClipRecord, dim: Dimension | None) -> str:
    def sub(match):
        name = match.group(1)
        if name in ("MOS", "NOI", "COL", "DIS", "LOUD"):
            return f"{record.scores.get(name.lower()):.1f}"
        if name == "DIM_NAME":
            if dim is None:
                raise TemplateError("placeholder DIM_NAME needs a sampled dimension")
            return dim.display
        if name == "DIM_SCORE":
            if dim is None:
                raise TemplateError("placeholder DIM_SCORE needs a sampled dimension")
            return f"{record.scores.get(dim.field):.1f}"
        if name == "CATEGORY":
            if dim is None:
                raise TemplateError("placeholder CATEGORY needs a sampled dimension")
            return bin_to_category(record.scores.get(dim.field))
        if name == "CONDITION":
            return record.condition if record.condition else "simulated"
        raise TemplateError(f"unresolvable placeholder {name}")

    return _PLACEHOLDER_RE.sub(sub, text)


def instantiate(template: Template, record: ClipRecord,
                dim: Dimension | None = None) -> QAPair:
    """Fill a template's placeholders from a clip record."""
    question = _render(template.question_text, record, dim)
    answer = _render(template.answer_text, record, dim)
    return QAPair(family=template.family, dimension=dim, question=question,
                  answer=answer, truth=record.scores, clip_id=record.clip_id)


def sample_qa(rng, record: ClipRecord, bank, allowed=None) -> QAPair:
    """One on-the-fly QA pair: sample family, dimension (if needed), template,
    then instantiate."""
    families = allowed if allowed is not None else tuple(TaskFamily)
    family = sample_task(rng, families)
    dim = sample_dimension(rng) if family in DIM_FAMILIES else None
    template = select_template(rng, family, bank)
    return instantiate(template, record, dim)


def parse_bank_text(text: str):
    """Parse TSV template-bank content into a tuple of Templates."""
    families = {f.value: f for f in TaskFamily}
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ConfigError(
                f"template bank line {lineno}: expected 3 tab-separated fields"
            )
        fam_raw, question, answer = (p.strip() for p in parts)
        if fam_raw not in families:
            raise ConfigError(
                f"template bank line {lineno}: unknown family '{fam_raw}'"
            )
        used = set(_PLACEHOLDER_RE.findall(question))
        used |= set(_PLACEHOLDER_RE.findall(answer))
        out.append(Template(family=families[fam_raw], question_text=question,
                            answer_text=answer, placeholders=frozenset(used)))
    return tuple(out)


def load_template_bank(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_bank_text(fh.read())


def default_bank():
    """The shipped bank: three templates per family."""
    text = resources.files("speechqa").joinpath("data/templates.tsv").read_text(
        encoding="utf-8"
    )
    return parse_bank_text(text)


def validate_bank(bank, min_per_family: int = 2) -> None:
    for family in TaskFamily:
        n = sum(1 for t in bank if t.family == family)
        if n < min_per_family:
            raise ConfigError(
                f"template bank has {n} template(s) for {family.name}; "
                f"need at least {min_per_family}"
            )
