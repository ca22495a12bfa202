"""Byte-level tokenizer with the special tokens the multimodal layout needs.

Vocabulary: ids 0-255 are raw bytes; 256-259 are PAD, BOS, EOS, DELIM
(V = 260). Prompt layout, fixed:

    BOS "SYSTEM: You are a speech quality expert."
        [" Listener profile: <profile>."]
        " USER: " <question>

The delimiter segment marking the assistant response is DELIM followed by
the bytes of "ASSISTANT: " (12 tokens total).
"""

PAD = 256
BOS = 257
EOS = 258
DELIM = 259
VOCAB_SIZE = 260

SPECIALS = (PAD, BOS, EOS, DELIM)

SYSTEM_PREFIX = "SYSTEM: You are a speech quality expert."
ASSISTANT_PREFIX = "ASSISTANT: "


def encode(text: str) -> list:
    """UTF-8 bytes as token ids; never emits specials."""
    return list(text.encode("utf-8"))


def decode(ids) -> str:
    """Specials render as empty; invalid UTF-8 is replaced leniently."""
    return bytes(i for i in ids if 0 <= i < 256).decode("utf-8", errors="replace")


def build_prompt(question: str, profile: str | None = None) -> list:
    """BOS plus the canonical system/user prompt bytes."""
    text = SYSTEM_PREFIX
    if profile:
        text += f" Listener profile: {profile}."
    text += " USER: " + question
    return [BOS] + encode(text)


def delimiter_tokens() -> list:
    return [DELIM] + encode(ASSISTANT_PREFIX)


def answer_tokens(answer: str) -> list:
    """Answer segment as supervised: the answer bytes plus EOS."""
    return encode(answer) + [EOS]
