"""Regenerate crates/core/tests/data/tokenizer_fixture.jsonl.

Uses the HuggingFace `tokenizers` byte-level BPE as the reference encoder.
"""
import json
import random
from pathlib import Path

from tokenizers import Tokenizer, decoders, models, pre_tokenizers

ROOT = Path(__file__).resolve().parents[2]
VOCAB = ROOT / "data/gpt2/vocab.json"
MERGES = ROOT / "data/gpt2/merges.txt"
OUT = ROOT / "crates/core/tests/data/tokenizer_fixture.jsonl"

tok = Tokenizer(models.BPE.from_file(str(VOCAB), str(MERGES)))
tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
tok.decoder = decoders.ByteLevel()

names = [l.split(",") for l in (ROOT / "crates/core/data/name_pairs.txt").read_text().splitlines()
         if l and not l.startswith("#")]
lines = []
for io, s in names:
    lines.append(f"When {io} and {s} went to the store, {s} gave a drink to")
    lines.append(f"When {io} and {s} went to the park, {s} handed a flower to")
lines += [
    "When Mary and John went to the store",
    "",
    " ",
    "   leading spaces",
    "trailing spaces   ",
    "Hello  world",
    "tabs\tand\ttabs",
    "line one\nline two\n\nline four",
    "I'm sure you've seen it, they'll say we'd done what's right.",
    "DON'T SHOUT 'S 'T 'RE",
    "Numbers: 0 1 12 123 1234 12345 3.14159 -42 1e10",
    "Prices $100.00 and €50, 25% off!!!",
    "email: someone@example.com, url: https://example.org/path?q=1&x=2",
    "naïve café résumé façade",
    "Ünïcödé ßtraße Ελληνικά русский",
    "日本語のテキスト",
    "中文字符测试",
    "한국어 텍스트",
    "emoji 😀🎉👍🏽 family 👨‍👩‍👧",
    "symbols ~!@#$%^&*()_+{}|:\"<>?`-=[]\;',./",
    "    def foo(x):\n        return x * 2\n",
    "<|endoftext|> is a special string",
    "camelCaseIdentifier snake_case_identifier kebab-case-identifier",
    "A.B.C. U.S.A. e.g. i.e.",
    " non-breaking space",
    "zero​width",
    "mixed123numbers456and789letters",
    "GPT-2 Small has 12 layers and 12 heads per layer.",
    "L9H9 attends to Mary with 66.5% attention while giving John only 7.0%.",
    "The model predicts 'Mary' because L9H9 and L9H6 attend to it with high attention, copying the indirect object.",
]
rng = random.Random(42)
alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,;:'!?-\n\téüß日本😀"
while len(lines) < 200:
    n = rng.randint(1, 60)
    lines.append("".join(rng.choice(alphabet) for _ in range(n)))

with OUT.open("w", encoding="utf-8") as f:
    for text in lines[:200]:
        ids = tok.encode(text).ids
        assert tok.decode(ids) == text, text
        f.write(json.dumps({"text": text, "ids": ids}, ensure_ascii=False) + "\n")
print(f"wrote {OUT}")
